#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace umm {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Recording switch for the current thread. Operations only build graph
// nodes while it is enabled.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Cache-line aligned storage. Eigen kernels peel differently for different
// alignments, so fixed alignment keeps results bit-reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign))); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(kAlign)); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
bool operator==(const Buffer<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

// Monotone per-thread counter; graph nodes are ordered by it.
std::uint64_t next_node_sequence();

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into the parents. Empty for leaves.
  std::function<void(Node&)> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the same node; use clone()
/// for an independent value copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer<T> values, bool requires_grad = false);
  template <typename A>
    requires(!std::is_same_v<A, AlignedAllocator<T>>)
  static Tensor from(Shape shape, const std::vector<T, A>& values, bool requires_grad = false) {
    return from(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative indices count from the back.
  int dim(int i) const;
  std::size_t size() const { return node_->data.size(); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::span<T> values() { return node_->data; }
  std::span<const T> values() const { return node_->data; }
  const Buffer<T>& vec() const { return node_->data; }
  T item() const;
  T& operator[](std::size_t i) { return node_->data[i]; }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return !node_->backward; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no gradient has been accumulated yet.
  std::span<T> grad() { return node_->grad_buffer(); }
  Tensor grad_tensor() const;
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Builds a result node. The node joins the graph when recording is enabled
  // and at least one input requires gradients.
  static Tensor make_result(Shape shape, Buffer<T> values,
                            std::vector<Tensor> inputs,
                            std::function<void(Node<T>&)> backward);

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate; nodes are
/// visited in strictly decreasing creation order.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
inline bool wants_grad(const std::shared_ptr<Node<T>>& parent) {
  return parent && parent->requires_grad;
}

}  // namespace umm
