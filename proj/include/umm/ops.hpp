#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "umm/tensor.hpp"

namespace umm {

/// Square boolean matrix; allow(i, j) means query i may attend to key j.
class BitMatrix {
 public:
  BitMatrix() = default;
  explicit BitMatrix(int n, bool value = false) : n_(n), bits_(static_cast<std::size_t>(n) * n, value) {}

  int size() const { return n_; }
  bool operator()(int i, int j) const { return bits_[static_cast<std::size_t>(i) * n_ + j] != 0; }
  void set(int i, int j, bool v) { bits_[static_cast<std::size_t>(i) * n_ + j] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  static BitMatrix identity(int n);
  static BitMatrix full(int n) { return BitMatrix(n, true); }
  static BitMatrix causal(int n);

  bool operator==(const BitMatrix&) const = default;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);

// Adds `p` to every consecutive chunk of x of size p.size() (bias rows,
// positional tables).
template <typename T> Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& p);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * w[in, out] + b[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
// Normalization without the affine part (used under adaptive modulation).
template <typename T> Tensor<T> layer_norm_plain(const Tensor<T>& x, T eps);

template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

// Single-head scaled dot-product attention over [n, c] operands.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const BitMatrix& allow);

// Batched multi-head attention over [B, n, c] operands. `masks` holds either
// one matrix shared by the batch or one per sample.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                               std::span<const BitMatrix> masks);

// x[B, ..., c] * (1 + scale[B, c]) + shift[B, c]
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);
// x[B, ..., c] + gate[B, c] * y[B, ..., c]
template <typename T>
Tensor<T> gated_add(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gate);
// x[B, h, w, c] + g[B, h, w, 1] * details[B, h, w, c]
template <typename T>
Tensor<T> gated_inject(const Tensor<T>& x, const Tensor<T>& details, const Tensor<T>& g);

// Space-to-channel and channel-to-space rearrangements on [B, h, w, ch] or
// [h, w, ch]. Output channel = block_row * r * ch + block_col * ch + channel.
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);

// 3x3 neighbourhood gather with zero padding: [B, h, w, c] -> [B, h, w, 9c].
template <typename T> Tensor<T> im2col3x3(const Tensor<T>& x);

// Columns [start, start + len) of the last dimension.
template <typename T> Tensor<T> slice_last(const Tensor<T>& x, int start, int len);
// Rows of a matrix view [rows, c] of x, gathered by index.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows);
// Stack matrix views [r_i, c] along rows.
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Mean squared error between equally shaped tensors.
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);
// Mean negative log-likelihood over rows with mask[i] != 0.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
// Mean over elements of KL(N(mean, exp(logvar)) || N(0, 1)).
template <typename T> Tensor<T> kl_standard_normal(const Tensor<T>& mean, const Tensor<T>& logvar);
// mean + exp(logvar / 2) * eps
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mean, const Tensor<T>& logvar, const Tensor<T>& eps);

}  // namespace umm
