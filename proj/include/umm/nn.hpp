#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "umm/ops.hpp"
#include "umm/rng.hpp"
#include "umm/tensor.hpp"

namespace umm {

// Parameter groups; freezing and checkpoint bookkeeping work per group.
enum class ParamGroup { Vae, Encoder, Projection, Backbone, Head, Gate };

const char* group_name(ParamGroup g);

struct Init {
  enum class Kind { Zeros, Constant, Uniform, Normal } kind = Kind::Zeros;
  double value = 0.0;

  static Init zeros() { return {Kind::Zeros, 0.0}; }
  static Init constant(double v) { return {Kind::Constant, v}; }
  static Init uniform(double bound) { return {Kind::Uniform, bound}; }
  static Init normal(double stddev) { return {Kind::Normal, stddev}; }
};

/// Named parameter registry. Initial values depend only on (seed, name), so
/// construction order never changes them.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor<T> tensor;
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, ParamGroup group, Init init);

  const std::vector<Entry>& entries() const { return entries_; }
  const Entry& find(const std::string& name) const;
  std::size_t parameter_count() const;

  // requires_grad = (group in trainable); returns the trainable tensors.
  std::vector<Tensor<T>> set_trainable(const std::set<ParamGroup>& trainable);
  std::vector<Tensor<T>> tensors(const std::set<ParamGroup>& groups) const;
  void zero_grad();

  // Overwrites every value with uniform noise; for gradient checks away from
  // the zero-initialized identity point.
  void randomize(std::uint64_t seed, double bound);

  // Copies values from another store holding the same names and shapes.
  template <typename U>
  void copy_from(const ParamStore<U>& other);

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, ParamGroup group, bool zero_init = false,
         bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain, bias;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int c, ParamGroup group);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, eps); }
};

/// Pre-norm transformer block over [B, n, c].
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm1, norm2;
  Linear<T> qkv, proj;
  // Feed-forward: gated SiLU when `gated`, GELU MLP otherwise.
  Linear<T> fc_gate, fc_up, fc_down;
  int heads = 1;
  bool gated = false;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& name, int c, int heads, int mlp_ratio, bool gated,
                   ParamGroup group);
  Tensor<T> operator()(const Tensor<T>& x, std::span<const BitMatrix> masks) const;
};

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Linear<T>& qkv, const Linear<T>& proj, int heads,
                         std::span<const BitMatrix> masks);

/// Sinusoidal features of t in [0, 1] for a batch: [B, dim].
template <typename T>
Tensor<T> timestep_features(std::span<const double> t, int dim);

/// Timestep embedding MLP: features -> width -> width, followed by SiLU so the
/// output feeds modulation layers directly.
template <typename T>
struct TimestepEmbedder {
  Linear<T> fc1, fc2;
  int feature_dim = 64;

  TimestepEmbedder() = default;
  TimestepEmbedder(ParamStore<T>& store, const std::string& name, int feature_dim, int width, ParamGroup group);
  Tensor<T> operator()(std::span<const double> t) const;
};

/// DiT block with adaptive layer-norm modulation (shift, scale, gate for both
/// branches). The modulation projection is zero-initialized, which makes the
/// block an exact identity at initialization.
template <typename T>
struct DiTBlock {
  Linear<T> qkv, proj, fc1, fc2, modulation;
  int heads = 1;
  int width = 0;

  DiTBlock() = default;
  DiTBlock(ParamStore<T>& store, const std::string& name, int c, int heads, int cond_dim, ParamGroup group);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& cond) const;
};

}  // namespace umm
