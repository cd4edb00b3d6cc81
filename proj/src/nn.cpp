#include "umm/nn.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace umm {

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Vae: return "vae";
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Projection: return "projection";
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::Head: return "head";
    case ParamGroup::Gate: return "gate";
  }
  return "unknown";
}

template <typename T>
Tensor<T> ParamStore<T>::create(const std::string& name, Shape shape, ParamGroup group, Init init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Buffer<T> values(numel(shape));
  Rng rng = Rng::stream(seed_, name);
  for (auto& v : values) {
    switch (init.kind) {
      case Init::Kind::Zeros: v = T(0); break;
      case Init::Kind::Constant: v = static_cast<T>(init.value); break;
      case Init::Kind::Uniform: v = static_cast<T>((2.0 * rng.uniform() - 1.0) * init.value); break;
      case Init::Kind::Normal: v = static_cast<T>(rng.normal() * init.value); break;
    }
  }
  auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
  entries_.push_back({name, group, t});
  return t;
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::set_trainable(const std::set<ParamGroup>& trainable) {
  std::vector<Tensor<T>> out;
  for (auto& e : entries_) {
    bool on = trainable.count(e.group) > 0;
    e.tensor.set_requires_grad(on);
    if (on) out.push_back(e.tensor);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::tensors(const std::set<ParamGroup>& groups) const {
  std::vector<Tensor<T>> out;
  for (const auto& e : entries_) {
    if (groups.count(e.group)) out.push_back(e.tensor);
  }
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void ParamStore<T>::randomize(std::uint64_t seed, double bound) {
  for (auto& e : entries_) {
    Rng rng = Rng::stream(seed, e.name);
    for (auto& v : e.tensor.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

template <typename T>
template <typename U>
void ParamStore<T>::copy_from(const ParamStore<U>& other) {
  for (auto& e : entries_) {
    const auto& src = other.find(e.name);
    if (src.tensor.shape() != e.tensor.shape()) throw std::invalid_argument("shape mismatch copying " + e.name);
    auto dst = e.tensor.values();
    auto s = src.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
  }
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, int in, int out, ParamGroup group, bool zero_init,
                  bool with_bias) {
  Init w_init = zero_init ? Init::zeros() : Init::uniform(1.0 / std::sqrt(static_cast<double>(in)));
  weight = store.create(name + ".weight", {in, out}, group, w_init);
  if (with_bias) bias = store.create(name + ".bias", {out}, group, Init::zeros());
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, int c, ParamGroup group) {
  gain = store.create(name + ".gain", {c}, group, Init::constant(1.0));
  bias = store.create(name + ".bias", {c}, group, Init::zeros());
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Linear<T>& qkv, const Linear<T>& proj, int heads,
                         std::span<const BitMatrix> masks) {
  const int c = x.dim(-1);
  Tensor<T> packed = qkv(x);
  Tensor<T> q = slice_last(packed, 0, c);
  Tensor<T> k = slice_last(packed, c, c);
  Tensor<T> v = slice_last(packed, 2 * c, c);
  return proj(multi_head_attention(q, k, v, heads, masks));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParamStore<T>& store, const std::string& name, int c, int heads_,
                                      int mlp_ratio, bool gated_, ParamGroup group)
    : heads(heads_), gated(gated_) {
  norm1 = LayerNorm<T>(store, name + ".norm1", c, group);
  norm2 = LayerNorm<T>(store, name + ".norm2", c, group);
  qkv = Linear<T>(store, name + ".qkv", c, 3 * c, group);
  proj = Linear<T>(store, name + ".proj", c, c, group);
  const int hidden = c * mlp_ratio;
  if (gated) fc_gate = Linear<T>(store, name + ".ff_gate", c, hidden, group, false, false);
  fc_up = Linear<T>(store, name + ".ff_up", c, hidden, group, false, !gated);
  fc_down = Linear<T>(store, name + ".ff_down", hidden, c, group);
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, std::span<const BitMatrix> masks) const {
  Tensor<T> h = add(x, self_attention(norm1(x), qkv, proj, heads, masks));
  Tensor<T> n = norm2(h);
  Tensor<T> ff = gated ? mul(silu(fc_gate(n)), fc_up(n)) : gelu(fc_up(n));
  return add(h, fc_down(ff));
}

template <typename T>
Tensor<T> timestep_features(std::span<const double> t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep feature dimension must be even");
  const int half = dim / 2;
  Buffer<T> out(t.size() * static_cast<std::size_t>(dim));
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / half);
      double arg = t[b] * 1000.0 * freq;
      out[b * dim + i] = static_cast<T>(std::cos(arg));
      out[b * dim + half + i] = static_cast<T>(std::sin(arg));
    }
  }
  return Tensor<T>::from({static_cast<int>(t.size()), dim}, std::move(out));
}

template <typename T>
TimestepEmbedder<T>::TimestepEmbedder(ParamStore<T>& store, const std::string& name, int feature_dim_, int width,
                                      ParamGroup group)
    : feature_dim(feature_dim_) {
  fc1 = Linear<T>(store, name + ".fc1", feature_dim, width, group);
  fc2 = Linear<T>(store, name + ".fc2", width, width, group);
}

template <typename T>
Tensor<T> TimestepEmbedder<T>::operator()(std::span<const double> t) const {
  for (double v : t) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("timestep outside [0, 1]: " + std::to_string(v));
  }
  return silu(fc2(silu(fc1(timestep_features<T>(t, feature_dim)))));
}

template <typename T>
DiTBlock<T>::DiTBlock(ParamStore<T>& store, const std::string& name, int c, int heads_, int cond_dim,
                      ParamGroup group)
    : heads(heads_), width(c) {
  qkv = Linear<T>(store, name + ".qkv", c, 3 * c, group);
  proj = Linear<T>(store, name + ".proj", c, c, group);
  fc1 = Linear<T>(store, name + ".fc1", c, 4 * c, group);
  fc2 = Linear<T>(store, name + ".fc2", 4 * c, c, group);
  modulation = Linear<T>(store, name + ".modulation", cond_dim, 6 * c, group, /*zero_init=*/true);
}

template <typename T>
Tensor<T> DiTBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& cond) const {
  const int c = width;
  const int n = x.dim(1);
  Tensor<T> mod = modulation(cond);
  auto part = [&](int i) { return slice_last(mod, i * c, c); };
  Tensor<T> shift1 = part(0), scale1 = part(1), gate1 = part(2);
  Tensor<T> shift2 = part(3), scale2 = part(4), gate2 = part(5);
  std::array<BitMatrix, 1> full{BitMatrix::full(n)};
  Tensor<T> h = modulate(layer_norm_plain(x, T(1e-6)), shift1, scale1);
  Tensor<T> out = gated_add(x, self_attention(h, qkv, proj, heads, std::span<const BitMatrix>(full)), gate1);
  h = modulate(layer_norm_plain(out, T(1e-6)), shift2, scale2);
  return gated_add(out, fc2(gelu(fc1(h))), gate2);
}

template class ParamStore<float>;
template class ParamStore<double>;
template void ParamStore<float>::copy_from(const ParamStore<float>&);
template void ParamStore<float>::copy_from(const ParamStore<double>&);
template void ParamStore<double>::copy_from(const ParamStore<float>&);
template void ParamStore<double>::copy_from(const ParamStore<double>&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct TimestepEmbedder<float>;
template struct TimestepEmbedder<double>;
template struct DiTBlock<float>;
template struct DiTBlock<double>;
template Tensor<float> self_attention(const Tensor<float>&, const Linear<float>&, const Linear<float>&, int,
                                      std::span<const BitMatrix>);
template Tensor<double> self_attention(const Tensor<double>&, const Linear<double>&, const Linear<double>&, int,
                                       std::span<const BitMatrix>);
template Tensor<float> timestep_features(std::span<const double>, int);
template Tensor<double> timestep_features(std::span<const double>, int);

}  // namespace umm
