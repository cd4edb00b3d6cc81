#include "umm/cfm_head.hpp"

#include <stdexcept>

namespace umm {

template <typename T>
CfmHead<T>::CfmHead(ParamStore<T>& store, const RunConfig& cfg)
    : width(cfg.backbone.width), detail_width(cfg.tokenizer.width), latent_dim(cfg.vae.latent_dim), hfi(cfg.head.hfi) {
  const auto g = ParamGroup::Head;
  t_embed1 = TimestepEmbedder<T>(store, "head.t_embed1", cfg.head.t_dim, width, g);
  t_embed2 = TimestepEmbedder<T>(store, "head.t_embed2", cfg.head.t_dim, detail_width, g);
  for (int i = 0; i < cfg.head.stage1_blocks; ++i) {
    stage1_blocks.emplace_back(store, "head.stage1." + std::to_string(i), width, cfg.head.stage1_heads, width, g);
  }
  up = Linear<T>(store, "head.up", width, 4 * detail_width, g);
  for (int i = 0; i < cfg.head.stage2_blocks; ++i) {
    stage2_blocks.emplace_back(store, "head.stage2." + std::to_string(i), detail_width, cfg.head.stage2_heads,
                               detail_width, g);
  }
  out = Linear<T>(store, "head.out", detail_width, latent_dim, g);
  gate_fc1 = Linear<T>(store, "gate.fc1", detail_width, detail_width, ParamGroup::Gate);
  gate_fc2.weight = store.create("gate.fc2.weight", {detail_width, 1}, ParamGroup::Gate, Init::zeros());
  gate_fc2.bias = store.create("gate.fc2.bias", {1}, ParamGroup::Gate, Init::constant(-4.0));
}

template <typename T>
Tensor<T> CfmHead<T>::stage1(const Tensor<T>& image_hidden, std::span<const double> t) const {
  if (image_hidden.rank() != 4 || image_hidden.dim(3) != width) {
    throw std::invalid_argument("stage1 expects [B, h, w, " + std::to_string(width) + "], got " +
                                shape_str(image_hidden.shape()));
  }
  const int b = image_hidden.dim(0), h = image_hidden.dim(1), w = image_hidden.dim(2);
  Tensor<T> cond = t_embed1(t);
  Tensor<T> x = reshape(image_hidden, {b, h * w, width});
  for (const auto& blk : stage1_blocks) x = blk(x, cond);
  return reshape(x, {b, h, w, width});
}

template <typename T>
Tensor<T> CfmHead<T>::upsample(const Tensor<T>& x) const {
  return pixel_shuffle(up(x), 2);
}

template <typename T>
Tensor<T> CfmHead<T>::gate(const Tensor<T>& x) const {
  return sigmoid(gate_fc2(silu(gate_fc1(x))));
}

template <typename T>
Tensor<T> inject(const Tensor<T>& x, const Tensor<T>& details, const Tensor<T>& g) {
  if (x.rank() != 4 || details.shape() != x.shape() || g.rank() != 4 || g.dim(0) != x.dim(0) ||
      g.dim(1) != x.dim(1) || g.dim(2) != x.dim(2) || g.dim(3) != 1) {
    throw std::invalid_argument("inject: grids differ: x " + shape_str(x.shape()) + ", details " +
                                shape_str(details.shape()) + ", gate " + shape_str(g.shape()));
  }
  return gated_inject(x, details, g);
}

template <typename T>
Tensor<T> CfmHead<T>::stage2(const Tensor<T>& x, std::span<const double> t) const {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> cond = t_embed2(t);
  Tensor<T> y = reshape(x, {b, h * w, detail_width});
  for (const auto& blk : stage2_blocks) y = blk(y, cond);
  return out(reshape(y, {b, h, w, detail_width}));
}

template <typename T>
HeadOutput<T> CfmHead<T>::forward(const Tensor<T>& image_hidden, const Tensor<T>& details,
                                  std::span<const double> t) const {
  if (static_cast<int>(t.size()) != image_hidden.dim(0)) throw std::invalid_argument("one t per sample required");
  Tensor<T> x = upsample(stage1(image_hidden, t));
  HeadOutput<T> o;
  if (hfi) {
    o.gate = gate(x);
  } else {
    Shape gs = x.shape();
    gs.back() = 1;
    o.gate = Tensor<T>::zeros(gs);
  }
  Tensor<T> y = inject(x, details, o.gate);
  {
    NoGradGuard guard;
    o.injected = gated_inject(Tensor<T>::zeros(details.shape()), details.detach(), o.gate.detach());
  }
  o.velocity = stage2(y, t);
  return o;
}

template struct CfmHead<float>;
template struct CfmHead<double>;
template Tensor<float> inject(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> inject(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace umm
