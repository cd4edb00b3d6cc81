#pragma once

#include <span>
#include <vector>

#include "umm/config.hpp"
#include "umm/nn.hpp"

namespace umm {

template <typename T>
struct HeadOutput {
  Tensor<T> velocity;  // [B, h, w, d]
  Tensor<T> gate;      // [B, h, w, 1]
  Tensor<T> injected;  // g * details, [B, h, w, d']
};

/// Cascaded flow-matching head: DiT stage at the compressed grid, pixel-shuffle
/// upsampling, gated detail injection, DiT stage at the detail grid.
template <typename T>
struct CfmHead {
  int width = 128, detail_width = 32, latent_dim = 4;
  bool hfi = true;
  TimestepEmbedder<T> t_embed1, t_embed2;
  std::vector<DiTBlock<T>> stage1_blocks, stage2_blocks;
  Linear<T> up;  // c -> 4 d'
  Linear<T> gate_fc1, gate_fc2;
  Linear<T> out;  // d' -> d

  CfmHead() = default;
  CfmHead(ParamStore<T>& store, const RunConfig& cfg);

  Tensor<T> stage1(const Tensor<T>& image_hidden, std::span<const double> t) const;
  Tensor<T> upsample(const Tensor<T>& x) const;
  Tensor<T> gate(const Tensor<T>& x) const;
  Tensor<T> stage2(const Tensor<T>& x, std::span<const double> t) const;
  // image_hidden [B, h/2, w/2, c], details [B, h, w, d'].
  HeadOutput<T> forward(const Tensor<T>& image_hidden, const Tensor<T>& details, std::span<const double> t) const;
};

// out = g * details + x, g broadcast over channels.
template <typename T>
Tensor<T> inject(const Tensor<T>& x, const Tensor<T>& details, const Tensor<T>& g);

}  // namespace umm
