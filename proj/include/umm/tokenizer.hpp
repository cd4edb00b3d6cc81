#pragma once

#include <optional>
#include <vector>

#include "umm/vae.hpp"

namespace umm {

template <typename T>
struct TaskLatent {
  Tensor<T> z_t;          // [B, h, w, d]
  Tensor<T> z0;           // noise actually drawn
  std::vector<double> t;  // per sample
};

// z_t = t*z1 + (1-t)*z0 with t = 1 (understanding), 0 (text only) or
// uniform on (0, 1) per sample (generation). `z1` is required unless the
// task is text only, in which case `shape` gives the latent shape.
template <typename T>
TaskLatent<T> make_task_latent(const Tensor<T>* z1, TaskKind task, Rng& rng, const Shape& shape = {});

// Interpolant for explicit per-sample t.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& z1, const Tensor<T>& z0, const std::vector<double>& t);

template <typename T>
struct TokenizerOutput {
  Tensor<T> details;     // [B, h, w, d']
  Tensor<T> compressed;  // [B, h/2, w/2, c]
};

/// Unified vision tokenizer: (decode to pixels) -> patch transformer ->
/// detail tokens; pixel-unshuffle + projection -> compressed tokens.
template <typename T>
struct Tokenizer {
  TokenizerMode mode = TokenizerMode::PixelReconstruct;
  int side = 8, width = 32, out_width = 128, stride = 4, latent_dim = 4;
  Linear<T> patch_embed;
  Tensor<T> pos;  // [side*side, width]
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> norm;
  Linear<T> project;  // 4*width -> out_width

  Tokenizer() = default;
  Tokenizer(ParamStore<T>& store, const RunConfig& cfg);

  // `pixels` is D(z_t) in pixel mode and ignored in latent mode.
  Tensor<T> semantic_encode(const Tensor<T>& z_t, const Tensor<T>& pixels) const;
  Tensor<T> compress(const Tensor<T>& details) const;
  // Runs the decoder (without gradient; VAE weights are frozen) when needed.
  TokenizerOutput<T> operator()(const Tensor<T>& z_t, const Vae<T>& vae, const LatentStats& stats) const;
};

}  // namespace umm
