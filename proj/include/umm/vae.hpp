#pragma once

#include <vector>

#include "umm/config.hpp"
#include "umm/data.hpp"
#include "umm/nn.hpp"

namespace umm {

template <typename T>
struct LatentDistribution {
  Tensor<T> mean;    // [B, h, w, d]
  Tensor<T> logvar;  // [B, h, w, d]
};

/// Per-channel latent statistics measured on the corpus after pretraining.
struct LatentStats {
  std::vector<double> mean, std;
  bool empty() const { return mean.empty(); }
};

// Stacks images into [B, H, W, 3].
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images);
template <typename T>
Image tensor_to_image(const Tensor<T>& x, int index = 0);

/// Patch VAE: pixel-unshuffle by the stride, a 3x3 conv stack on the latent
/// grid, and the mirror path back.
template <typename T>
struct Vae {
  int stride = 4, latent_dim = 4, hidden = 64, image_size = 32;
  Linear<T> enc_in, enc_conv, enc_out;
  Linear<T> dec_in, dec_conv1, dec_conv2, dec_out;

  Vae() = default;
  Vae(ParamStore<T>& store, const RunConfig& cfg);

  LatentDistribution<T> encode(const Tensor<T>& images) const;
  Tensor<T> decode(const Tensor<T>& z) const;
  // mean + exp(logvar/2) * eps, eps drawn from rng.
  Tensor<T> sample(const LatentDistribution<T>& dist, Rng& rng) const;
};

template <typename T>
Tensor<T> vae_loss(const Tensor<T>& image, const Tensor<T>& recon, const LatentDistribution<T>& dist, T beta);

// z * a[c] + b[c] on the last axis; constants, gradient flows to z.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& z, const std::vector<double>& a, const std::vector<double>& b);

template <typename T>
Tensor<T> normalize_latent(const Tensor<T>& z, const LatentStats& s);
template <typename T>
Tensor<T> denormalize_latent(const Tensor<T>& z, const LatentStats& s);

double psnr(const Image& a, const Image& b);

}  // namespace umm
