#pragma once

#include <vector>

#include "umm/config.hpp"
#include "umm/rng.hpp"
#include "umm/tensor.hpp"

namespace umm::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double bound = 1.0) {
  Rng rng(seed);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>((2 * rng.uniform() - 1) * bound);
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Small enough for finite differences in double precision.
inline RunConfig tiny_config() {
  RunConfig c;
  c.vae.image_size = 32;
  c.vae.stride = 8;
  c.vae.latent_dim = 2;
  c.vae.hidden = 8;
  c.tokenizer.width = 8;
  c.tokenizer.blocks = 1;
  c.tokenizer.heads = 2;
  c.backbone.width = 16;
  c.backbone.blocks = 1;
  c.backbone.heads = 2;
  c.backbone.mlp_ratio = 2;
  c.backbone.max_text = 32;
  c.head.stage1_blocks = 1;
  c.head.stage2_blocks = 1;
  c.head.stage1_heads = 2;
  c.head.stage2_heads = 2;
  c.head.t_dim = 8;
  return c;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

}  // namespace umm::testing
