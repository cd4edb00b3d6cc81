#pragma once

#include <memory>
#include <string>
#include <vector>

#include "umm/backbone.hpp"
#include "umm/cfm_head.hpp"
#include "umm/tokenizer.hpp"
#include "umm/vae.hpp"

namespace umm {

/// Every trainable module of the unified model plus the latent statistics.
template <typename T>
class Model {
 public:
  Model(const RunConfig& cfg, Vocab vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  RunConfig cfg;
  Vocab vocab;
  ParamStore<T> store;
  Vae<T> vae;
  Tokenizer<T> tokenizer;
  Backbone<T> backbone;
  CfmHead<T> head;
  LatentStats stats;

  Shape latent_shape(int batch) const;
  int n_image() const { return backbone.n_image; }

  // Normalized data latent of each image: the posterior mean, or a draw from
  // it when `rng` is given. VAE weights are frozen here.
  Tensor<T> encode_latent(const std::vector<const Image*>& images, Rng* rng) const;
  // Normalized latent -> pixels.
  Tensor<T> decode_latent(const Tensor<T>& z) const;

  // Tokenizer + backbone + head for a generation step. cond holds one id list
  // per sample.
  HeadOutput<T> velocity(const Tensor<T>& z_t, std::span<const double> t, const std::vector<std::vector<int>>& cond) const;

  // Greedy decoding of up to max_new tokens after each (image, question).
  std::vector<std::vector<int>> answer(const Tensor<T>& z1, const std::vector<std::vector<int>>& questions,
                                       int max_new) const;
};

}  // namespace umm
