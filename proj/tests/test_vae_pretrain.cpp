#include <gtest/gtest.h>

#include "umm/training.hpp"

using namespace umm;

// Default VAE settings, held-out scenes from a seed the pretraining never uses.
TEST(VaePretrain, ReconstructsHeldOutScenesAndNormalizesLatents) {
  RunConfig cfg;
  Model<float> model(cfg, Vocab::standard());
  pretrain_vae(model);

  NoGradGuard ng;
  Rng rng(987654321);
  std::vector<Image> scenes;
  for (int i = 0; i < 64; ++i) scenes.push_back(render(random_scene(rng)));
  std::vector<const Image*> ptrs;
  for (const auto& im : scenes) ptrs.push_back(&im);
  auto dist = model.vae.encode(images_to_tensor<float>(ptrs));
  Tensor<float> recon = model.vae.decode(dist.mean);
  double total = 0;
  for (int i = 0; i < 64; ++i) total += psnr(scenes[i], tensor_to_image(recon, i));
  double mean_psnr = total / 64;
  std::printf("held-out PSNR %.2f dB\n", mean_psnr);
  EXPECT_GT(mean_psnr, 25.0);

  Tensor<float> z = normalize_latent(dist.mean, model.stats);
  const int d = cfg.vae.latent_dim;
  std::vector<double> s1(d, 0.0), s2(d, 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) s1[i % d] += z[i], s2[i % d] += double(z[i]) * z[i];
  double n = double(z.size() / d);
  for (int c = 0; c < d; ++c) {
    double var = s2[c] / n - (s1[c] / n) * (s1[c] / n);
    std::printf("channel %d variance %.3f\n", c, var);
    EXPECT_GE(var, 0.5);
    EXPECT_LE(var, 2.0);
  }
}
