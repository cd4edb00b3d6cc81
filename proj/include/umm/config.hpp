#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "umm/data.hpp"

namespace umm {

enum class TokenizerMode { PixelReconstruct, LatentDirect };
const char* mode_name(TokenizerMode m);

enum class LrSchedule { Constant, Cosine };

struct StageConfig {
  int steps = 0;
  double lr = 1e-3;
  LrSchedule schedule = LrSchedule::Constant;
  TaskMix mix{1, 1, 0};
};

struct RunConfig {
  struct {
    std::uint64_t seed = 1;
    std::string out_dir = "runs";
  } run;
  struct {
    int image_size = 32;
    int stride = 4;
    int latent_dim = 4;
    int hidden = 64;
    double beta = 1e-3;
    int steps = 2000;
    double lr = 2e-3;
    int batch = 32;
  } vae;
  struct {
    TokenizerMode mode = TokenizerMode::PixelReconstruct;
    int width = 32;  // d'
    int blocks = 2;
    int heads = 2;
  } tokenizer;
  struct {
    int width = 128;  // c
    int blocks = 4;
    int heads = 4;
    int mlp_ratio = 4;
    int max_text = 32;
  } backbone;
  struct {
    int stage1_blocks = 7;
    int stage2_blocks = 3;
    int stage1_heads = 4;
    int stage2_heads = 2;
    int t_dim = 64;
    bool hfi = true;
  } head;
  struct {
    double lambda = 1.0;
    double warmup_ratio = 0.02;
    double grad_clip = 1.0;
    double beta1 = 0.9, beta2 = 0.95;
    double weight_decay = 0.01;
    double cfg_dropout = 0.1;
    int batch = 32;
    double qa_fraction = 0.7;
    double glyph_fraction = 0.0;  // share of understanding samples that are digit glyphs
  } train;
  // Paper schedule (full scale, Table 1) for reference:
  //   I   lr 1e-3 constant, projection + head + gate
  //   II  lr 1e-4 cosine,  all w/o VAE
  //   III lr 5e-5 cosine,  all w/o VAE
  //   IV  lr 5e-5 cosine,  all w/o VAE, 1:1 und:gen
  StageConfig stage_a{1000, 1e-3, LrSchedule::Constant, {1, 1, 0}};
  StageConfig stage_b{5000, 3e-4, LrSchedule::Cosine, {3, 6, 1}};
  StageConfig stage_c{0, 5e-5, LrSchedule::Cosine, {1, 1, 0}};
  struct {
    int steps = 25;
    double alpha = 3.0;
    double cfg_scale = 4.0;
    std::uint64_t seed = 0;
  } sampler;
  struct {
    int seeds = 50;
    int qa_items = 200;
    int glyph_items = 200;
    int probe_steps = 600;  // per tokenizer mode in the glyph comparison
  } eval;
  struct {
    std::vector<Color> backgrounds{Color::White};
  } data;

  // Typed visit over every key, in file order.
  using Field = std::variant<int*, double*, std::uint64_t*, std::string*, bool*, TokenizerMode*, LrSchedule*,
                             TaskMix*, std::vector<Color>*>;
  void visit(const std::function<void(const std::string& key, Field f)>& fn);

  void validate() const;
  // Digest over model, data, and training keys; sampler, eval, and run keys are
  // excluded because they do not change trained weights.
  std::uint64_t digest() const;
  std::string serialize() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);

  // Latent grid side (image_size / stride) and compressed side.
  int latent_side() const { return vae.image_size / vae.stride; }
  int compressed_side() const { return latent_side() / 2; }
};

// UMM_SEED, when set, replaces run.seed.
void apply_env_overrides(RunConfig& cfg);

}  // namespace umm
