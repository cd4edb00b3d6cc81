#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "umm/model.hpp"

namespace umm {

template <typename T>
Tensor<T> ar_loss(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
template <typename T>
Tensor<T> fm_loss(const Tensor<T>& v, const Tensor<T>& z1, const Tensor<T>& z0);
// ar + lambda * fm; absent terms contribute nothing.
template <typename T>
Tensor<T> total_loss(const std::optional<Tensor<T>>& ar, const std::optional<Tensor<T>>& fm, double lambda);

// With probability p the whole condition becomes {NULLCOND}.
std::vector<int> apply_cfg_dropout(const std::vector<int>& cond, Rng& rng, double p);

// Linear warmup to base_lr over warmup steps, then the stage schedule.
double learning_rate(const StageConfig& stage, double warmup_ratio, int step);
int warmup_steps(const StageConfig& stage, double warmup_ratio);

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm);
template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params);

template <typename T>
class AdamW {
 public:
  AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}
  // Decoupled weight decay on matrices only; vectors (biases, norms) are not
  // decayed.
  void step(std::vector<Tensor<T>>& params, double lr);
  long steps() const { return t_; }

 private:
  double b1_, b2_, wd_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct StepMetrics {
  int step = 0;
  TaskKind task = TaskKind::Generation;
  double loss_ar = 0, loss_fm = 0, loss_total = 0;
  bool has_ar = false, has_fm = false;
  double grad_norm = 0, lr = 0;
};

template <typename T>
struct BatchLoss {
  std::optional<Tensor<T>> ar, fm;
  Tensor<T> total;
  double mean_injection = 0;
};

// Forward pass of one homogeneous batch through tokenizer, backbone and head.
template <typename T>
BatchLoss<T> batch_loss(const Model<T>& model, const Batch& batch, Rng& rng, double cfg_dropout, double lambda);

std::set<ParamGroup> stage_groups(char stage);  // 'A', 'B', 'C'

using MetricsSink = std::function<void(const StepMetrics&)>;

struct StageRun {
  char name = 'A';
  StageConfig stage;
  std::uint64_t data_seed = 0;
};

// Trains one stage; throws std::runtime_error naming the step on a
// non-finite loss.
template <typename T>
void run_stage(Model<T>& model, const StageRun& run, const MetricsSink& sink = {});

// Pretrains the VAE on rendered scenes and glyphs, then measures the latent
// statistics. Returns the final reconstruction loss.
template <typename T>
double pretrain_vae(Model<T>& model, const MetricsSink& sink = {});
template <typename T>
LatentStats measure_latent_stats(const Model<T>& model, int n_images, std::uint64_t seed);

std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

}  // namespace umm
