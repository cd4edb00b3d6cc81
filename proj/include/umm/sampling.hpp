#pragma once

#include <vector>

#include "umm/model.hpp"

namespace umm {

struct SamplerConfig {
  int steps = 25;
  double alpha = 3.0;
  double cfg_scale = 4.0;
  bool skip_uncond = false;  // run the conditional branch only
  bool keep_gates = false;   // store per-step gate maps in the trace
};

// t' = alpha t / (1 + (alpha - 1) t)
double shift_time(double t, double alpha);
std::vector<double> time_grid(int steps, double alpha);

// (1 - s) v_uncond + s v_cond, which equals v_uncond + s (v_cond - v_uncond)
// and is exact at s = 0 and s = 1.
template <typename T>
Tensor<T> cfg_velocity(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double s);
template <typename T>
Tensor<T> euler_step(const Tensor<T>& z, const Tensor<T>& v, double dt);

struct HfiTrace {
  std::vector<double> t;          // grid time at the start of each step
  std::vector<double> intensity;  // mean |g * details| of the conditional branch
  std::vector<std::vector<float>> gates;  // [h*w] per step when requested
  int gate_side = 0;
};

struct SampleResult {
  std::vector<Image> images;
  std::vector<HfiTrace> traces;
};

// One image per (prompt, seed) pair, batched. Noise for each image comes from
// the stream (seed, "sample-noise"), so it is independent of batch
// composition and of whether the unconditional branch runs.
template <typename T>
SampleResult sample_images(const Model<T>& model, const std::vector<std::vector<int>>& prompts,
                           const std::vector<std::uint64_t>& seeds, const SamplerConfig& cfg);

// Per-run min-max normalization, then the mean across runs per step.
// A constant run normalizes to 0.5 everywhere.
std::vector<double> analyze_hfi(const std::vector<HfiTrace>& traces);

}  // namespace umm
