#include "umm/sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace umm {

double shift_time(double t, double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("shift alpha must be > 0");
  if (!(t >= 0 && t <= 1)) throw std::invalid_argument("shift_time: t outside [0, 1]");
  if (t == 0.0 || t == 1.0) return t;
  return alpha * t / (1.0 + (alpha - 1.0) * t);
}

std::vector<double> time_grid(int steps, double alpha) {
  if (steps < 1) throw std::invalid_argument("sampler needs at least one step");
  std::vector<double> g(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) g[k] = shift_time(static_cast<double>(k) / steps, alpha);
  return g;
}

template <typename T>
Tensor<T> cfg_velocity(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double s) {
  if (v_cond.shape() != v_uncond.shape()) {
    throw std::invalid_argument("cfg_velocity shapes differ: " + shape_str(v_cond.shape()) + " vs " +
                                shape_str(v_uncond.shape()));
  }
  Buffer<T> out(v_cond.size());
  const T a = static_cast<T>(1.0 - s), b = static_cast<T>(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * v_uncond[i] + b * v_cond[i];
  return Tensor<T>::from(v_cond.shape(), std::move(out));
}

template <typename T>
Tensor<T> euler_step(const Tensor<T>& z, const Tensor<T>& v, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("euler_step needs dt > 0");
  if (z.shape() != v.shape()) throw std::invalid_argument("euler_step shapes differ");
  Buffer<T> out(z.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] + v[i] * static_cast<T>(dt);
  return Tensor<T>::from(z.shape(), std::move(out));
}

template <typename T>
SampleResult sample_images(const Model<T>& model, const std::vector<std::vector<int>>& prompts,
                           const std::vector<std::uint64_t>& seeds, const SamplerConfig& cfg) {
  if (prompts.size() != seeds.size()) throw std::invalid_argument("one seed per prompt required");
  if (prompts.empty()) return {};
  for (const auto& p : prompts)
    if (p.empty()) throw std::invalid_argument("empty prompt");
  NoGradGuard guard;
  const int b = static_cast<int>(prompts.size());
  Shape shape = model.latent_shape(b);
  const std::size_t per = numel(shape) / b;
  Buffer<T> noise(numel(shape));
  for (int i = 0; i < b; ++i) {
    Rng rng = Rng::stream(seeds[i], "sample-noise");
    for (std::size_t k = 0; k < per; ++k) noise[i * per + k] = static_cast<T>(rng.normal());
  }
  Tensor<T> z = Tensor<T>::from(shape, std::move(noise));
  const std::vector<std::vector<int>> null_cond(static_cast<std::size_t>(b), std::vector<int>{Vocab::kNullCond});
  const auto grid = time_grid(cfg.steps, cfg.alpha);

  SampleResult res;
  res.traces.resize(static_cast<std::size_t>(b));
  for (int k = 0; k < cfg.steps; ++k) {
    std::vector<double> t(static_cast<std::size_t>(b), grid[k]);
    auto cond = model.velocity(z, t, prompts);
    Tensor<T> v = cond.velocity;
    if (!cfg.skip_uncond) {
      auto unc = model.velocity(z, t, null_cond);
      v = cfg_velocity(cond.velocity, unc.velocity, cfg.cfg_scale);
    }
    const std::size_t inj = cond.injected.size() / b;
    const int side = cond.gate.dim(1);
    const std::size_t gper = cond.gate.size() / b;
    for (int i = 0; i < b; ++i) {
      auto& tr = res.traces[i];
      double s = 0;
      for (std::size_t q = 0; q < inj; ++q) s += std::abs(static_cast<double>(cond.injected[i * inj + q]));
      tr.t.push_back(grid[k]);
      tr.intensity.push_back(s / static_cast<double>(inj));
      tr.gate_side = side;
      if (cfg.keep_gates) {
        std::vector<float> g(gper);
        for (std::size_t q = 0; q < gper; ++q) g[q] = static_cast<float>(cond.gate[i * gper + q]);
        tr.gates.push_back(std::move(g));
      }
    }
    z = euler_step(z, v, grid[k + 1] - grid[k]);
    for (T x : z.vec()) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw std::runtime_error("non-finite latent at sampling step " + std::to_string(k));
      }
    }
  }
  Tensor<T> pix = model.decode_latent(z);
  for (int i = 0; i < b; ++i) res.images.push_back(tensor_to_image(pix, i));
  return res;
}

std::vector<double> analyze_hfi(const std::vector<HfiTrace>& traces) {
  if (traces.empty()) return {};
  const std::size_t n = traces[0].intensity.size();
  std::vector<double> acc(n, 0.0);
  for (const auto& tr : traces) {
    if (tr.intensity.size() != n) throw std::invalid_argument("HFI traces differ in length");
    double lo = tr.intensity.empty() ? 0 : tr.intensity[0], hi = lo;
    for (double v : tr.intensity) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (std::size_t k = 0; k < n; ++k) acc[k] += hi > lo ? (tr.intensity[k] - lo) / (hi - lo) : 0.5;
  }
  for (auto& v : acc) v /= static_cast<double>(traces.size());
  return acc;
}

template Tensor<float> cfg_velocity(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> cfg_velocity(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> euler_step(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> euler_step(const Tensor<double>&, const Tensor<double>&, double);
template SampleResult sample_images(const Model<float>&, const std::vector<std::vector<int>>&,
                                    const std::vector<std::uint64_t>&, const SamplerConfig&);
template SampleResult sample_images(const Model<double>&, const std::vector<std::vector<int>>&,
                                    const std::vector<std::uint64_t>&, const SamplerConfig&);

}  // namespace umm
