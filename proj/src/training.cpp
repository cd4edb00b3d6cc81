#include "umm/training.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace umm {

template <typename T>
Tensor<T> ar_loss(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  return cross_entropy(logits, targets, mask);
}

template <typename T>
Tensor<T> fm_loss(const Tensor<T>& v, const Tensor<T>& z1, const Tensor<T>& z0) {
  if (v.shape() != z1.shape() || z1.shape() != z0.shape()) {
    throw std::invalid_argument("fm_loss shapes differ: v " + shape_str(v.shape()) + ", z1 " + shape_str(z1.shape()) +
                                ", z0 " + shape_str(z0.shape()));
  }
  Tensor<T> target;
  {
    NoGradGuard guard;
    target = sub(z1.detach(), z0.detach());
  }
  return mse(v, target);
}

template <typename T>
Tensor<T> total_loss(const std::optional<Tensor<T>>& ar, const std::optional<Tensor<T>>& fm, double lambda) {
  if (!ar && !fm) throw std::invalid_argument("total_loss needs at least one component");
  if (!fm) return *ar;
  Tensor<T> weighted = scale(*fm, static_cast<T>(lambda));
  return ar ? add(*ar, weighted) : weighted;
}

std::vector<int> apply_cfg_dropout(const std::vector<int>& cond, Rng& rng, double p) {
  if (!(p >= 0 && p < 1)) throw std::invalid_argument("cfg dropout must lie in [0, 1)");
  if (rng.bernoulli(p)) return {Vocab::kNullCond};
  return cond;
}

int warmup_steps(const StageConfig& stage, double warmup_ratio) {
  return static_cast<int>(std::lround(warmup_ratio * stage.steps));
}

double learning_rate(const StageConfig& stage, double warmup_ratio, int step) {
  const int w = warmup_steps(stage, warmup_ratio);
  if (step < w) return stage.lr * step / w;
  if (stage.schedule == LrSchedule::Constant) return stage.lr;
  const int span = stage.steps - w;
  if (span <= 0) return stage.lr;
  const double progress = std::min(1.0, static_cast<double>(step - w) / span);
  return stage.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params) {
  double s = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    auto* node = p.node();
    for (T g : node->grad) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.grad()) g *= f;
    }
  }
  return norm;
}

template <typename T>
void AdamW<T>::step(std::vector<Tensor<T>>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("optimizer parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.values();
    const bool decay = p.rank() >= 2;
    const bool has = p.has_grad();
    const T* g = has ? p.node()->grad.data() : nullptr;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      m[k] = static_cast<T>(b1_ * m[k] + (1 - b1_) * gk);
      v[k] = static_cast<T>(b2_ * v[k] + (1 - b2_) * gk * gk);
      double upd = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      if (decay) upd += wd_ * w[k];
      w[k] = static_cast<T>(w[k] - lr * upd);
    }
  }
}

template <typename T>
BatchLoss<T> batch_loss(const Model<T>& model, const Batch& batch, Rng& rng, double cfg_dropout, double lambda) {
  const int b = static_cast<int>(batch.samples.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  for (const auto& s : batch.samples) {
    if (s.task != batch.task) throw std::invalid_argument("batch mixes task kinds");
  }
  BatchLoss<T> out;
  const int n_img = model.n_image(), c = model.backbone.width, cs = model.cfg.compressed_side();

  Tensor<T> z1;
  if (batch.task != TaskKind::TextOnly) {
    std::vector<const Image*> images;
    for (const auto& s : batch.samples) images.push_back(&*s.image);
    z1 = model.encode_latent(images, &rng);
  }
  auto lat = make_task_latent(batch.task == TaskKind::TextOnly ? nullptr : &z1, batch.task, rng,
                              model.latent_shape(b));
  auto tok = model.tokenizer(lat.z_t, model.vae, model.stats);
  Tensor<T> image_tokens = reshape(tok.compressed, {b, n_img, c});

  std::vector<SequenceSpec> specs;
  for (const auto& s : batch.samples) {
    if (batch.task == TaskKind::Generation) {
      specs.push_back(make_sequence(s.task, n_img, apply_cfg_dropout(s.cond, rng, cfg_dropout), {}));
    } else {
      specs.push_back(make_sequence(s.task, n_img, s.cond, s.target));
    }
  }
  auto res = model.backbone.forward(specs, image_tokens);

  if (batch.task == TaskKind::Generation) {
    Tensor<T> hidden = reshape(res.image_hidden(), {b, cs, cs, c});
    auto head = model.head.forward(hidden, tok.details, lat.t);
    out.fm = fm_loss(head.velocity, z1, lat.z0);
    double s = 0;
    for (T v : head.injected.vec()) s += std::abs(static_cast<double>(v));
    out.mean_injection = s / static_cast<double>(head.injected.size());
  } else {
    std::vector<int> next;
    Tensor<T> logits = model.backbone.target_logits(res, &next);
    std::vector<std::uint8_t> mask(next.size(), 1);
    out.ar = ar_loss(logits, next, mask);
  }
  out.total = total_loss(out.ar, out.fm, lambda);
  return out;
}

std::set<ParamGroup> stage_groups(char stage) {
  switch (stage) {
    case 'A': return {ParamGroup::Projection, ParamGroup::Head, ParamGroup::Gate};
    case 'B':
    case 'C':
      return {ParamGroup::Encoder, ParamGroup::Projection, ParamGroup::Backbone, ParamGroup::Head, ParamGroup::Gate};
  }
  throw std::invalid_argument(std::string("unknown stage ") + stage);
}

template <typename T>
void run_stage(Model<T>& model, const StageRun& run, const MetricsSink& sink) {
  const auto& cfg = model.cfg;
  auto params = model.store.set_trainable(stage_groups(run.name));
  AdamW<T> opt(cfg.train.beta1, cfg.train.beta2, cfg.train.weight_decay);
  DataOptions opts;
  opts.prior.backgrounds = cfg.data.backgrounds;
  opts.qa_fraction = cfg.train.qa_fraction;
  opts.glyph_fraction = cfg.train.glyph_fraction;
  const std::string tag = std::string("stage-") + run.name;
  DataStream stream(run.stage.mix, run.data_seed, cfg.train.batch, model.vocab, opts, tag);
  for (int step = 0; step < run.stage.steps; ++step) {
    Batch batch = stream.batch(static_cast<std::uint64_t>(step));
    Rng rng = Rng::stream(run.data_seed, tag + "-step", static_cast<std::uint64_t>(step));
    model.store.zero_grad();
    auto loss = batch_loss(model, batch, rng, cfg.train.cfg_dropout, cfg.train.lambda);
    const double total = loss.total.item();
    if (!std::isfinite(total)) {
      throw std::runtime_error("non-finite loss at stage " + std::string(1, run.name) + " step " +
                               std::to_string(step));
    }
    backward(loss.total);
    StepMetrics m;
    m.step = step;
    m.task = batch.task;
    m.has_ar = loss.ar.has_value();
    m.has_fm = loss.fm.has_value();
    if (m.has_ar) m.loss_ar = loss.ar->item();
    if (m.has_fm) m.loss_fm = loss.fm->item();
    m.loss_total = total;
    m.grad_norm = clip_grad_norm(params, cfg.train.grad_clip);
    m.lr = learning_rate(run.stage, cfg.train.warmup_ratio, step);
    opt.step(params, m.lr);
    if (sink) sink(m);
  }
  model.store.set_trainable({});
  model.store.zero_grad();
}

namespace {

std::vector<Image> vae_images(std::uint64_t seed, std::uint64_t index, int n, const ScenePrior& prior) {
  Rng rng = Rng::stream(seed, "vae-data", index);
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) {
    if (rng.bernoulli(0.2)) {
      int d = rng.uniform_int(0, 9);
      int top = rng.uniform_int(0, kImageSize - 14), left = rng.uniform_int(0, kImageSize - 10);
      out.push_back(render_glyph(d, top, left));
    } else {
      out.push_back(render(random_scene(rng, prior)));
    }
  }
  return out;
}

}  // namespace

template <typename T>
double pretrain_vae(Model<T>& model, const MetricsSink& sink) {
  const auto& cfg = model.cfg;
  auto params = model.store.set_trainable({ParamGroup::Vae});
  AdamW<T> opt(0.9, 0.99, 0.0);
  StageConfig sched{cfg.vae.steps, cfg.vae.lr, LrSchedule::Cosine, {}};
  ScenePrior prior{cfg.data.backgrounds};
  double last = 0;
  for (int step = 0; step < cfg.vae.steps; ++step) {
    auto images = vae_images(cfg.run.seed, static_cast<std::uint64_t>(step), cfg.vae.batch, prior);
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    Tensor<T> x = images_to_tensor<T>(ptrs);
    Rng rng = Rng::stream(cfg.run.seed, "vae-step", static_cast<std::uint64_t>(step));
    model.store.zero_grad();
    auto dist = model.vae.encode(x);
    Tensor<T> recon = model.vae.decode(model.vae.sample(dist, rng));
    Tensor<T> loss = vae_loss(x, recon, dist, static_cast<T>(cfg.vae.beta));
    last = loss.item();
    if (!std::isfinite(last)) throw std::runtime_error("non-finite VAE loss at step " + std::to_string(step));
    backward(loss);
    StepMetrics m;
    m.step = step;
    m.loss_total = last;
    m.grad_norm = clip_grad_norm(params, cfg.train.grad_clip);
    m.lr = learning_rate(sched, cfg.train.warmup_ratio, step);
    opt.step(params, m.lr);
    if (sink) sink(m);
  }
  model.store.set_trainable({});
  model.store.zero_grad();
  model.stats = measure_latent_stats(model, 512, cfg.run.seed);
  return last;
}

template <typename T>
LatentStats measure_latent_stats(const Model<T>& model, int n_images, std::uint64_t seed) {
  NoGradGuard guard;
  const int d = model.cfg.vae.latent_dim;
  std::vector<double> s1(d, 0.0), s2(d, 0.0);
  std::size_t count = 0;
  ScenePrior prior{model.cfg.data.backgrounds};
  for (int done = 0, k = 0; done < n_images; ++k) {
    int n = std::min(64, n_images - done);
    auto images = vae_images(seed ^ 0x5eedULL, 1000000 + k, n, prior);
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    auto dist = model.vae.encode(images_to_tensor<T>(ptrs));
    for (std::size_t i = 0; i < dist.mean.size(); ++i) {
      double v = dist.mean[i];
      s1[i % d] += v;
      s2[i % d] += v * v;
    }
    count += dist.mean.size() / d;
    done += n;
  }
  LatentStats st;
  for (int c = 0; c < d; ++c) {
    double m = s1[c] / count;
    st.mean.push_back(m);
    st.std.push_back(std::sqrt(std::max(s2[c] / count - m * m, 1e-12)));
  }
  return st;
}

std::string metrics_header() { return "step,task,loss_ar,loss_fm,loss_total,grad_norm,lr"; }

std::string metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(9);
  os << m.step << "," << task_name(m.task) << ",";
  if (m.has_ar) os << m.loss_ar;
  os << ",";
  if (m.has_fm) os << m.loss_fm;
  os << "," << m.loss_total << "," << m.grad_norm << "," << m.lr;
  return os.str();
}

#define UMM_INSTANTIATE_TRAINING(T)                                                                        \
  template Tensor<T> ar_loss(const Tensor<T>&, std::span<const int>, std::span<const std::uint8_t>);      \
  template Tensor<T> fm_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> total_loss(const std::optional<Tensor<T>>&, const std::optional<Tensor<T>>&, double); \
  template double clip_grad_norm(std::vector<Tensor<T>>&, double);                                         \
  template double grad_norm(const std::vector<Tensor<T>>&);                                                \
  template class AdamW<T>;                                                                                 \
  template BatchLoss<T> batch_loss(const Model<T>&, const Batch&, Rng&, double, double);                  \
  template void run_stage(Model<T>&, const StageRun&, const MetricsSink&);                                 \
  template double pretrain_vae(Model<T>&, const MetricsSink&);                                             \
  template LatentStats measure_latent_stats(const Model<T>&, int, std::uint64_t);

UMM_INSTANTIATE_TRAINING(float)
UMM_INSTANTIATE_TRAINING(double)

}  // namespace umm
