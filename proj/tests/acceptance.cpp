// Acceptance run: one PASS/FAIL line per criterion, exit 1 when any fails.
//
//   acceptance [--only 1,2,5] [--config configs/acceptance.cfg]
//              [--probe-config configs/default.cfg] [--cache DIR]
//
// Trained runs are cached under --cache keyed by config digest, so a rerun
// only repeats evaluation.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "test_util.hpp"
#include "toy_flow.hpp"
#include "umm/grad_check.hpp"
#include "umm/image_io.hpp"
#include "umm/pipeline.hpp"

using namespace umm;
using umm::testing::random_tensor;
using umm::testing::tiny_config;
using T64 = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

bool bit_equal(const T64& a, const T64& b) { return a.shape() == b.shape() && a.vec() == b.vec(); }

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Vocab vocab() { return Vocab::standard(); }

// --- 1 ------------------------------------------------------------------------

Outcome gradient_integrity() {
  std::vector<std::pair<std::string, double>> errs;
  auto w = random_tensor({2, 3, 4}, 29);
  auto x = random_tensor({2, 3, 4}, 31);
  auto probe = [](const T64& y) { return sum(mul(y, random_tensor(y.shape(), 30 + y.size()))); };
  auto prim = [&](const std::string& name, auto f) {
    errs.push_back({name, grad_check([&](const T64& v) { return probe(f(v)); }, x, 1e-5)});
  };
  prim("add", [&](const T64& v) { return add(v, w); });
  prim("mul", [&](const T64& v) { return mul(v, w); });
  prim("silu", [](const T64& v) { return silu(v); });
  prim("gelu", [](const T64& v) { return gelu(v); });
  prim("sigmoid", [](const T64& v) { return sigmoid(v); });
  prim("layer_norm", [](const T64& v) { return layer_norm_plain(v, 1e-5); });
  prim("matmul", [](const T64& v) {
    return matmul(reshape(v, {6, 4}), reshape(slice_last(reshape(v, {6, 4}), 0, 4), {4, 6}));
  });
  prim("modulate", [](const T64& v) {
    return modulate(v, slice_last(reshape(v, {2, 12}), 0, 4), slice_last(reshape(v, {2, 12}), 4, 4));
  });
  prim("pixel_unshuffle", [](const T64& v) { return pixel_unshuffle(reshape(v, {2, 2, 2, 3}), 2); });
  prim("pixel_shuffle", [](const T64& v) { return pixel_shuffle(reshape(v, {2, 1, 3, 4}), 2); });
  prim("im2col", [](const T64& v) { return im2col3x3(reshape(v, {2, 3, 2, 2})); });
  prim("attention", [&](const T64& v) {
    std::vector<BitMatrix> masks{BitMatrix::causal(3), BitMatrix::full(3)};
    return multi_head_attention(v, mul(v, w), add(v, w), 2, std::span<const BitMatrix>(masks));
  });
  std::vector<int> targets{1, 3, 0, 2, 2, 1};
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  errs.push_back({"cross_entropy", grad_check([&](const T64& v) { return cross_entropy(reshape(v, {6, 4}), targets, mask); }, x, 1e-5)});
  errs.push_back({"kl", grad_check([&](const T64& v) { return kl_standard_normal(v, mul(v, w)); }, x, 1e-5)});
  errs.push_back({"fm_loss", grad_check([&](const T64& v) { return fm_loss(v, w, mul(w, w)); }, x, 1e-5)});

  RunConfig cfg = tiny_config();
  {
    ParamStore<double> store(3);
    Vae<double> vae(store, cfg);
    store.randomize(4, 0.3);
    Rng rng(9);
    std::vector<Image> imgs{render(random_scene(rng)), render(random_scene(rng))};
    T64 xi = images_to_tensor<double>({&imgs[0], &imgs[1]});
    T64 eps = random_tensor({2, 4, 4, 2}, 10);
    auto loss = [&] {
      auto d = vae.encode(xi);
      return vae_loss(xi, vae.decode(reparameterize(d.mean, d.logvar, eps)), d, 0.1);
    };
    errs.push_back({"vae", grad_check_params(loss, store.tensors({ParamGroup::Vae}), 1e-4, 12)});
  }
  for (auto mode : {TokenizerMode::PixelReconstruct, TokenizerMode::LatentDirect}) {
    RunConfig c = cfg;
    c.tokenizer.mode = mode;
    Model<double> m(c, vocab());
    m.store.randomize(7, 0.3);
    T64 z = random_tensor({2, 4, 4, 2}, 8);
    auto loss = [&] {
      auto out = m.tokenizer(z, m.vae, m.stats);
      return add(mean(mul(out.compressed, out.compressed)), mean(out.details));
    };
    errs.push_back({std::string("tokenizer/") + mode_name(mode),
                    grad_check_params(loss, m.store.tensors({ParamGroup::Encoder, ParamGroup::Projection}), 1e-4, 8)});
  }
  {
    Model<double> m(cfg, vocab());
    m.store.randomize(11, 0.4);
    auto s1 = make_sequence(TaskKind::Understanding, 4, {10, 11}, {13, 14});
    auto s2 = make_sequence(TaskKind::Generation, 4, {12, 9, 8}, {});
    T64 img = random_tensor({2, 4, 16}, 3);
    img.set_requires_grad(true);
    auto loss = [&] {
      auto out = m.backbone.forward({s1, s2}, img);
      std::vector<int> next;
      auto logits = m.backbone.target_logits(out, &next);
      std::vector<std::uint8_t> mk(next.size(), 1);
      return add(ar_loss(logits, next, mk), mean(mul(out.image_hidden(), out.image_hidden())));
    };
    auto params = m.store.tensors({ParamGroup::Backbone});
    params.push_back(img);
    errs.push_back({"backbone", grad_check_params(loss, params, 1e-4, 10)});
  }
  {
    Model<double> m(cfg, vocab());
    m.store.randomize(5, 0.3);
    T64 h = random_tensor({2, 2, 2, 16}, 1), details = random_tensor({2, 4, 4, 8}, 2);
    h.set_requires_grad(true);
    details.set_requires_grad(true);
    std::vector<double> t{0.25, 0.8};
    T64 target = random_tensor({2, 4, 4, 2}, 3);
    auto loss = [&] { return mse(m.head.forward(h, details, t).velocity, target); };
    auto params = m.store.tensors({ParamGroup::Head, ParamGroup::Gate});
    params.push_back(h);
    params.push_back(details);
    errs.push_back({"cfm_head+gate", grad_check_params(loss, params, 1e-4, 8)});
  }
  {
    Model<double> m(cfg, vocab());
    m.store.randomize(6, 0.25);
    m.stats = {{0.1, -0.2}, {1.5, 0.8}};
    for (auto task : {TaskKind::Generation, TaskKind::Understanding, TaskKind::TextOnly}) {
      TaskMix mix{int(task == TaskKind::Understanding), int(task == TaskKind::Generation),
                  int(task == TaskKind::TextOnly)};
      Batch batch = DataStream(mix, 5, 2, vocab()).batch(0);
      auto loss = [&] {
        Rng rng(9);
        return batch_loss(m, batch, rng, 0.5, 1.0).total;
      };
      errs.push_back({std::string("losses/") + task_name(task),
                      grad_check_params(loss, m.store.tensors(stage_groups('B')), 1e-4, 3)});
    }
  }
  double worst = 0;
  std::string where;
  for (auto& [n, e] : errs)
    if (e >= worst) worst = e, where = n;
  return {worst < 1e-4, fmt("%.0f checks, max relative error %.2e", double(errs.size()), worst) + " (" + where + ")"};
}

// --- 2 ------------------------------------------------------------------------

Outcome mask_exactness() {
  Model<double> m(tiny_config(), vocab());
  m.store.randomize(11, 0.4);
  const int n_img = m.n_image(), c = m.backbone.width;
  Rng rng(3);
  long probes = 0, leaks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    TaskKind task = trial % 2 ? TaskKind::Understanding : TaskKind::TextOnly;
    std::vector<int> cond, ans;
    if (task == TaskKind::Understanding)
      for (int i = 0; i < 3; ++i) cond.push_back(6 + rng.uniform_int(0, 19));
    for (int i = 0; i < 5; ++i) ans.push_back(6 + rng.uniform_int(0, 19));
    auto spec = make_sequence(task, n_img, cond, ans);
    T64 img = random_tensor({1, n_img, c}, trial);
    auto base = m.backbone.forward({spec}, img);
    auto lbase = m.backbone.target_logits(base);
    const int v = lbase.dim(1);
    for (std::size_t j = 1; j < spec.target.size(); ++j) {
      auto pert = spec;
      pert.target[j] = pert.target[j] == 7 ? 8 : 7;
      auto lp = m.backbone.target_logits(m.backbone.forward({pert}, img));
      for (std::size_t i = 0; i < j; ++i)
        for (int k = 0; k < v; ++k, ++probes) leaks += lp[i * v + k] != lbase[i * v + k];
    }
  }
  long unreached = 0, pairs = 0;
  for (auto task : {TaskKind::Generation, TaskKind::Understanding}) {
    auto spec = make_sequence(task, n_img, {10, 11, 12},
                              task == TaskKind::Generation ? std::vector<int>{} : std::vector<int>{13});
    T64 img = random_tensor({1, n_img, c}, 1);
    auto base = m.backbone.forward({spec}, img).image_hidden();
    for (int tok = 0; tok < n_img; ++tok) {
      T64 pert = T64::from(img.shape(), img.vec());
      pert[tok * c] += 0.5;
      auto out = m.backbone.forward({spec}, pert).image_hidden();
      for (int pos = 0; pos < n_img; ++pos, ++pairs) {
        double d = 0;
        for (int k = 0; k < c; ++k) d += std::abs(out[pos * c + k] - base[pos * c + k]);
        unreached += d == 0.0;
      }
    }
  }
  return {leaks == 0 && unreached == 0,
          fmt("%.0f/%.0f earlier logits changed by future tokens, %.0f/%.0f image pairs unreached", double(leaks),
              double(probes), double(unreached), double(pairs))};
}

// --- 3 ------------------------------------------------------------------------

Outcome structural_identities() {
  std::vector<std::string> failed;
  for (int r : {1, 2, 4}) {
    T64 x = random_tensor({2, 8, 4 * r, 3}, 5 + r);
    if (!bit_equal(pixel_shuffle(pixel_unshuffle(x, r), r), x)) failed.push_back("shuffle r=" + std::to_string(r));
  }
  Model<double> m(RunConfig{}, vocab());
  T64 h = random_tensor({2, 4, 4, 128}, 1);
  for (double t : {0.0, 0.3, 1.0}) {
    std::vector<double> ts{t, t};
    if (!bit_equal(m.head.stage1(h, ts), h)) failed.push_back("stage1 identity");
    T64 y = random_tensor({2, 8, 8, 32}, 2);
    if (!bit_equal(m.head.stage2(y, ts), m.head.out(y))) failed.push_back("stage2 identity");
  }
  for (const auto& blk : m.head.stage1_blocks) {
    T64 s = random_tensor({2, 16, 128}, 3);
    if (!bit_equal(blk(s, random_tensor({2, 128}, 4)), s)) failed.push_back("dit block identity");
  }
  T64 g = m.head.gate(random_tensor({2, 8, 8, 32}, 1, 5.0));
  const double want = 1.0 / (1.0 + std::exp(4.0));
  double gerr = 0;
  for (double v : g.vec()) gerr = std::max(gerr, std::abs(v - want));
  if (gerr > 1e-15) failed.push_back("gate init");
  T64 z = random_tensor({2, 8, 8, 4}, 3);
  auto out = m.tokenizer(z, m.vae, m.stats);
  const std::size_t n_detail = out.details.size() / m.cfg.tokenizer.width;
  const std::size_t n_comp = out.compressed.size() / m.cfg.backbone.width;
  if (n_comp * 4 != n_detail) failed.push_back("compression ratio");
  std::string detail = fmt("gate max |g - sigmoid(-4)| %.1e, tokens %.0f -> %.0f", gerr, double(n_detail / 2),
                           double(n_comp / 2));
  for (const auto& f : failed) detail += ", failed " + f;
  return {failed.empty(), detail};
}

// --- 4 ------------------------------------------------------------------------

Outcome endpoint_semantics() {
  std::vector<std::string> failed;
  T64 z1 = random_tensor({3, 8, 8, 4}, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    auto u = make_task_latent(&z1, TaskKind::Understanding, rng);
    if (!bit_equal(u.z_t, z1)) failed.push_back("understanding z_t");
    auto x = make_task_latent<double>(nullptr, TaskKind::TextOnly, rng, {3, 8, 8, 4});
    if (!bit_equal(x.z_t, x.z0)) failed.push_back("text z_t");
  }
  for (double t = 0; t <= 1.0; t += 1.0 / 64)
    if (shift_time(t, 1.0) != t) failed.push_back("alpha=1 identity");
  for (double a : {0.5, 3.0, 10.0}) {
    if (shift_time(0.0, a) != 0.0 || shift_time(1.0, a) != 1.0) failed.push_back("endpoints");
    double prev = -1;
    for (int k = 0; k <= 10000; ++k) {
      double v = shift_time(k / 10000.0, a);
      if (!(v > prev)) {
        failed.push_back("monotone alpha=" + std::to_string(a));
        break;
      }
      prev = v;
    }
  }
  std::string detail = failed.empty() ? "z_t endpoints exact, shift identity/endpoints/monotone hold" : "";
  for (const auto& f : failed) detail += (detail.empty() ? "failed " : ", ") + f;
  return {failed.empty(), detail};
}

// --- 5 ------------------------------------------------------------------------

Outcome toy_flow() {
  auto t0 = std::chrono::steady_clock::now();
  auto r = umm::testing::run_toy_flow();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {r.max_mean_error < 0.15 && r.max_weight_error < 0.1 && secs <= 120,
          fmt("mode mean error %.3f (< 0.15), weight error %.3f (< 0.1), %.0f s", r.max_mean_error,
              r.max_weight_error, secs)};
}

// --- 6, 7, 8 --------------------------------------------------------------------

struct Trained {
  AblationReport rep;
  double train_minutes = 0;
};

Trained train_and_ablate(const RunConfig& cfg, const fs::path& cache) {
  const fs::path dir = cache / ("ablation-" + digest_hex(cfg.digest()));
  auto log = [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); };
  Trained t;
  auto t0 = std::chrono::steady_clock::now();
  // the HFI-on arm is the end-to-end run; its checkpoints are reused when cached
  t.rep = ablate_hfi(cfg, dir.string(), log);
  t.train_minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  std::ofstream(dir / "report.csv") << t.rep.csv();
  return t;
}

Outcome end_to_end(const Trained& t) {
  const auto& on = t.rep.on;
  double single = on.gen.accuracy.at(GenCategory::SingleObject);
  return {single >= 0.90 && on.gen_overall >= 0.60 && on.und >= 0.90,
          fmt("single-object %.3f (>= 0.90), overall %.3f (>= 0.60), QA %.3f (>= 0.90)", single, on.gen_overall,
              on.und)};
}

Outcome hfi_ablation(const Trained& t) {
  double gap = 100 * (t.rep.on.gen_overall - t.rep.off.gen_overall);
  double und = 100 * std::abs(t.rep.on.und - t.rep.off.und);
  return {gap >= 5.0 && und <= 2.0,
          fmt("overall on %.3f off %.3f (gap %.1f pts, >= 5), QA gap %.1f pts (<= 2)", t.rep.on.gen_overall,
              t.rep.off.gen_overall, gap, und)};
}

Outcome hfi_trajectory(const Trained& t) {
  const auto& traces = t.rep.on.gen.traces;
  auto norm = analyze_hfi(traces);
  const int n = static_cast<int>(norm.size());
  double late = 0, mid = 0;
  int nl = 0, nm = 0;
  for (int k = 0; k < n; ++k) {
    double pos = (k + 0.5) / n;
    if (pos >= 0.8) late += norm[k], ++nl;
    else if (pos >= 0.3 && pos < 0.7) mid += norm[k], ++nm;
  }
  late /= std::max(nl, 1);
  mid /= std::max(nm, 1);
  return {traces.size() >= 20 && late > mid,
          fmt("%.0f images, normalized intensity final 20%% %.3f vs middle 40%% %.3f", double(traces.size()), late,
              mid)};
}

// --- 9 ------------------------------------------------------------------------

Outcome tokenizer_probe(const RunConfig& cfg, const fs::path& cache) {
  auto log = [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); };
  auto rep = compare_tokenizer_modes(cfg, (cache / ("probe-" + digest_hex(cfg.digest()))).string(), log);
  return {100 * rep.gap() >= 15.0,
          fmt("glyph accuracy pixel %.3f latent %.3f (gap %.1f pts, >= 15)", rep.pixel, rep.latent, 100 * rep.gap())};
}

// --- 10 -----------------------------------------------------------------------

Outcome determinism(const RunConfig& base, const fs::path& cache) {
  RunConfig cfg = base;
  cfg.vae.steps = 10;
  cfg.stage_a.steps = 10;
  cfg.stage_b.steps = 10;
  std::vector<std::string> failed;
  fs::path a = cache / "determinism" / "a", b = cache / "determinism" / "b";
  fs::remove_all(cache / "determinism");
  train_pipeline(cfg, a.string());
  train_pipeline(cfg, b.string());
  for (const auto& st : stage_order(cfg)) {
    auto name = stage_checkpoint_name(st);
    if (slurp(a / name).empty() || slurp(a / name) != slurp(b / name)) failed.push_back(name);
  }
  Vocab v = vocab();
  auto model = load_model((a / "ckpt_B.ummd").string());
  SamplerConfig sc{cfg.sampler.steps, cfg.sampler.alpha, cfg.sampler.cfg_scale};
  for (int rep = 0; rep < 2; ++rep) {
    auto res = sample_images(*model, {v.encode("a red circle"), v.encode("two blue squares")}, {3, 4}, sc);
    for (int i = 0; i < 2; ++i) write_ppm((cache / "determinism" / (std::to_string(rep) + "_" + std::to_string(i) + ".ppm")).string(), res.images[i]);
  }
  for (int i = 0; i < 2; ++i) {
    auto d = cache / "determinism";
    if (slurp(d / ("0_" + std::to_string(i) + ".ppm")) != slurp(d / ("1_" + std::to_string(i) + ".ppm")))
      failed.push_back("image " + std::to_string(i));
  }
  std::string detail = failed.empty() ? "checkpoints after 10 steps and sampled PPM files are bit-identical" : "";
  for (const auto& f : failed) detail += (detail.empty() ? "differs: " : ", ") + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string config_path = UMM_SOURCE_DIR "/configs/acceptance.cfg";
  std::string probe_path = UMM_SOURCE_DIR "/configs/default.cfg";
  std::string cache = UMM_ACCEPT_CACHE;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--config", config_path, "run config for criteria 6-8 and 10")->check(CLI::ExistingFile);
  app.add_option("--probe-config", probe_path, "config for the tokenizer-mode probe")->check(CLI::ExistingFile);
  app.add_option("--cache", cache, "directory for cached runs");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg, probe_cfg;
  try {
    cfg = RunConfig::load(config_path);
    apply_env_overrides(cfg);
    probe_cfg = RunConfig::load(probe_path);
    apply_env_overrides(probe_cfg);
    fs::create_directories(cache);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::set<int> want(only.begin(), only.end());
  auto wanted = [&](int id) { return want.empty() || want.count(id); };

  const char* names[] = {"",
                         "gradient integrity",
                         "mask exactness",
                         "structural identities",
                         "endpoint semantics",
                         "toy flow matching",
                         "end-to-end desk run",
                         "HFI ablation",
                         "HFI trajectory",
                         "tokenizer-mode probe",
                         "determinism"};
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%s) [%.0f s]\n", id, names[id], o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs);
    std::fflush(stdout);
  };

  report(1, gradient_integrity);
  report(2, mask_exactness);
  report(3, structural_identities);
  report(4, endpoint_semantics);
  report(5, toy_flow);
  if (wanted(6) || wanted(7) || wanted(8)) {
    std::optional<Trained> t;
    std::string err;
    auto t0 = std::chrono::steady_clock::now();
    try {
      t = train_and_ablate(cfg, cache);
    } catch (const std::exception& e) {
      err = e.what();
    }
    std::printf("training and evaluation of both HFI arms: %.1f min\n",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60);
    auto need = [&](auto fn) {
      return [&, fn]() -> Outcome {
        if (!t) return {false, "training failed: " + err};
        return fn(*t);
      };
    };
    report(6, need(end_to_end));
    report(7, need(hfi_ablation));
    report(8, need(hfi_trajectory));
  }
  report(9, [&] { return tokenizer_probe(probe_cfg, cache); });
  report(10, [&] { return determinism(cfg, cache); });
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
