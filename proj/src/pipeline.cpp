#include "umm/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace umm {

std::string digest_hex(std::uint64_t digest) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << digest;
  return os.str();
}

std::string make_run_dir(const RunConfig& cfg) {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << digest_hex(cfg.digest()) << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  fs::path dir = fs::path(cfg.run.out_dir) / os.str();
  fs::create_directories(dir);
  return dir.string();
}

std::string stage_checkpoint_name(const std::string& stage) { return "ckpt_" + stage + ".ummd"; }

std::vector<std::string> stage_order(const RunConfig& cfg) {
  std::vector<std::string> s{"vae", "A", "B"};
  if (cfg.stage_c.steps > 0) s.push_back("C");
  return s;
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

std::unique_ptr<Model<float>> train_pipeline(const RunConfig& cfg, const std::string& run_dir,
                                             const std::string& resume, const Logger& log) {
  fs::create_directories(run_dir);
  auto model = std::make_unique<Model<float>>(cfg, Vocab::standard());
  const auto order = stage_order(cfg);

  std::string done;
  std::string from = resume;
  if (from.empty()) {
    for (const auto& st : order) {
      fs::path p = fs::path(run_dir) / stage_checkpoint_name(st);
      if (fs::exists(p) && read_checkpoint_info(p.string()).digest == cfg.digest()) from = p.string();
    }
  }
  if (!from.empty()) {
    done = load_checkpoint(*model, from).stage;
    say(log, "resuming after stage " + done + " from " + from);
  }
  write_text(fs::path(run_dir) / "config.txt", cfg.serialize());
  write_text(fs::path(run_dir) / "vocab.txt", model->vocab.serialize());

  std::size_t first = 0;
  if (!done.empty()) {
    auto it = std::find(order.begin(), order.end(), done);
    if (it == order.end()) throw std::runtime_error("checkpoint stage " + done + " unknown to this config");
    first = static_cast<std::size_t>(it - order.begin()) + 1;
  }
  if (first >= order.size()) return model;

  const fs::path metrics_path = fs::path(run_dir) / "metrics.csv";
  const bool fresh = !fs::exists(metrics_path) || done.empty();
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) metrics << "stage," << metrics_header() << "\n";

  for (std::size_t i = first; i < order.size(); ++i) {
    const std::string& st = order[i];
    auto t0 = std::chrono::steady_clock::now();
    auto sink = [&](const StepMetrics& m) {
      metrics << st << "," << metrics_row(m) << "\n";
      if (log && (m.step % 100 == 0)) {
        std::ostringstream os;
        os << "stage " << st << " step " << m.step << " " << task_name(m.task) << " loss " << m.loss_total;
        log(os.str());
      }
    };
    if (st == "vae") {
      double loss = pretrain_vae(*model, sink);
      say(log, "vae done, final loss " + std::to_string(loss));
    } else {
      const StageConfig& sc = st == "A" ? cfg.stage_a : (st == "B" ? cfg.stage_b : cfg.stage_c);
      run_stage(*model, StageRun{st[0], sc, cfg.run.seed}, sink);
    }
    metrics.flush();
    save_checkpoint(*model, st, (fs::path(run_dir) / stage_checkpoint_name(st)).string());
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    say(log, "stage " + st + " finished in " + std::to_string(static_cast<int>(secs)) + " s");
  }
  return model;
}

std::unique_ptr<Model<float>> load_model(const std::string& path, CheckpointInfo* info) {
  CheckpointInfo hdr = read_checkpoint_info(path);
  RunConfig cfg = RunConfig::parse(hdr.config_text);
  auto model = std::make_unique<Model<float>>(cfg, Vocab::parse(hdr.vocab_text));
  auto loaded = load_checkpoint(*model, path);
  if (info) *info = loaded;
  return model;
}

std::string AblationReport::csv() const {
  std::ostringstream os;
  os << "arm,gen_overall,und";
  for (auto cat : kGenCategories) os << "," << category_name(cat);
  os << "\n";
  for (auto [name, arm] : {std::pair{"hfi_on", &on}, {"hfi_off", &off}}) {
    os << name << "," << arm->gen_overall << "," << arm->und;
    for (auto cat : kGenCategories) {
      auto it = arm->gen.accuracy.find(cat);
      os << "," << (it == arm->gen.accuracy.end() ? 0.0 : it->second);
    }
    os << "\n";
  }
  return os.str();
}

AblationReport ablate_hfi(const RunConfig& cfg, const std::string& dir, const Logger& log) {
  AblationReport rep;
  SamplerConfig sc{cfg.sampler.steps, cfg.sampler.alpha, cfg.sampler.cfg_scale};
  for (bool on : {true, false}) {
    RunConfig c = cfg;
    c.head.hfi = on;
    const std::string sub = (fs::path(dir) / (on ? "hfi_on" : "hfi_off")).string();
    say(log, std::string("ablation arm ") + (on ? "on" : "off"));
    auto model = train_pipeline(c, sub, "", log);
    AblationArm& arm = on ? rep.on : rep.off;
    arm.gen = eval_gen(*model, cfg.eval.seeds, sc, cfg.run.seed);
    arm.gen_overall = arm.gen.overall;
    arm.und = eval_und(*model, cfg.eval.qa_items, cfg.run.seed);
    if (!on) {
      for (const auto& tr : arm.gen.traces)
        for (double v : tr.intensity) rep.max_off_injection = std::max(rep.max_off_injection, v);
    }
  }
  return rep;
}

ModeProbeReport compare_tokenizer_modes(const RunConfig& cfg, const std::string& dir, const Logger& log) {
  fs::create_directories(dir);
  RunConfig base = cfg;
  base.tokenizer.mode = TokenizerMode::PixelReconstruct;
  // Shared VAE: pretrained once, copied into both probes.
  Model<float> vae_model(base, Vocab::standard());
  const fs::path vae_path = fs::path(dir) / "probe_vae.ummd";
  if (fs::exists(vae_path) && read_checkpoint_info(vae_path.string()).digest == base.digest()) {
    load_checkpoint(vae_model, vae_path.string());
  } else {
    say(log, "probe: pretraining VAE");
    pretrain_vae(vae_model);
    save_checkpoint(vae_model, "vae", vae_path.string());
  }
  ModeProbeReport rep;
  for (TokenizerMode mode : {TokenizerMode::PixelReconstruct, TokenizerMode::LatentDirect}) {
    RunConfig c = base;
    c.tokenizer.mode = mode;
    c.train.glyph_fraction = 1.0;
    Model<float> m(c, Vocab::standard());
    for (const auto& e : m.store.entries()) {
      if (e.group != ParamGroup::Vae) continue;
      Tensor<float> dst = e.tensor;
      auto src = vae_model.store.find(e.name).tensor.values();
      std::copy(src.begin(), src.end(), dst.values().begin());
    }
    m.stats = vae_model.stats;
    StageConfig probe{cfg.eval.probe_steps, cfg.stage_b.lr, LrSchedule::Cosine, TaskMix{1, 0, 0}};
    say(log, std::string("probe: training ") + mode_name(mode) + " mode");
    run_stage(m, StageRun{'B', probe, cfg.run.seed});
    double acc = eval_glyph(m, cfg.eval.glyph_items, cfg.run.seed);
    say(log, std::string("probe: ") + mode_name(mode) + " glyph accuracy " + std::to_string(acc));
    (mode == TokenizerMode::PixelReconstruct ? rep.pixel : rep.latent) = acc;
  }
  return rep;
}

}  // namespace umm
