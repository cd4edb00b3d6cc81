// umm: train, sample and evaluate the desk-scale unified multimodal model.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "umm/image_io.hpp"
#include "umm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace umm;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  apply_env_overrides(cfg);
  return cfg;
}

std::unique_ptr<Model<float>> open_checkpoint(const std::string& ckpt, const std::string& config_path) {
  CheckpointInfo hdr = read_checkpoint_info(ckpt);
  if (!config_path.empty()) {
    RunConfig cfg = load_config(config_path);
    if (cfg.digest() != hdr.digest) {
      throw std::runtime_error("config digest mismatch: checkpoint " + digest_hex(hdr.digest) + ", config " +
                               digest_hex(cfg.digest()));
    }
  }
  return load_model(ckpt);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

nlohmann::json spec_json(const SceneSpec& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", shape_word(o.shape)}, {"color", color_word(o.color)}, {"cell", cell_phrase(o.cell)}});
  }
  return {{"background", color_word(s.background)}, {"objects", objs}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale unified multimodal model"};
  app.require_subcommand(1);

  std::string config_path, resume, run_dir;
  auto* train = app.add_subcommand("train", "VAE pretraining, Stage A, Stage B");
  train->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "stage checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--run-dir", run_dir, "output directory (default: <out_dir>/<digest>-<time>)");

  std::string ckpt, prompt, out_dir = ".";
  std::optional<int> steps;
  std::optional<double> alpha, cfg_scale;
  std::optional<std::uint64_t> seed;
  bool dump_gates = false;
  auto* sample = app.add_subcommand("sample", "generate an image from a prompt");
  sample->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  sample->add_option("prompt", prompt)->required();
  sample->add_option("--steps", steps);
  sample->add_option("--alpha", alpha);
  sample->add_option("--cfg-scale", cfg_scale);
  sample->add_option("--seed", seed);
  sample->add_flag("--dump-gates", dump_gates, "write one gate heatmap per step");
  sample->add_option("--out", out_dir, "output directory");
  sample->add_option("--config", config_path, "verify the checkpoint against this config");

  int n_seeds = 0;
  std::string out_csv;
  auto* eval_gen_cmd = app.add_subcommand("eval-gen", "per-category generation accuracy");
  eval_gen_cmd->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  eval_gen_cmd->add_option("--seeds", n_seeds, "images per category (default: eval.seeds)");
  eval_gen_cmd->add_option("--out", out_csv, "CSV path (default: stdout)");
  eval_gen_cmd->add_option("--config", config_path, "verify the checkpoint against this config");
  eval_gen_cmd->add_option("--steps", steps);
  eval_gen_cmd->add_option("--alpha", alpha);
  eval_gen_cmd->add_option("--cfg-scale", cfg_scale);

  int items = 0;
  bool compare_modes = false;
  std::string probe_dir = "probe";
  auto* eval_und_cmd = app.add_subcommand("eval-und", "held-out QA exact match");
  eval_und_cmd->add_option("checkpoint", ckpt)->check(CLI::ExistingFile);
  eval_und_cmd->add_option("--items", items, "QA items (default: eval.qa_items)");
  eval_und_cmd->add_flag("--compare-modes", compare_modes, "train and score the glyph probe in both tokenizer modes");
  eval_und_cmd->add_option("--config", config_path, "config for --compare-modes, or to verify the checkpoint");
  eval_und_cmd->add_option("--probe-dir", probe_dir);

  std::string ablate_dir = "ablation";
  auto* ablate = app.add_subcommand("ablate-hfi", "train HFI on and off arms and compare");
  ablate->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  ablate->add_option("--dir", ablate_dir);

  int count = 100;
  std::uint64_t corpus_seed = 0;
  auto* export_cmd = app.add_subcommand("export-corpus", "write PPM images and JSON-lines metadata");
  export_cmd->add_option("out", out_dir)->required();
  export_cmd->add_option("--count", count);
  export_cmd->add_option("--seed", corpus_seed);

  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint header and tensor index");
  inspect->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }

  try {
    if (*train) {
      RunConfig cfg = load_config(config_path);
      if (run_dir.empty()) run_dir = make_run_dir(cfg);
      log_line("run directory " + run_dir);
      train_pipeline(cfg, run_dir, resume, log_line);
      std::cout << run_dir << std::endl;
    } else if (*sample) {
      auto model = open_checkpoint(ckpt, config_path);
      RunConfig env_cfg = model->cfg;
      const std::uint64_t before = env_cfg.run.seed;
      apply_env_overrides(env_cfg);
      std::uint64_t s = seed ? *seed : (env_cfg.run.seed != before ? env_cfg.run.seed : model->cfg.sampler.seed);
      SamplerConfig sc{steps.value_or(model->cfg.sampler.steps), alpha.value_or(model->cfg.sampler.alpha),
                       cfg_scale.value_or(model->cfg.sampler.cfg_scale)};
      sc.keep_gates = dump_gates;
      auto unknown = model->vocab.unknown_words(prompt);
      if (!unknown.empty()) {
        std::string list;
        for (const auto& w : unknown) list += (list.empty() ? "" : ",") + w;
        throw std::invalid_argument("unknown prompt words: " + list);
      }
      auto ids = model->vocab.encode(prompt);
      auto res = sample_images(*model, {ids}, {s}, sc);
      fs::create_directories(out_dir);
      const std::string tag = std::to_string(s);
      write_ppm((fs::path(out_dir) / ("out_" + tag + ".ppm")).string(), res.images[0]);
      const auto& tr = res.traces[0];
      auto norm = analyze_hfi({tr});
      std::ostringstream csv;
      csv.precision(9);
      csv << "step,t,raw_intensity,normalized_intensity\n";
      for (std::size_t k = 0; k < tr.t.size(); ++k)
        csv << k << "," << tr.t[k] << "," << tr.intensity[k] << "," << norm[k] << "\n";
      write_file(fs::path(out_dir) / ("trace_" + tag + ".csv"), csv.str());
      if (dump_gates) {
        for (std::size_t k = 0; k < tr.gates.size(); ++k) {
          write_ppm((fs::path(out_dir) / ("gate_" + tag + "_" + std::to_string(k) + ".ppm")).string(),
                    heatmap(tr.gates[k], tr.gate_side));
        }
      }
      auto found = detect(res.images[0]);
      std::cout << "out_" << tag << ".ppm detected: " << describe(found) << std::endl;
    } else if (*eval_gen_cmd) {
      auto model = open_checkpoint(ckpt, config_path);
      SamplerConfig sc{steps.value_or(model->cfg.sampler.steps), alpha.value_or(model->cfg.sampler.alpha),
                       cfg_scale.value_or(model->cfg.sampler.cfg_scale)};
      auto res = eval_gen(*model, n_seeds > 0 ? n_seeds : model->cfg.eval.seeds, sc, model->cfg.run.seed);
      if (out_csv.empty()) std::cout << res.csv();
      else write_file(out_csv, res.csv());
    } else if (*eval_und_cmd) {
      if (compare_modes) {
        RunConfig cfg = config_path.empty() ? (ckpt.empty() ? RunConfig{} : load_model(ckpt)->cfg)
                                            : load_config(config_path);
        auto rep = compare_tokenizer_modes(cfg, probe_dir, log_line);
        std::cout << "mode,glyph_accuracy\npixel," << rep.pixel << "\nlatent," << rep.latent << "\ngap,"
                  << rep.gap() << std::endl;
      } else {
        if (ckpt.empty()) throw std::invalid_argument("eval-und needs a checkpoint");
        auto model = open_checkpoint(ckpt, config_path);
        double acc = eval_und(*model, items > 0 ? items : model->cfg.eval.qa_items, model->cfg.run.seed);
        std::cout << "qa_exact_match," << acc << std::endl;
      }
    } else if (*ablate) {
      RunConfig cfg = load_config(config_path);
      auto rep = ablate_hfi(cfg, ablate_dir, log_line);
      std::cout << rep.csv();
      std::cout << "max_injection_hfi_off," << rep.max_off_injection << std::endl;
    } else if (*export_cmd) {
      fs::create_directories(out_dir);
      std::ofstream meta(fs::path(out_dir) / "corpus.jsonl");
      if (!meta) throw std::runtime_error("cannot write corpus metadata in " + out_dir);
      Vocab vocab = Vocab::standard();
      for (int i = 0; i < count; ++i) {
        Rng rng = Rng::stream(corpus_seed, "corpus", static_cast<std::uint64_t>(i));
        SceneSpec spec = random_scene(rng);
        std::string name = "scene_" + std::to_string(i) + ".ppm";
        write_ppm((fs::path(out_dir) / name).string(), render(spec));
        auto qa = make_qa(spec, rng);
        nlohmann::json j{{"image", name}, {"spec", spec_json(spec)}, {"caption", caption(spec, rng)},
                         {"question", qa.question}, {"answer", qa.answer}};
        meta << j.dump() << "\n";
      }
      std::cout << count << " scenes written to " << out_dir << std::endl;
    } else if (*inspect) {
      auto info = read_checkpoint_info(ckpt);
      std::size_t total = 0;
      std::cout << "version " << info.version << "\ndigest " << digest_hex(info.digest) << "\nstage " << info.stage
                << "\ntensors " << info.tensors.size() << "\n";
      for (const auto& e : info.tensors) {
        std::cout << "  " << e.name << " [" << group_name(e.group) << "] " << shape_str(e.shape) << " @" << e.offset
                  << "\n";
        total += numel(e.shape);
      }
      std::cout << "parameters " << total << "\nlatent mean";
      for (double v : info.stats.mean) std::cout << " " << v;
      std::cout << "\nlatent std";
      for (double v : info.stats.std) std::cout << " " << v;
      std::cout << std::endl;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
