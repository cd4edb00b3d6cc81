#pragma once

#include <functional>
#include <memory>
#include <string>

#include "umm/checkpoint.hpp"
#include "umm/eval.hpp"
#include "umm/training.hpp"

namespace umm {

using Logger = std::function<void(const std::string&)>;

// <out_dir>/<digest hex>-<UTC timestamp>, created.
std::string make_run_dir(const RunConfig& cfg);
std::string digest_hex(std::uint64_t digest);

std::string stage_checkpoint_name(const std::string& stage);  // ckpt_<stage>.ummd

// Stages in training order for this config: vae, A, B, and C when it has steps.
std::vector<std::string> stage_order(const RunConfig& cfg);

/// Runs VAE pretraining, Stage A, Stage B (and C) into run_dir, writing one
/// checkpoint per stage plus metrics. When `resume` names a checkpoint, the
/// stages it already covers are skipped. When run_dir already holds stage
/// checkpoints of this config, training continues after the latest one.
std::unique_ptr<Model<float>> train_pipeline(const RunConfig& cfg, const std::string& run_dir,
                                             const std::string& resume = "", const Logger& log = {});

// Builds the model a checkpoint was trained with (embedded config + vocab).
std::unique_ptr<Model<float>> load_model(const std::string& path, CheckpointInfo* info = nullptr);

struct AblationArm {
  double gen_overall = 0, und = 0;
  GenEvalResult gen;
};
struct AblationReport {
  AblationArm on, off;
  double max_off_injection = 0;  // largest |g * details| seen in the HFI-off arm
  std::string csv() const;
};
AblationReport ablate_hfi(const RunConfig& cfg, const std::string& dir, const Logger& log = {});

struct ModeProbeReport {
  double pixel = 0, latent = 0;
  double gap() const { return pixel - latent; }
};
// Trains one understanding-only glyph probe per tokenizer mode with the same
// budget on a shared pretrained VAE, then scores held-out glyphs.
ModeProbeReport compare_tokenizer_modes(const RunConfig& cfg, const std::string& dir, const Logger& log = {});

}  // namespace umm
