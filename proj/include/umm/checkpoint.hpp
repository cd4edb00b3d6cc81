#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umm/model.hpp"

namespace umm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t digest = 0;
  std::string stage;  // last completed stage: vae, A, B, C
  std::string config_text;
  struct Entry {
    std::string name;
    ParamGroup group;
    Shape shape;
    std::uint64_t offset;  // in floats from the payload start
  };
  std::vector<Entry> tensors;
  LatentStats stats;
  std::string vocab_text;
};

// Layout: "UMMD", u32 version, u64 config digest, stage, config text, tensor
// index, latent statistics (f64), vocab, u64 float count, f32 payload. All
// integers and floats little-endian.
template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model, const std::string& stage);
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& stage, const std::string& path);

CheckpointInfo read_checkpoint_info(const std::string& path);
// Loads parameters, statistics and vocab into a model built from the same
// configuration; rejects digest or index mismatches.
template <typename T>
CheckpointInfo load_checkpoint(Model<T>& model, const std::string& path);

}  // namespace umm
