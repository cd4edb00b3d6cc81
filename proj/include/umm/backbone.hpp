#pragma once

#include <vector>

#include "umm/config.hpp"
#include "umm/nn.hpp"

namespace umm {

enum class SegmentRole { CondText, Image, TargetText };

struct Segment {
  SegmentRole role;
  int length;
  bool operator==(const Segment&) const = default;
};

struct SequenceLayout {
  std::vector<Segment> segments;
  int total_len = 0;
  int offset_of(SegmentRole role) const;  // -1 when absent
  int length_of(SegmentRole role) const;  // 0 when absent
};

// Generation: [Cond][Image]; Understanding: [Image][Cond?][Target];
// TextOnly: [Image][Target]. Target lengths include BOS and EOS.
SequenceLayout build_layout(TaskKind task, int n_image, int cond_len, int target_len);

// Image rows see the whole image segment; text rows see earlier text of their
// segment and themselves; every row sees all earlier segments. Rows past
// layout.total_len (padding up to `padded_len`) see only themselves and are
// seen by nobody.
BitMatrix build_mask(const SequenceLayout& layout, int padded_len = 0);

/// One sequence of the batch: its layout and the text ids in sequence order
/// (condition first, then target).
struct SequenceSpec {
  TaskKind task = TaskKind::Generation;
  std::vector<int> cond;
  std::vector<int> target;  // includes BOS ... EOS
  SequenceLayout layout;
};

SequenceSpec make_sequence(TaskKind task, int n_image, std::vector<int> cond, const std::vector<int>& answer);

template <typename T>
struct BackboneOutput {
  Tensor<T> hidden;                 // [B, L, c]
  std::vector<SequenceSpec> specs;  // as passed in
  int padded_len = 0;
  Tensor<T> image_hidden() const;  // [B, n_image, c] gathered from the image segments
};

template <typename T>
struct Backbone {
  int width = 128, heads = 4, vocab = 0, max_len = 0, n_image = 16;
  Tensor<T> embed;      // [V, c]
  Tensor<T> pos;        // [max_len, c]
  Tensor<T> image_pos;  // [n_image, c]
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> norm;
  Linear<T> lm_head;

  Backbone() = default;
  Backbone(ParamStore<T>& store, const RunConfig& cfg, int vocab_size);

  // image_tokens: [B, n_image, c] (compressed tokens, flattened row-major).
  BackboneOutput<T> forward(const std::vector<SequenceSpec>& specs, const Tensor<T>& image_tokens) const;

  // Logits at target positions 0..m-2 of each sequence (they predict
  // target tokens 1..m-1), stacked: [sum(m_i - 1), V]; `next` receives the ids.
  Tensor<T> target_logits(const BackboneOutput<T>& out, std::vector<int>* next = nullptr) const;
  // Logits at one position per sequence: [B, V].
  Tensor<T> logits_at(const BackboneOutput<T>& out, const std::vector<int>& positions) const;
};

}  // namespace umm
