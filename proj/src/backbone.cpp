#include "umm/backbone.hpp"

#include <stdexcept>

#include "umm/data.hpp"

namespace umm {

int SequenceLayout::offset_of(SegmentRole role) const {
  int off = 0;
  for (const auto& s : segments) {
    if (s.role == role) return off;
    off += s.length;
  }
  return -1;
}

int SequenceLayout::length_of(SegmentRole role) const {
  for (const auto& s : segments)
    if (s.role == role) return s.length;
  return 0;
}

SequenceLayout build_layout(TaskKind task, int n_image, int cond_len, int target_len) {
  if (n_image <= 0) throw std::invalid_argument("image segment must be non-empty");
  SequenceLayout l;
  switch (task) {
    case TaskKind::Generation:
      if (cond_len <= 0) throw std::invalid_argument("generation needs a condition");
      if (target_len != 0) throw std::invalid_argument("generation has no target text");
      l.segments = {{SegmentRole::CondText, cond_len}, {SegmentRole::Image, n_image}};
      break;
    case TaskKind::Understanding:
      if (target_len <= 0) throw std::invalid_argument("understanding needs a non-empty target");
      l.segments.push_back({SegmentRole::Image, n_image});
      if (cond_len > 0) l.segments.push_back({SegmentRole::CondText, cond_len});
      l.segments.push_back({SegmentRole::TargetText, target_len});
      break;
    case TaskKind::TextOnly:
      if (target_len <= 0) throw std::invalid_argument("text-only needs a non-empty target");
      if (cond_len != 0) throw std::invalid_argument("text-only has no condition");
      l.segments = {{SegmentRole::Image, n_image}, {SegmentRole::TargetText, target_len}};
      break;
  }
  for (const auto& s : l.segments) l.total_len += s.length;
  return l;
}

BitMatrix build_mask(const SequenceLayout& layout, int padded_len) {
  const int n = std::max(layout.total_len, padded_len);
  BitMatrix m(n);
  int start = 0;
  for (const auto& seg : layout.segments) {
    for (int i = start; i < start + seg.length; ++i) {
      for (int j = 0; j < start; ++j) m.set(i, j, true);
      const int last = seg.role == SegmentRole::Image ? start + seg.length - 1 : i;
      for (int j = start; j <= last; ++j) m.set(i, j, true);
    }
    start += seg.length;
  }
  for (int i = layout.total_len; i < n; ++i) m.set(i, i, true);
  return m;
}

SequenceSpec make_sequence(TaskKind task, int n_image, std::vector<int> cond, const std::vector<int>& answer) {
  SequenceSpec s;
  s.task = task;
  s.cond = std::move(cond);
  if (task != TaskKind::Generation) {
    s.target.push_back(Vocab::kBos);
    s.target.insert(s.target.end(), answer.begin(), answer.end());
    s.target.push_back(Vocab::kEos);
  }
  s.layout = build_layout(task, n_image, static_cast<int>(s.cond.size()), static_cast<int>(s.target.size()));
  return s;
}

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const RunConfig& cfg, int vocab_size)
    : width(cfg.backbone.width),
      heads(cfg.backbone.heads),
      vocab(vocab_size),
      n_image(cfg.compressed_side() * cfg.compressed_side()) {
  max_len = n_image + cfg.backbone.max_text;
  const auto g = ParamGroup::Backbone;
  embed = store.create("backbone.embed", {vocab, width}, g, Init::normal(0.02));
  pos = store.create("backbone.pos", {max_len, width}, g, Init::normal(0.02));
  image_pos = store.create("backbone.image_pos", {n_image, width}, g, Init::normal(0.02));
  for (int i = 0; i < cfg.backbone.blocks; ++i) {
    blocks.emplace_back(store, "backbone.block" + std::to_string(i), width, heads, cfg.backbone.mlp_ratio, true, g);
  }
  norm = LayerNorm<T>(store, "backbone.norm", width, g);
  lm_head = Linear<T>(store, "backbone.lm_head", width, vocab, g, /*zero_init=*/true);
}

template <typename T>
BackboneOutput<T> Backbone<T>::forward(const std::vector<SequenceSpec>& specs, const Tensor<T>& image_tokens) const {
  const int b = static_cast<int>(specs.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  if (image_tokens.rank() != 3 || image_tokens.dim(0) != b || image_tokens.dim(1) != n_image ||
      image_tokens.dim(2) != width) {
    throw std::invalid_argument("image tokens " + shape_str(image_tokens.shape()) + " do not match [" +
                                std::to_string(b) + ", " + std::to_string(n_image) + ", " + std::to_string(width) +
                                "]");
  }
  int len = 0;
  for (const auto& s : specs) len = std::max(len, s.layout.total_len);
  if (len > max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(len) + " exceeds " + std::to_string(max_len));
  }
  // Rows of the source matrix: [text ids in batch order..., PAD, image tokens...].
  std::vector<int> ids;
  for (const auto& s : specs) {
    for (int id : s.cond) ids.push_back(id);
    for (int id : s.target) ids.push_back(id);
  }
  for (int id : ids) {
    if (id < 0 || id >= vocab) throw std::invalid_argument("token id " + std::to_string(id) + " outside vocab");
  }
  const int pad_row = static_cast<int>(ids.size());
  ids.push_back(Vocab::kPad);
  const int image_base = pad_row + 1;

  std::vector<int> rows(static_cast<std::size_t>(b) * len);
  int text_cursor = 0;
  for (int i = 0; i < b; ++i) {
    const auto& s = specs[i];
    int p = 0, cond_i = 0, tgt_i = 0;
    for (const auto& seg : s.layout.segments) {
      for (int k = 0; k < seg.length; ++k, ++p) {
        int r = 0;
        switch (seg.role) {
          case SegmentRole::Image: r = image_base + i * n_image + k; break;
          case SegmentRole::CondText: r = text_cursor + cond_i++; break;
          case SegmentRole::TargetText: r = text_cursor + static_cast<int>(s.cond.size()) + tgt_i++; break;
        }
        rows[static_cast<std::size_t>(i) * len + p] = r;
      }
    }
    for (; p < len; ++p) rows[static_cast<std::size_t>(i) * len + p] = pad_row;
    text_cursor += static_cast<int>(s.cond.size() + s.target.size());
  }

  Tensor<T> text = gather_rows(embed, ids);
  Tensor<T> img = add_broadcast(reshape(image_tokens, {b * n_image, width}), image_pos);
  std::vector<Tensor<T>> parts{text, img};
  Tensor<T> x = gather_rows(concat_rows<T>(parts), rows);
  std::vector<int> pos_rows(static_cast<std::size_t>(len));
  for (int p = 0; p < len; ++p) pos_rows[p] = p;
  x = reshape(add_broadcast(x, gather_rows(pos, pos_rows)), {b, len, width});

  std::vector<BitMatrix> masks;
  masks.reserve(specs.size());
  for (const auto& s : specs) masks.push_back(build_mask(s.layout, len));
  for (const auto& blk : blocks) x = blk(x, masks);
  return {norm(x), specs, len};
}

template <typename T>
Tensor<T> BackboneOutput<T>::image_hidden() const {
  const int b = hidden.dim(0), c = hidden.dim(2);
  std::vector<int> rows;
  int n = 0;
  for (int i = 0; i < b; ++i) {
    const auto& l = specs[i].layout;
    int off = l.offset_of(SegmentRole::Image);
    n = l.length_of(SegmentRole::Image);
    for (int k = 0; k < n; ++k) rows.push_back(i * padded_len + off + k);
  }
  return reshape(gather_rows(hidden, rows), {b, n, c});
}

template <typename T>
Tensor<T> Backbone<T>::target_logits(const BackboneOutput<T>& out, std::vector<int>* next) const {
  std::vector<int> rows;
  if (next) next->clear();
  for (std::size_t i = 0; i < out.specs.size(); ++i) {
    const auto& s = out.specs[i];
    int off = s.layout.offset_of(SegmentRole::TargetText);
    if (off < 0) continue;
    for (std::size_t k = 0; k + 1 < s.target.size(); ++k) {
      rows.push_back(static_cast<int>(i) * out.padded_len + off + static_cast<int>(k));
      if (next) next->push_back(s.target[k + 1]);
    }
  }
  if (rows.empty()) throw std::invalid_argument("no target text in batch");
  return lm_head(gather_rows(out.hidden, rows));
}

template <typename T>
Tensor<T> Backbone<T>::logits_at(const BackboneOutput<T>& out, const std::vector<int>& positions) const {
  std::vector<int> rows;
  for (std::size_t i = 0; i < positions.size(); ++i) rows.push_back(static_cast<int>(i) * out.padded_len + positions[i]);
  return lm_head(gather_rows(out.hidden, rows));
}

template struct BackboneOutput<float>;
template struct BackboneOutput<double>;
template struct Backbone<float>;
template struct Backbone<double>;

}  // namespace umm
