#include "umm/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace umm {

template <typename T>
Model<T>::Model(const RunConfig& c, Vocab v)
    : cfg(c),
      vocab(std::move(v)),
      store(c.run.seed),
      vae(store, c),
      tokenizer(store, c),
      backbone(store, c, vocab.size()),
      head(store, c) {
  cfg.validate();
}

template <typename T>
Shape Model<T>::latent_shape(int batch) const {
  return {batch, cfg.latent_side(), cfg.latent_side(), cfg.vae.latent_dim};
}

template <typename T>
Tensor<T> Model<T>::encode_latent(const std::vector<const Image*>& images, Rng* rng) const {
  NoGradGuard guard;
  auto dist = vae.encode(images_to_tensor<T>(images));
  Tensor<T> z = rng ? vae.sample(dist, *rng) : dist.mean;
  return normalize_latent(z, stats);
}

template <typename T>
Tensor<T> Model<T>::decode_latent(const Tensor<T>& z) const {
  NoGradGuard guard;
  return vae.decode(denormalize_latent(z, stats));
}

template <typename T>
HeadOutput<T> Model<T>::velocity(const Tensor<T>& z_t, std::span<const double> t,
                                 const std::vector<std::vector<int>>& cond) const {
  const int b = z_t.dim(0);
  if (static_cast<int>(cond.size()) != b) throw std::invalid_argument("one condition per sample required");
  auto tok = tokenizer(z_t, vae, stats);
  std::vector<SequenceSpec> specs;
  for (const auto& c : cond) specs.push_back(make_sequence(TaskKind::Generation, n_image(), c, {}));
  const int cs = cfg.compressed_side();
  auto out = backbone.forward(specs, reshape(tok.compressed, {b, n_image(), backbone.width}));
  Tensor<T> hidden = reshape(out.image_hidden(), {b, cs, cs, backbone.width});
  return head.forward(hidden, tok.details, t);
}

template <typename T>
std::vector<std::vector<int>> Model<T>::answer(const Tensor<T>& z1, const std::vector<std::vector<int>>& questions,
                                               int max_new) const {
  NoGradGuard guard;
  const int b = z1.dim(0);
  if (static_cast<int>(questions.size()) != b) throw std::invalid_argument("one question per image required");
  auto tok = tokenizer(z1, vae, stats);
  Tensor<T> image = reshape(tok.compressed, {b, n_image(), backbone.width});
  std::vector<std::vector<int>> out(static_cast<std::size_t>(b));
  std::vector<bool> done(static_cast<std::size_t>(b), false);
  for (int step = 0; step < max_new; ++step) {
    std::vector<SequenceSpec> specs;
    std::vector<int> last;
    for (int i = 0; i < b; ++i) {
      SequenceSpec s;
      s.task = TaskKind::Understanding;
      s.cond = questions[i];
      s.target.push_back(Vocab::kBos);
      s.target.insert(s.target.end(), out[i].begin(), out[i].end());
      s.layout = build_layout(TaskKind::Understanding, n_image(), static_cast<int>(s.cond.size()),
                              static_cast<int>(s.target.size()));
      last.push_back(s.layout.total_len - 1);
      specs.push_back(std::move(s));
    }
    auto res = backbone.forward(specs, image);
    Tensor<T> logits = backbone.logits_at(res, last);
    const int v = logits.dim(1);
    bool all = true;
    for (int i = 0; i < b; ++i) {
      if (done[i]) continue;
      const T* row = logits.data() + static_cast<std::size_t>(i) * v;
      int best = static_cast<int>(std::max_element(row, row + v) - row);
      if (best == Vocab::kEos) done[i] = true;
      else out[i].push_back(best);
      all = all && done[i];
    }
    if (all) break;
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace umm
