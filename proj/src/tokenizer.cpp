#include "umm/tokenizer.hpp"

#include <array>
#include <stdexcept>

namespace umm {

template <typename T>
Tensor<T> interpolate(const Tensor<T>& z1, const Tensor<T>& z0, const std::vector<double>& t) {
  if (z1.shape() != z0.shape()) throw std::invalid_argument("z1 and z0 shapes differ");
  const std::size_t b = static_cast<std::size_t>(z1.dim(0));
  if (t.size() != b) throw std::invalid_argument("one t per sample required");
  const std::size_t per = z1.size() / b;
  Buffer<T> out(z1.size());
  for (std::size_t i = 0; i < b; ++i) {
    const T ti = static_cast<T>(t[i]);
    for (std::size_t j = 0; j < per; ++j) {
      std::size_t k = i * per + j;
      // Endpoints are taken verbatim so t = 0 and t = 1 are exact.
      out[k] = t[i] == 1.0 ? z1[k] : (t[i] == 0.0 ? z0[k] : ti * z1[k] + (T(1) - ti) * z0[k]);
    }
  }
  return Tensor<T>::make_result(z1.shape(), std::move(out), {z1, z0}, [t, per](Node<T>& n) {
    for (int p = 0; p < 2; ++p) {
      if (!wants_grad(n.parents[p])) continue;
      auto g = n.parents[p]->grad_buffer();
      for (std::size_t k = 0; k < n.grad.size(); ++k) {
        T w = static_cast<T>(p == 0 ? t[k / per] : 1.0 - t[k / per]);
        g[k] += w * n.grad[k];
      }
    }
  });
}

template <typename T>
TaskLatent<T> make_task_latent(const Tensor<T>* z1, TaskKind task, Rng& rng, const Shape& shape) {
  if (task != TaskKind::TextOnly && (z1 == nullptr || !z1->defined())) {
    throw std::invalid_argument(std::string("task ") + task_name(task) + " requires a data latent z1");
  }
  Shape s = z1 && z1->defined() ? z1->shape() : shape;
  if (s.empty()) throw std::invalid_argument("latent shape unknown for text-only task");
  Buffer<T> noise(numel(s));
  for (auto& x : noise) x = static_cast<T>(rng.normal());
  TaskLatent<T> out;
  out.z0 = Tensor<T>::from(s, std::move(noise));
  const int b = s[0];
  out.t.resize(static_cast<std::size_t>(b));
  for (auto& t : out.t) {
    switch (task) {
      case TaskKind::Understanding: t = 1.0; break;
      case TaskKind::TextOnly: t = 0.0; break;
      case TaskKind::Generation:
        do t = rng.uniform();
        while (t <= 0.0);
        break;
    }
  }
  if (task == TaskKind::Understanding) out.z_t = *z1;
  else if (task == TaskKind::TextOnly) out.z_t = out.z0;
  else out.z_t = interpolate(*z1, out.z0, out.t);
  return out;
}

template <typename T>
Tokenizer<T>::Tokenizer(ParamStore<T>& store, const RunConfig& cfg)
    : mode(cfg.tokenizer.mode),
      side(cfg.latent_side()),
      width(cfg.tokenizer.width),
      out_width(cfg.backbone.width),
      stride(cfg.vae.stride),
      latent_dim(cfg.vae.latent_dim) {
  const auto g = ParamGroup::Encoder;
  const int in = mode == TokenizerMode::PixelReconstruct ? 3 * stride * stride : latent_dim;
  patch_embed = Linear<T>(store, "encoder.patch_embed", in, width, g);
  pos = store.create("encoder.pos", {side * side, width}, g, Init::normal(0.02));
  for (int i = 0; i < cfg.tokenizer.blocks; ++i) {
    blocks.emplace_back(store, "encoder.block" + std::to_string(i), width, cfg.tokenizer.heads, 4, false, g);
  }
  norm = LayerNorm<T>(store, "encoder.norm", width, g);
  project = Linear<T>(store, "projection.compress", 4 * width, out_width, ParamGroup::Projection);
}

template <typename T>
Tensor<T> Tokenizer<T>::semantic_encode(const Tensor<T>& z_t, const Tensor<T>& pixels) const {
  if (z_t.rank() != 4 || z_t.dim(1) != side || z_t.dim(2) != side || z_t.dim(3) != latent_dim) {
    throw std::invalid_argument("semantic_encode: latent shape " + shape_str(z_t.shape()) + " does not match grid " +
                                std::to_string(side));
  }
  const int b = z_t.dim(0);
  Tensor<T> x;
  if (mode == TokenizerMode::PixelReconstruct) {
    if (!pixels.defined()) throw std::invalid_argument("pixel-reconstruct mode needs decoded pixels");
    const std::vector<double> two(3, 2.0), minus_one(3, -1.0);
    x = patch_embed(pixel_unshuffle(channel_affine(pixels, two, minus_one), stride));  // [0, 1] -> [-1, 1]
  } else {
    x = patch_embed(z_t);
  }
  x = reshape(add_broadcast(x, pos), {b, side * side, width});
  std::array<BitMatrix, 1> full{BitMatrix::full(side * side)};
  for (const auto& blk : blocks) x = blk(x, full);
  return reshape(norm(x), {b, side, side, width});
}

template <typename T>
Tensor<T> Tokenizer<T>::compress(const Tensor<T>& details) const {
  if (details.dim(1) % 2 != 0 || details.dim(2) % 2 != 0) {
    throw std::invalid_argument("compress needs an even grid, got " + shape_str(details.shape()));
  }
  return project(pixel_unshuffle(details, 2));
}

template <typename T>
TokenizerOutput<T> Tokenizer<T>::operator()(const Tensor<T>& z_t, const Vae<T>& vae, const LatentStats& stats) const {
  Tensor<T> pixels;
  if (mode == TokenizerMode::PixelReconstruct) {
    NoGradGuard guard;
    pixels = vae.decode(denormalize_latent(z_t, stats));
  }
  TokenizerOutput<T> out;
  out.details = semantic_encode(z_t, pixels);
  out.compressed = compress(out.details);
  return out;
}

template Tensor<float> interpolate(const Tensor<float>&, const Tensor<float>&, const std::vector<double>&);
template Tensor<double> interpolate(const Tensor<double>&, const Tensor<double>&, const std::vector<double>&);
template TaskLatent<float> make_task_latent(const Tensor<float>*, TaskKind, Rng&, const Shape&);
template TaskLatent<double> make_task_latent(const Tensor<double>*, TaskKind, Rng&, const Shape&);
template struct Tokenizer<float>;
template struct Tokenizer<double>;

}  // namespace umm
