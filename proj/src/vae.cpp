#include "umm/vae.hpp"

#include <cmath>
#include <stdexcept>

namespace umm {

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("no images to stack");
  const int h = images[0]->height, w = images[0]->width;
  Buffer<T> v;
  v.reserve(images.size() * h * w * 3);
  for (const Image* img : images) {
    if (img->height != h || img->width != w) throw std::invalid_argument("images differ in size");
    for (float x : img->rgb) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>::from({static_cast<int>(images.size()), h, w, 3}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& x, int index) {
  if (x.rank() != 4 || x.dim(3) != 3) throw std::invalid_argument("expected [B, H, W, 3], got " + shape_str(x.shape()));
  Image img(x.dim(1), x.dim(2));
  const std::size_t n = img.rgb.size();
  for (std::size_t i = 0; i < n; ++i) img.rgb[i] = static_cast<float>(x[index * n + i]);
  return img;
}

template <typename T>
Vae<T>::Vae(ParamStore<T>& store, const RunConfig& cfg)
    : stride(cfg.vae.stride), latent_dim(cfg.vae.latent_dim), hidden(cfg.vae.hidden), image_size(cfg.vae.image_size) {
  const int patch = 3 * stride * stride;
  const auto g = ParamGroup::Vae;
  enc_in = Linear<T>(store, "vae.enc_in", patch, hidden, g);
  enc_conv = Linear<T>(store, "vae.enc_conv", 9 * hidden, hidden, g);
  enc_out = Linear<T>(store, "vae.enc_out", hidden, 2 * latent_dim, g);
  dec_in = Linear<T>(store, "vae.dec_in", latent_dim, hidden, g);
  dec_conv1 = Linear<T>(store, "vae.dec_conv1", 9 * hidden, hidden, g);
  dec_conv2 = Linear<T>(store, "vae.dec_conv2", 9 * hidden, hidden, g);
  dec_out = Linear<T>(store, "vae.dec_out", hidden, patch, g);
}

template <typename T>
LatentDistribution<T> Vae<T>::encode(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw std::invalid_argument("vae_encode expects [B, H, W, 3], got " + shape_str(images.shape()));
  }
  if (images.dim(1) % stride != 0 || images.dim(2) % stride != 0) {
    throw std::invalid_argument("image " + shape_str(images.shape()) + " not divisible by stride " +
                                std::to_string(stride));
  }
  Tensor<T> h = silu(enc_in(pixel_unshuffle(images, stride)));
  h = add(h, silu(enc_conv(im2col3x3(h))));
  Tensor<T> out = enc_out(h);
  return {slice_last(out, 0, latent_dim), slice_last(out, latent_dim, latent_dim)};
}

template <typename T>
Tensor<T> Vae<T>::decode(const Tensor<T>& z) const {
  const int side = image_size / stride;
  if (z.rank() != 4 || z.dim(1) != side || z.dim(2) != side || z.dim(3) != latent_dim) {
    throw std::invalid_argument("vae_decode expects [B, " + std::to_string(side) + ", " + std::to_string(side) +
                                ", " + std::to_string(latent_dim) + "], got " + shape_str(z.shape()));
  }
  Tensor<T> h = silu(dec_in(z));
  h = add(h, silu(dec_conv1(im2col3x3(h))));
  h = add(h, silu(dec_conv2(im2col3x3(h))));
  return pixel_shuffle(dec_out(h), stride);
}

template <typename T>
Tensor<T> Vae<T>::sample(const LatentDistribution<T>& dist, Rng& rng) const {
  Buffer<T> e(dist.mean.size());
  for (auto& x : e) x = static_cast<T>(rng.normal());
  return reparameterize(dist.mean, dist.logvar, Tensor<T>::from(dist.mean.shape(), std::move(e)));
}

template <typename T>
Tensor<T> vae_loss(const Tensor<T>& image, const Tensor<T>& recon, const LatentDistribution<T>& dist, T beta) {
  if (beta < 0) throw std::invalid_argument("beta must be >= 0");
  Tensor<T> rec = mse(recon, image);
  if (beta == T(0)) return rec;
  return add(rec, scale(kl_standard_normal(dist.mean, dist.logvar), beta));
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& z, const std::vector<double>& a, const std::vector<double>& b) {
  const int c = z.dim(-1);
  if (static_cast<int>(a.size()) != c || static_cast<int>(b.size()) != c) {
    throw std::invalid_argument("channel statistics do not match latent channels");
  }
  const std::size_t n = z.size();
  Buffer<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(z[i] * a[i % c] + b[i % c]);
  return Tensor<T>::make_result(z.shape(), std::move(out), {z}, [a, c](Node<T>& self) {
    if (!wants_grad(self.parents[0])) return;
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += static_cast<T>(self.grad[i] * a[i % c]);
  });
}

template <typename T>
Tensor<T> normalize_latent(const Tensor<T>& z, const LatentStats& s) {
  if (s.empty()) return z;
  std::vector<double> a(s.mean.size()), b(s.mean.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = 1.0 / s.std[i];
    b[i] = -s.mean[i] / s.std[i];
  }
  return channel_affine(z, a, b);
}

template <typename T>
Tensor<T> denormalize_latent(const Tensor<T>& z, const LatentStats& s) {
  if (s.empty()) return z;
  return channel_affine(z, s.std, s.mean);
}

double psnr(const Image& a, const Image& b) {
  if (a.rgb.size() != b.rgb.size()) throw std::invalid_argument("psnr: size mismatch");
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    double d = a.rgb[i] - b.rgb[i];
    se += d * d;
  }
  double m = se / a.rgb.size();
  return m == 0 ? 99.0 : 10.0 * std::log10(1.0 / m);
}

#define UMM_INSTANTIATE_VAE(T)                                                                   \
  template Tensor<T> images_to_tensor<T>(const std::vector<const Image*>&);                     \
  template Image tensor_to_image(const Tensor<T>&, int);                                        \
  template struct Vae<T>;                                                                       \
  template Tensor<T> vae_loss(const Tensor<T>&, const Tensor<T>&, const LatentDistribution<T>&, T); \
  template Tensor<T> channel_affine(const Tensor<T>&, const std::vector<double>&, const std::vector<double>&); \
  template Tensor<T> normalize_latent(const Tensor<T>&, const LatentStats&);                    \
  template Tensor<T> denormalize_latent(const Tensor<T>&, const LatentStats&);

UMM_INSTANTIATE_VAE(float)
UMM_INSTANTIATE_VAE(double)

}  // namespace umm
