#include "umm/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace umm {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

// Message is only built on failure.
#define require(cond, what)                                    \
  do {                                                         \
    if (!(cond)) throw std::invalid_argument(what);            \
  } while (0)

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Rows/columns of the matrix view that keeps the last dimension.
std::pair<int, int> as_rows(const Shape& s) {
  int c = s.back();
  return {static_cast<int>(numel(s) / static_cast<std::size_t>(c)), c};
}

// out[o] = x[idx[o]] (or 0 where idx[o] < 0).
template <typename T>
Tensor<T> index_gather(const Tensor<T>& x, std::vector<int> idx, Shape shape) {
  const T* xs = x.data();
  Buffer<T> out(idx.size());
  for (std::size_t o = 0; o < idx.size(); ++o) out[o] = idx[o] >= 0 ? xs[idx[o]] : T(0);
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [idx = std::move(idx)](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    auto gx = n.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < idx.size(); ++o) {
      if (idx[o] >= 0) gx[idx[o]] += n.grad[o];
    }
  });
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& p, const Buffer<T>& g) {
  if (!wants_grad(p)) return;
  auto gp = p->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
}

}  // namespace

BitMatrix BitMatrix::identity(int n) {
  BitMatrix m(n);
  for (int i = 0; i < n; ++i) m.set(i, i, true);
  return m;
}

BitMatrix BitMatrix::causal(int n) {
  BitMatrix m(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
    accumulate(n.parents[0], n.grad);
    if (wants_grad(n.parents[1])) {
      auto gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->data;
    const auto& bv = n.parents[1]->data;
    if (wants_grad(n.parents[0])) {
      auto ga = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bv[i];
    }
    if (wants_grad(n.parents[1])) {
      auto gb = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [s](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    auto ga = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  });
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& p) {
  const std::size_t m = p.size();
  require(m > 0 && x.size() % m == 0,
          "add_broadcast: " + shape_str(p.shape()) + " does not tile " + shape_str(x.shape()));
  Buffer<T> out(x.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i % m];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, p}, [m](Node<T>& n) {
    accumulate(n.parents[0], n.grad);
    if (wants_grad(n.parents[1])) {
      auto gp = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) gp[i % m] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return Tensor<T>::make_result(std::move(shape), x.vec(), {x},
                                [](Node<T>& n) { accumulate(n.parents[0], n.grad); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be matrices, got " + shape_str(a.shape()) +
                                              " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Buffer<T> out(static_cast<std::size_t>(m) * n);
  MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.data(), m, k) * CMapMat<T>(b.data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& nd) {
    CMapMat<T> g(nd.grad.data(), m, n);
    if (wants_grad(nd.parents[0])) {
      MapMat<T>(nd.parents[0]->grad_buffer().data(), m, k).noalias() +=
          g * CMapMat<T>(nd.parents[1]->data.data(), k, n).transpose();
    }
    if (wants_grad(nd.parents[1])) {
      MapMat<T>(nd.parents[1]->grad_buffer().data(), k, n).noalias() +=
          CMapMat<T>(nd.parents[0]->data.data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(w.rank() == 2, "linear: weight must be a matrix");
  auto [rows, in] = as_rows(x.shape());
  require(w.dim(0) == in, "linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  const int out_dim = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias) require(static_cast<int>(b.size()) == out_dim, "linear: bias length mismatch");
  Shape shape = x.shape();
  shape.back() = out_dim;
  Buffer<T> out(static_cast<std::size_t>(rows) * out_dim);
  MapMat<T> y(out.data(), rows, out_dim);
  y.noalias() = CMapMat<T>(x.data(), rows, in) * CMapMat<T>(w.data(), in, out_dim);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), out_dim);
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return Tensor<T>::make_result(std::move(shape), std::move(out), std::move(inputs),
                                [rows, in, out_dim, has_bias](Node<T>& n) {
    CMapMat<T> g(n.grad.data(), rows, out_dim);
    if (wants_grad(n.parents[0])) {
      MapMat<T>(n.parents[0]->grad_buffer().data(), rows, in).noalias() +=
          g * CMapMat<T>(n.parents[1]->data.data(), in, out_dim).transpose();
    }
    if (wants_grad(n.parents[1])) {
      MapMat<T>(n.parents[1]->grad_buffer().data(), in, out_dim).noalias() +=
          CMapMat<T>(n.parents[0]->data.data(), rows, in).transpose() * g;
    }
    if (has_bias && wants_grad(n.parents[2])) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(n.parents[2]->grad_buffer().data(), out_dim) +=
          g.colwise().sum();
    }
  });
}

namespace {

template <typename T>
struct NormResult {
  Buffer<T> xhat;
  Buffer<T> rstd;
};

template <typename T>
NormResult<T> normalize_rows(const T* x, int rows, int c, T eps) {
  NormResult<T> r{Buffer<T>(static_cast<std::size_t>(rows) * c), Buffer<T>(rows)};
  for (int i = 0; i < rows; ++i) {
    const T* row = x + static_cast<std::size_t>(i) * c;
    T mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    T var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    T rs = T(1) / std::sqrt(var + eps);
    r.rstd[i] = rs;
    T* out = r.xhat.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) out[j] = (row[j] - mu) * rs;
  }
  return r;
}

// dL/dx given dL/dxhat for a row-normalization.
template <typename T>
void normalize_backward(const T* gxhat, const T* xhat, const T* rstd, int rows, int c, std::span<T> gx) {
  for (int i = 0; i < rows; ++i) {
    const T* g = gxhat + static_cast<std::size_t>(i) * c;
    const T* xh = xhat + static_cast<std::size_t>(i) * c;
    T mg = 0, mgx = 0;
    for (int j = 0; j < c; ++j) {
      mg += g[j];
      mgx += g[j] * xh[j];
    }
    mg /= c;
    mgx /= c;
    T* out = gx.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) out[j] += rstd[i] * (g[j] - mg - xh[j] * mgx);
  }
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(eps > 0, "layer_norm: eps must be positive");
  auto [rows, c] = as_rows(x.shape());
  require(static_cast<int>(gain.size()) == c && static_cast<int>(bias.size()) == c,
          "layer_norm: channel mismatch, input " + shape_str(x.shape()) + " gain " + shape_str(gain.shape()));
  auto norm = normalize_rows(x.data(), rows, c, eps);
  Buffer<T> out(norm.xhat.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < c; ++j) {
      std::size_t k = static_cast<std::size_t>(i) * c + j;
      out[k] = norm.xhat[k] * gain[j] + bias[j];
    }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, gain, bias},
                                [rows, c, norm = std::move(norm)](Node<T>& n) {
    const auto& gv = n.parents[1]->data;
    if (wants_grad(n.parents[0])) {
      Buffer<T> gxhat(n.grad.size());
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < c; ++j) {
          std::size_t k = static_cast<std::size_t>(i) * c + j;
          gxhat[k] = n.grad[k] * gv[j];
        }
      normalize_backward(gxhat.data(), norm.xhat.data(), norm.rstd.data(), rows, c,
                         n.parents[0]->grad_buffer());
    }
    if (wants_grad(n.parents[1])) {
      auto gg = n.parents[1]->grad_buffer();
      for (std::size_t k = 0; k < n.grad.size(); ++k) gg[k % c] += n.grad[k] * norm.xhat[k];
    }
    if (wants_grad(n.parents[2])) {
      auto gb = n.parents[2]->grad_buffer();
      for (std::size_t k = 0; k < n.grad.size(); ++k) gb[k % c] += n.grad[k];
    }
  });
}

template <typename T>
Tensor<T> layer_norm_plain(const Tensor<T>& x, T eps) {
  require(eps > 0, "layer_norm: eps must be positive");
  auto [rows, c] = as_rows(x.shape());
  auto norm = normalize_rows(x.data(), rows, c, eps);
  Buffer<T> out = norm.xhat;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [rows, c, norm = std::move(norm)](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    normalize_backward(n.grad.data(), norm.xhat.data(), norm.rstd.data(), rows, c, n.parents[0]->grad_buffer());
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    const auto& xv = n.parents[0]->data;
    auto gx = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      T s = T(1) / (T(1) + std::exp(-xv[i]));
      gx[i] += n.grad[i] * (s + xv[i] * s * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T a = T(0.044715);
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(k * (v + a * v * v * v)));
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    const auto& xv = n.parents[0]->data;
    auto gx = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      T v = xv[i];
      T th = std::tanh(k * (v + a * v * v * v));
      T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * k * (T(1) + T(3) * a * v * v);
      gx[i] += n.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    auto gx = n.parents[0]->grad_buffer();
    const auto& y = n.data;
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += n.grad[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                               std::span<const BitMatrix> masks) {
  require(q.rank() == 3, "attention: expected [B, n, c] operands, got " + shape_str(q.shape()));
  require_same_shape(q.shape(), k.shape(), "attention");
  require_same_shape(q.shape(), v.shape(), "attention");
  const int batch = q.dim(0), n = q.dim(1), c = q.dim(2);
  require(heads > 0 && c % heads == 0, "attention: width " + std::to_string(c) + " not divisible by heads");
  require(masks.size() == 1 || static_cast<int>(masks.size()) == batch,
          "attention: expected 1 or " + std::to_string(batch) + " masks");
  for (const auto& m : masks) {
    require(m.size() == n, "attention: mask size " + std::to_string(m.size()) + " vs sequence " + std::to_string(n));
    for (int i = 0; i < n; ++i) {
      bool any = false;
      for (int j = 0; j < n && !any; ++j) any = m(i, j);
      require(any, "attention: row " + std::to_string(i) + " has no allowed keys");
    }
  }
  const int dh = c / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t nn = static_cast<std::size_t>(n) * n;

  // Per (batch, head) row-stochastic attention weights kept for backward.
  Buffer<T> probs(static_cast<std::size_t>(batch) * heads * nn);
  Buffer<T> out(q.size());
  Mat<T> scores(n, n);
  for (int b = 0; b < batch; ++b) {
    const BitMatrix& mask = masks.size() == 1 ? masks[0] : masks[b];
    const std::size_t base = static_cast<std::size_t>(b) * n * c;
    for (int h = 0; h < heads; ++h) {
      CStridedMap<T> qh(q.data() + base + h * dh, n, dh, Eigen::OuterStride<>(c));
      CStridedMap<T> kh(k.data() + base + h * dh, n, dh, Eigen::OuterStride<>(c));
      CStridedMap<T> vh(v.data() + base + h * dh, n, dh, Eigen::OuterStride<>(c));
      scores.noalias() = qh * kh.transpose();
      MapMat<T> p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * nn, n, n);
      for (int i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j)
          if (mask(i, j)) mx = std::max(mx, scores(i, j) * sc);
        T z = 0;
        for (int j = 0; j < n; ++j) {
          T e = mask(i, j) ? std::exp(scores(i, j) * sc - mx) : T(0);
          p(i, j) = e;
          z += e;
        }
        p.row(i) /= z;
      }
      StridedMap<T> oh(out.data() + base + h * dh, n, dh, Eigen::OuterStride<>(c));
      oh.noalias() = p * vh;
    }
  }
  return Tensor<T>::make_result(q.shape(), std::move(out), {q, k, v},
                                [batch, n, c, heads, dh, sc, nn, probs = std::move(probs)](Node<T>& nd) {
    const bool gq_on = wants_grad(nd.parents[0]);
    const bool gk_on = wants_grad(nd.parents[1]);
    const bool gv_on = wants_grad(nd.parents[2]);
    T* gq = gq_on ? nd.parents[0]->grad_buffer().data() : nullptr;
    T* gk = gk_on ? nd.parents[1]->grad_buffer().data() : nullptr;
    T* gv = gv_on ? nd.parents[2]->grad_buffer().data() : nullptr;
    const T* qv = nd.parents[0]->data.data();
    const T* kv = nd.parents[1]->data.data();
    const T* vv = nd.parents[2]->data.data();
    Mat<T> dp(n, n), ds(n, n);
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * n * c;
      for (int h = 0; h < heads; ++h) {
        CMapMat<T> p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * nn, n, n);
        CStridedMap<T> go(nd.grad.data() + base + h * dh, n, dh, Eigen::OuterStride<>(c));
        CStridedMap<T> vh(vv + base + h * dh, n, dh, Eigen::OuterStride<>(c));
        if (gv_on) {
          StridedMap<T>(gv + base + h * dh, n, dh, Eigen::OuterStride<>(c)).noalias() += p.transpose() * go;
        }
        if (!gq_on && !gk_on) continue;
        dp.noalias() = go * vh.transpose();
        for (int i = 0; i < n; ++i) {
          T dot = p.row(i).dot(dp.row(i));
          for (int j = 0; j < n; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
        }
        if (gq_on) {
          CStridedMap<T> kh(kv + base + h * dh, n, dh, Eigen::OuterStride<>(c));
          StridedMap<T>(gq + base + h * dh, n, dh, Eigen::OuterStride<>(c)).noalias() += ds * kh;
        }
        if (gk_on) {
          CStridedMap<T> qh(qv + base + h * dh, n, dh, Eigen::OuterStride<>(c));
          StridedMap<T>(gk + base + h * dh, n, dh, Eigen::OuterStride<>(c)).noalias() += ds.transpose() * qh;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const BitMatrix& allow) {
  require(q.rank() == 2, "attention: expected [n, c] operands, got " + shape_str(q.shape()));
  const int n = q.dim(0), c = q.dim(1);
  auto lift = [n, c](const Tensor<T>& t) { return reshape(t, {1, n, c}); };
  std::array<BitMatrix, 1> masks{allow};
  return reshape(multi_head_attention(lift(q), lift(k), lift(v), 1, std::span<const BitMatrix>(masks)), {n, c});
}

namespace {

// Batch size and per-sample element count for [B, ..., c] modulated inputs.
template <typename T>
std::pair<int, int> batch_rows(const Tensor<T>& x, const Tensor<T>& per_sample, const char* op) {
  require(x.rank() >= 2, std::string(op) + ": input rank too small");
  const int batch = x.dim(0), c = x.dim(-1);
  require(per_sample.size() == static_cast<std::size_t>(batch) * c,
          std::string(op) + ": modulation " + shape_str(per_sample.shape()) + " vs input " + shape_str(x.shape()));
  return {batch, static_cast<int>(x.size() / (static_cast<std::size_t>(batch) * c))};
}

}  // namespace

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale_t) {
  auto [batch, m] = batch_rows(x, shift, "modulate");
  batch_rows(x, scale_t, "modulate");
  const int c = x.dim(-1);
  Buffer<T> out(x.size());
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        std::size_t k = (static_cast<std::size_t>(b) * m + r) * c + j;
        std::size_t s = static_cast<std::size_t>(b) * c + j;
        out[k] = x[k] * (T(1) + scale_t[s]) + shift[s];
      }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, shift, scale_t}, [batch, m, c](Node<T>& n) {
    const auto& xv = n.parents[0]->data;
    const auto& scv = n.parents[2]->data;
    const bool gx_on = wants_grad(n.parents[0]);
    const bool gsh_on = wants_grad(n.parents[1]);
    const bool gsc_on = wants_grad(n.parents[2]);
    T* gx = gx_on ? n.parents[0]->grad_buffer().data() : nullptr;
    T* gsh = gsh_on ? n.parents[1]->grad_buffer().data() : nullptr;
    T* gsc = gsc_on ? n.parents[2]->grad_buffer().data() : nullptr;
    for (int b = 0; b < batch; ++b)
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < c; ++j) {
          std::size_t k = (static_cast<std::size_t>(b) * m + r) * c + j;
          std::size_t s = static_cast<std::size_t>(b) * c + j;
          T g = n.grad[k];
          if (gx_on) gx[k] += g * (T(1) + scv[s]);
          if (gsh_on) gsh[s] += g;
          if (gsc_on) gsc[s] += g * xv[k];
        }
  });
}

template <typename T>
Tensor<T> gated_add(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gate) {
  require_same_shape(x.shape(), y.shape(), "gated_add");
  auto [batch, m] = batch_rows(x, gate, "gated_add");
  const int c = x.dim(-1);
  Buffer<T> out(x.size());
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        std::size_t k = (static_cast<std::size_t>(b) * m + r) * c + j;
        out[k] = x[k] + gate[static_cast<std::size_t>(b) * c + j] * y[k];
      }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y, gate}, [batch, m, c](Node<T>& n) {
    accumulate(n.parents[0], n.grad);
    const auto& yv = n.parents[1]->data;
    const auto& gv = n.parents[2]->data;
    const bool gy_on = wants_grad(n.parents[1]);
    const bool gg_on = wants_grad(n.parents[2]);
    T* gy = gy_on ? n.parents[1]->grad_buffer().data() : nullptr;
    T* gg = gg_on ? n.parents[2]->grad_buffer().data() : nullptr;
    for (int b = 0; b < batch; ++b)
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < c; ++j) {
          std::size_t k = (static_cast<std::size_t>(b) * m + r) * c + j;
          std::size_t s = static_cast<std::size_t>(b) * c + j;
          if (gy_on) gy[k] += n.grad[k] * gv[s];
          if (gg_on) gg[s] += n.grad[k] * yv[k];
        }
  });
}

template <typename T>
Tensor<T> gated_inject(const Tensor<T>& x, const Tensor<T>& details, const Tensor<T>& g) {
  require_same_shape(x.shape(), details.shape(), "inject");
  auto [rows, c] = as_rows(x.shape());
  Shape gshape = x.shape();
  gshape.back() = 1;
  require(g.shape() == gshape, "inject: gate map " + shape_str(g.shape()) + " does not match grid of " +
                                   shape_str(x.shape()));
  Buffer<T> out(x.size());
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) {
      std::size_t k = static_cast<std::size_t>(r) * c + j;
      out[k] = g[r] * details[k] + x[k];
    }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, details, g}, [rows, c](Node<T>& n) {
    accumulate(n.parents[0], n.grad);
    const auto& dv = n.parents[1]->data;
    const auto& gv = n.parents[2]->data;
    const bool gd_on = wants_grad(n.parents[1]);
    const bool gg_on = wants_grad(n.parents[2]);
    T* gd = gd_on ? n.parents[1]->grad_buffer().data() : nullptr;
    T* gg = gg_on ? n.parents[2]->grad_buffer().data() : nullptr;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) {
        std::size_t k = static_cast<std::size_t>(r) * c + j;
        if (gd_on) gd[k] += n.grad[k] * gv[r];
        if (gg_on) gg[r] += n.grad[k] * dv[k];
      }
  });
}

namespace {

struct Grid {
  bool batched;
  int batch, h, w, ch;
};

template <typename T>
Grid grid_of(const Tensor<T>& x, const char* op) {
  if (x.rank() == 4) return {true, x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  if (x.rank() == 3) return {false, 1, x.dim(0), x.dim(1), x.dim(2)};
  throw std::invalid_argument(std::string(op) + ": expected [B,h,w,ch] or [h,w,ch], got " + shape_str(x.shape()));
}

Shape grid_shape(const Grid& g, int h, int w, int ch) {
  return g.batched ? Shape{g.batch, h, w, ch} : Shape{h, w, ch};
}

}  // namespace

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  Grid g = grid_of(x, "pixel_unshuffle");
  require(r >= 1 && g.h % r == 0 && g.w % r == 0,
          "pixel_unshuffle: grid " + shape_str(x.shape()) + " not divisible by " + std::to_string(r));
  const int oh = g.h / r, ow = g.w / r, och = g.ch * r * r;
  std::vector<int> idx(x.size());
  std::size_t o = 0;
  for (int b = 0; b < g.batch; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int bi = 0; bi < r; ++bi)
          for (int bj = 0; bj < r; ++bj)
            for (int c = 0; c < g.ch; ++c)
              idx[o++] = ((b * g.h + i * r + bi) * g.w + j * r + bj) * g.ch + c;
  return index_gather(x, std::move(idx), grid_shape(g, oh, ow, och));
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  Grid g = grid_of(x, "pixel_shuffle");
  require(r >= 1 && g.ch % (r * r) == 0,
          "pixel_shuffle: channels " + std::to_string(g.ch) + " not divisible by " + std::to_string(r * r));
  const int oh = g.h * r, ow = g.w * r, och = g.ch / (r * r);
  std::vector<int> idx(x.size());
  std::size_t o = 0;
  for (int b = 0; b < g.batch; ++b)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        for (int c = 0; c < och; ++c) {
          int i = y / r, bi = y % r, j = xx / r, bj = xx % r;
          idx[o++] = ((b * g.h + i) * g.w + j) * g.ch + (bi * r + bj) * och + c;
        }
  return index_gather(x, std::move(idx), grid_shape(g, oh, ow, och));
}

template <typename T>
Tensor<T> im2col3x3(const Tensor<T>& x) {
  Grid g = grid_of(x, "im2col3x3");
  std::vector<int> idx(x.size() * 9);
  std::size_t o = 0;
  for (int b = 0; b < g.batch; ++b)
    for (int i = 0; i < g.h; ++i)
      for (int j = 0; j < g.w; ++j)
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx) {
            int y = i + ky, xx = j + kx;
            bool inside = y >= 0 && y < g.h && xx >= 0 && xx < g.w;
            for (int c = 0; c < g.ch; ++c) idx[o++] = inside ? ((b * g.h + y) * g.w + xx) * g.ch + c : -1;
          }
  return index_gather(x, std::move(idx), grid_shape(g, g.h, g.w, g.ch * 9));
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, int start, int len) {
  auto [rows, c] = as_rows(x.shape());
  require(start >= 0 && len > 0 && start + len <= c,
          "slice_last: [" + std::to_string(start) + ", +" + std::to_string(len) + ") out of " + shape_str(x.shape()));
  std::vector<int> idx(static_cast<std::size_t>(rows) * len);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < len; ++j) idx[static_cast<std::size_t>(r) * len + j] = r * c + start + j;
  Shape shape = x.shape();
  shape.back() = len;
  return index_gather(x, std::move(idx), std::move(shape));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows) {
  auto [n_rows, c] = as_rows(x.shape());
  std::vector<int> idx(rows.size() * static_cast<std::size_t>(c));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < n_rows,
            "gather_rows: row " + std::to_string(rows[r]) + " out of range " + std::to_string(n_rows));
    for (int j = 0; j < c; ++j) idx[r * c + j] = rows[r] * c + j;
  }
  return index_gather(x, std::move(idx), {static_cast<int>(rows.size()), c});
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int c = parts[0].dim(-1);
  int total = 0;
  Buffer<T> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require(p.dim(-1) == c, "concat_rows: width mismatch");
    total += static_cast<int>(p.size() / c);
    out.insert(out.end(), p.vec().begin(), p.vec().end());
    sizes.push_back(p.size());
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::make_result({total, c}, std::move(out), std::move(inputs), [sizes](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (wants_grad(n.parents[i])) {
        auto g = n.parents[i]->grad_buffer();
        for (std::size_t k = 0; k < sizes[i]; ++k) g[k] += n.grad[off + k];
      }
      off += sizes[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = std::accumulate(x.vec().begin(), x.vec().end(), T(0));
  return Tensor<T>::make_result({1}, {s}, {x}, [](Node<T>& n) {
    if (!wants_grad(n.parents[0])) return;
    for (auto& g : n.parents[0]->grad_buffer()) g += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const std::size_t n = a.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return Tensor<T>::make_result({1}, {s / static_cast<T>(n)}, {a, b}, [n](Node<T>& nd) {
    const auto& av = nd.parents[0]->data;
    const auto& bv = nd.parents[1]->data;
    const T f = T(2) * nd.grad[0] / static_cast<T>(n);
    if (wants_grad(nd.parents[0])) {
      auto ga = nd.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) ga[i] += f * (av[i] - bv[i]);
    }
    if (wants_grad(nd.parents[1])) {
      auto gb = nd.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gb[i] -= f * (av[i] - bv[i]);
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  require(logits.rank() == 2, "cross_entropy: logits must be [n, V]");
  const int n = logits.dim(0), vocab = logits.dim(1);
  require(static_cast<int>(targets.size()) == n && static_cast<int>(mask.size()) == n,
          "cross_entropy: targets/mask length mismatch");
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    require(targets[i] >= 0 && targets[i] < vocab, "cross_entropy: target id out of range");
  }
  require(count > 0, "cross_entropy: mask selects no positions");
  Buffer<T> softmax(logits.size(), T(0));
  T total = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T* row = logits.data() + static_cast<std::size_t>(i) * vocab;
    T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (int j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    T lse = mx + std::log(z);
    total += lse - row[targets[i]];
    for (int j = 0; j < vocab; ++j) softmax[static_cast<std::size_t>(i) * vocab + j] = std::exp(row[j] - lse);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return Tensor<T>::make_result({1}, {total / count}, {logits},
                                [n, vocab, count, tgt = std::move(tgt), msk = std::move(msk),
                                 softmax = std::move(softmax)](Node<T>& nd) {
    if (!wants_grad(nd.parents[0])) return;
    auto g = nd.parents[0]->grad_buffer();
    const T f = nd.grad[0] / static_cast<T>(count);
    for (int i = 0; i < n; ++i) {
      if (!msk[i]) continue;
      for (int j = 0; j < vocab; ++j) {
        std::size_t k = static_cast<std::size_t>(i) * vocab + j;
        g[k] += f * (softmax[k] - (j == tgt[i] ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Tensor<T> kl_standard_normal(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same_shape(mu.shape(), logvar.shape(), "kl");
  const std::size_t n = mu.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += T(0.5) * (mu[i] * mu[i] + std::exp(logvar[i]) - T(1) - logvar[i]);
  return Tensor<T>::make_result({1}, {s / static_cast<T>(n)}, {mu, logvar}, [n](Node<T>& nd) {
    const T f = nd.grad[0] / static_cast<T>(n);
    if (wants_grad(nd.parents[0])) {
      auto g = nd.parents[0]->grad_buffer();
      const auto& m = nd.parents[0]->data;
      for (std::size_t i = 0; i < n; ++i) g[i] += f * m[i];
    }
    if (wants_grad(nd.parents[1])) {
      auto g = nd.parents[1]->grad_buffer();
      const auto& lv = nd.parents[1]->data;
      for (std::size_t i = 0; i < n; ++i) g[i] += f * T(0.5) * (std::exp(lv[i]) - T(1));
    }
  });
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& eps) {
  require_same_shape(mu.shape(), logvar.shape(), "reparameterize");
  require_same_shape(mu.shape(), eps.shape(), "reparameterize");
  Buffer<T> out(mu.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu[i] + std::exp(logvar[i] * T(0.5)) * eps[i];
  return Tensor<T>::make_result(mu.shape(), std::move(out), {mu, logvar, eps}, [](Node<T>& nd) {
    accumulate(nd.parents[0], nd.grad);
    const auto& lv = nd.parents[1]->data;
    const auto& e = nd.parents[2]->data;
    if (wants_grad(nd.parents[1])) {
      auto g = nd.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < lv.size(); ++i) g[i] += nd.grad[i] * T(0.5) * std::exp(lv[i] * T(0.5)) * e[i];
    }
    if (wants_grad(nd.parents[2])) {
      auto g = nd.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < lv.size(); ++i) g[i] += nd.grad[i] * std::exp(lv[i] * T(0.5));
    }
  });
}

#define UMM_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> layer_norm_plain(const Tensor<T>&, T);                                                \
  template Tensor<T> silu(const Tensor<T>&);                                                               \
  template Tensor<T> gelu(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const BitMatrix&);    \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,       \
                                          std::span<const BitMatrix>);                                     \
  template Tensor<T> modulate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> gated_add(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> gated_inject(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                               \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                                 \
  template Tensor<T> im2col3x3(const Tensor<T>&);                                                          \
  template Tensor<T> slice_last(const Tensor<T>&, int, int);                                               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                                  \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, std::span<const std::uint8_t>); \
  template Tensor<T> kl_standard_normal(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> reparameterize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

UMM_INSTANTIATE_OPS(float)
UMM_INSTANTIATE_OPS(double)

}  // namespace umm
