#include "umm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace umm {

namespace {

double checked_value(const Tensor<double>& y) {
  if (y.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
  double v = y.item();
  if (!std::isfinite(v)) throw std::invalid_argument("grad_check: function value is not finite");
  return v;
}

}  // namespace

double grad_check_params(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                         double step, std::size_t max_coords) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  Tensor<double> y = loss();
  checked_value(y);
  backward(y);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const std::size_t n = p.size();
    const std::size_t stride = (max_coords > 0 && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p[i];
      auto at = [&](double dx) {
        p[i] = saved + dx;
        return checked_value(loss());
      };
      // fourth-order central stencil
      const double numeric = (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step);
      p[i] = saved;
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step) {
  Tensor<double> leaf = x.detach();
  return grad_check_params([&] { return f(leaf); }, {leaf}, step);
}

}  // namespace umm
