#include "specgen/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "specgen/errors.hpp"

namespace specgen::ad {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  std::vector<double> base(x.values().begin(), x.values().end());
  Tensor leaf = Tensor::leaf(x.shape(), base, true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw InvalidInput("grad_check: f must be scalar-valued");
  const Tensor g = grad(y, std::span<const Tensor>(&leaf, 1))[0];
  const auto analytic = g.values();

  NoGradGuard ng;
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> p = base, m = base;
    p[i] += h;
    m[i] -= h;
    const double fp = f(Tensor::constant(x.shape(), std::move(p))).item();
    const double fm = f(Tensor::constant(x.shape(), std::move(m))).item();
    const double num = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - num) / (std::abs(a) + std::abs(num) + 1e-12));
  }
  return worst;
}

}  // namespace specgen::ad
