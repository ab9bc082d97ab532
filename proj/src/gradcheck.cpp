#include "cdseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cdseg/error.hpp"

namespace cdseg::ad {

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::kDomain, "grad_check: eps must be positive");

  Tensor x = point.detach_copy(/*requires_grad=*/true);
  Tensor y = f(x);
  if (!std::isfinite(y.item())) fail(ErrorKind::kDomain, "grad_check: non-finite value at point");
  backward(y);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<double> base(point.data().begin(), point.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<double> shifted = base;
      shifted[i] += delta;
      const double v = f(Tensor(point.shape(), std::move(shifted))).item();
      if (!std::isfinite(v)) fail(ErrorKind::kDomain, "grad_check: non-finite value inside stencil");
      return v;
    };
    const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cdseg::ad
