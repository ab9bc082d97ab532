#include "cdseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cdseg/error.hpp"
#include "cdseg/ops.hpp"

namespace cdseg {
namespace {

// Rows of an [N,D] matrix scaled to unit length; returns the original norms.
std::vector<double> normalize_rows(std::span<const double> m, std::size_t n, std::size_t d,
                                   std::vector<double>& unit) {
  unit.assign(m.begin(), m.end());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += m[i * d + j] * m[i * d + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) {
      fail(ErrorKind::kDegenerateInput, "ntxent: zero feature row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < d; ++j) unit[i * d + j] /= norms[i];
  }
  return norms;
}

constexpr double kNormTolerance = 1e-6;

}  // namespace

Temperature::Temperature(double v) : value(v) {
  if (!(v > 0.0)) fail(ErrorKind::kDomain, "temperature must be positive");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::kShapeMismatch, "cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) fail(ErrorKind::kDegenerateInput, "cosine_similarity: zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

ad::Tensor ntxent(const ad::Tensor& f_depth, const ad::Tensor& f_rgb, Temperature tau) {
  if (f_depth.rank() != 2 || f_rgb.rank() != 2 || f_depth.shape() != f_rgb.shape()) {
    fail(ErrorKind::kShapeMismatch, "ntxent expects two [N,D] matrices of equal shape");
  }
  const std::size_t n = f_depth.dim(0), d = f_depth.dim(1);
  const double t = tau.value;

  std::vector<double> u, v;
  normalize_rows(f_depth.data(), n, d, u);
  normalize_rows(f_rgb.data(), n, d, v);

  // prob[i*n+k] = softmax_k(sim(u_i, v_k) / tau)
  std::vector<double> prob(n * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = prob.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += u[i * d + j] * v[k * d + j];
      row[k] = s / t;
    }
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(row[k] - mx);
    loss += mx + std::log(z) - row[i];
    for (std::size_t k = 0; k < n; ++k) row[k] = std::exp(row[k] - mx) / z;
  }
  loss /= static_cast<double>(n);

  return ad::make_result(
      {1}, {loss}, {f_depth, f_rgb}, "ntxent",
      [n, d, t, prob = std::move(prob)](ad::Node& self) {
        ad::Node& dn = *self.parents[0];
        ad::Node& rn = *self.parents[1];
        std::vector<double> u, v;
        const auto du_norm = normalize_rows(dn.value, n, d, u);
        const auto dv_norm = normalize_rows(rn.value, n, d, v);
        const double g = self.grad[0] / static_cast<double>(n);

        std::vector<double> gu(n * d, 0.0), gv(n * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < n; ++k) {
            const double coef = g * (prob[i * n + k] - (i == k ? 1.0 : 0.0)) / t;
            for (std::size_t j = 0; j < d; ++j) {
              gu[i * d + j] += coef * v[k * d + j];
              gv[k * d + j] += coef * u[i * d + j];
            }
          }
        }
        auto push = [d](ad::Node& node, const std::vector<double>& unit,
                        const std::vector<double>& norms, const std::vector<double>& gunit,
                        std::size_t rows) {
          if (!node.requires_grad) return;
          for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += unit[i * d + j] * gunit[i * d + j];
            for (std::size_t j = 0; j < d; ++j) {
              node.grad[i * d + j] += (gunit[i * d + j] - unit[i * d + j] * dot) / norms[i];
            }
          }
        };
        push(dn, u, du_norm, gu, n);
        push(rn, v, dv_norm, gv, n);
      });
}

std::vector<double> lovasz_grad(std::span<const std::uint8_t> gt_sorted) {
  if (gt_sorted.empty()) fail(ErrorKind::kDomain, "lovasz_grad: empty input");
  const std::size_t n = gt_sorted.size();
  double positives = 0.0;
  for (auto g : gt_sorted) {
    if (g > 1) fail(ErrorKind::kDomain, "lovasz_grad: entries must be 0 or 1");
    positives += g;
  }
  std::vector<double> jacc(n);
  double cum_gt = 0.0, cum_neg = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cum_gt += gt_sorted[j];
    cum_neg += 1.0 - gt_sorted[j];
    const double inter = positives - cum_gt;
    const double uni = positives + cum_neg;
    jacc[j] = 1.0 - inter / uni;
  }
  std::vector<double> g(n);
  g[0] = jacc[0];
  for (std::size_t j = 1; j < n; ++j) g[j] = jacc[j] - jacc[j - 1];
  return g;
}

ad::Tensor lovasz_softmax(const ad::Tensor& probs, std::span<const std::uint8_t> labels) {
  if (probs.rank() != 3) fail(ErrorKind::kShapeMismatch, "lovasz_softmax expects [C,H,W]");
  const std::size_t c = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  if (labels.size() != hw) {
    fail(ErrorKind::kShapeMismatch, "lovasz_softmax: label mask has " +
                                        std::to_string(labels.size()) + " pixels, expected " +
                                        std::to_string(hw));
  }
  const double* x = probs.data().data();
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels[p] >= c) fail(ErrorKind::kValidation, "lovasz_softmax: label out of range");
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += x[k * hw + p];
    if (std::abs(s - 1.0) > kNormTolerance) {
      fail(ErrorKind::kDomain, "lovasz_softmax: probabilities at pixel " + std::to_string(p) +
                                   " sum to " + std::to_string(s));
    }
  }

  // d loss / d x_i(c), filled while evaluating each class term.
  std::vector<double> dx(c * hw);
  std::vector<double> err(hw);
  std::vector<std::size_t> order(hw);
  std::vector<std::uint8_t> gt_sorted(hw);
  double loss = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double* xk = x + k * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      err[p] = labels[p] == k ? 1.0 - xk[p] : xk[p];
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    for (std::size_t j = 0; j < hw; ++j) gt_sorted[j] = labels[order[j]] == k ? 1 : 0;
    const auto g = lovasz_grad(gt_sorted);
    double term = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t p = order[j];
      term += err[p] * g[j];
      dx[k * hw + p] = (gt_sorted[j] ? -g[j] : g[j]) / static_cast<double>(c);
    }
    loss += term;
  }
  loss /= static_cast<double>(c);

  return ad::make_result({1}, {loss}, {probs}, "lovasz_softmax",
                         [dx = std::move(dx)](ad::Node& self) {
                           ad::Node& in = *self.parents[0];
                           const double g = self.grad[0];
                           for (std::size_t i = 0; i < dx.size(); ++i) in.grad[i] += g * dx[i];
                         });
}

ad::Tensor lovasz_softmax(const std::vector<ad::Tensor>& probs,
                          const std::vector<std::span<const std::uint8_t>>& labels) {
  if (probs.empty() || probs.size() != labels.size()) {
    fail(ErrorKind::kShapeMismatch, "lovasz_softmax: batch of probabilities and labels differ");
  }
  std::vector<ad::Tensor> terms;
  terms.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) terms.push_back(lovasz_softmax(probs[i], labels[i]));
  return ad::mean(ad::stack_rows(terms));
}

LossBreakdown total_loss(double l_ls, std::optional<double> l_cont) {
  const double cont = l_cont.value_or(0.0);
  if (!std::isfinite(l_ls) || !std::isfinite(cont)) {
    fail(ErrorKind::kDomain, "total_loss: non-finite loss component");
  }
  return {l_ls, cont, l_ls + cont};
}

}  // namespace cdseg
