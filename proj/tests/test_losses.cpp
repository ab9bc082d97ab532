#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdseg/gradcheck.hpp"
#include "cdseg/losses.hpp"
#include "cdseg/ops.hpp"
#include "helpers.hpp"

using namespace cdseg;
using ad::Tensor;
using testing::error_kind_of;
using testing::random_tensor;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain-loop evaluation of the contrastive loss.
double ntxent_oracle(const Tensor& d, const Tensor& r, double tau) {
  const std::size_t n = d.dim(0), dim = d.dim(1);
  auto row = [dim](const Tensor& t, std::size_t i) { return t.data().subspan(i * dim, dim); };
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0, pos = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = dot(row(d, i), row(r, k)) /
                       std::sqrt(dot(row(d, i), row(d, i)) * dot(row(r, k), row(r, k)));
      denom += std::exp(s / tau);
      if (k == i) pos = std::exp(s / tau);
    }
    loss -= std::log(pos / denom);
  }
  return loss / static_cast<double>(n);
}

// Mean over classes of 1 - |G n P| / |G u P| for a hard prediction.
double jaccard_oracle(const LabelMask& pred, const LabelMask& gt, int classes) {
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool g = gt[i] == c, p = pred[i] == c;
      inter += g && p;
      uni += g || p;
    }
    total += uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / uni;
  }
  return total / classes;
}

Tensor one_hot(const LabelMask& pred, std::size_t h, std::size_t w, int classes) {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(classes), h, w});
  for (std::size_t i = 0; i < pred.size(); ++i) t.mutable_data()[pred[i] * h * w + i] = 1.0;
  return t;
}

Tensor random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t = random_tensor({n, d}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = t.mutable_data().subspan(i * d, d);
    const double norm = std::sqrt(dot(r, r));
    for (auto& v : r) v /= norm;
  }
  return t;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("cosine_similarity examples") {
  const std::vector<double> a{1, 2, 3}, twice{2, 4, 6}, neg{-1, -2, -3};
  CHECK(cosine_similarity(a, twice) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 3}) == 0.0);
  CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, twice) == cosine_similarity(twice, a));
  CHECK(error_kind_of([&] { cosine_similarity(a, std::vector<double>{0, 0, 0}); }) == ErrorKind::kDegenerateInput);
}

TEST_CASE("ntxent: one pair gives zero") {
  Rng rng(1);
  CHECK(ntxent(random_tensor({1, 5}, rng), random_tensor({1, 5}, rng)).item() == doctest::Approx(0.0));
}

TEST_CASE("ntxent analytic values") {
  Tensor ortho({2, 2}, {1, 0, 0, 1});
  CHECK(std::abs(ntxent(ortho, ortho, Temperature(0.5)).item() - std::log1p(std::exp(-2.0))) < 1e-12);
  CHECK(std::abs(ntxent(ortho, ortho, Temperature(0.5)).item() - 0.126928) < 1e-6);
  Tensor same({2, 3}, {1, 2, 3, 1, 2, 3});
  CHECK(std::abs(ntxent(same, same).item() - std::log(2.0)) < 1e-12);
}

TEST_CASE("ntxent matches a direct evaluation") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const double tau = rng.uniform(0.1, 2.0);
    Tensor d = random_tensor({5, 7}, rng), r = random_tensor({5, 7}, rng);
    CHECK(ntxent(d, r, Temperature(tau)).item() == doctest::Approx(ntxent_oracle(d, r, tau)).epsilon(1e-12));
  }
}

TEST_CASE("ntxent is stable for small temperatures") {
  Rng rng(3);
  Tensor d = random_tensor({4, 6}, rng), r = random_tensor({4, 6}, rng);
  CHECK(std::isfinite(ntxent(d, r, Temperature(1e-3)).item()));
}

TEST_CASE("ntxent input validation") {
  Tensor ok({2, 2}, {1, 0, 0, 1});
  CHECK(error_kind_of([&] { ntxent(Tensor({2, 2}, {1, 0, 0, 0}), ok); }) == ErrorKind::kDegenerateInput);
  CHECK(error_kind_of([&] { ntxent(ok, Tensor({2, 3}, {1, 0, 0, 0, 1, 0})); }) == ErrorKind::kShapeMismatch);
  CHECK(error_kind_of([] { Temperature(0.0); }) == ErrorKind::kDomain);
  CHECK(error_kind_of([] { Temperature(-1.0); }) == ErrorKind::kDomain);
}

TEST_CASE("ntxent is invariant to a common row permutation") {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    Tensor d = random_tensor({5, 4}, rng), r = random_tensor({5, 4}, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> dp, rp;
    for (auto i : perm) {
      for (std::size_t j = 0; j < 4; ++j) {
        dp.push_back(d[i * 4 + j]);
        rp.push_back(r[i * 4 + j]);
      }
    }
    CHECK(ntxent(Tensor({5, 4}, dp), Tensor({5, 4}, rp)).item() ==
          doctest::Approx(ntxent(d, r).item()).epsilon(1e-13));
  }
}

TEST_CASE("ntxent is invariant to positive row scaling") {
  Rng rng(5);
  Tensor d = random_tensor({4, 3}, rng), r = random_tensor({4, 3}, rng);
  const double base = ntxent(d, r).item();
  Tensor d2 = d.detach_copy();
  for (std::size_t j = 0; j < 3; ++j) d2.mutable_data()[2 * 3 + j] *= 7.5;
  Tensor r2 = r.detach_copy();
  for (std::size_t j = 0; j < 3; ++j) r2.mutable_data()[j] *= 0.01;
  CHECK(ntxent(d2, r).item() == doctest::Approx(base).epsilon(1e-13));
  CHECK(ntxent(d, r2).item() == doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("ntxent decreases as matched similarity grows") {
  // rows of r are the standard basis; d_i rotates from e_{i+1} toward e_i while
  // mismatched similarities stay fixed at zero except for the starting axis
  const std::size_t n = 3;
  Tensor r({n, n}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  double prev = INFINITY;
  for (int step = 0; step <= 10; ++step) {
    const double theta = (M_PI / 2) * step / 10.0;
    // matched cosine = sin(theta); the remaining mass sits on an extra axis
    Tensor d4({n, n + 1}, std::vector<double>((n) * (n + 1), 0.0));
    Tensor r4({n, n + 1}, std::vector<double>((n) * (n + 1), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      d4.mutable_data()[i * (n + 1) + i] = std::sin(theta);
      d4.mutable_data()[i * (n + 1) + n] = std::cos(theta);
      for (std::size_t j = 0; j < n; ++j) r4.mutable_data()[i * (n + 1) + j] = r[i * n + j];
    }
    const double l = ntxent(d4, r4).item();
    if (step > 0) CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("ntxent gradients pass grad_check") {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    Tensor d = random_unit_rows(4, 6, rng), r = random_unit_rows(4, 6, rng);
    CHECK(ad::grad_check([&](const Tensor& x) { return ntxent(x, r); }, d) < 1e-4);
    CHECK(ad::grad_check([&](const Tensor& x) { return ntxent(d, x); }, r) < 1e-4);
  }
}

TEST_CASE("lovasz_grad hand cases") {
  CHECK(lovasz_grad(std::vector<std::uint8_t>{1}) == std::vector<double>{1.0});
  CHECK(lovasz_grad(std::vector<std::uint8_t>{1, 0}) == std::vector<double>{1.0, 0.0});
  CHECK(lovasz_grad(std::vector<std::uint8_t>{0, 1}) == std::vector<double>{0.5, 0.5});
  CHECK(error_kind_of([] { lovasz_grad(std::vector<std::uint8_t>{}); }) == ErrorKind::kDomain);
}

TEST_CASE("lovasz_grad: nonnegative, prefix-consistent, sums to the final Jaccard loss") {
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
    std::vector<std::uint8_t> gt(n);
    for (auto& g : gt) g = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    const auto g = lovasz_grad(gt);
    REQUIRE(g.size() == n);
    // jacc_j evaluated directly from set sizes
    const double p = std::accumulate(gt.begin(), gt.end(), 0.0);
    double prev = 0.0, total = 0.0;
    int pos = 0, neg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      (gt[j] ? pos : neg) += 1;
      const double jacc = 1.0 - (p - pos) / (p + neg);
      CHECK(g[j] >= 0.0);
      CHECK(g[j] == doctest::Approx(jacc - prev).epsilon(1e-12));
      prev = jacc;
      total += g[j];
    }
    CHECK(total == doctest::Approx(prev).epsilon(1e-12));
  }
}

TEST_CASE("lovasz_softmax: perfect one-hot prediction gives zero") {
  LabelMask gt{0, 1, 2, 1, 0, 2, 2, 0, 1};
  CHECK(lovasz_softmax(one_hot(gt, 3, 3, 3), gt).item() == 0.0);
}

TEST_CASE("lovasz_softmax: single pixel, two classes") {
  Tensor probs({2, 1, 1}, {0.3, 0.7});
  CHECK(lovasz_softmax(probs, LabelMask{1}).item() == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("lovasz_softmax equals the Jaccard counting oracle at vertices") {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    LabelMask gt(16), pred(16);
    for (auto& v : gt) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    for (auto& v : pred) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    const double loss = lovasz_softmax(one_hot(pred, 4, 4, 3), gt).item();
    CHECK(std::abs(loss - jaccard_oracle(pred, gt, 3)) < 1e-9);
  }
}

TEST_CASE("lovasz_softmax is permutation-equivariant in pixels") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    Tensor probs = ad::softmax_channels(random_tensor({3, 4, 5}, rng, -3, 3));
    LabelMask gt(20);
    for (auto& v : gt) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor shuffled = Tensor::zeros({3, 4, 5});
    LabelMask gt2(20);
    for (std::size_t i = 0; i < 20; ++i) {
      gt2[i] = gt[perm[i]];
      for (std::size_t c = 0; c < 3; ++c) shuffled.mutable_data()[c * 20 + i] = probs[c * 20 + perm[i]];
    }
    CHECK(lovasz_softmax(shuffled, gt2).item() == doctest::Approx(lovasz_softmax(probs, gt).item()).epsilon(1e-13));
  }
}

TEST_CASE("lovasz_softmax averages over the batch") {
  Rng rng(10);
  std::vector<Tensor> probs;
  std::vector<LabelMask> masks;
  double mean = 0.0;
  for (int i = 0; i < 3; ++i) {
    probs.push_back(ad::softmax_channels(random_tensor({3, 2, 3}, rng, -2, 2)));
    LabelMask m(6);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    masks.push_back(m);
    mean += lovasz_softmax(probs.back(), masks.back()).item() / 3.0;
  }
  std::vector<std::span<const std::uint8_t>> views(masks.begin(), masks.end());
  CHECK(lovasz_softmax(probs, views).item() == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("lovasz_softmax input validation") {
  Tensor bad({3, 1, 1}, {0.5, 0.5, 0.5});
  CHECK(error_kind_of([&] { lovasz_softmax(bad, LabelMask{0}); }) == ErrorKind::kDomain);
  Tensor ok({3, 1, 2}, {1, 0, 0, 1, 0, 0});
  CHECK(error_kind_of([&] { lovasz_softmax(ok, LabelMask{0}); }) == ErrorKind::kShapeMismatch);
  CHECK(error_kind_of([&] { lovasz_softmax(ok, LabelMask{0, 3}); }) == ErrorKind::kValidation);
}

TEST_CASE("lovasz_softmax gradients pass grad_check at tie-free points") {
  Rng rng(11);
  int checked = 0;
  while (checked < 10) {
    Tensor logits = random_tensor({3, 4, 4}, rng, -2, 2);
    LabelMask gt(16);
    for (auto& v : gt) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    // skip points where two errors of one class are nearly tied
    Tensor p = ad::softmax_channels(logits);
    double gap = 1.0;
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> e(16);
      for (std::size_t i = 0; i < 16; ++i) e[i] = gt[i] == c ? 1 - p[c * 16 + i] : p[c * 16 + i];
      std::sort(e.begin(), e.end());
      for (std::size_t i = 1; i < 16; ++i) gap = std::min(gap, e[i] - e[i - 1]);
    }
    if (gap < 1e-3) continue;
    CHECK(ad::grad_check([&](const Tensor& x) { return lovasz_softmax(ad::softmax_channels(x), gt); }, logits) < 1e-4);
    ++checked;
  }
}

TEST_CASE("total_loss") {
  auto a = total_loss(0.3, 0.1);
  CHECK(a.total == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(a.total == a.l_ls + a.l_cont);
  CHECK(total_loss(0.0, 0.0).total == 0.0);
  auto s1 = total_loss(0.25, std::nullopt);
  CHECK(s1.total == 0.25);
  CHECK(s1.l_cont == 0.0);
  CHECK(error_kind_of([] { total_loss(NAN, 0.0); }) == ErrorKind::kDomain);
  CHECK(error_kind_of([] { total_loss(0.1, INFINITY); }) == ErrorKind::kDomain);
}

}  // TEST_SUITE
