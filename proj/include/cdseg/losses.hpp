#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cdseg/tensor.hpp"

namespace cdseg {

inline constexpr int kNumClasses = 3;  // background, negative obstacle, positive obstacle

/// Per-pixel class indices in row-major order.
using LabelMask = std::vector<std::uint8_t>;

struct LossBreakdown {
  double l_ls = 0.0;
  double l_cont = 0.0;
  double total = 0.0;
};

struct Temperature {
  explicit Temperature(double value = 0.5);
  double value;
};

/// a.b / (|a| |b|). Throws kDegenerateInput on a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Normalized-temperature cross entropy between matched rows of two [N,D]
/// feature matrices. Row i of `f_depth` is pulled toward row i of `f_rgb`
/// and pushed from every other row of `f_rgb`.
ad::Tensor ntxent(const ad::Tensor& f_depth, const ad::Tensor& f_rgb, Temperature tau = Temperature{});

/// Gradient of the Lovasz extension of the Jaccard loss with respect to
/// sorted errors, given the ground-truth indicator in the same order.
std::vector<double> lovasz_grad(std::span<const std::uint8_t> gt_sorted);

/// Lovasz-Softmax on one [C,H,W] probability map. Classes are averaged over
/// all C, including classes absent from the ground truth.
ad::Tensor lovasz_softmax(const ad::Tensor& probs, std::span<const std::uint8_t> labels);

/// Batch mean of the per-sample Lovasz-Softmax.
ad::Tensor lovasz_softmax(const std::vector<ad::Tensor>& probs,
                          const std::vector<std::span<const std::uint8_t>>& labels);

/// total = l_ls + l_cont. A missing l_cont (Stage I) counts as zero.
LossBreakdown total_loss(double l_ls, std::optional<double> l_cont);

}  // namespace cdseg
