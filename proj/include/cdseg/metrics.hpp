#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cdseg/losses.hpp"
#include "cdseg/tensor.hpp"

namespace cdseg {

/// counts[true][pred] over evaluated pixels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = kNumClasses);

  int num_classes() const { return n_; }
  std::uint64_t at(int truth, int pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t total() const;

  void add(int truth, int pred, std::uint64_t count = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

/// Per-pixel argmax over the channel axis of [C,H,W] logits; ties go to the
/// lowest class index.
LabelMask argmax_labels(const ad::Tensor& logits);

void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                ConfusionMatrix& cm);

struct ClassMetrics {
  double acc = 0.0;  // recall TP / (TP + FN)
  double iou = 0.0;
  double f1 = 0.0;
};

/// A class absent from both ground truth and prediction scores (1, 1, 1).
ClassMetrics class_metrics(const ConfusionMatrix& cm, int c);

struct MetricsReport {
  ClassMetrics negative;  // class 1, craters
  ClassMetrics positive;  // class 2, rocks
  double m_acc = 0.0;
  double m_iou = 0.0;
  double m_f1 = 0.0;
};

/// Fills the means over the two obstacle classes; background is excluded.
void aggregate(MetricsReport& report);

MetricsReport make_report(const ConfusionMatrix& cm);

/// `class=<c> acc=<v> iou=<v> f1=<v>` lines for classes 1 and 2, then the means.
std::string format_report_lines(const MetricsReport& report);

/// Human-readable block of percentages, one row per obstacle class plus the means.
std::string format_report_table(const MetricsReport& report, const std::string& title);

}  // namespace cdseg
