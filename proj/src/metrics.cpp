#include "cdseg/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "cdseg/error.hpp"

namespace cdseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : n_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 2) fail(ErrorKind::kDomain, "confusion matrix needs at least 2 classes");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(int truth, int pred, std::uint64_t count) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) {
    fail(ErrorKind::kValidation, "class index out of range in confusion matrix");
  }
  counts_[truth * n_ + pred] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) fail(ErrorKind::kShapeMismatch, "confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

LabelMask argmax_labels(const ad::Tensor& logits) {
  if (logits.rank() != 3) fail(ErrorKind::kShapeMismatch, "argmax_labels expects [C,H,W]");
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  LabelMask out(hw, 0);
  const double* v = logits.data().data();
  for (std::size_t p = 0; p < hw; ++p) {
    double best = v[p];
    for (std::size_t k = 1; k < c; ++k) {
      if (v[k * hw + p] > best) {
        best = v[k * hw + p];
        out[p] = static_cast<std::uint8_t>(k);
      }
    }
  }
  return out;
}

void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                ConfusionMatrix& cm) {
  if (pred.size() != gt.size()) {
    fail(ErrorKind::kShapeMismatch, "accumulate: prediction has " + std::to_string(pred.size()) +
                                        " pixels, ground truth " + std::to_string(gt.size()));
  }
  const int n = cm.num_classes();
  ConfusionMatrix local(n);
  for (std::size_t i = 0; i < gt.size(); ++i) local.add(gt[i], pred[i]);
  cm += local;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, int c) {
  if (c < 0 || c >= cm.num_classes()) fail(ErrorKind::kDomain, "class_metrics: bad class index");
  double tp = static_cast<double>(cm.at(c, c)), fn = 0.0, fp = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    if (k == c) continue;
    fn += static_cast<double>(cm.at(c, k));
    fp += static_cast<double>(cm.at(k, c));
  }
  if (tp + fp + fn == 0.0) return {1.0, 1.0, 1.0};
  ClassMetrics m;
  // Predicted but never present: recall is undefined, report 0 as every
  // prediction of the class is wrong.
  m.acc = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  m.iou = tp / (tp + fp + fn);
  m.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  return m;
}

void aggregate(MetricsReport& report) {
  report.m_acc = 0.5 * (report.negative.acc + report.positive.acc);
  report.m_iou = 0.5 * (report.negative.iou + report.positive.iou);
  report.m_f1 = 0.5 * (report.negative.f1 + report.positive.f1);
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  if (cm.num_classes() < 3) fail(ErrorKind::kDomain, "report needs classes 1 and 2");
  MetricsReport r;
  r.negative = class_metrics(cm, 1);
  r.positive = class_metrics(cm, 2);
  aggregate(r);
  return r;
}

std::string format_report_lines(const MetricsReport& report) {
  char buf[512];
  std::string out;
  const ClassMetrics* cls[] = {&report.negative, &report.positive};
  for (int i = 0; i < 2; ++i) {
    std::snprintf(buf, sizeof buf, "class=%d acc=%.6f iou=%.6f f1=%.6f\n", i + 1, cls[i]->acc,
                  cls[i]->iou, cls[i]->f1);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean m_acc=%.6f m_iou=%.6f m_f1=%.6f\n", report.m_acc,
                report.m_iou, report.m_f1);
  return out + buf;
}

std::string format_report_table(const MetricsReport& r, const std::string& title) {
  char buf[512];
  std::string out = "== " + title + " ==\n";
  out += "          | Negative obstacle     | Positive obstacle     |\n";
  out += "          |  Acc    IoU    F1     |  Acc    IoU    F1     |  mAcc   mIoU   mF1\n";
  std::snprintf(buf, sizeof buf,
                "          | %6.2f %6.2f %6.2f  | %6.2f %6.2f %6.2f  | %6.2f %6.2f %6.2f\n",
                100 * r.negative.acc, 100 * r.negative.iou, 100 * r.negative.f1,
                100 * r.positive.acc, 100 * r.positive.iou, 100 * r.positive.f1, 100 * r.m_acc,
                100 * r.m_iou, 100 * r.m_f1);
  return out + buf;
}

}  // namespace cdseg
