#include "rdunet/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace rdunet {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 2) throw ValueError("confusion matrix needs at least 2 classes");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> ground_truth,
                                 std::span<const std::uint8_t> predicted) {
  if (ground_truth.size() != predicted.size())
    throw ShapeError("confusion matrix: mask sizes differ");
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    const int g = ground_truth[i], p = predicted[i];
    if (g >= classes_ || p >= classes_)
      throw ValueError("confusion matrix: class id out of range at pixel " + std::to_string(i));
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ValueError("confusion matrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::count(int gt, int pred) const {
  return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_total(int gt) const {
  std::uint64_t t = 0;
  for (int p = 0; p < classes_; ++p) t += count(gt, p);
  return t;
}

std::uint64_t ConfusionMatrix::col_total(int pred) const {
  std::uint64_t t = 0;
  for (int g = 0; g < classes_; ++g) t += count(g, pred);
  return t;
}

ClassMetrics precision_recall_f1(const ConfusionMatrix& cm, int cls) {
  if (cls < 0 || cls >= cm.classes()) throw ValueError("class id out of range");
  const std::uint64_t tp = cm.count(cls, cls);
  const std::uint64_t fp = cm.col_total(cls) - tp;
  const std::uint64_t fn = cm.row_total(cls) - tp;
  ClassMetrics m;
  if (tp + fp == 0) {
    m.degenerate = true;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    m.degenerate = true;
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (m.precision + m.recall == 0.0) {
    m.degenerate = true;
  } else {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ValueError("overall_accuracy: empty confusion matrix");
  std::uint64_t trace = 0;
  for (int c = 0; c < cm.classes(); ++c) trace += cm.count(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

std::string metrics_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  char buf[64];
  out << "class,precision,recall,f1,degenerate\n";
  for (int c = 0; c < cm.classes(); ++c) {
    ClassMetrics m = precision_recall_f1(cm, c);
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%d\n", c, m.precision, m.recall, m.f1,
                  m.degenerate ? 1 : 0);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "overall_accuracy,%.6f,pixel_count,%llu\n",
                overall_accuracy(cm), static_cast<unsigned long long>(cm.total()));
  out << buf;
  return out.str();
}

}  // namespace rdunet
