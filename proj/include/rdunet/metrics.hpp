#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rdunet/errors.hpp"

namespace rdunet {

/// Pixel-count confusion matrix; rows index ground truth, columns the
/// prediction. Counts stay integral until a metric divides at the end.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  void accumulate(std::span<const std::uint8_t> ground_truth,
                  std::span<const std::uint8_t> predicted);
  void merge(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::uint64_t count(int gt, int pred) const;
  std::uint64_t total() const;
  std::uint64_t row_total(int gt) const;
  std::uint64_t col_total(int pred) const;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // some 0/0 quotient was defined as 0
};

ClassMetrics precision_recall_f1(const ConfusionMatrix& cm, int cls);
double overall_accuracy(const ConfusionMatrix& cm);

/// Per-class rows plus a summary row, the layout of a per-figure results
/// table.
std::string metrics_csv(const ConfusionMatrix& cm);

}  // namespace rdunet
