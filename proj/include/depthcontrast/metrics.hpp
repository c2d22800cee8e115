#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depthcontrast/dataset.hpp"

namespace dc {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const;
  long row_sum(int truth) const;
  long col_sum(int pred) const;
};

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  double macro_f1 = 0.0;
  long samples = 0;

  // Filled by aggregate_folds.
  std::vector<double> fold_macro_f1;
  std::optional<std::array<std::array<MeanStd, 3>, kNumClasses>> class_spread;  // P, R, F1
  std::optional<MeanStd> macro_f1_spread;
};

/// Precision TP/(TP+FP), recall TP/(TP+FN), F1 2TP/(2TP+FP+FN); 0/0 is 0.
MetricsReport prf1(const ConfusionMatrix& cm);

MetricsReport aggregate_folds(std::span<const MetricsReport> reports);

/// Tab-separated per-class table plus a macro row. Aggregated reports add
/// mean/std columns; header lines start with '#'.
std::string format_report(const MetricsReport& report, const std::string& title);

}  // namespace dc
