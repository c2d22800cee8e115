#include "depthcontrast/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace dc {

long ConfusionMatrix::total() const {
  long n = 0;
  for (const auto& row : counts)
    for (long v : row) n += v;
  return n;
}

long ConfusionMatrix::row_sum(int truth) const {
  long n = 0;
  for (long v : counts.at(std::size_t(truth))) n += v;
  return n;
}

long ConfusionMatrix::col_sum(int pred) const {
  long n = 0;
  for (const auto& row : counts) n += row.at(std::size_t(pred));
  return n;
}

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size())
    throw ValueError("confusion: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= kNumClasses || truth[i] < 0 || truth[i] >= kNumClasses)
      throw ValueError("confusion: class index out of range at position " + std::to_string(i));
    ++cm.counts[std::size_t(truth[i])][std::size_t(pred[i])];
  }
  return cm;
}

namespace {
double ratio(long num, long den) { return den == 0 ? 0.0 : double(num) / double(den); }
}  // namespace

MetricsReport prf1(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.samples = cm.total();
  double f1_sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const long tp = cm.counts[std::size_t(c)][std::size_t(c)];
    const long fp = cm.col_sum(c) - tp, fn = cm.row_sum(c) - tp;
    auto& m = r.per_class[std::size_t(c)];
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    f1_sum += m.f1;
  }
  r.macro_f1 = f1_sum / kNumClasses;
  return r;
}

namespace {
MeanStd mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / double(xs.size()))};
}
}  // namespace

MetricsReport aggregate_folds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValueError("aggregate_folds: no reports");
  MetricsReport out;
  std::array<std::array<MeanStd, 3>, kNumClasses> spread{};
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> p, rc, f;
    for (const auto& r : reports) {
      p.push_back(r.per_class[std::size_t(c)].precision);
      rc.push_back(r.per_class[std::size_t(c)].recall);
      f.push_back(r.per_class[std::size_t(c)].f1);
    }
    spread[std::size_t(c)] = {mean_std(p), mean_std(rc), mean_std(f)};
    out.per_class[std::size_t(c)] = {spread[std::size_t(c)][0].mean, spread[std::size_t(c)][1].mean,
                                     spread[std::size_t(c)][2].mean};
  }
  for (const auto& r : reports) {
    out.fold_macro_f1.push_back(r.macro_f1);
    out.samples += r.samples;
  }
  out.macro_f1_spread = mean_std(out.fold_macro_f1);
  out.macro_f1 = out.macro_f1_spread->mean;
  out.class_spread = spread;
  return out;
}

std::string format_report(const MetricsReport& report, const std::string& title) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# " << title << '\n';
  os << "# samples\t" << report.samples << '\n';
  if (report.class_spread) {
    os << "# aggregate over " << report.fold_macro_f1.size() << " runs; std is the population standard deviation\n";
    os << "class\tprecision_mean\tprecision_std\trecall_mean\trecall_std\tf1_mean\tf1_std\n";
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& s = (*report.class_spread)[std::size_t(c)];
      os << kClassNames[std::size_t(c)] << '\t' << s[0].mean << '\t' << s[0].std << '\t' << s[1].mean << '\t'
         << s[1].std << '\t' << s[2].mean << '\t' << s[2].std << '\n';
    }
    os << "macro_f1\t\t\t\t\t" << report.macro_f1_spread->mean << '\t' << report.macro_f1_spread->std << '\n';
  } else {
    os << "class\tprecision\trecall\tf1\n";
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& m = report.per_class[std::size_t(c)];
      os << kClassNames[std::size_t(c)] << '\t' << m.precision << '\t' << m.recall << '\t' << m.f1 << '\n';
    }
    os << "macro_f1\t\t\t" << report.macro_f1 << '\n';
  }
  return os.str();
}

}  // namespace dc
