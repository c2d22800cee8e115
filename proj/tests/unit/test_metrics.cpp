#include <doctest.h>

#include <cmath>

#include "depthcontrast/metrics.hpp"

using namespace dc;

namespace {

MetricsReport report_with_macro(double macro) {
  MetricsReport r;
  r.macro_f1 = macro;
  r.per_class[0] = {macro, macro, macro};
  return r;
}

}  // namespace

TEST_CASE("confusion counts") {
  const std::vector<int> truth = {0, 1, 2, 3, 4, 5, 6, 2};
  const ConfusionMatrix perfect = confusion(truth, truth);
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j)
      CHECK(perfect.counts[std::size_t(i)][std::size_t(j)] == (i == j ? (i == 2 ? 2 : 1) : 0));

  const ConfusionMatrix empty = confusion({}, {});
  CHECK(empty.total() == 0);

  const std::vector<int> p = {5}, t = {2};
  const ConfusionMatrix one = confusion(p, t);
  CHECK(one.counts[2][5] == 1);
  CHECK(one.total() == 1);
  CHECK(one.row_sum(2) == 1);
  CHECK(one.col_sum(5) == 1);

  const std::vector<int> bad = {7};
  CHECK_THROWS_AS(confusion(bad, t), ValueError);
  CHECK_THROWS_AS(confusion(truth, t), ValueError);
}

TEST_CASE("row and column sums are truth and prediction counts") {
  Stream s(3);
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
  std::vector<int> pred(200), truth(200);
  for (int i = 0; i < 200; ++i) {
    pred[std::size_t(i)] = cls(s);
    truth[std::size_t(i)] = cls(s);
  }
  const ConfusionMatrix cm = confusion(pred, truth);
  for (int k = 0; k < kNumClasses; ++k) {
    CHECK(cm.row_sum(k) == std::count(truth.begin(), truth.end(), k));
    CHECK(cm.col_sum(k) == std::count(pred.begin(), pred.end(), k));
  }
}

TEST_CASE("prf1 definitions") {
  ConfusionMatrix diag;
  for (int k = 0; k < kNumClasses; ++k) diag.counts[std::size_t(k)][std::size_t(k)] = k + 1;
  const MetricsReport all = prf1(diag);
  for (const auto& m : all.per_class) {
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
  }
  CHECK(all.macro_f1 == 1.0);

  // Class 0: TP 2, FP 1, FN 1. Class 1 absent from truth and predictions.
  ConfusionMatrix cm;
  cm.counts[0][0] = 2;
  cm.counts[0][3] = 1;
  cm.counts[3][0] = 1;
  const MetricsReport r = prf1(cm);
  CHECK(r.per_class[0].precision == 2.0 / 3.0);
  CHECK(r.per_class[0].recall == 2.0 / 3.0);
  CHECK(r.per_class[0].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.per_class[1].precision == 0.0);
  CHECK(r.per_class[1].recall == 0.0);
  CHECK(r.per_class[1].f1 == 0.0);
  CHECK(r.samples == 4);
}

TEST_CASE("macro F1 is invariant under class relabeling") {
  Stream s(8);
  std::uniform_int_distribution<long> cell(0, 9);
  ConfusionMatrix cm;
  for (auto& row : cm.counts)
    for (auto& v : row) v = cell(s);
  const int perm[kNumClasses] = {3, 6, 0, 5, 1, 2, 4};
  ConfusionMatrix relabeled;
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j)
      relabeled.counts[std::size_t(perm[i])][std::size_t(perm[j])] = cm.counts[std::size_t(i)][std::size_t(j)];
  CHECK(prf1(relabeled).macro_f1 == doctest::Approx(prf1(cm).macro_f1).epsilon(1e-15));
  for (const auto& m : prf1(cm).per_class) {
    CHECK(m.f1 >= 0.0);
    CHECK(m.f1 <= 1.0);
  }
}

TEST_CASE("aggregation") {
  const MetricsReport single = aggregate_folds(std::vector<MetricsReport>{report_with_macro(0.4)});
  CHECK(single.macro_f1_spread->mean == 0.4);
  CHECK(single.macro_f1_spread->std == 0.0);

  const MetricsReport two = aggregate_folds(std::vector<MetricsReport>{report_with_macro(0.6), report_with_macro(0.8)});
  CHECK(two.macro_f1_spread->mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(two.macro_f1_spread->std == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(two.fold_macro_f1 == std::vector<double>{0.6, 0.8});

  const double values[] = {0.61, 0.72, 0.55, 0.70, 0.66};
  std::vector<MetricsReport> five;
  for (double v : values) five.push_back(report_with_macro(v));
  double mean = 0.0, var = 0.0;
  for (double v : values) mean += v / 5.0;
  for (double v : values) var += (v - mean) * (v - mean) / 5.0;
  const MetricsReport agg = aggregate_folds(five);
  CHECK(std::abs(agg.macro_f1_spread->mean - mean) <= 1e-12);
  CHECK(std::abs(agg.macro_f1_spread->std - std::sqrt(var)) <= 1e-12);

  const std::vector<MetricsReport> same(3, report_with_macro(0.5));
  CHECK(aggregate_folds(same).macro_f1_spread->std == 0.0);
  CHECK_THROWS_AS(aggregate_folds(std::vector<MetricsReport>{}), ValueError);
}

TEST_CASE("report tables") {
  ConfusionMatrix cm;
  cm.counts[2][2] = 3;
  const std::string single = format_report(prf1(cm), "test");
  CHECK(single.find("# test\n") == 0);
  CHECK(single.find("class\tprecision\trecall\tf1\n") != std::string::npos);
  CHECK(single.find("Ore1\t1\t1\t1\n") != std::string::npos);
  CHECK(single.find("macro_f1") != std::string::npos);

  const std::string agg = format_report(aggregate_folds(std::vector<MetricsReport>{prf1(cm), prf1(cm)}), "agg");
  CHECK(agg.find("population standard deviation") != std::string::npos);
  CHECK(agg.find("f1_mean\tf1_std") != std::string::npos);
}
