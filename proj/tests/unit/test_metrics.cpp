#include <gtest/gtest.h>

#include <random>

#include "mmfuse/metrics.hpp"
#include "oracles.hpp"

using namespace mmfuse;

TEST(Metrics, PerfectPredictions) {
  std::vector<int> t{0, 1, 2, 3, 3, 2};
  auto r = evaluate_predictions(t, t);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  for (const auto& c : r.per_class) {
    EXPECT_EQ(c.sensitivity, 1.0);
    EXPECT_EQ(c.specificity, 1.0);
  }
}

TEST(Metrics, WorkedExample) {
  // Class 0: TP=1, FN=1, TN=2, FP=0.
  std::vector<int> truth{0, 0, 1, 2};
  std::vector<int> pred{0, 1, 1, 2};
  auto r = evaluate_predictions(truth, pred);
  EXPECT_DOUBLE_EQ(r.per_class[0].sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[0].specificity, 1.0);
  EXPECT_NEAR(r.per_class[0].f1, 0.6667, 5e-5);
  EXPECT_NEAR(r.per_class[0].f1, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, HarmonicWithZeroTerm) {
  EXPECT_EQ(harmonic_f1(1.0, 0.0), 0.0);
  EXPECT_EQ(harmonic_f1(0.0, 0.0), 0.0);
}

TEST(Metrics, MatchesCountingOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 4);
      p[i] = static_cast<int>(rng() % 4);
    }
    auto r = evaluate_predictions(t, p);
    auto o = mmfuse::oracle::count_metrics(t, p);
    EXPECT_NEAR(r.accuracy, o.accuracy, 1e-12);
    for (int c = 0; c < 4; ++c) {
      EXPECT_NEAR(r.per_class[c].sensitivity, o.se[c], 1e-12);
      EXPECT_NEAR(r.per_class[c].specificity, o.sp[c], 1e-12);
      EXPECT_NEAR(r.per_class[c].f1, o.f1[c], 1e-12);
    }
  }
}

TEST(Metrics, EmptyTestSetIsAnError) {
  std::vector<int> none;
  EXPECT_THROW(evaluate_predictions(none, none), Error);
}

TEST(Average, SingleRunIsIdentity) {
  std::vector<int> t{0, 1, 2, 3}, p{0, 1, 3, 3};
  auto r = evaluate_predictions(t, p);
  std::vector<MetricsReport> one{r};
  EXPECT_EQ(report_to_json(average_reports(one)), report_to_json(r));
}

TEST(Average, ArithmeticMeanOfF1) {
  std::vector<MetricsReport> runs(3);
  runs[0].per_class[0].f1 = 0.6;
  runs[1].per_class[0].f1 = 0.8;
  runs[2].per_class[0].f1 = 1.0;
  EXPECT_NEAR(average_reports(runs).per_class[0].f1, 0.8, 1e-15);
  EXPECT_EQ(average_reports(runs).runs, 3u);
}

TEST(Average, AveragedF1IsNotHarmonicOfAverages) {
  std::vector<MetricsReport> runs(2);
  runs[0].per_class[0] = {1.0, 0.5, harmonic_f1(1.0, 0.5)};
  runs[1].per_class[0] = {0.5, 1.0, harmonic_f1(0.5, 1.0)};
  auto avg = average_reports(runs).per_class[0];
  EXPECT_NEAR(avg.f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(harmonic_f1(avg.sensitivity, avg.specificity), 0.75, 1e-12);
  EXPECT_GT(std::abs(avg.f1 - harmonic_f1(avg.sensitivity, avg.specificity)), 0.08);
}
