#include <gtest/gtest.h>

#include <cmath>

#include "regopt/errors.hpp"
#include "regopt/evaluate.hpp"
#include "regopt/rng.hpp"
#include "regopt/train.hpp"

using namespace regopt;

namespace {

const Arch kTiny{{4, 8}, 16};

// Average rank by counting; Pearson correlation of the ranks.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  auto rank = [&](const std::vector<double>& x, std::size_t i) {
    double less = 0, equal = 0;
    for (double y : x) less += y < x[i], equal += y == x[i];
    return less + (equal - 1) / 2;
  };
  std::vector<double> ra(n), rb(n);
  for (std::size_t i = 0; i < n; ++i) ra[i] = rank(a, i), rb[i] = rank(b, i);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) ma += ra[i] / n, mb += rb[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Stats, MeanMedian) {
  EXPECT_EQ(mean({1, 2, 6}), 3.0);
  EXPECT_EQ(median({5, 1, 3}), 3.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_EQ(median({}), 0.0);
}

TEST(Stats, SpearmanExamplesAndOracle) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-12);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-12);
  EXPECT_NEAR(spearman({1, 2, 3}, {1, 8, 27}), 1.0, 1e-12);  // monotone, not linear
  Rng rng(4, "sp");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 40; ++i) {
      a.push_back(std::floor(rng.uniform(0, 8)));  // ties on purpose
      b.push_back(a.back() + rng.normal());
    }
    EXPECT_NEAR(spearman(a, b), spearman_oracle(a, b), 1e-12);
  }
  EXPECT_THROW(spearman({1}, {1}), Error);
}

TEST(Modes, Names) {
  for (const char* s : {"full", "sff", "ffr", "nn", "nno"}) EXPECT_EQ(to_string(infer_mode_from_string(s)), s);
  EXPECT_THROW(infer_mode_from_string("lbfgs"), Error);
}

TEST(MetricValue, PerfectAndDegenerate) {
  const Dataset ds = generate_field_dataset(1, 3);
  FieldTask task(*ds.field);
  const Params& gt = ds.samples[0].params;
  EXPECT_NEAR(metric_value(task, Metric::IouWhole, gt, gt), 1.0, 1e-12);
  EXPECT_NEAR(metric_value(task, Metric::Reproj, gt, gt), 0.0, 1e-12);
  const Params collapsed(8, 0.0);
  EXPECT_EQ(metric_value(task, Metric::IouWhole, collapsed, gt), 0.0);
  EXPECT_EQ(metric_value(task, Metric::Reproj, collapsed, gt), kDegeneratePenalty);
  EXPECT_THROW(metric_value(task, Metric::Intercept, gt, gt), Error);
}

TEST(Evaluate, SffEqualsFullWithZeroIterations) {
  const Dataset ds = generate_line_dataset(5, 6);
  LineTask task;
  Rng r1(1, "reg"), r2(2, "err");
  const Model reg = init_model(reg_spec(task, kTiny), r1);
  const Model err = init_model(err_spec(task, kTiny, Metric::Intercept, true), r2);
  OptimOptions opts;
  opts.max_iters = 0;
  const EvalResult a = evaluate(task, InferMode::Full, {&reg, &err}, ds.samples, opts);
  const EvalResult b = evaluate(task, InferMode::Sff, {&reg}, ds.samples, opts);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].h, b.samples[i].h);
    EXPECT_EQ(a.samples[i].metrics, b.samples[i].metrics);
  }
  const nlohmann::json j = report_json(task, InferMode::Sff, b, ds.samples);
  EXPECT_EQ(j["count"], 5);
  EXPECT_TRUE(j["metrics"]["intercept"].contains("median"));
  EXPECT_THROW(evaluate(task, InferMode::Full, {&reg}, ds.samples, opts), Error);
  EXPECT_THROW(evaluate(task, InferMode::Nn, {nullptr, &err}, ds.samples, opts), Error);
}

TEST(Evaluate, CompatibilityCheck) {
  LineTask task;
  Rng r(1, "reg");
  const Model reg = init_model(reg_spec(task, kTiny), r);
  EXPECT_NO_THROW(check_compatible(task, reg, 3, 2, "reg"));
  try {
    check_compatible(task, reg, 6, 1, "err");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CheckpointMismatch);
  }
}
