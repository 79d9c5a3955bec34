#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "regopt/errors.hpp"
#include "regopt/rng.hpp"
#include "regopt/train.hpp"
#include "regopt/warp.hpp"

using namespace regopt;

namespace {

const Arch kTiny{{4, 8}, 16};

std::vector<Sample> line_samples(int n, std::uint64_t seed) { return generate_line_dataset(n, seed).samples; }

}  // namespace

TEST(Adam, ZeroGradientLeavesParams) {
  ad::Tensor p({3}, std::vector<double>{1, -2, 3});
  ad::Tensor g({3});
  AdamState st;
  std::vector<ad::Tensor*> ps{&p};
  std::vector<ad::Tensor> gs{g};
  adam_step(ps, gs, st);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 3.0);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ad::Tensor p({2}, std::vector<double>{0.5, 0.5});
  AdamState st;
  st.lr = 0.01;
  std::vector<ad::Tensor*> ps{&p};
  std::vector<ad::Tensor> gs{ad::Tensor({2}, std::vector<double>{3.0, -0.2})};
  adam_step(ps, gs, st);
  EXPECT_NEAR(p[0], 0.49, 1e-7);
  EXPECT_NEAR(p[1], 0.51, 1e-7);
}

TEST(Adam, TwoStepsOnParabolaMatchRecurrence) {
  // f(x) = x^2 from x = 1, lr 0.1; recurrence written out by hand.
  ad::Tensor p({1}, std::vector<double>{1.0});
  AdamState st;
  st.lr = 0.1;
  double x = 1.0, m = 0.0, v = 0.0;
  for (int k = 1; k <= 2; ++k) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
    std::vector<ad::Tensor*> ps{&p};
    std::vector<ad::Tensor> gs{ad::Tensor({1}, std::vector<double>{2 * p[0]})};
    adam_step(ps, gs, st);
  }
  EXPECT_NEAR(p[0], x, 1e-12);
  EXPECT_NEAR(p[0], 0.8, 1e-3);
}

TEST(Adam, ShapeMismatchThrows) {
  ad::Tensor p({2});
  AdamState st;
  std::vector<ad::Tensor*> ps{&p};
  std::vector<ad::Tensor> gs{ad::Tensor({3})};
  EXPECT_THROW(adam_step(ps, gs, st), Error);
}

TEST(Losses, Examples) {
  EXPECT_EQ(loss_init({1, 2}, {1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(loss_init({0, 0}, {1, 0}), 1.0);
  EXPECT_NEAR(loss_init({0.1, 0.2}, {0.3, 0.4}), 0.08, 1e-15);
  EXPECT_EQ(loss_error(0.4, 0.4), 0.0);
  EXPECT_NEAR(loss_error(0.1, 0.4), 0.09, 1e-15);
  EXPECT_THROW(loss_init({1}, {1, 2}), Error);
}

TEST(Augment, FlagsOffIsIdentity) {
  const Dataset ds = generate_field_dataset(1, 3);
  const ControlPoints h = to_control_points(ds.samples[0].params);
  Rng rng(1, "aug");
  const Augmented a = augment(ds.samples[0].image, h, rng, {});
  EXPECT_EQ(a.image.data, ds.samples[0].image.data);
  EXPECT_EQ(a.h, h);
}

TEST(Augment, DrawCountIndependentOfFlags) {
  const Dataset ds = generate_field_dataset(1, 3);
  const ControlPoints h = to_control_points(ds.samples[0].params);
  Rng a(2, "aug"), b(2, "aug");
  augment(ds.samples[0].image, h, a, {});
  augment(ds.samples[0].image, h, b, {true, true, true});
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Augment, FlipTwiceRestores) {
  const Dataset ds = generate_field_dataset(1, 4);
  const ControlPoints h = to_control_points(ds.samples[0].params);
  const Augmented once = flip_view(ds.samples[0].image, h);
  const Augmented twice = flip_view(once.image, once.h);
  EXPECT_EQ(twice.image.data, ds.samples[0].image.data);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(twice.h[i], h[i], 1e-12);
}

TEST(Augment, FullCropAtCenterIsIdentity) {
  const Dataset ds = generate_field_dataset(1, 5);
  const ControlPoints h = to_control_points(ds.samples[0].params);
  const Augmented a = crop_view(ds.samples[0].image, h, 1.0, 0.0, 0.0);
  for (std::size_t i = 0; i < a.image.data.size(); ++i) ASSERT_NEAR(a.image.data[i], ds.samples[0].image.data[i], 1e-6);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(a.h[i], h[i], 1e-12);
}

TEST(Augment, LabelsFollowTheImage) {
  // The template centre landmark must land where the new homography says.
  const Dataset ds = generate_field_dataset(3, 6);
  for (const Sample& s : ds.samples) {
    const ControlPoints h = to_control_points(s.params);
    const Point2 c = regopt::apply(invert(dlt(h)), {0.0, 0.0});
    const Augmented f = flip_view(s.image, h);
    const Point2 fc = regopt::apply(invert(dlt(f.h)), {0.0, 0.0});
    EXPECT_NEAR(fc.x, -c.x, 1e-9);
    EXPECT_NEAR(fc.y, c.y, 1e-9);
    const Augmented k = crop_view(s.image, h, 0.81, 0.02, -0.03);
    const Point2 kc = regopt::apply(invert(dlt(k.h)), {0.0, 0.0});
    EXPECT_NEAR(kc.x, (c.x - 0.02) / 0.9, 1e-9);
    EXPECT_NEAR(kc.y, (c.y + 0.03) / 0.9, 1e-9);
  }
}

TEST(Augment, ShadowDarkensAndStaysInRange) {
  const ImageBuffer white(64, 64, 3, 1.0f);
  const ImageBuffer s = add_shadow(white, 0, 0, 0, 1);
  EXPECT_NEAR(s.at(16, 16, 0), 0.5, 1e-3);
  EXPECT_NEAR(s.at(60, 60, 0), 1.0, 1e-6);
  for (float v : s.data) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Specs, RegBiasIsPrior) {
  LineTask lt;
  Rng rng(1, "init");
  const Model m = init_model(reg_spec(lt, kTiny), rng);
  ad::Tape t;
  const ad::Tensor& out = t.value(forward(t, m, t.constant(stack(std::vector<ImageBuffer>{ImageBuffer(64, 64, 3, 0.3f)}))));
  EXPECT_EQ(row(out, 0), lt.prior());
}

TEST(Specs, Heads) {
  EXPECT_EQ(head_for(Metric::IouWhole), Head::Sigmoid);
  EXPECT_EQ(head_for(Metric::Reproj), Head::Square);
  EXPECT_EQ(target_ceiling(Metric::Reproj), 0.5);
  EXPECT_EQ(target_ceiling(Metric::Intercept), 20.0);
  EXPECT_TRUE(std::isinf(target_ceiling(Metric::IouPart)));
}

TEST(Data, StoredSplitAndEpochs) {
  LineTask lt;
  const std::vector<Sample> s = line_samples(10, 2);
  const TrainData d = stored_data(lt, s, 0.2, 7);
  ASSERT_EQ(d.val.size(), 2u);
  EXPECT_EQ(d.val[0].params, s[0].params);
  // Each epoch visits every training sample once.
  for (int e = 0; e < 2; ++e) {
    std::multiset<double> seen;
    for (int i = 0; i < 8; ++i) seen.insert(d.sample(e * 8 + i).params[1]);
    std::multiset<double> expect;
    for (int i = 2; i < 10; ++i) expect.insert(s[i].params[1]);
    EXPECT_EQ(seen, expect);
  }
  EXPECT_THROW(stored_data(lt, {}, 0.2, 1), Error);
}

TEST(Train, MemorizesOneSample) {
  LineTask lt;
  const std::vector<Sample> s = line_samples(1, 3);
  TrainData d = stored_data(lt, s, 0.0, 1);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 1;
  cfg.max_steps = 600;
  cfg.log_every = 600;
  const TrainResult r = train_reg(d, cfg, kTiny);
  ad::Tape t;
  const ad::Tensor& out = t.value(forward(t, r.model, t.constant(stack(std::vector<ImageBuffer>{s[0].image}))));
  EXPECT_LT(loss_init(s[0].params, row(out, 0)), 1e-4);
}

TEST(Train, LossDecreasesAndLogs) {
  LineTask lt;
  TrainData d = stored_data(lt, line_samples(40, 4), 0.25, 1);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 8;
  cfg.max_steps = 60;
  cfg.log_every = 10;
  cfg.val_every = 30;
  const TrainResult r = train_reg(d, cfg, kTiny);
  ASSERT_GE(r.log.size(), 6u);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
  EXPECT_TRUE(r.log.back().val_loss.has_value());
  EXPECT_GT(r.best_step, 0);
  std::ostringstream os;
  write_log(os, r.log);
  EXPECT_NE(os.str().find("\"val_loss\":null"), std::string::npos);
}

TEST(Train, Deterministic) {
  LineTask lt;
  const std::vector<Sample> s = line_samples(12, 5);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_steps = 5;
  cfg.target = Metric::Intercept;
  const TrainResult a = train_err(stored_data(lt, s, 0.25, 1), cfg, kTiny, true);
  const TrainResult b = train_err(stored_data(lt, s, 0.25, 1), cfg, kTiny, true);
  const auto pa = const_cast<Model&>(a.model).parameters();
  const auto pb = const_cast<Model&>(b.model).parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->storage(), pb[i]->storage());
}

TEST(Train, EarlyStoppingRestoresBest) {
  LineTask lt;
  TrainData d = stored_data(lt, line_samples(20, 6), 0.25, 1);
  TrainConfig cfg;
  cfg.lr = 0.5;  // wild steps so validation gets worse
  cfg.batch_size = 4;
  cfg.max_steps = 40;
  cfg.val_every = 2;
  cfg.patience = 2;
  cfg.log_every = 100;
  TrainResult r;
  try {
    r = train_reg(d, cfg, kTiny);
  } catch (const Error&) {
    GTEST_SKIP() << "diverged to non-finite loss";
  }
  double min_val = 1e300;
  for (const LogRecord& l : r.log)
    if (l.val_loss) min_val = std::min(min_val, *l.val_loss);
  EXPECT_EQ(r.best_val, min_val);
  EXPECT_LT(r.log.back().step, 40);
}

TEST(Train, CoupledAndFfrRunOnFields) {
  const Dataset ds = generate_field_dataset(6, 8);
  FieldTask ft(*ds.field);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 3;
  cfg.val_every = 3;
  cfg.augment = {true, true, true};
  const CoupledResult c = train_coupled(stored_data(ft, ds.samples, 0.34, 1), cfg, kTiny, true);
  ASSERT_FALSE(c.err.log.empty());
  EXPECT_TRUE(std::isfinite(c.err.log.back().train_loss));
  const TrainResult f = train_ffr(stored_data(ft, ds.samples, 0.34, 1), cfg, kTiny);
  EXPECT_TRUE(std::isfinite(*f.log.back().val_loss));
}
