#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lode/gradcheck.hpp"
#include "lode/gradflow.hpp"
#include "lode/train.hpp"

namespace lode {
namespace {

LatentPath path_of(Vector mu, Vector log_sigma) {
  LatentPath p;
  p.mu = std::move(mu);
  p.log_sigma = std::move(log_sigma);
  return p;
}

// --- loss -------------------------------------------------------------------

TEST(Loss, PerfectFitIsZero) {
  const std::vector<Vector> y{{1.0, 2.0}, {3.0, -1.0}};
  EXPECT_EQ(compute_loss(y, y, path_of(Vector{0.3}, Vector{0.1})).total, 0.0);
}

TEST(Loss, PriorMatchHasZeroKl) {
  const std::vector<Vector> y{{1.0}};
  const auto v = compute_loss(y, y, path_of(Vector(3), Vector(3)), {1.0});
  EXPECT_EQ(v.kl, 0.0);
  EXPECT_EQ(v.total, 0.0);
}

TEST(Loss, ScalarClosedForm) {
  const auto v = compute_loss({Vector{1.0}}, {Vector{0.0}}, path_of(Vector{1.0}, Vector{0.0}), {1.0});
  EXPECT_DOUBLE_EQ(v.mse, 1.0);
  EXPECT_DOUBLE_EQ(v.kl, 0.5);
  EXPECT_DOUBLE_EQ(v.total, 1.5);
}

TEST(Loss, KlIsNonnegative) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_GE(kl_divergence(gaussian(rng, 4), 2.0 * gaussian(rng, 4)), -1e-12);
  }
}

TEST(Loss, CotangentsMatchFiniteDifferences) {
  Rng rng(2);
  std::vector<Vector> pred{gaussian(rng, 3), gaussian(rng, 3)}, target{gaussian(rng, 3), gaussian(rng, 3)};
  LatentPath p = path_of(gaussian(rng, 2), gaussian(rng, 2));
  const LossSpec spec{0.7};
  const auto v = compute_loss(pred, target, p, spec);
  const double h = 1e-6;
  auto probe = [&](double& x, double analytic) {
    const double keep = x;
    x = keep + h;
    const double up = compute_loss(pred, target, p, spec).total;
    x = keep - h;
    const double down = compute_loss(pred, target, p, spec).total;
    x = keep;
    EXPECT_NEAR(analytic, (up - down) / (2 * h), 1e-7);
  };
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) probe(pred[i][j], v.cot.predictions[i][j]);
  for (std::size_t j = 0; j < 2; ++j) {
    probe(p.mu[j], v.cot.mu[j]);
    probe(p.log_sigma[j], v.cot.log_sigma[j]);
  }
}

TEST(Loss, LengthMismatch) {
  EXPECT_THROW((void)compute_loss({Vector{1.0}}, {}, LatentPath{}), ShapeError);
}

// --- clipping ---------------------------------------------------------------

TEST(Clip, ScalesDownToThreshold) {
  MlpParams g = make_mlp(1, 1, 1);
  g.w1(0, 0) = 6.0;
  g.b2[0] = 8.0;
  const auto r = clip_gradients(g, 1.0);
  EXPECT_DOUBLE_EQ(r.pre_norm, 10.0);
  EXPECT_TRUE(r.clipped);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(g.w1(0, 0), 0.6);
}

TEST(Clip, BelowThresholdUnchanged) {
  MlpParams g = make_mlp(1, 1, 1);
  g.b1[0] = 0.5;
  const auto before = flatten(g);
  EXPECT_FALSE(clip_gradients(g, 1.0).clipped);
  EXPECT_EQ(flatten(g), before);
}

TEST(Clip, PreservesDirectionAndIsIdempotent) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    MlpParams g = make_mlp(4, 6, 3, rng);
    scale_params(g, rng.uniform(0.1, 50.0));
    const MlpParams pre = g;
    const auto r = clip_gradients(g, 1.0);
    EXPECT_LE(r.post_norm, 1.0 + 1e-12);
    const double cosine = params_dot(pre, g) / (global_norm(pre) * global_norm(g));
    EXPECT_NEAR(cosine, 1.0, 1e-12);
    const auto once = flatten(g);
    (void)clip_gradients(g, 1.0);
    EXPECT_EQ(flatten(g), once);
  }
}

TEST(Clip, NonFiniteGradientNamesBlock) {
  MlpParams g = make_mlp(2, 2, 2);
  g.b1[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)clip_gradients(g, 1.0);
    FAIL();
  } catch (const NonFiniteGradientError& e) {
    EXPECT_EQ(e.block(), "b1");
  }
}

// --- Adam -------------------------------------------------------------------

struct Scalar {
  Vector x{0.0};
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("x"), self.x);
  }
};

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  Rng rng(4);
  MlpParams p = make_mlp(3, 3, 3, rng);
  const auto before = flatten(p);
  auto s = make_adam(p);
  for (int i = 0; i < 5; ++i) adam_step(s, p, zeros_like(p));
  EXPECT_EQ(flatten(p), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Scalar p, g;
  g.x[0] = 1.0;
  auto s = make_adam(p, AdamConfig{0.1});
  adam_step(s, p, g);
  EXPECT_NEAR(p.x[0], -0.1, 1e-8);
}

TEST(Adam, ConstantGradientDescends) {
  Scalar p, g;
  g.x[0] = -2.0;
  auto s = make_adam(p, AdamConfig{0.01});
  for (int i = 0; i < 100; ++i) adam_step(s, p, g);
  EXPECT_GT(p.x[0], 0.5);
  EXPECT_EQ(s.step, 100u);
}

// --- training loop ----------------------------------------------------------

std::vector<Example> toy_data(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t s = 0; s < count; ++s) {
    TimedSequence seq;
    const double phase = rng.uniform(0.0, 6.28);
    for (int i = 0; i < 6; ++i) {
      const double t = 0.3 * i;
      seq.push_back(Vector{std::sin(t + phase), std::cos(t + phase)}, t);
    }
    out.push_back(reconstruction_example(seq));
  }
  return out;
}

const ModelDims kToy{2, 6, 6, 6, 2, 6, 6, 2};

TEST(Train, ZeroEpochsIsNoOp) {
  Rng rng(5);
  auto m = make_model(EncoderKind::OdeLstm, kToy, rng);
  const auto before = flatten(m.params);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto log = train_epochs(m, toy_data(4, 1), cfg);
  EXPECT_TRUE(log.empty());
  EXPECT_EQ(flatten(m.params), before);
}

TEST(Train, LossDecreases) {
  Rng rng(6);
  auto m = make_model(EncoderKind::OdeLstm, kToy, rng, ModelOptions{2, 2});
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.seed = 3;
  const auto log = train_epochs(m, toy_data(16, 2), cfg);
  ASSERT_EQ(log.epochs.size(), 40u);
  EXPECT_LT(log.final_loss(), 0.5 * log.initial_loss());
}

TEST(Train, DeterministicLogsAcrossRunsAndThreads) {
  const auto data = toy_data(8, 3);
  auto run = [&](std::size_t threads) {
    Rng rng(7);
    auto m = make_model(EncoderKind::OdeRnn, kToy, rng, ModelOptions{2, 2});
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 3;
    cfg.seed = 11;
    cfg.threads = threads;
    cfg.clip = 0.5;
    return train_epochs(m, data, cfg).csv();
  };
  const std::string a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(3));
}

TEST(Train, ClippedNormsNeverExceedThreshold) {
  Rng rng(8);
  auto m = make_model(EncoderKind::OdeLstm, kToy, rng, ModelOptions{2, 2});
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 2;
  cfg.clip = 0.05;
  const auto log = train_epochs(m, toy_data(6, 4), cfg);
  for (const auto& e : log.epochs) EXPECT_LE(e.post_clip_norm, 0.05 + 1e-12);
}

TEST(Train, NonFiniteTargetAbortsWithEpoch) {
  Rng rng(9);
  auto m = make_model(EncoderKind::OdeLstm, kToy, rng);
  auto data = toy_data(4, 5);
  data[2].targets[1][0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 3;
  try {
    (void)train_epochs(m, data, cfg);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 0u);
    EXPECT_EQ(e.log().epochs.size(), 1u);
  }
}

TEST(Train, LogCsvHeader) {
  TrainLog log;
  log.epochs.push_back({0, 1.5, 2.0, 1.0, {2.0}, 12.0});
  EXPECT_EQ(log.csv(), "epoch,loss,pre_clip_norm,post_clip_norm\n0,1.5,2,1\n");
  EXPECT_EQ(log.timing_csv(), "epoch,wall_ms\n0,12\n");
}

// --- finite-difference checker ----------------------------------------------

struct LinearToy {
  Matrix a;
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("a"), self.a);
  }
};

TEST(FiniteDiff, LinearToyIsNearExact) {
  Rng rng(10);
  LinearToy p{gaussian_matrix(rng, 3, 4)};
  const Vector x = gaussian(rng, 4), c = gaussian(rng, 3);
  LinearToy g{Matrix(3, 4)};
  outer_acc(g.a, c, x);
  const auto rep = finite_diff_check(p, g, [&] { return dot(c, matvec(p.a, x)); });
  EXPECT_LT(rep.max_error(), 1e-8);
}

TEST(FiniteDiff, CorruptedBackwardDetected) {
  Rng rng(11);
  LinearToy p{gaussian_matrix(rng, 3, 4)};
  const Vector x = gaussian(rng, 4), c = gaussian(rng, 3);
  // Backward pass that reads the input in reverse order.
  const Vector wrong{x[3], x[2], x[1], x[0]};
  LinearToy g{Matrix(3, 4)};
  outer_acc(g.a, c, wrong);
  const auto rep = finite_diff_check(p, g, [&] { return dot(c, matvec(p.a, x)); });
  EXPECT_GT(rep.max_error(), 1e-2);
}

TEST(FiniteDiff, SuiteCoversAllSubjects) {
  const auto reports = run_gradcheck_suite({});
  ASSERT_EQ(reports.size(), 6u);
  for (const auto& r : reports) {
    EXPECT_LT(r.max_error(), 1e-5) << r.subject;
    EXPECT_FALSE(r.blocks.empty());
  }
  EXPECT_EQ(reports[4].subject, "latent-ode-rnn");
  EXPECT_EQ(reports[5].subject, "latent-ode-lstm");
}

TEST(FiniteDiff, TinyToleranceFails) {
  const auto reports = run_gradcheck_suite({}, {false, true, false});
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_FALSE(reports[0].passes(1e-12));
}

// --- gradient flow ----------------------------------------------------------

TEST(GradFlow, SmallScaleVanishes) {
  const auto r = grad_flow_probe({ProbeCell::Rnn, 0.3, 50});
  ASSERT_TRUE(r.slope);
  EXPECT_LT(*r.slope, -0.01);
  EXPECT_EQ(r.regime, Regime::Vanishing);
  EXPECT_NEAR(r.spectral_radius, 0.3, 1e-6);
  EXPECT_EQ(r.norms.size(), 51u);
  EXPECT_NEAR(r.norms[50], 1.0, 1e-12);
}

TEST(GradFlow, LargeScaleExplodes) {
  const auto r = grad_flow_probe({ProbeCell::Rnn, 3.0, 50});
  ASSERT_TRUE(r.slope);
  EXPECT_GT(*r.slope, 0.01);
  EXPECT_EQ(r.regime, Regime::Exploding);
}

TEST(GradFlow, CarouselIsStable) {
  ProbeConfig c{ProbeCell::Lstm, 1.0, 50};
  c.carousel = true;
  const auto r = grad_flow_probe(c);
  ASSERT_TRUE(r.slope);
  EXPECT_LT(std::abs(*r.slope), 0.01);
  EXPECT_EQ(r.regime, Regime::Stable);
}

TEST(GradFlow, SlopeIncreasesWithScale) {
  double prev = -1e300;
  for (double s : {0.3, 1.0, 3.0}) {
    const auto r = grad_flow_probe({ProbeCell::Rnn, s, 50});
    ASSERT_TRUE(r.slope);
    EXPECT_GT(*r.slope, prev) << s;
    prev = *r.slope;
  }
}

TEST(GradFlow, OdeCellsAndInputsRun) {
  for (ProbeCell c : {ProbeCell::OdeRnn, ProbeCell::OdeLstm, ProbeCell::Lstm}) {
    ProbeConfig cfg{c, 1.0, 10};
    cfg.input_scale = 0.5;
    const auto r = grad_flow_probe(cfg);
    EXPECT_EQ(r.norms.size(), 11u);
    for (double v : r.norms) EXPECT_GE(v, 0.0);
    EXPECT_TRUE(r.slope);
  }
}

TEST(GradFlow, SingleStepSlopeUndefined) {
  const auto r = grad_flow_probe({ProbeCell::Rnn, 1.0, 1});
  EXPECT_FALSE(r.slope);
  EXPECT_EQ(r.regime, Regime::Undefined);
  EXPECT_NE(r.csv().find("# slope=undefined regime=undefined"), std::string::npos);
}

TEST(GradFlow, FitSlope) {
  EXPECT_DOUBLE_EQ(*fit_slope({0, 1, 2, 3}, {1, 3, 5, 7}), 2.0);
  EXPECT_FALSE(fit_slope({0, 1}, {0, 1}));
}

}  // namespace
}  // namespace lode
