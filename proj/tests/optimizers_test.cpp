#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bsam/autodiff.hpp"
#include "bsam/error.hpp"
#include "bsam/models.hpp"
#include "bsam/optimizers.hpp"
#include "oracles.hpp"

using namespace bsam;

namespace {

// Feasible points of the q-norm ball of radius rho: random directions
// projected to the sphere, half of them pulled inside.
std::vector<std::vector<double>> sample_dual_ball(std::size_t dim, double q, double rho, int count,
                                                  std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    std::vector<double> s(dim);
    double nq = 0.0;
    for (double& x : s) {
      x = normal(rng);
      nq += std::pow(std::abs(x), q);
    }
    nq = std::pow(nq, 1.0 / q);
    const double r = k % 2 == 0 ? rho : rho * std::pow(unit(rng), 1.0 / static_cast<double>(dim));
    for (double& x : s) x *= r / nq;
    out.push_back(std::move(s));
  }
  return out;
}

OptimizerConfig quadratic_config(Variant v, double lr) {
  OptimizerConfig c;
  c.variant = v;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.lr = LrSchedule{lr, lr, 100};
  return c;
}

}  // namespace

TEST(Perturbation, NormalisedGradientForP2) {
  const auto g = ParamVector::plain({3.0, 4.0});
  const auto up = compute_perturbation(g, 0.05, Direction::Ascent);
  EXPECT_NEAR(up[0], 0.03, 1e-17);
  EXPECT_NEAR(up[1], 0.04, 1e-17);
  const auto down = compute_perturbation(g, 0.05, Direction::Descent);
  EXPECT_NEAR(down[0], -0.03, 1e-17);
  EXPECT_NEAR(down[1], -0.04, 1e-17);
}

TEST(Perturbation, ZeroRadiusZeroGradientAndBadP) {
  const auto g = ParamVector::plain({3.0, 4.0});
  EXPECT_EQ(l2_norm(compute_perturbation(g, 0.0, Direction::Ascent)), 0.0);
  EXPECT_EQ(l2_norm(compute_perturbation(ParamVector::plain({1e-13, 0.0}), 0.1, Direction::Ascent)), 0.0);
  EXPECT_THROW(compute_perturbation(g, 0.1, Direction::Ascent, 1.0), ConfigError);
  EXPECT_THROW(compute_perturbation(g, 0.1, Direction::Ascent, 0.5), ConfigError);
}

TEST(Perturbation, NormAndAlignmentForP2) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> rho_dist(1e-3, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::randomized(ParamVector::plain(std::vector<double>(1 + trial % 30)), 2.0, rng);
    const double rho = rho_dist(rng);
    const auto up = compute_perturbation(g, rho, Direction::Ascent);
    const auto down = compute_perturbation(g, rho, Direction::Descent);
    EXPECT_NEAR(l2_norm(up), rho, 1e-10);
    EXPECT_NEAR(l2_norm(down), rho, 1e-10);
    EXPECT_NEAR(cosine_similarity(up, g), 1.0, 1e-10);
    EXPECT_NEAR(cosine_similarity(down, g), -1.0, 1e-10);
  }
}

TEST(Perturbation, DominatesSampledDualBallForP3) {
  std::mt19937_64 rng(3);
  const auto g = oracle::randomized(ParamVector::plain(std::vector<double>(3)), 1.0, rng);
  const double p = 3.0, q = p / (p - 1.0), rho = 0.1;
  const auto eps = compute_perturbation(g, rho, Direction::Ascent, p);
  EXPECT_NEAR(lp_norm(eps, q), rho, 1e-12);
  const double best = dot(eps, g);
  EXPECT_NEAR(best, rho * lp_norm(g, p), 1e-12);
  for (const auto& s : sample_dual_ball(3, q, rho, 100000, rng)) {
    const double v = s[0] * g[0] + s[1] * g[1] + s[2] * g[2];
    ASSERT_GE(best - v, -1e-9);
  }
}

TEST(Perturbation, DescentMinimisesOverDualBall) {
  std::mt19937_64 rng(9);
  for (double p : {1.5, 2.0, 3.0}) {
    const double q = p / (p - 1.0);
    const auto g = oracle::randomized(ParamVector::plain(std::vector<double>(4)), 1.0, rng);
    const auto eps = compute_perturbation(g, 0.2, Direction::Descent, p);
    const double worst = dot(eps, g);
    EXPECT_NEAR(lp_norm(eps, q), 0.2, 1e-12);
    for (const auto& s : sample_dual_ball(4, q, 0.2, 20000, rng)) {
      double v = 0.0;
      for (std::size_t i = 0; i < 4; ++i) v += s[i] * g[i];
      ASSERT_LE(worst - v, 1e-9);
    }
  }
}

TEST(RhoMinSchedule, EndpointsMidpointAndRange) {
  const LrSchedule lrs{0.05, 0.001, 100};
  const RhoMinSchedule sched{0.1, 0.0};
  EXPECT_EQ(rho_min_at(lrs.lr_max, sched, lrs), 0.1);
  EXPECT_EQ(rho_min_at(lrs.lr_min, sched, lrs), 0.0);
  EXPECT_NEAR(rho_min_at(0.5 * (lrs.lr_max + lrs.lr_min), sched, lrs), 0.05, 1e-12);
  EXPECT_THROW(rho_min_at(0.06, sched, lrs), RangeError);
  EXPECT_THROW(rho_min_at(0.0, sched, lrs), RangeError);
  EXPECT_EQ(rho_min_at(0.02, sched, LrSchedule{0.02, 0.02, 10}), 0.1);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  const LrSchedule lrs{0.05, 0.01, 200};
  EXPECT_EQ(cosine_lr(0, lrs), 0.05);
  EXPECT_EQ(cosine_lr(200, lrs), 0.01);
  EXPECT_NEAR(cosine_lr(100, lrs), 0.03, 1e-15);
  EXPECT_THROW(cosine_lr(201, lrs), RangeError);
  EXPECT_THROW(cosine_lr(-1, lrs), RangeError);
}

TEST(RhoMinSchedule, NonIncreasingUnderCosineLr) {
  const LrSchedule lrs{0.05, 0.0, 1000};
  const RhoMinSchedule sched{0.1, 0.0};
  double prev = rho_min_at(cosine_lr(0, lrs), sched, lrs);
  for (std::int64_t t = 1; t <= lrs.total_steps; ++t) {
    const double r = rho_min_at(cosine_lr(t, lrs), sched, lrs);
    ASSERT_LE(r, prev) << "t = " << t;
    prev = r;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(ScaleFactor, ExamplesAndMagnitudeInvariant) {
  EXPECT_DOUBLE_EQ(scale_factor(ParamVector::plain({2.0, 0.0}), ParamVector::plain({0.0, 4.0})), 0.5);
  EXPECT_EQ(scale_factor(ParamVector::plain({2.0, 0.0}), ParamVector::plain({0.0, 0.0})), 0.0);
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::randomized(ParamVector::plain(std::vector<double>(50)), 3.0, rng);
    const auto b = oracle::randomized(ParamVector::plain(std::vector<double>(50)), 0.1, rng);
    const double s = scale_factor(a, b);
    EXPECT_LE(std::abs(l2_norm(scaled(s, b)) - l2_norm(a)) / l2_norm(a), 1e-12);
  }
}

TEST(SgdStep, QuadraticExampleAndMomentumRecurrence) {
  const auto spec = make_quadratic_diag({1.0});
  const auto batch = clean_batch(spec);
  auto state = OptimizerState::create(quadratic_config(Variant::Sgd, 0.1), ParamVector::plain({1.0}));
  const auto r = sgd_step(state, ParamVector::plain({1.0}), batch, spec);
  EXPECT_NEAR(r.params[0], 0.9, 1e-15);
  EXPECT_EQ(r.stats.fwd, 1);
  EXPECT_EQ(r.stats.bwd, 1);
  EXPECT_EQ(state.t, 1);

  // Constant gradient 1: a linear landscape realised through the noise term.
  const auto flat = make_quadratic_diag({0.0});
  Batch push{Tensor({1, 1}, std::vector<double>{1.0}), {0}};
  auto c = quadratic_config(Variant::Sgd, 0.1);
  c.momentum = 0.9;
  auto s2 = OptimizerState::create(c, ParamVector::plain({5.0}));
  auto w = sgd_step(s2, ParamVector::plain({5.0}), push, flat).params;
  EXPECT_DOUBLE_EQ(s2.momentum_buf[0], 1.0);
  w = sgd_step(s2, w, push, flat).params;
  EXPECT_DOUBLE_EQ(s2.momentum_buf[0], 1.9);
  EXPECT_NEAR(w[0], 5.0 - 0.1 * (1.0 + 1.9), 1e-15);
}

TEST(SgdStep, RandomMlpUpdateEqualsHandComposedMomentum) {
  std::mt19937_64 rng(12);
  auto [w0, spec] = build_mlp({4, 6, 3}, 3, 12);
  const auto b1 = oracle::random_batch(8, 4, 3, rng);
  const auto b2 = oracle::random_batch(8, 4, 3, rng);
  OptimizerConfig c;
  c.variant = Variant::Sgd;
  c.momentum = 0.9;
  c.weight_decay = 0.001;
  c.lr = LrSchedule{0.05, 0.0, 10};
  auto state = OptimizerState::create(c, w0);
  const auto w1 = sgd_step(state, w0, b1, spec).params;
  const auto w2 = sgd_step(state, w1, b2, spec).params;

  const auto g1 = grad(w0, b1, spec).grad;
  const auto g2 = grad(w1, b2, spec).grad;
  const double lr0 = 0.05;
  const double lr1 = 0.5 * 0.05 * (1.0 + std::cos(M_PI / 10.0));
  for (std::size_t i = 0; i < w0.size(); ++i) {
    const double buf1 = g1[i] + 0.001 * w0[i];
    const double e1 = w0[i] - lr0 * buf1;
    const double buf2 = 0.9 * buf1 + g2[i] + 0.001 * e1;
    const double e2 = e1 - lr1 * buf2;
    EXPECT_LE(oracle::rel(w1[i], e1), 1e-12);
    EXPECT_LE(oracle::rel(w2[i], e2), 1e-12);
  }
}

TEST(SamStep, QuadraticExample) {
  const auto spec = make_quadratic_diag({1.0});
  auto c = quadratic_config(Variant::Sam, 0.1);
  c.rho_max = 0.1;
  auto state = OptimizerState::create(c, ParamVector::plain({1.0}));
  const auto r = sam_step(state, ParamVector::plain({1.0}), clean_batch(spec), spec);
  EXPECT_NEAR(r.params[0], 0.89, 1e-15);
  EXPECT_EQ(r.stats.fwd, 2);
  EXPECT_EQ(r.stats.bwd, 2);
  EXPECT_NEAR(r.stats.norm_gmax, 1.1, 1e-15);
}

TEST(SamStep, DegeneratesToSgd) {
  std::mt19937_64 rng(31);
  auto [w, spec] = build_mlp({3, 5, 2}, 2, 31);
  const auto batch = oracle::random_batch(6, 3, 2, rng);
  OptimizerConfig c;
  c.lr = LrSchedule{0.05, 0.0, 5};
  c.rho_max = 0.0;
  c.variant = Variant::Sam;
  auto sam_state = OptimizerState::create(c, w);
  c.variant = Variant::Sgd;
  auto sgd_state = OptimizerState::create(c, w);
  EXPECT_EQ(sam_step(sam_state, w, batch, spec).params, sgd_step(sgd_state, w, batch, spec).params);

  // At the minimum the gradient vanishes: no perturbation, one pass.
  const auto quad = make_quadratic_diag({1.0, 2.0});
  auto cq = quadratic_config(Variant::Sam, 0.1);
  auto s = OptimizerState::create(cq, ParamVector::plain({0.0, 0.0}));
  const auto r = sam_step(s, ParamVector::plain({0.0, 0.0}), clean_batch(quad), quad);
  EXPECT_EQ(r.stats.fwd, 1);
  EXPECT_EQ(r.params, ParamVector::plain({0.0, 0.0}));
}

TEST(BsamStep, QuadraticExample) {
  const auto spec = make_quadratic_diag({1.0});
  auto c = quadratic_config(Variant::Bsam, 0.1);
  c.rho_max = 0.1;
  c.rho_min = RhoMinSchedule{0.05, 0.0};
  auto state = OptimizerState::create(c, ParamVector::plain({1.0}));
  const auto r = bsam_step(state, ParamVector::plain({1.0}), clean_batch(spec), spec);
  EXPECT_NEAR(r.params[0], 0.9, 1e-15);
  EXPECT_EQ(r.stats.fwd, 3);
  EXPECT_EQ(r.stats.bwd, 3);
  EXPECT_NEAR(r.stats.norm_g, 1.0, 1e-15);
  EXPECT_NEAR(r.stats.norm_gmax, 1.1, 1e-15);
  EXPECT_NEAR(r.stats.norm_gmin, 0.95, 1e-15);
  EXPECT_NEAR(r.stats.scale, 1.1 / 0.95, 1e-15);
  EXPECT_EQ(r.stats.rho_min_t, 0.05);
  ASSERT_TRUE(r.stats.cos_g_gmin.has_value());
  EXPECT_DOUBLE_EQ(*r.stats.cos_g_gmin, 1.0);
}

TEST(BsamStep, ZeroRhoMinUsesBaseGradientAsMinimumGradient) {
  std::mt19937_64 rng(41);
  auto [w, spec] = build_mlp({3, 6, 3}, 3, 41);
  const auto batch = oracle::random_batch(7, 3, 3, rng);
  OptimizerConfig c;
  c.variant = Variant::Bsam;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.rho_max = 0.05;
  c.rho_min = RhoMinSchedule{0.0, 0.0};
  c.lr = LrSchedule{0.1, 0.1, 3};
  auto state = OptimizerState::create(c, w);
  const auto r = bsam_step(state, w, batch, spec);

  const auto g = grad(w, batch, spec).grad;
  const auto gmax = grad(axpy(0.05 / l2_norm(g), g, w), batch, spec).grad;
  const double s = l2_norm(gmax) / l2_norm(g);
  EXPECT_NEAR(r.stats.scale, s, 1e-15);
  EXPECT_NEAR(r.stats.norm_gmin, l2_norm(g), 1e-15);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double composite = g[i] + gmax[i] - s * g[i];
    EXPECT_LE(oracle::rel(r.params[i], w[i] - 0.1 * composite), 1e-12);
  }
}

TEST(BsamStep, VanishingGradientDropsSharpnessTerms) {
  const auto spec = make_quadratic_diag({1.0, 3.0});
  auto c = quadratic_config(Variant::Bsam, 0.1);
  c.weight_decay = 0.01;
  const auto w = ParamVector::plain({0.0, 0.0});
  auto state = OptimizerState::create(c, w);
  const auto r = bsam_step(state, w, clean_batch(spec), spec);
  EXPECT_EQ(r.stats.fwd, 1);
  EXPECT_EQ(r.stats.bwd, 1);
  EXPECT_FALSE(r.stats.cos_g_gmin.has_value());
  EXPECT_EQ(r.params, w);
}

TEST(BsamStep, ZeroRadiiReduceToBaseGradientPlusDecay) {
  std::mt19937_64 rng(77);
  auto [w, spec] = build_mlp({3, 5, 2}, 2, 77);
  const auto batch = oracle::random_batch(6, 3, 2, rng);
  OptimizerConfig c;
  c.variant = Variant::Bsam;
  c.momentum = 0.0;
  c.weight_decay = 0.01;
  c.rho_max = 0.0;
  c.rho_min = RhoMinSchedule{0.0, 0.0};
  c.lr = LrSchedule{0.1, 0.1, 3};
  auto state = OptimizerState::create(c, w);
  const auto r = bsam_step(state, w, batch, spec);
  EXPECT_EQ(r.stats.scale, 1.0);
  const auto g = grad(w, batch, spec).grad;
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(r.params[i], w[i] - 0.1 * (g[i] + 0.01 * w[i]));
}

TEST(Step, PassCountsPerVariantAndVariantCheck) {
  std::mt19937_64 rng(5);
  auto [w, spec] = build_mlp({2, 4, 2}, 2, 5);
  const auto batch = oracle::random_batch(4, 2, 2, rng);
  const std::pair<Variant, int> expected[] = {{Variant::Sgd, 1}, {Variant::Sam, 2}, {Variant::Bsam, 3}};
  for (const auto& [v, passes] : expected) {
    OptimizerConfig c;
    c.variant = v;
    c.lr = LrSchedule{0.05, 0.0, 20};
    auto state = OptimizerState::create(c, w);
    auto p = w;
    for (int i = 0; i < 20; ++i) {
      const auto r = step(state, p, batch, spec);
      ASSERT_EQ(r.stats.fwd, passes);
      ASSERT_EQ(r.stats.bwd, passes);
      p = r.params;
    }
    p = step(state, p, batch, spec).params;  // t == T is the last valid step
    EXPECT_THROW(step(state, p, batch, spec), RangeError);
  }
  OptimizerConfig c;
  c.variant = Variant::Sgd;
  auto state = OptimizerState::create(c, w);
  EXPECT_THROW(bsam_step(state, w, batch, spec), ConfigError);
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.rho_min = {0.0, 0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr = {0.01, 0.05, 10};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.p_norm = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_variant("bsam"), Variant::Bsam);
  EXPECT_THROW(parse_variant("adam"), ConfigError);
}
