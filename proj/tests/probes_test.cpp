#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bsam/autodiff.hpp"
#include "bsam/error.hpp"
#include "bsam/models.hpp"
#include "bsam/optimizers.hpp"
#include "bsam/probes.hpp"
#include "oracles.hpp"

using namespace bsam;

namespace {

// A small MLP pulled towards a minimum of a fixed batch so its Hessian is
// dominated by positive curvature.
struct TrainedMlp {
  ParamVector w;
  ModelSpec spec;
  Batch batch;
};

TrainedMlp trained_tiny_mlp() {
  std::mt19937_64 rng(2024);
  auto [w, spec] = build_mlp({2, 5, 3}, 3, 2024);
  auto batch = oracle::random_batch(24, 2, 3, rng);
  for (int i = 0; i < 400; ++i) w = axpy(-0.2, grad(w, batch, spec).grad, w);
  return {w, spec, batch};
}

}  // namespace

TEST(Sharpness, QuadraticExamples) {
  const auto spec = make_quadratic_diag({1.0});
  const auto w = ParamVector::plain({1.0});
  const auto b = clean_batch(spec);
  const auto mx = max_sharpness(w, b, spec, 0.1);
  const auto mn = min_sharpness(w, b, spec, 0.1);
  EXPECT_NEAR(mx.value, 0.105, 1e-15);
  EXPECT_NEAR(mn.value, 0.095, 1e-15);
  EXPECT_FALSE(mx.degenerate);
  EXPECT_GT(mx.value, mn.value);
  const auto rep = sharpness_report(w, b, spec, ReportOptions{0.1, 1, 50, 1e-10, 0});
  EXPECT_NEAR(rep.bil_s, 0.2, 1e-15);
  EXPECT_EQ(rep.rho_used, 0.1);
  EXPECT_EQ(max_sharpness(w, b, spec, 0.0).value, 0.0);
  EXPECT_EQ(min_sharpness(w, b, spec, 0.0).value, 0.0);
}

TEST(Sharpness, ZeroGradientIsFlaggedAndNegativeRhoRejected) {
  const auto spec = make_quadratic_diag({1.0, 4.0});
  const auto w = ParamVector::plain({0.0, 0.0});
  const auto mx = max_sharpness(w, clean_batch(spec), spec, 0.1);
  EXPECT_TRUE(mx.degenerate);
  EXPECT_EQ(mx.value, 0.0);
  EXPECT_THROW(max_sharpness(w, clean_batch(spec), spec, -0.1), RangeError);
}

TEST(Sharpness, ConvexAsymmetryAndReportIdentity) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = make_quadratic(oracle::random_psd(6, rng), std::vector<double>(6, 0.0));
    const auto w = oracle::randomized(ParamVector::plain(std::vector<double>(6)), 1.0, rng);
    const double lmax = oracle::eigenvalues_desc(oracle::fd_hessian(w, clean_batch(spec), spec, 1e-4))(0);
    const double rho = 0.5 / lmax * (0.1 + 0.9 * trial / 50.0);
    const auto rep = sharpness_report(w, clean_batch(spec), spec, ReportOptions{rho, 0, 1, 1e-6, 0});
    EXPECT_GT(rep.max_s, rep.min_s);
    EXPECT_GT(rep.min_s, 0.0);
    EXPECT_NEAR(rep.bil_s, rep.max_s + rep.min_s, 1e-9);
  }
}

TEST(Sharpness, BeatsRandomSearchOnMlp) {
  std::mt19937_64 rng(99);
  auto [w, spec] = build_mlp({3, 8, 3}, 3, 99);
  const auto batch = oracle::random_batch(16, 3, 3, rng);
  const double base = forward_loss(w, batch, spec);
  for (double rho : {1e-3, 1e-2}) {
    double best = -1e300;
    for (int k = 0; k < 1000; ++k) {
      auto d = oracle::randomized(w, 1.0, rng);
      d = scaled(rho / l2_norm(d), d);
      best = std::max(best, forward_loss(axpy(1.0, d, w), batch, spec) - base);
    }
    const double mx = max_sharpness(w, batch, spec, rho).value;
    EXPECT_GE(mx, best - 0.1 * std::abs(best)) << "rho = " << rho;
  }
}

TEST(Hvp, QuadraticExamplesLinearityAndSymmetry) {
  const auto diag = make_quadratic_diag({1.0, 10.0});
  const auto w0 = ParamVector::plain({0.3, -0.2});
  const auto hv = hvp(w0, ParamVector::plain({0.0, 1.0}), clean_batch(diag), diag, 1e-4);
  EXPECT_NEAR(hv[0], 0.0, 1e-6);
  EXPECT_NEAR(hv[1], 10.0, 1e-6);
  EXPECT_THROW(hvp(w0, ParamVector::plain({0.0, 0.0}), clean_batch(diag), diag, 1e-4), DegenerateError);
  EXPECT_THROW(hvp(w0, ParamVector::plain({0.0, 1.0}), clean_batch(diag), diag, 0.0), RangeError);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = oracle::random_psd(5, rng);
    const auto spec = make_quadratic(h, std::vector<double>(5, 0.1));
    const auto b = clean_batch(spec);
    const auto w = oracle::randomized(ParamVector::plain(std::vector<double>(5)), 1.0, rng);
    const auto u = oracle::randomized(w, 1.0, rng);
    const auto v = oracle::randomized(w, 1.0, rng);
    const double step = default_hvp_step(w);
    const auto hv5 = hvp(w, v, b, spec, step);
    for (std::size_t i = 0; i < 5; ++i) {
      double exact = 0.0;
      for (std::size_t j = 0; j < 5; ++j) exact += h[i * 5 + j] * v[j];
      EXPECT_LE(std::abs(hv5[i] - exact) / l2_norm(hv5), 1e-6);
    }
    const auto hv2 = hvp(w, scaled(2.0, v), b, spec, step);
    EXPECT_LE(l2_norm(axpy(-2.0, hv5, hv2)) / l2_norm(hv2), 1e-6);
    EXPECT_NEAR(dot(u, hv5), dot(v, hvp(w, u, b, spec, step)), 1e-6);
  }
}

TEST(TopEigenvalues, DiagonalSpectrum) {
  std::vector<double> d;
  for (int i = 1; i <= 10; ++i) d.push_back(i);
  const auto spec = make_quadratic_diag(d);
  const auto w = ParamVector::plain(std::vector<double>(10, 0.5));
  const auto eig = top_eigenvalues(w, clean_batch(spec), spec, 3, 5000, 1e-10, 1);
  ASSERT_EQ(eig.size(), 3u);
  EXPECT_NEAR(eig[0].value, 10.0, 1e-4);
  EXPECT_NEAR(eig[1].value, 9.0, 1e-4);
  EXPECT_NEAR(eig[2].value, 8.0, 1e-4);
  for (const auto& e : eig) EXPECT_LE(e.residual, 1e-10);
  EXPECT_THROW(top_eigenvalues(w, clean_batch(spec), spec, 11, 10, 1e-6, 1), RangeError);
}

TEST(TopEigenvalues, RandomPsdMatchesDenseSolver) {
  std::mt19937_64 rng(20);
  const auto h = oracle::random_psd(20, rng);
  const auto spec = make_quadratic(h, std::vector<double>(20, 0.0));
  Eigen::MatrixXd dense(20, 20);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) dense(i, j) = h[static_cast<std::size_t>(i * 20 + j)];
  const auto expect = oracle::eigenvalues_desc(dense);
  const auto w = oracle::randomized(ParamVector::plain(std::vector<double>(20)), 1.0, rng);
  const auto eig = top_eigenvalues(w, clean_batch(spec), spec, 5, 20000, 1e-9, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(eig[i].value, expect(static_cast<Eigen::Index>(i)), 1e-4) << "i = " << i;
    if (i > 0) EXPECT_GE(eig[i - 1].value, eig[i].value);
  }
}

TEST(TopEigenvalues, TinyMlpMatchesDenseFiniteDifferenceHessian) {
  const auto m = trained_tiny_mlp();
  ASSERT_LE(m.w.size(), 60u);
  const auto ev = oracle::eigenvalues_desc(oracle::fd_hessian(m.w, m.batch, m.spec, 1e-5));
  ASSERT_GT(ev(0), std::abs(ev(ev.size() - 1)));
  const auto eig = top_eigenvalues(m.w, m.batch, m.spec, 1, 3000, 1e-8, 7);
  EXPECT_LE(std::abs(eig[0].value - ev(0)) / ev(0), 0.01);
}

TEST(TopEigenvalues, IndefiniteHessianReturnsLargestAlgebraic) {
  // Random 2-6-6-2 nets whose most negative eigenvalue outweighs the largest.
  const std::pair<double, std::uint64_t> cases[] = {{1.0, 8}, {3.0, 31}, {3.0, 59}};
  for (const auto& [scale, seed] : cases) {
    std::mt19937_64 rng(seed);
    auto [w, spec] = build_mlp({2, 6, 6, 2}, 2, seed);
    w = oracle::randomized(w, scale, rng);
    const auto batch = oracle::random_batch(10, 2, 2, rng);
    const auto ev = oracle::eigenvalues_desc(oracle::fd_hessian(w, batch, spec, 1e-5));
    ASSERT_GT(std::abs(ev(ev.size() - 1)), ev(0));
    const auto eig = top_eigenvalues(w, batch, spec, 1, 20000, 1e-9, seed);
    EXPECT_LE(std::abs(eig[0].value - ev(0)) / ev(0), 0.01) << "seed " << seed;
  }
}

TEST(TopEigenvalues, SeedDeterminism) {
  const auto m = trained_tiny_mlp();
  const auto a = top_eigenvalues(m.w, m.batch, m.spec, 2, 50, 1e-12, 11);
  const auto b = top_eigenvalues(m.w, m.batch, m.spec, 2, 50, 1e-12, 11);
  EXPECT_EQ(a[0].value, b[0].value);
  EXPECT_EQ(a[1].residual, b[1].residual);
  EXPECT_EQ(a[0].iterations, b[0].iterations);
}

TEST(CosineDiagnostic, SyntheticTraces) {
  std::vector<StepStats> trace(100);
  for (auto& s : trace) s.cos_g_gmin = 1.0;
  auto sum = cosine_diagnostic(trace);
  for (const auto& m : sum.decile_means) {
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(*m, 1.0);
  }
  EXPECT_EQ(sum.final_decile_negative_fraction, 0.0);
  EXPECT_EQ(sum.samples, 100u);

  for (std::size_t i = 90; i < 100; ++i) trace[i].cos_g_gmin = -0.5;
  sum = cosine_diagnostic(trace);
  EXPECT_EQ(sum.final_decile_mean, -0.5);
  EXPECT_EQ(sum.final_decile_negative_fraction, 1.0);
  EXPECT_EQ(*sum.decile_means[8], 1.0);

  EXPECT_THROW(cosine_diagnostic(std::vector<StepStats>{}), RangeError);
  EXPECT_THROW(cosine_diagnostic(std::vector<StepStats>(5)), RangeError);
}

TEST(CosineDiagnostic, ShortTraceUsesLastFilledDecile) {
  std::vector<StepStats> trace(4);
  trace[0].cos_g_gmin = 0.9;
  trace[1].cos_g_gmin = 0.5;
  trace[3].cos_g_gmin = -0.2;
  const auto sum = cosine_diagnostic(trace);
  EXPECT_EQ(*sum.decile_means[0], 0.9);
  EXPECT_FALSE(sum.decile_means[1].has_value());
  EXPECT_EQ(sum.final_decile_mean, -0.2);
  EXPECT_EQ(sum.samples, 3u);
}

TEST(LossSlice, CentreAndIdentityQuadratic) {
  const auto spec = make_quadratic_diag({1.0, 1.0});
  // zero params would zero the filter-normalized directions
  const auto w1 = ParamVector::plain({1.0, 1.0});
  const auto b = clean_batch(spec);
  const auto s = loss_slice(w1, spec, b, ParamVector::plain({1.0, 0.0}), ParamVector::plain({0.0, 1.0}), 5, 1.0);
  ASSERT_EQ(s.grid(), 5u);
  EXPECT_EQ(s.alphas[2], 0.0);
  EXPECT_EQ(s.betas[2], 0.0);
  EXPECT_EQ(s.at(2, 2), forward_loss(w1, b, spec));
  // A single segment "w" of norm sqrt(2): both directions get that length.
  const double r = std::sqrt(2.0);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double x = 1.0 + s.alphas[i] * r, y = 1.0 + s.betas[j] * r;
      EXPECT_NEAR(s.at(i, j), 0.5 * (x * x + y * y), 1e-12);
    }
  }
  EXPECT_THROW(loss_slice(w1, spec, b, ParamVector::plain({1.0, 0.0}), ParamVector::plain({2.0, 0.0}), 5, 1.0),
               DegenerateError);
  EXPECT_THROW(loss_slice(w1, spec, b, ParamVector::plain({1.0, 0.0}), ParamVector::plain({0.0, 1.0}), 4, 1.0),
               RangeError);
}

TEST(LossSlice, PointSymmetryForEvenQuadratic) {
  std::mt19937_64 rng(61);
  const auto w = oracle::randomized(ParamVector::plain(std::vector<double>(4)), 1.0, rng);
  const auto spec = make_quadratic(oracle::random_psd(4, rng), std::vector<double>(w.values().begin(), w.values().end()));
  const auto s = loss_slice(w, spec, clean_batch(spec), oracle::randomized(w, 1.0, rng), oracle::randomized(w, 1.0, rng),
                            7, 0.5);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(s.at(i, j), s.at(6 - i, 6 - j), 1e-12);
}

TEST(LossSlice, FilterNormalizationMatchesSegmentNorms) {
  auto [w, spec] = build_mlp({3, 4, 2}, 2, 4);
  std::mt19937_64 rng(4);
  const auto d = filter_normalize(oracle::randomized(w, 3.0, rng), w);
  for (std::size_t s = 0; s < w.layout().size(); ++s) {
    const auto ds = d.segment(s);
    const auto ws = w.segment(s);
    double nd = 0.0, nw = 0.0;
    for (double x : ds) nd += x * x;
    for (double x : ws) nw += x * x;
    EXPECT_NEAR(std::sqrt(nd), std::sqrt(nw), 1e-12);
  }
}
