#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nestiq/errors.hpp"
#include "nestiq/estimators.hpp"
#include "nestiq/parallel.hpp"
#include "nestiq/stats.hpp"

using namespace nestiq;
using namespace nestiq::est;

namespace {

RandomizationKey key(std::uint64_t seed) { return RandomizationKey{seed, "est", {0, 0, 0}}; }

NestedProblem toy_exp_log() {
  return NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double> y, std::span<const double> x) { return std::exp(x[0] * y[0]); });
}

double sample_var(const std::vector<double>& v) {
  const double m = stats::mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

const Sampler kSobol{SamplerKind::sobol_owen, {}, {}};
const Sampler kMc{SamplerKind::mc, {}, {}};

}  // namespace

TEST(McEstimate, ConstantIsExact) {
  const auto r = mc_estimate([](std::span<const double>) { return 7.0; }, 3, 100, key(1));
  EXPECT_EQ(r.estimate, 7.0);
  ASSERT_TRUE(r.variance_of_mean);
  EXPECT_EQ(*r.variance_of_mean, 0.0);
}

TEST(McEstimate, MeanOfIdentity) {
  const auto r = mc_estimate([](std::span<const double> x) { return x[0]; }, 1, 1 << 14, key(2));
  ASSERT_TRUE(r.standard_error);
  EXPECT_NEAR(r.estimate, 0.5, 4.0 * *r.standard_error);
  EXPECT_NEAR(*r.standard_error, std::sqrt(1.0 / 12.0 / (1 << 14)), 2e-4);
  EXPECT_DOUBLE_EQ(*r.standard_error, std::sqrt(*r.variance_of_mean));
}

TEST(McEstimate, RmseSlopeIsHalf) {
  std::vector<double> xs, ys;
  for (int k = 6; k <= 12; ++k) {
    double se = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto r = mc_estimate([](std::span<const double> x) { return x[0] * x[0]; }, 1, std::size_t{1} << k,
                                 key(1000 + s));
      se += (r.estimate - 1.0 / 3.0) * (r.estimate - 1.0 / 3.0);
    }
    xs.push_back(k);
    ys.push_back(0.5 * std::log2(se / 100.0));
  }
  EXPECT_NEAR(stats::fit_line(xs, ys).slope, -0.5, 0.1);
}

TEST(RqmcEstimate, IdentityAccuracy) {
  const auto r = rqmc_estimate([](std::span<const double> x) { return x[0]; }, 1, 1 << 10, 8, key(3));
  EXPECT_LT(std::abs(r.estimate - 0.5), 1e-3);
  ASSERT_TRUE(r.standard_error);
  EXPECT_LT(*r.standard_error, 1e-3);
  EXPECT_EQ(r.replicate_values.size(), 8u);
}

TEST(RqmcEstimate, ConstantExact) {
  const auto r = rqmc_estimate([](std::span<const double>) { return -2.5; }, 4, 64, 4, key(4));
  EXPECT_EQ(r.estimate, -2.5);
  EXPECT_EQ(*r.variance_of_mean, 0.0);
}

TEST(RqmcEstimate, SingleReplicateUnbiased) {
  std::vector<double> v;
  for (std::uint64_t s = 0; s < 1000; ++s)
    v.push_back(rqmc_estimate([](std::span<const double> x) { return x[0] * x[0] * x[0]; }, 1, 16, 1, key(s))
                    .estimate);
  EXPECT_NEAR(stats::mean(v), 0.25, 4.0 * std::sqrt(sample_var(v) / 1000.0));
}

TEST(RqmcEstimate, NonPowerOfTwoRejected) {
  EXPECT_THROW(rqmc_estimate([](std::span<const double> x) { return x[0]; }, 1, 100, 2, key(1)), DomainError);
}

TEST(RqmcEstimate, LatticeShift) {
  Sampler lat{SamplerKind::lattice_shift, {1.0, 182667.0}, {}};
  const auto r = rqmc_estimate([](std::span<const double> x) { return x[0] * x[1]; }, 2, 1021, 8, key(5), lat);
  EXPECT_NEAR(r.estimate, 0.25, 4.0 * *r.standard_error + 1e-12);
  EXPECT_LT(*r.standard_error, 1e-3);
}

TEST(DlmcEstimate, IdentityCollapsesToGrandMean) {
  const auto p = NestedProblem::from_integrand(
      2, 1, OuterMap::identity,
      [](std::span<const double> y, std::span<const double> x) { return y[0] + y[1] * x[0] * x[0]; });
  const auto r = dlmc_estimate(p, 50, 7, key(6));
  const auto outer = outer_points(2, 50, 0, kMc, key(6));
  const auto inner = inner_means(p, outer, 7, 1, 0, kMc, key(6));
  double grand = 0.0;
  for (const auto& row : inner) grand += row[0];
  EXPECT_NEAR(r.estimate, grand / 50.0, 1e-14);
  EXPECT_EQ(r.replicate_values.size(), 50u);
}

TEST(DlmcEstimate, LogOfProductAgainstTruth) {
  const auto p = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double> y, std::span<const double> x) { return y[0] * x[0]; });
  const auto r = dlmc_estimate(p, 1 << 14, 64, key(7));
  // int_0^1 log(y / 2) dy = -1 - log 2; inner bias is O(1/M).
  const double truth = -1.0 - std::log(2.0);
  EXPECT_NEAR(r.estimate, truth, 4.0 * *r.standard_error + 0.02);
}

TEST(DlmcEstimate, SingleInnerSampleMatchesCompositeMc) {
  const auto g = [](std::span<const double> y, std::span<const double> x) { return std::sin(3.0 * y[0] + x[0]); };
  const auto p = NestedProblem::from_integrand(1, 1, OuterMap::custom, g);
  NestedProblem q = p;
  q.custom_outer = [](double v) { return v * v; };
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 200; ++s) {
    a.push_back(dlmc_estimate(q, 32, 1, key(s)).estimate);
    b.push_back(mc_estimate([&](std::span<const double> u) { const double v = g(u.subspan(0, 1), u.subspan(1, 1)); return v * v; },
                            2, 32, key(10000 + s))
                    .estimate);
  }
  const double se = std::sqrt(sample_var(a) / 200.0 + sample_var(b) / 200.0);
  EXPECT_NEAR(stats::mean(a), stats::mean(b), 4.0 * se);
}

TEST(RdlqmcEstimate, IdentityWithOneInnerMatchesJointRqmc) {
  const auto g = [](std::span<const double> y, std::span<const double> x) { return std::exp(y[0] * x[0]); };
  const auto p = NestedProblem::from_integrand(1, 1, OuterMap::identity, g);
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 200; ++s) {
    a.push_back(rdlqmc_estimate(p, 16, 1, 1, 1, key(s)).estimate);
    b.push_back(rqmc_estimate([&](std::span<const double> u) { return g(u.subspan(0, 1), u.subspan(1, 1)); }, 2, 16, 1,
                              key(5000 + s))
                    .estimate);
  }
  double truth = 0.0;
  {
    const auto q = tensor_quadrature_reference(p, 20, 20);
    truth = q.value;
  }
  const double se = std::sqrt(sample_var(a) / 200.0 + sample_var(b) / 200.0);
  EXPECT_NEAR(stats::mean(a), stats::mean(b), 4.0 * se);
  EXPECT_NEAR(stats::mean(b), truth, 4.0 * std::sqrt(sample_var(b) / 200.0));
}

TEST(RdlqmcEstimate, ConstantIsExact) {
  const auto p = NestedProblem::from_integrand(3, 2, OuterMap::log,
                                               [](std::span<const double>, std::span<const double>) { return 2.0; });
  for (auto c : {Counts{1, 1, 1, 1}, Counts{4, 8, 2, 3}, Counts{16, 2, 5, 1}}) {
    const auto r = nested_estimate(p, c, kSobol, key(8));
    EXPECT_NEAR(r.estimate, std::log(2.0), 1e-15);
  }
}

TEST(RdlqmcEstimate, ToyProblemAgainstQuadrature) {
  const auto p = toy_exp_log();
  const auto q = tensor_quadrature_reference(p, 32, 32);
  ASSERT_TRUE(q.accurate) << q.warning;
  const auto r = rdlqmc_estimate(p, 1 << 10, 1 << 7, 8, 1, key(9));
  EXPECT_LT(std::abs(r.estimate - q.value), 1e-3);
  EXPECT_EQ(r.replicate_values.size(), 8u);
  EXPECT_NEAR(r.estimate, stats::mean(r.replicate_values), 1e-15);
}

TEST(RdlqmcEstimate, SingleRandomizationHasNoVariance) {
  const auto r = rdlqmc_estimate(toy_exp_log(), 8, 8, 1, 1, key(1));
  EXPECT_FALSE(r.variance_of_mean);
  EXPECT_FALSE(r.standard_error);
}

TEST(RdlqmcEstimate, PowerOfTwoEnforced) {
  EXPECT_THROW(rdlqmc_estimate(toy_exp_log(), 12, 8, 2, 1, key(1)), DomainError);
  EXPECT_THROW(rdlqmc_estimate(toy_exp_log(), 8, 6, 2, 1, key(1)), DomainError);
}

TEST(NestedEstimate, WorkAccounting) {
  auto p = toy_exp_log();
  p.h = 0.25;
  p.gamma = 2.0;
  const auto r = nested_estimate(p, Counts{8, 4, 3, 2}, kSobol, key(2));
  EXPECT_EQ(r.work, 8.0 * 4 * 3 * 2 * 16.0);
  const auto m = nested_estimate(toy_exp_log(), Counts{5, 3, 1, 1}, kMc, key(2));
  EXPECT_EQ(m.work, 15.0);
}

TEST(NestedEstimate, DeterministicAcrossThreadCounts) {
  const auto p = toy_exp_log();
  set_max_threads(1);
  const auto a = nested_estimate(p, Counts{64, 16, 4, 2}, kSobol, key(3));
  set_max_threads(4);
  const auto b = nested_estimate(p, Counts{64, 16, 4, 2}, kSobol, key(3));
  set_max_threads(0);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.replicate_values, b.replicate_values);
  EXPECT_EQ(*a.variance_of_mean, *b.variance_of_mean);
}

TEST(NestedEstimate, LogFormMatchesLinear) {
  const auto lin = toy_exp_log();
  auto lg = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double> y, std::span<const double> x) { return x[0] * y[0]; }, true);
  lg.bind_linear = lin.bind;
  EXPECT_NO_THROW(lg.validate());
  const auto a = nested_estimate(lin, Counts{32, 16, 2, 2}, kSobol, key(4));
  const auto b = nested_estimate(lg, Counts{32, 16, 2, 2}, kSobol, key(4));
  EXPECT_NEAR(a.estimate, b.estimate, 1e-13);
}

TEST(NestedEstimate, ValidateCatchesInconsistentLogForm) {
  auto lg = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double> y, std::span<const double> x) { return x[0] * y[0]; }, true);
  lg.bind_linear = NestedProblem::from_integrand(
                       1, 1, OuterMap::log,
                       [](std::span<const double> y, std::span<const double> x) { return std::exp(x[0] * y[0]) + 1e-6; })
                       .bind;
  EXPECT_THROW(lg.validate(), DomainError);
}

TEST(NestedEstimate, LinearUnderflowDirectsToLogForm) {
  const auto p = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double>, std::span<const double> x) { return std::exp(-1000.0 * (1 + x[0])); });
  try {
    nested_estimate(p, Counts{4, 4, 1, 1}, kMc, key(1));
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("log form"), std::string::npos);
  }
  const auto q = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double>, std::span<const double> x) { return -1000.0 * (1 + x[0]); }, true);
  EXPECT_NO_THROW(nested_estimate(q, Counts{4, 4, 1, 1}, kMc, key(1)));
}

TEST(NestedEstimate, InnerRandomizationUnbiased) {
  const auto p = toy_exp_log();
  const auto outer = outer_points(1, 4, 0, kSobol, key(11));
  const auto means = inner_means(p, outer, 8, 500, 0, kSobol, key(11));
  for (std::size_t n = 0; n < 4; ++n) {
    const double y = outer.at(n, 0);
    const double truth = std::expm1(y) / y;
    const double se = std::sqrt(stats::replicate_variance(means[n]));
    EXPECT_NEAR(stats::mean(means[n]), truth, 4.0 * se + 1e-15) << "outer sample " << n;
  }
}

TEST(NestedEstimate, VarianceRateSeparation) {
  const auto p = toy_exp_log();
  std::vector<double> xs, vq, vm;
  for (int k = 4; k <= 10; ++k) {
    const std::size_t N = std::size_t{1} << k;
    const auto q = rdlqmc_estimate(p, N, 1 << 10, 8, 1, key(20 + k));
    const auto m = dlmc_estimate(p, N, 1 << 10, key(40 + k));
    xs.push_back(k);
    vq.push_back(std::log2(*q.variance_of_mean));
    vm.push_back(std::log2(*m.variance_of_mean));
  }
  EXPECT_LE(stats::fit_line(xs, vq).slope, -1.5);
  EXPECT_NEAR(stats::fit_line(xs, vm).slope, -1.0, 0.15);
}

// Var(sum X_j) <= J sum Var(X_j); equality for identical copies, and the sum of
// variances for independent draws.
TEST(VarianceInequality, SharedRandomness) {
  const int trials = 10000;
  for (std::size_t J : {2u, 5u, 8u}) {
    std::vector<std::vector<double>> dep(J), ind(J), same(J);
    std::vector<double> sdep, sind, ssame;
    for (int t = 0; t < trials; ++t) {
      const KeyedStream s(RandomizationKey{J, "varineq", {static_cast<std::uint64_t>(t), 0, 0}});
      const double shared = s.uniform(0);
      double a = 0.0, b = 0.0, c = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        const double own = s.uniform(1 + j);
        const double xd = std::sin(6.0 * shared + j) + 0.3 * own;
        const double xi = own * own;
        const double xs = shared * shared;
        dep[j].push_back(xd);
        ind[j].push_back(xi);
        same[j].push_back(xs);
        a += xd;
        b += xi;
        c += xs;
      }
      sdep.push_back(a);
      sind.push_back(b);
      ssame.push_back(c);
    }
    double vd = 0.0, vi = 0.0, vs = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      vd += sample_var(dep[j]);
      vi += sample_var(ind[j]);
      vs += sample_var(same[j]);
    }
    EXPECT_LE(sample_var(sdep), 1.1 * J * vd);
    EXPECT_NEAR(sample_var(ssame), J * vs, 0.1 * J * vs);
    EXPECT_NEAR(sample_var(sind), vi, 0.1 * vi);
  }
}

TEST(Quadrature, GaussLegendreExactForPolynomials) {
  for (std::size_t n : {1u, 2u, 5u, 16u, 64u}) {
    const auto r = gauss_legendre(n);
    double s = 0.0;
    for (double w : r.weights) s += w;
    EXPECT_NEAR(s, 1.0, 1e-14);
    const int deg = static_cast<int>(2 * n - 1);
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += r.weights[i] * std::pow(r.nodes[i], deg);
    EXPECT_NEAR(m, 1.0 / (deg + 1), 1e-14);
  }
}

TEST(Quadrature, Examples) {
  const auto one = NestedProblem::from_integrand(2, 3, OuterMap::identity,
                                                 [](std::span<const double>, std::span<const double>) { return 1.0; });
  EXPECT_NEAR(tensor_quadrature_reference(one, 4, 3).value, 1.0, 1e-14);
  const auto prod = NestedProblem::from_integrand(
      1, 1, OuterMap::identity, [](std::span<const double> y, std::span<const double> x) { return y[0] * x[0]; });
  EXPECT_NEAR(tensor_quadrature_reference(prod, 8, 8).value, 0.25, 1e-12);
  const auto toy = tensor_quadrature_reference(toy_exp_log(), 16, 16);
  EXPECT_TRUE(toy.accurate);
  EXPECT_LT(toy.doubling_change, 1e-10);
}

TEST(Quadrature, WarnsWhenNotConverged) {
  const auto p = NestedProblem::from_integrand(
      1, 1, OuterMap::log, [](std::span<const double> y, std::span<const double> x) { return y[0] * x[0]; });
  const auto q = tensor_quadrature_reference(p, 3, 3);
  EXPECT_FALSE(q.accurate);
  EXPECT_FALSE(q.warning.empty());
}

TEST(Quadrature, Limits) {
  const auto p = NestedProblem::from_integrand(4, 1, OuterMap::identity,
                                               [](std::span<const double>, std::span<const double>) { return 1.0; });
  EXPECT_THROW(tensor_quadrature_reference(p, 2, 2), DomainError);
  EXPECT_THROW(tensor_quadrature_reference(toy_exp_log(), 65, 2), DomainError);
}
