#pragma once

// Pilot-constant fitting and near-optimal sample allocation.
//
// The allocation works on the empirical constraint system
//   bias:     C_disc h^eta + C_Q3 / M^(1+delta)                <= (1 - kappa) tol
//   variance: C_Q1 / N^(1+beta) + C_Q2 / (N M^(1+delta))      <= (kappa tol / C_alpha)^2
// with work W = N M h^-gamma (the h factor is 1 for exact models).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nestiq/estimators.hpp"
#include "nestiq/keyed_rng.hpp"

namespace nestiq::alloc {

struct OuterRung {
  std::size_t N = 0;
  double variance = 0.0;  // variance of one randomized estimate (S x variance of the S-mean)
};

struct InnerRung {
  std::size_t M = 0;
  double variance = 0.0;  // inner contribution to the variance of the mean
  double bias = 0.0;      // |estimate(M) - estimate(reference)|
  double bias_stderr = 0.0;
};

struct OuterFit {
  double C_Q1 = 0.0;
  double beta = 0.0;
  double residual = 0.0;  // max |log deviation|
  bool beta_clamped = false;
  std::vector<OuterRung> rungs;
};

struct InnerFit {
  double C_Q2 = 0.0;
  double delta = 0.0;
  double C_Q3 = 0.0;
  double variance_residual = 0.0;
  double bias_residual = 0.0;
  bool delta_clamped = false;
  bool bias_low_confidence = false;
  std::size_t reference_M = 0;
  std::vector<InnerRung> rungs;
};

struct PilotMetadata {
  std::vector<std::size_t> outer_ladder;
  std::vector<std::size_t> inner_ladder;
  std::size_t outer_M = 0;
  std::size_t outer_S = 0;
  std::size_t inner_N = 0;
  std::size_t inner_R = 0;
  std::uint64_t seed = 0;
  std::string sampler;
  std::vector<OuterRung> outer_rungs;
  std::vector<InnerRung> inner_rungs;
  std::size_t reference_M = 0;
  double outer_residual = 0.0;
  double inner_variance_residual = 0.0;
  double inner_bias_residual = 0.0;
  bool bias_low_confidence = false;
};

struct PilotConstants {
  double C_Q1 = 0.0;
  double beta = 0.0;
  double C_Q2 = 0.0;
  double C_Q3 = 0.0;
  double delta = 0.0;

  /// Discretization: bias C_disc h^eta, cost h^-gamma. C_disc = 0 drops h.
  double C_disc = 0.0;
  double eta = 1.0;
  double gamma = 0.0;
  double h_max = 1.0;
  double h_min = 0.0;  // 0: no floor

  /// Share of the bias budget given to discretization when C_disc > 0.
  double bias_split = 0.5;

  PilotMetadata meta;

  void validate() const;
};

/// Confidence constant Phi^-1(1 - alpha/2), or 1/sqrt(alpha) under Chebyshev.
double confidence_constant(double alpha, bool chebyshev = false);

/// Smallest power of two >= x (x <= 2^62).
std::size_t round_up_pow2(double x);

// Rate fits from rung data. These are the building blocks of the pilot fits
// and are exposed for synthetic testing.

/// log v = log C_Q1 - (1 + beta) log N; beta clamped to [0, 1] with the
/// intercept refitted at the clamped slope.
OuterFit fit_outer_rates(std::span<const std::size_t> N, std::span<const double> variance);

/// v = C_Q2 / (N_fixed M^(1+delta)); delta clamped to [0, 1].
InnerFit fit_inner_variance(std::span<const std::size_t> M, std::span<const double> variance, std::size_t N_fixed);

/// bias = C_Q3 / M^(1+delta) at fixed delta, over the rungs whose bias exceeds
/// two standard errors. With no such rung C_Q3 = 0 and the fit is flagged.
struct BiasFit {
  double C_Q3 = 0.0;
  double residual = 0.0;
  bool low_confidence = false;
};
BiasFit fit_inner_bias(std::span<const std::size_t> M, std::span<const double> bias,
                       std::span<const double> bias_stderr, double delta);

/// Outer pilot: S outer randomizations with R = 1 at fixed M across the N ladder;
/// rung variances are those of a single randomization.
OuterFit fit_pilot_outer(const est::NestedProblem& problem, std::span<const std::size_t> ladder, std::size_t M_fixed,
                         std::size_t S, const RandomizationKey& key, const est::Sampler& sampler = {});

/// Inner pilot: R inner randomizations at N_fixed outer points across the M
/// ladder, plus a reference rung at 4x the largest M for the bias.
InnerFit fit_pilot_inner(const est::NestedProblem& problem, std::span<const std::size_t> ladder, std::size_t N_fixed,
                         std::size_t R, const RandomizationKey& key, const est::Sampler& sampler = {});

/// Both pilots; discretization metadata copied from the problem.
PilotConstants run_pilot(const est::NestedProblem& problem, std::span<const std::size_t> outer_ladder,
                         std::size_t outer_M, std::size_t outer_S, std::span<const std::size_t> inner_ladder,
                         std::size_t inner_N, std::size_t inner_R, const RandomizationKey& key,
                         const est::Sampler& sampler = {});

struct AllocationPlan {
  double tol = 0.0;
  double alpha = 0.05;
  double C_alpha = 0.0;
  double kappa_star = 0.0;
  std::size_t N_star = 1;
  std::size_t M_star = 1;
  std::optional<double> h_star;
  double predicted_work = 0.0;

  /// Continuous solution before rounding.
  double N_raw = 0.0;
  double M_raw = 0.0;
  std::optional<double> h_raw;
  double kappa_raw = 0.0;
  double N_seed = 0.0;  // closed-form approximation used as the search seed

  /// Constraint values at the rounded plan.
  double bias = 0.0;
  double variance = 0.0;
};

/// Left-hand sides of the constraints at (N, M, h).
double plan_bias(const PilotConstants& c, double M, std::optional<double> h);
double plan_variance(const PilotConstants& c, double N, double M);

/// True when both constraints hold at the plan's values (relative slack 1e-12).
bool plan_feasible(const AllocationPlan& plan, const PilotConstants& c);

/// Real root in (0, 1) of the kappa cubic for a given N; grid fallback when
/// there is no sign change.
double solve_kappa(const PilotConstants& c, double N, double tol, double C_alpha);

/// Continuous work at (N, kappa) with M and h chosen by the constraint formulas.
double continuous_work(const PilotConstants& c, double N, double kappa, double tol, double C_alpha);

/// (C_alpha^2 C_Q1 / (kappa tol)^2)^(1/(1+beta)).
double approximate_N(const PilotConstants& c, double kappa, double tol, double C_alpha);

/// Smallest real M meeting the inner-bias share of the budget at kappa.
double bias_limited_M(const PilotConstants& c, double kappa, double tol);

/// Smallest real M meeting the variance constraint at (N, kappa); 0 when the
/// inner term vanishes, +inf when the outer term alone exceeds the budget.
double variance_limited_M(const PilotConstants& c, double N, double kappa, double tol, double C_alpha);

AllocationPlan solve_allocation(const PilotConstants& c, double tol, double alpha, bool chebyshev = false);

double predicted_work(const AllocationPlan& plan, const PilotConstants& c);

/// Exhaustive search over a kappa grid x power-of-two N, M (x an h ladder
/// when C_disc > 0) on the unsplit constraints.
AllocationPlan brute_force_allocation(const PilotConstants& c, double tol, double alpha, std::size_t kappa_grid = 500,
                                      bool chebyshev = false);

}  // namespace nestiq::alloc
