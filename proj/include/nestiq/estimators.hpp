#pragma once

// Single-loop and double-loop (nested) estimators over the unit cube.
//
// A nested integral is I = int f( int g(y, x) dx ) dy with y in [0,1]^d1 and
// x in [0,1]^d2. The double-loop estimators average f over N outer points of
// an inner average over M points, with S independent outer randomizations and
// R independent inner randomizations per (s, n) pair.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nestiq/keyed_rng.hpp"
#include "nestiq/lds.hpp"

namespace nestiq::est {

using Integrand = std::function<double(std::span<const double>)>;
using InnerIntegrand = std::function<double(std::span<const double>)>;

enum class OuterMap { identity, log, custom };

struct NestedProblem {
  std::size_t outer_dim = 1;
  std::size_t inner_dim = 1;
  OuterMap outer = OuterMap::identity;
  std::function<double(double)> custom_outer;

  /// When set, inner integrands return log g and inner averages are formed
  /// with log-sum-exp.
  bool log_form = false;

  /// Binds an outer point; the returned callable evaluates g(y, .) (or log g).
  /// Per-outer-point setup (data simulation, Laplace fits) happens here.
  std::function<InnerIntegrand(std::span<const double> y)> bind;

  /// Optional linear-scale companion of a log-form integrand, used by validate().
  std::function<InnerIntegrand(std::span<const double> y)> bind_linear;

  /// Discretization level and cost/accuracy metadata.
  std::optional<double> h;
  double gamma = 0.0;
  double eta = 0.0;

  /// Problem from a plain g(y, x).
  static NestedProblem from_integrand(
      std::size_t d1, std::size_t d2, OuterMap outer,
      std::function<double(std::span<const double>, std::span<const double>)> g,
      bool log_form = false);

  /// f applied to an inner mean given in the integrand's representation
  /// (log-mean when log_form).
  double apply_outer(double inner_mean) const;

  /// Work charged per evaluation of g: h^-gamma, or 1 without discretization.
  double cost_per_evaluation() const;

  /// Checks exp/log consistency of a log-form integrand against a linear
  /// companion on a probe grid; throws DomainError beyond `tol`.
  void validate() const;
};

enum class SamplerKind { mc, sobol_owen, lattice_shift };

std::string to_string(SamplerKind kind);
SamplerKind sampler_from_string(const std::string& name);

struct Sampler {
  SamplerKind kind = SamplerKind::sobol_owen;
  /// Generating vectors for lattice_shift (outer, inner).
  std::vector<double> outer_lattice;
  std::vector<double> inner_lattice;
};

struct Counts {
  std::size_t N = 1;
  std::size_t M = 1;
  std::size_t S = 1;
  std::size_t R = 1;
};

struct EstimatorResult {
  double estimate = 0.0;
  std::vector<double> replicate_values;
  std::optional<double> variance_of_mean;
  std::optional<double> standard_error;
  Counts counts;
  std::uint64_t seed = 0;
  double work = 0.0;
};

/// Plain Monte Carlo over M iid uniform points.
EstimatorResult mc_estimate(const Integrand& integrand, std::size_t dim, std::size_t M,
                            const RandomizationKey& key);

/// R independently randomized low-discrepancy replicates of M points each.
EstimatorResult rqmc_estimate(const Integrand& integrand, std::size_t dim, std::size_t M,
                              std::size_t R, const RandomizationKey& key,
                              const Sampler& sampler = {});

/// Double-loop Monte Carlo: iid outer and inner points, variance from the N outer terms.
EstimatorResult dlmc_estimate(const NestedProblem& problem, std::size_t N, std::size_t M,
                              const RandomizationKey& key);

/// Double-loop randomized QMC with S outer and R inner randomizations.
EstimatorResult rdlqmc_estimate(const NestedProblem& problem, std::size_t N, std::size_t M,
                                std::size_t S, std::size_t R, const RandomizationKey& key,
                                const Sampler& sampler = {});

/// Dispatches on sampler.kind: mc gives DLMC (with S-replicate variance when
/// S >= 2), the low-discrepancy kinds give rDLQMC.
EstimatorResult nested_estimate(const NestedProblem& problem, const Counts& counts,
                                const Sampler& sampler, const RandomizationKey& key);

/// Outer points of randomization s as used by the nested estimators.
lds::PointSet outer_points(std::size_t dim, std::size_t N, std::size_t s, const Sampler& sampler,
                           const RandomizationKey& key);

/// Inner means g_hat_{n,r} (log-means under log_form) at explicit outer points,
/// one row of R values per outer point. Inner randomization (s, n, r) streams
/// match those of the nested estimators.
std::vector<std::vector<double>> inner_means(const NestedProblem& problem, const lds::PointSet& outer,
                                             std::size_t M, std::size_t R, std::size_t s,
                                             const Sampler& sampler, const RandomizationKey& key);

/// Gauss-Legendre nodes/weights on [0, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre(std::size_t order);

struct QuadratureResult {
  double value = 0.0;
  double doubling_change = 0.0;
  bool accurate = true;
  std::string warning;
};

/// Nested tensor Gauss-Legendre reference: d1, d2 <= 3, orders <= 64. With
/// `check_doubling` the orders are doubled once and the change is reported;
/// a change above 1e-10 attaches an accuracy warning.
QuadratureResult tensor_quadrature_reference(const NestedProblem& problem, std::size_t order_outer,
                                             std::size_t order_inner, bool check_doubling = true);

}  // namespace nestiq::est
