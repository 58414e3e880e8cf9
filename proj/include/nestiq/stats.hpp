#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nestiq::stats {

/// Standard normal CDF.
double norm_cdf(double x);

/// Standard normal log-density.
double norm_logpdf(double x);

/// Inverse standard normal CDF; rational approximation polished by one Halley step.
double inv_norm_cdf(double u);

/// Inverse CDF of the standard normal truncated to [-c, c]; u in [0, 1].
double truncated_inv_norm_cdf(double u, double c);

/// Truncation half-width sqrt(2 (1 + p) log(1 / tol)).
double truncation_radius(double tol, double p);

struct TruncationSetting {
  bool enabled = false;
  double p = 1.0;
  double tol = 1e-2;

  double radius() const { return truncation_radius(tol, p); }
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
struct Normal {
  double mu = 0.0;
  double sigma = 1.0;
};
/// log(theta) ~ N(mu_log, sigma_log^2).
struct LogNormal {
  double mu_log = 0.0;
  double sigma_log = 1.0;
};

using PriorComponent = std::variant<Uniform, Normal, LogNormal>;

/// Independent-component prior.
class PriorSpec {
 public:
  PriorSpec() = default;
  explicit PriorSpec(std::vector<PriorComponent> components);

  std::size_t dimension() const noexcept { return components_.size(); }
  const std::vector<PriorComponent>& components() const noexcept { return components_; }
  bool has_uniform() const;

  /// Componentwise inverse-CDF transform of a unit-cube row.
  std::vector<double> map(std::span<const double> u) const;

  /// Sum of component log-densities; -inf outside the support.
  double log_density(std::span<const double> theta) const;

  /// Gradient and (diagonal) Hessian of log_density; zero for uniform components.
  void log_density_derivatives(std::span<const double> theta, std::span<double> grad,
                               std::span<double> hess_diag) const;

  /// True when theta lies strictly inside the support.
  bool in_support(std::span<const double> theta) const;

  /// Textual form, one component per entry ("normal(0,1)").
  std::string describe() const;

 private:
  std::vector<PriorComponent> components_;
};

/// Free-function form of PriorSpec::map.
std::vector<double> map_to_prior(std::span<const double> u, const PriorSpec& prior);

/// log(sum exp(v_i)) with max-shift; -inf entries allowed.
double log_sum_exp(std::span<const double> values);

/// Sample variance of the mean of R replicate means: sum (m_r - mean)^2 / (R (R - 1)).
double replicate_variance(std::span<const double> replicate_means);

double mean(std::span<const double> values);

/// Kolmogorov-Smirnov statistic of `sample` against U(0,1).
double ks_uniform(std::span<const double> sample);

/// Ordinary least squares y = a + b x; returns {a, b, max |residual|}.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double max_residual = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace nestiq::stats
