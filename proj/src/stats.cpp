#include "nestiq/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "nestiq/errors.hpp"

namespace nestiq::stats {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Acklam's rational approximation, relative error about 1.15e-9 before polishing.
double acklam(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Lower half only: p in (0, 0.5], where erfc keeps relative accuracy.
double inv_norm_cdf_lower(double p) {
  double x = acklam(p);
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double scale = std::exp(0.5 * x * x);
  if (std::isfinite(scale)) {
    const double w = e * std::sqrt(2.0 * std::numbers::pi) * scale;
    x -= w / (1.0 + 0.5 * x * w);
  }
  return x;
}

}  // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double inv_norm_cdf(double u) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("inv_norm_cdf argument must lie in (0, 1)");
  if (u == 0.5) return 0.0;
  if (u < 0.5) return inv_norm_cdf_lower(u);
  return -inv_norm_cdf_lower(1.0 - u);
}

double truncated_inv_norm_cdf(double u, double c) {
  if (!(c > 0.0)) throw DomainError("truncation radius must be positive");
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("truncated_inv_norm_cdf argument must lie in [0, 1]");
  if (u == 0.0) return -c;
  if (u == 1.0) return c;
  if (u > 0.5) return -truncated_inv_norm_cdf(1.0 - u, c);
  const double tail = 0.5 * std::erfc(c / std::numbers::sqrt2);  // 1 - Phi(c)
  const double arg = (1.0 - 2.0 * tail) * u + tail;
  if (!(arg > 0.0)) return -c;
  return std::clamp(inv_norm_cdf(arg), -c, c);
}

double truncation_radius(double tol, double p) {
  if (!(tol > 0.0 && tol < 1.0)) throw DomainError("truncation tolerance must lie in (0, 1)");
  if (!(p > 0.0)) throw DomainError("truncation exponent p must be positive");
  return std::sqrt(2.0 * (1.0 + p)) * std::sqrt(std::log(1.0 / tol));
}

PriorSpec::PriorSpec(std::vector<PriorComponent> components) : components_(std::move(components)) {
  for (const auto& c : components_) {
    if (const auto* u = std::get_if<Uniform>(&c)) {
      if (!(u->hi > u->lo)) throw DomainError("uniform prior requires hi > lo");
    } else if (const auto* n = std::get_if<Normal>(&c)) {
      if (!(n->sigma > 0.0)) throw DomainError("normal prior requires sigma > 0");
    } else if (const auto* l = std::get_if<LogNormal>(&c)) {
      if (!(l->sigma_log > 0.0)) throw DomainError("lognormal prior requires sigma > 0");
    }
  }
}

bool PriorSpec::has_uniform() const {
  return std::any_of(components_.begin(), components_.end(),
                     [](const PriorComponent& c) { return std::holds_alternative<Uniform>(c); });
}

std::vector<double> PriorSpec::map(std::span<const double> u) const {
  if (u.size() != components_.size()) throw DomainError("prior dimension mismatch");
  std::vector<double> theta(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    theta[i] = std::visit(
        [&](const auto& c) -> double {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            return c.lo + (c.hi - c.lo) * u[i];
          } else if constexpr (std::is_same_v<T, Normal>) {
            return c.mu + c.sigma * inv_norm_cdf(u[i]);
          } else {
            return std::exp(c.mu_log + c.sigma_log * inv_norm_cdf(u[i]));
          }
        },
        components_[i]);
  }
  return theta;
}

double PriorSpec::log_density(std::span<const double> theta) const {
  if (theta.size() != components_.size()) throw DomainError("prior dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    total += std::visit(
        [&](const auto& c) -> double {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            return (t > c.lo && t < c.hi) ? -std::log(c.hi - c.lo) : -kInf;
          } else if constexpr (std::is_same_v<T, Normal>) {
            const double z = (t - c.mu) / c.sigma;
            return norm_logpdf(z) - std::log(c.sigma);
          } else {
            if (!(t > 0.0)) return -kInf;
            const double lt = std::log(t);
            const double z = (lt - c.mu_log) / c.sigma_log;
            return norm_logpdf(z) - std::log(c.sigma_log) - lt;
          }
        },
        components_[i]);
  }
  return total;
}

void PriorSpec::log_density_derivatives(std::span<const double> theta, std::span<double> grad,
                                        std::span<double> hess_diag) const {
  if (theta.size() != components_.size() || grad.size() != theta.size() ||
      hess_diag.size() != theta.size()) {
    throw DomainError("prior dimension mismatch");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            grad[i] = 0.0;
            hess_diag[i] = 0.0;
          } else if constexpr (std::is_same_v<T, Normal>) {
            const double v = c.sigma * c.sigma;
            grad[i] = -(t - c.mu) / v;
            hess_diag[i] = -1.0 / v;
          } else {
            if (!(t > 0.0)) throw DomainError("lognormal prior derivative outside support");
            const double v = c.sigma_log * c.sigma_log;
            const double z = (std::log(t) - c.mu_log) / v;
            grad[i] = -(1.0 + z) / t;
            hess_diag[i] = (1.0 + z - 1.0 / v) / (t * t);
          }
        },
        components_[i]);
  }
}

bool PriorSpec::in_support(std::span<const double> theta) const {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    const bool ok = std::visit(
        [&](const auto& c) -> bool {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            return t > c.lo && t < c.hi;
          } else if constexpr (std::is_same_v<T, Normal>) {
            return std::isfinite(t);
          } else {
            return t > 0.0 && std::isfinite(t);
          }
        },
        components_[i]);
    if (!ok) return false;
  }
  return true;
}

std::string PriorSpec::describe() const {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (i > 0) out << ", ";
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Uniform>) {
            out << "uniform(" << c.lo << "," << c.hi << ")";
          } else if constexpr (std::is_same_v<T, Normal>) {
            out << "normal(" << c.mu << "," << c.sigma << ")";
          } else {
            out << "lognormal(" << c.mu_log << "," << c.sigma_log << ")";
          }
        },
        components_[i]);
  }
  return out.str();
}

std::vector<double> map_to_prior(std::span<const double> u, const PriorSpec& prior) {
  return prior.map(u);
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log_sum_exp of an empty list");
  const double m = *std::max_element(values.begin(), values.end());
  if (m == -kInf) return -kInf;
  if (m == kInf) return kInf;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean of an empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double replicate_variance(std::span<const double> replicate_means) {
  const std::size_t r = replicate_means.size();
  if (r < 2) throw DomainError("replicate variance needs at least two replicates");
  const double m = mean(replicate_means);
  double ss = 0.0;
  for (double v : replicate_means) ss += (v - m) * (v - m);
  return ss / (static_cast<double>(r) * static_cast<double>(r - 1));
}

double ks_uniform(std::span<const double> sample) {
  if (sample.empty()) throw DomainError("KS statistic of an empty sample");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x[i], x[i] - static_cast<double>(i) / n});
  }
  return d;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("line fit needs at least two paired points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("line fit with identical abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    fit.max_residual = std::max(fit.max_residual, std::abs(y[i] - fit.intercept - fit.slope * x[i]));
  }
  return fit;
}

}  // namespace nestiq::stats
