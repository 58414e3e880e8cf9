#include "nestiq/allocation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include "nestiq/errors.hpp"
#include "nestiq/stats.hpp"

namespace nestiq::alloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxExponent = 50;  // N, M searched up to 2^50
constexpr double kSlack = 1e-12;

bool is_pow2(std::size_t n) { return std::has_single_bit(n); }

void check_ladder(std::span<const std::size_t> ladder, const est::Sampler& sampler, const char* what) {
  if (ladder.size() < 2) throw DomainError(std::string(what) + " ladder needs at least two rungs");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (ladder[i] < 1) throw DomainError(std::string(what) + " ladder entries must be positive");
    if (sampler.kind == est::SamplerKind::sobol_owen && !is_pow2(ladder[i]))
      throw DomainError(std::string(what) + " ladder entries must be powers of two");
    if (i > 0 && ladder[i] <= ladder[i - 1]) throw DomainError(std::string(what) + " ladder must be increasing");
  }
}

// Log-log line fit with a clamped rate gain. Returns {intercept, gain, residual, clamped}.
struct RateFit {
  double intercept = 0.0;
  double gain = 0.0;
  double residual = 0.0;
  bool clamped = false;
};

RateFit fit_rate(const std::vector<double>& logx, const std::vector<double>& logy) {
  const auto line = stats::fit_line(logx, logy);
  RateFit r;
  r.gain = -line.slope - 1.0;
  r.intercept = line.intercept;
  if (r.gain < 0.0 || r.gain > 1.0) {
    r.gain = std::clamp(r.gain, 0.0, 1.0);
    r.clamped = true;
    double s = 0.0;
    for (std::size_t i = 0; i < logx.size(); ++i) s += logy[i] + (1.0 + r.gain) * logx[i];
    r.intercept = s / static_cast<double>(logx.size());
  }
  for (std::size_t i = 0; i < logx.size(); ++i)
    r.residual = std::max(r.residual, std::abs(logy[i] - (r.intercept - (1.0 + r.gain) * logx[i])));
  return r;
}

std::string rung_table(std::span<const std::size_t> n, std::span<const double> v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n.size(); ++i) os << (i ? ", " : "") << n[i] << ": " << v[i];
  return os.str();
}

void check_monotone(std::span<const std::size_t> n, std::span<const double> v, const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > 2.0 * v[i - 1]) {
      throw FitQualityError(std::string(what) + " variance grows by more than 2x between rungs " +
                            std::to_string(n[i - 1]) + " and " + std::to_string(n[i]) + " (" + rung_table(n, v) + ")");
    }
  }
}

double sample_variance(std::span<const double> v) {
  const double m = stats::mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double bias_split_share(const PilotConstants& c) { return c.C_disc > 0.0 ? c.bias_split : 0.0; }

double a_exp(const PilotConstants& c) { return 1.0 + c.delta; }
double b_exp(const PilotConstants& c) { return 1.0 + c.beta; }

std::optional<double> split_h(const PilotConstants& c, double kappa, double tol) {
  if (c.C_disc <= 0.0) return std::nullopt;
  const double budget = bias_split_share(c) * (1.0 - kappa) * tol;
  if (!(budget > 0.0)) return 0.0;
  return std::min(c.h_max, std::pow(budget / c.C_disc, 1.0 / c.eta));
}

double h_cost(const PilotConstants& c, std::optional<double> h) {
  if (!h) return 1.0;
  return std::pow(*h, -c.gamma);
}

struct Cubic {
  double c3, c2, c1, c0;
  double operator()(double k) const { return ((c3 * k + c2) * k + c1) * k + c0; }
};

Cubic kappa_cubic(const PilotConstants& c, double N, double tol, double C_alpha) {
  const double a = a_exp(c);
  const double A = tol * tol / (C_alpha * C_alpha);
  const double q = c.C_Q1 / std::pow(N, b_exp(c));
  // Without discretization gamma drops out and eta only rescales the cubic.
  const double eta = c.C_disc > 0.0 ? c.eta : 1.0;
  const double gamma = c.C_disc > 0.0 ? c.gamma : 0.0;
  Cubic p;
  p.c3 = A * c.C_Q3 * N * (eta + gamma * a);
  p.c2 = tol * c.C_Q2 * (eta + 0.5 * gamma * a);
  p.c1 = -eta * tol * c.C_Q2 - c.C_Q3 * N * q * (eta + gamma * a);
  p.c0 = -gamma * a * tol * c.C_Q2 * q / (2.0 * A);
  return p;
}

double kappa_min(const PilotConstants& c, double N, double tol, double C_alpha) {
  return C_alpha * std::sqrt(c.C_Q1 / std::pow(N, b_exp(c))) / tol;
}

double kappa_grid(const PilotConstants& c, double N, double tol, double C_alpha, double lo) {
  double best = kInf, best_k = 0.5 * (lo + 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double k = lo + (1.0 - lo) * (i + 0.5) / 1000.0;
    const double w = continuous_work(c, N, k, tol, C_alpha);
    if (w < best) {
      best = w;
      best_k = k;
    }
  }
  return best_k;
}

double kappa_impl(const PilotConstants& c, double N, double tol, double C_alpha, bool allow_degenerate) {
  const double lo = kappa_min(c, N, tol, C_alpha);
  if (!(lo < 1.0)) throw InfeasibleError("outer variance alone exceeds the budget at this N", "variance");
  const Cubic p = kappa_cubic(c, N, tol, C_alpha);
  if (p.c3 == 0.0 && p.c2 == 0.0 && p.c1 == 0.0 && p.c0 == 0.0) {
    if (!allow_degenerate) throw DomainError("kappa cubic has all-zero coefficients");
    return kappa_grid(c, N, tol, C_alpha, lo);
  }
  double a = lo, b = 1.0;
  double fa = p(a), fb = p(b);
  const double scale = std::abs(p.c3) + std::abs(p.c2) + std::abs(p.c1) + std::abs(p.c0);
  if (std::abs(fa) <= 1e-14 * scale) fa = 0.0;
  if (!((fa <= 0.0 && fb > 0.0) || (fa >= 0.0 && fb < 0.0))) return kappa_grid(c, N, tol, C_alpha, lo);
  while (b - a > 1e-12) {
    const double m = 0.5 * (a + b);
    const double fm = p(m);
    if ((fm <= 0.0) == (fa <= 0.0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  return std::clamp(0.5 * (a + b), std::max(lo, 1e-15), 1.0 - 1e-15);
}

// Best discrete (M, h, kappa) for fixed power-of-two N under the split rule.
struct Candidate {
  bool feasible = false;
  std::size_t N = 0, M = 0;
  double kappa = 0.0;
  std::optional<double> h;
  double work = kInf;
};

Candidate best_for(const PilotConstants& c, std::size_t N, double tol, double C_alpha, double kappa_hint) {
  Candidate best;
  const double a = a_exp(c);
  const double theta = bias_split_share(c);
  for (int e = 0; e <= kMaxExponent; ++e) {
    const std::size_t M = std::size_t{1} << e;
    const double V = plan_variance(c, static_cast<double>(N), static_cast<double>(M));
    const double k_lo = C_alpha * std::sqrt(V) / tol;
    const double inner_bias = c.C_Q3 / std::pow(static_cast<double>(M), a);
    // Largest kappa leaving enough bias budget for the M-term.
    const double k_hi = 1.0 - inner_bias / ((1.0 - theta) * tol);
    if (!(k_lo < 1.0) || !(k_lo <= k_hi)) continue;

    Candidate cand;
    cand.N = N;
    cand.M = M;
    if (c.C_disc > 0.0) {
      cand.kappa = std::max(k_lo * (1.0 + 1e-13), 1e-12);
      if (cand.kappa > k_hi) cand.kappa = k_lo;
      cand.h = split_h(c, cand.kappa, tol);
      if (!(*cand.h > 0.0) || (c.h_min > 0.0 && *cand.h < c.h_min)) continue;
    } else {
      double k = std::clamp(kappa_hint, k_lo, k_hi);
      if (!(k > 0.0)) k = k_hi > 0.0 ? 0.5 * k_hi : 0.5;
      if (!(k < 1.0)) k = 0.5 * (k_lo + 1.0);
      cand.kappa = k;
    }
    cand.work = static_cast<double>(N) * static_cast<double>(M) * h_cost(c, cand.h);
    cand.feasible = true;
    if (cand.work < best.work) best = cand;
    // Without discretization larger M only adds work.
    if (c.C_disc <= 0.0) break;
  }
  return best;
}

double distance_to_raw(const Candidate& cand, const AllocationPlan& plan) {
  if (!(plan.N_raw > 0.0)) return 0.0;
  const double m_raw = std::max(plan.M_raw, 1.0);
  return std::abs(std::log(static_cast<double>(cand.N) / plan.N_raw)) +
         std::abs(std::log(static_cast<double>(cand.M) / m_raw));
}

std::string infeasible_binding(const PilotConstants& c, double tol, double C_alpha) {
  if (c.C_disc > 0.0 && c.h_min > 0.0 && c.C_disc * std::pow(c.h_min, c.eta) >= bias_split_share(c) * tol)
    return "discretization";
  if (kappa_min(c, std::ldexp(1.0, kMaxExponent), tol, C_alpha) >= 1.0) return "variance";
  return "bias";
}

}  // namespace

void PilotConstants::validate() const {
  for (double v : {C_Q1, C_Q2, C_Q3, C_disc, gamma, h_min})
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("pilot constants must be finite and non-negative");
  if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("beta must lie in [0, 1]");
  if (!(delta >= 0.0 && delta <= 1.0)) throw DomainError("delta must lie in [0, 1]");
  if (C_disc > 0.0) {
    if (!(eta > 0.0)) throw DomainError("eta must be positive when C_disc > 0");
    if (!(h_max > 0.0)) throw DomainError("h_max must be positive");
    if (!(bias_split > 0.0 && bias_split < 1.0)) throw DomainError("bias_split must lie in (0, 1)");
  }
}

double confidence_constant(double alpha, bool chebyshev) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  if (chebyshev) return 1.0 / std::sqrt(alpha);
  return stats::inv_norm_cdf(1.0 - 0.5 * alpha);
}

std::size_t round_up_pow2(double x) {
  if (!(x <= std::ldexp(1.0, 62))) throw DomainError("value too large to round to a power of two");
  if (!(x > 1.0)) return 1;
  int e = 0;
  const double m = std::frexp(x, &e);  // x = m 2^e, m in [0.5, 1)
  return m == 0.5 ? std::size_t{1} << (e - 1) : std::size_t{1} << e;
}

OuterFit fit_outer_rates(std::span<const std::size_t> N, std::span<const double> variance) {
  if (N.size() != variance.size() || N.size() < 2) throw DomainError("outer fit needs at least two (N, variance) rungs");
  for (double v : variance)
    if (!(v > 0.0) || !std::isfinite(v))
      throw FitQualityError("outer pilot variance is zero or not finite (" + rung_table(N, variance) + ")");
  check_monotone(N, variance, "outer pilot");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < N.size(); ++i) {
    lx.push_back(std::log(static_cast<double>(N[i])));
    ly.push_back(std::log(variance[i]));
  }
  const auto r = fit_rate(lx, ly);
  OuterFit f;
  f.C_Q1 = std::exp(r.intercept);
  f.beta = r.gain;
  f.residual = r.residual;
  f.beta_clamped = r.clamped;
  for (std::size_t i = 0; i < N.size(); ++i) f.rungs.push_back({N[i], variance[i]});
  return f;
}

InnerFit fit_inner_variance(std::span<const std::size_t> M, std::span<const double> variance, std::size_t N_fixed) {
  if (M.size() != variance.size() || M.size() < 2) throw DomainError("inner fit needs at least two (M, variance) rungs");
  InnerFit f;
  for (std::size_t i = 0; i < M.size(); ++i) f.rungs.push_back({M[i], variance[i], 0.0, 0.0});
  std::vector<std::size_t> pm;
  std::vector<double> pv;
  for (std::size_t i = 0; i < M.size(); ++i) {
    if (!std::isfinite(variance[i]) || variance[i] < 0.0) throw FitQualityError("inner pilot variance not finite");
    if (variance[i] > 0.0) {
      pm.push_back(M[i]);
      pv.push_back(variance[i]);
    }
  }
  if (pv.empty()) {
    // No measurable inner variance: the inner term drops out of the allocation.
    f.C_Q2 = 0.0;
    f.delta = 1.0;
    f.delta_clamped = true;
    return f;
  }
  if (pv.size() < 2) throw FitQualityError("inner pilot has fewer than two rungs with positive variance");
  check_monotone(pm, pv, "inner pilot");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < pm.size(); ++i) {
    lx.push_back(std::log(static_cast<double>(pm[i])));
    ly.push_back(std::log(pv[i]));
  }
  const auto r = fit_rate(lx, ly);
  f.C_Q2 = std::exp(r.intercept) * static_cast<double>(N_fixed);
  f.delta = r.gain;
  f.variance_residual = r.residual;
  f.delta_clamped = r.clamped;
  return f;
}

BiasFit fit_inner_bias(std::span<const std::size_t> M, std::span<const double> bias,
                       std::span<const double> bias_stderr, double delta) {
  if (M.size() != bias.size() || M.size() != bias_stderr.size() || M.empty())
    throw DomainError("bias fit needs matching (M, bias, stderr) rungs");
  const double a = 1.0 + delta;
  std::vector<double> logs;
  for (std::size_t i = 0; i < M.size(); ++i) {
    if (bias[i] > 0.0 && bias[i] >= 2.0 * bias_stderr[i])
      logs.push_back(std::log(bias[i]) + a * std::log(static_cast<double>(M[i])));
  }
  BiasFit f;
  if (logs.empty()) {
    f.low_confidence = true;
    return f;
  }
  const double lc = stats::mean(logs);
  f.C_Q3 = std::exp(lc);
  for (double l : logs) f.residual = std::max(f.residual, std::abs(l - lc));
  return f;
}

OuterFit fit_pilot_outer(const est::NestedProblem& problem, std::span<const std::size_t> ladder, std::size_t M_fixed,
                         std::size_t S, const RandomizationKey& key, const est::Sampler& sampler) {
  check_ladder(ladder, sampler, "outer");
  if (S < 8) throw DomainError("outer pilot needs S >= 8 randomizations");
  if (M_fixed < 1) throw DomainError("outer pilot needs M >= 1");
  std::vector<double> v;
  for (std::size_t N : ladder) {
    const auto r = est::nested_estimate(problem, est::Counts{N, M_fixed, S, 1}, sampler,
                                        key.with_tag(key.tag + "/pilot-outer-" + std::to_string(N)));
    // Variance of a single-randomization estimate at this N.
    v.push_back(static_cast<double>(S) * *r.variance_of_mean);
  }
  return fit_outer_rates(ladder, v);
}

InnerFit fit_pilot_inner(const est::NestedProblem& problem, std::span<const std::size_t> ladder, std::size_t N_fixed,
                         std::size_t R, const RandomizationKey& key, const est::Sampler& sampler) {
  check_ladder(ladder, sampler, "inner");
  if (R < 8) throw DomainError("inner pilot needs R >= 8 randomizations");
  if (N_fixed < 1) throw DomainError("inner pilot needs N >= 1");

  const RandomizationKey k = key.with_tag(key.tag + "/pilot-inner");
  const auto outer = est::outer_points(problem.outer_dim, N_fixed, 0, sampler, k);
  // One key for every rung: nested point sets share their prefixes, so rung
  // differences see common random numbers.
  auto f_values = [&](std::size_t M) {
    const auto means = est::inner_means(problem, outer, M, R, 0, sampler, k);
    std::vector<std::vector<double>> f(N_fixed, std::vector<double>(R));
    for (std::size_t n = 0; n < N_fixed; ++n)
      for (std::size_t r = 0; r < R; ++r) f[n][r] = problem.apply_outer(means[n][r]);
    return f;
  };

  const std::size_t M_ref = 4 * ladder.back();
  const auto f_ref = f_values(M_ref);
  const double Nd = static_cast<double>(N_fixed);

  std::vector<double> var, diff, diff_se;
  for (std::size_t M : ladder) {
    const auto f = f_values(M);
    double v = 0.0;
    std::vector<double> d;
    for (std::size_t n = 0; n < N_fixed; ++n) {
      v += sample_variance(f[n]);
      for (std::size_t r = 0; r < R; ++r) d.push_back(f[n][r] - f_ref[n][r]);
    }
    var.push_back(v / (Nd * Nd));
    diff.push_back(std::abs(stats::mean(d)));
    diff_se.push_back(std::sqrt(sample_variance(d) / static_cast<double>(d.size())));
  }

  InnerFit fit = fit_inner_variance(ladder, var, N_fixed);
  // The reference rung carries bias too: d(M) = b(M) (1 - (M / M_ref)^(1+delta)).
  std::vector<double> bias, bias_se;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const double shrink = 1.0 - std::pow(static_cast<double>(ladder[i]) / static_cast<double>(M_ref), 1.0 + fit.delta);
    bias.push_back(diff[i] / shrink);
    bias_se.push_back(diff_se[i] / shrink);
    fit.rungs[i].bias = bias.back();
    fit.rungs[i].bias_stderr = bias_se.back();
  }
  const auto b = fit_inner_bias(ladder, bias, bias_se, fit.delta);
  fit.C_Q3 = b.C_Q3;
  fit.bias_residual = b.residual;
  fit.bias_low_confidence = b.low_confidence;
  fit.reference_M = M_ref;
  return fit;
}

PilotConstants run_pilot(const est::NestedProblem& problem, std::span<const std::size_t> outer_ladder,
                         std::size_t outer_M, std::size_t outer_S, std::span<const std::size_t> inner_ladder,
                         std::size_t inner_N, std::size_t inner_R, const RandomizationKey& key,
                         const est::Sampler& sampler) {
  const auto outer = fit_pilot_outer(problem, outer_ladder, outer_M, outer_S, key, sampler);
  const auto inner = fit_pilot_inner(problem, inner_ladder, inner_N, inner_R, key, sampler);
  PilotConstants c;
  c.C_Q1 = outer.C_Q1;
  c.beta = outer.beta;
  c.C_Q2 = inner.C_Q2;
  c.C_Q3 = inner.C_Q3;
  c.delta = inner.delta;
  c.eta = problem.eta > 0.0 ? problem.eta : 1.0;
  c.gamma = problem.gamma;
  auto& m = c.meta;
  m.outer_ladder.assign(outer_ladder.begin(), outer_ladder.end());
  m.inner_ladder.assign(inner_ladder.begin(), inner_ladder.end());
  m.outer_M = outer_M;
  m.outer_S = outer_S;
  m.inner_N = inner_N;
  m.inner_R = inner_R;
  m.seed = key.seed;
  m.sampler = est::to_string(sampler.kind);
  m.outer_rungs = outer.rungs;
  m.inner_rungs = inner.rungs;
  m.reference_M = inner.reference_M;
  m.outer_residual = outer.residual;
  m.inner_variance_residual = inner.variance_residual;
  m.inner_bias_residual = inner.bias_residual;
  m.bias_low_confidence = inner.bias_low_confidence;
  return c;
}

double plan_bias(const PilotConstants& c, double M, std::optional<double> h) {
  double b = c.C_Q3 / std::pow(M, a_exp(c));
  if (c.C_disc > 0.0 && h) b += c.C_disc * std::pow(*h, c.eta);
  return b;
}

double plan_variance(const PilotConstants& c, double N, double M) {
  return c.C_Q1 / std::pow(N, b_exp(c)) + c.C_Q2 / (N * std::pow(M, a_exp(c)));
}

bool plan_feasible(const AllocationPlan& plan, const PilotConstants& c) {
  if (!(plan.kappa_star > 0.0 && plan.kappa_star < 1.0)) return false;
  if (c.C_disc > 0.0 && !plan.h_star) return false;
  const double b = plan_bias(c, static_cast<double>(plan.M_star), plan.h_star);
  const double v = plan_variance(c, static_cast<double>(plan.N_star), static_cast<double>(plan.M_star));
  const double sd_budget = plan.kappa_star * plan.tol / plan.C_alpha;
  return b <= (1.0 - plan.kappa_star) * plan.tol * (1.0 + kSlack) && v <= sd_budget * sd_budget * (1.0 + kSlack);
}

double solve_kappa(const PilotConstants& c, double N, double tol, double C_alpha) {
  if (!(tol > 0.0)) throw DomainError("tol must be positive");
  if (!(N >= 1.0)) throw DomainError("N must be at least 1");
  c.validate();
  return kappa_impl(c, N, tol, C_alpha, false);
}

double variance_limited_M(const PilotConstants& c, double N, double kappa, double tol, double C_alpha) {
  const double sd = kappa * tol / C_alpha;
  const double rem = sd * sd - c.C_Q1 / std::pow(N, b_exp(c));
  if (!(rem > 0.0)) return kInf;
  if (c.C_Q2 == 0.0) return 0.0;
  return std::pow(c.C_Q2 / (N * rem), 1.0 / a_exp(c));
}

double bias_limited_M(const PilotConstants& c, double kappa, double tol) {
  if (c.C_Q3 == 0.0) return 0.0;
  const double budget = (1.0 - bias_split_share(c)) * (1.0 - kappa) * tol;
  if (!(budget > 0.0)) return kInf;
  return std::pow(c.C_Q3 / budget, 1.0 / a_exp(c));
}

double approximate_N(const PilotConstants& c, double kappa, double tol, double C_alpha) {
  const double s = kappa * tol / C_alpha;
  return std::pow(c.C_Q1 / (s * s), 1.0 / b_exp(c));
}

double continuous_work(const PilotConstants& c, double N, double kappa, double tol, double C_alpha) {
  const double M = std::max({1.0, variance_limited_M(c, N, kappa, tol, C_alpha), bias_limited_M(c, kappa, tol)});
  if (!std::isfinite(M)) return kInf;
  const auto h = split_h(c, kappa, tol);
  if (h && (!(*h > 0.0) || (c.h_min > 0.0 && *h < c.h_min))) return kInf;
  return N * M * h_cost(c, h);
}

AllocationPlan solve_allocation(const PilotConstants& c, double tol, double alpha, bool chebyshev) {
  if (!(tol > 0.0)) throw DomainError("tol must be positive");
  c.validate();
  const double C_alpha = confidence_constant(alpha, chebyshev);

  AllocationPlan plan;
  plan.tol = tol;
  plan.alpha = alpha;
  plan.C_alpha = C_alpha;

  // Continuous stage: kappa from the cubic, then a 1-D search over log N.
  const double N_floor = c.C_Q1 > 0.0 ? std::pow(C_alpha * C_alpha * c.C_Q1 / (tol * tol), 1.0 / b_exp(c)) : 0.0;
  const double N_lo = std::max(1.0, N_floor * (1.0 + 1e-9));
  const double N_hi = std::ldexp(1.0, kMaxExponent);
  if (N_lo >= N_hi) {
    throw InfeasibleError("tolerance below what N <= 2^50 outer samples can reach", "variance");
  }
  auto work_at = [&](double logN, double* kappa_out) {
    const double N = std::exp(logN);
    double k = 0.0;
    try {
      k = kappa_impl(c, N, tol, C_alpha, true);
    } catch (const InfeasibleError&) {
      return kInf;
    }
    if (kappa_out) *kappa_out = k;
    return continuous_work(c, N, k, tol, C_alpha);
  };
  const int grid = 240;
  const double lo = std::log(N_lo), hi = std::log(N_hi);
  int best_i = 0;
  double best_w = kInf;
  for (int i = 0; i <= grid; ++i) {
    const double w = work_at(lo + (hi - lo) * i / grid, nullptr);
    if (w < best_w) {
      best_w = w;
      best_i = i;
    }
  }
  if (std::isfinite(best_w)) {
    double a = lo + (hi - lo) * std::max(0, best_i - 1) / grid;
    double b = lo + (hi - lo) * std::min(grid, best_i + 1) / grid;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 80 && b - a > 1e-10; ++it) {
      const double x1 = b - g * (b - a), x2 = a + g * (b - a);
      if (work_at(x1, nullptr) <= work_at(x2, nullptr)) b = x2; else a = x1;
    }
    const double logN = 0.5 * (a + b);
    double k = 0.5;
    work_at(logN, &k);
    plan.N_raw = std::exp(logN);
    plan.kappa_raw = k;
    plan.M_raw = std::max(variance_limited_M(c, plan.N_raw, k, tol, C_alpha), bias_limited_M(c, k, tol));
    plan.h_raw = split_h(c, k, tol);
    plan.N_seed = approximate_N(c, k, tol, C_alpha);
  }

  // Discrete stage over power-of-two N; kappa is eliminated per (N, M).
  Candidate best;
  for (int e = 0; e <= kMaxExponent; ++e) {
    const std::size_t N = std::size_t{1} << e;
    const auto cand = best_for(c, N, tol, C_alpha, plan.kappa_raw);
    if (!cand.feasible) continue;
    // Equal-work ties go to the plan nearest the continuous solution, which
    // keeps N* and M* monotone along a tolerance ladder.
    const bool tie = std::abs(cand.work - best.work) <= 1e-12 * best.work;
    if ((!tie && cand.work < best.work) ||
        (tie && distance_to_raw(cand, plan) < distance_to_raw(best, plan)))
      best = cand;
  }
  if (!best.feasible) {
    const std::string binding = infeasible_binding(c, tol, C_alpha);
    throw InfeasibleError("no power-of-two allocation meets tol = " + std::to_string(tol) + " (binding: " + binding + ")",
                          binding);
  }
  plan.N_star = best.N;
  plan.M_star = best.M;
  plan.kappa_star = best.kappa;
  plan.h_star = best.h;
  plan.predicted_work = predicted_work(plan, c);
  plan.bias = plan_bias(c, static_cast<double>(plan.M_star), plan.h_star);
  plan.variance = plan_variance(c, static_cast<double>(plan.N_star), static_cast<double>(plan.M_star));
  if (!plan_feasible(plan, c)) throw NumericalError("allocation failed its own feasibility re-check");
  return plan;
}

double predicted_work(const AllocationPlan& plan, const PilotConstants& c) {
  return static_cast<double>(plan.N_star) * static_cast<double>(plan.M_star) * h_cost(c, plan.h_star);
}

AllocationPlan brute_force_allocation(const PilotConstants& c, double tol, double alpha, std::size_t kappa_grid,
                                      bool chebyshev) {
  if (!(tol > 0.0)) throw DomainError("tol must be positive");
  c.validate();
  const int E = 40;
  const double candidates = static_cast<double>(kappa_grid) * (E + 1) * (E + 1);
  if (kappa_grid < 2 || candidates > 1e6) throw DomainError("brute-force grid exceeds 10^6 candidates");
  const double C_alpha = confidence_constant(alpha, chebyshev);
  const double a = a_exp(c);

  AllocationPlan best;
  best.tol = tol;
  best.alpha = alpha;
  best.C_alpha = C_alpha;
  double best_w = kInf;
  for (std::size_t i = 1; i < kappa_grid; ++i) {
    const double kappa = static_cast<double>(i) / static_cast<double>(kappa_grid);
    const double sd = kappa * tol / C_alpha;
    const double bias_budget = (1.0 - kappa) * tol;
    for (int en = 0; en <= E; ++en) {
      const double N = std::ldexp(1.0, en);
      for (int em = 0; em <= E; ++em) {
        const double M = std::ldexp(1.0, em);
        if (plan_variance(c, N, M) > sd * sd) continue;
        const double rest = bias_budget - c.C_Q3 / std::pow(M, a);
        if (rest < 0.0) continue;
        std::optional<double> h;
        if (c.C_disc > 0.0) {
          if (!(rest > 0.0)) continue;
          // Largest ladder value h_max 2^(-j/4) meeting the remaining budget.
          const double h_cont = std::pow(rest / c.C_disc, 1.0 / c.eta);
          int j = 0;
          if (h_cont < c.h_max) j = static_cast<int>(std::ceil(4.0 * std::log2(c.h_max / h_cont) - 1e-12));
          double hv = c.h_max * std::exp2(-j / 4.0);
          while (c.C_disc * std::pow(hv, c.eta) > rest) hv = c.h_max * std::exp2(-(++j) / 4.0);
          if (c.h_min > 0.0 && hv < c.h_min) continue;
          h = hv;
        }
        const double w = N * M * h_cost(c, h);
        if (w < best_w) {
          best_w = w;
          best.kappa_star = kappa;
          best.N_star = static_cast<std::size_t>(N);
          best.M_star = static_cast<std::size_t>(M);
          best.h_star = h;
        }
      }
    }
  }
  if (!std::isfinite(best_w)) {
    const std::string binding = infeasible_binding(c, tol, C_alpha);
    throw InfeasibleError("exhaustive search found no feasible allocation (binding: " + binding + ")", binding);
  }
  best.predicted_work = best_w;
  best.N_raw = static_cast<double>(best.N_star);
  best.M_raw = static_cast<double>(best.M_star);
  best.kappa_raw = best.kappa_star;
  best.bias = plan_bias(c, static_cast<double>(best.M_star), best.h_star);
  best.variance = plan_variance(c, static_cast<double>(best.N_star), static_cast<double>(best.M_star));
  return best;
}

}  // namespace nestiq::alloc
