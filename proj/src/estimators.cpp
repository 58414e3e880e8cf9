#include "nestiq/estimators.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <numbers>

#include "nestiq/errors.hpp"
#include "nestiq/parallel.hpp"
#include "nestiq/stats.hpp"

namespace nestiq::est {

namespace {

const lds::SobolParams& sobol_table() {
  static const lds::SobolParams params = lds::builtin_direction_numbers(64);
  return params;
}

unsigned log2_exact(std::size_t n, const char* what) {
  if (!std::has_single_bit(n)) throw DomainError(std::string(what) + " must be a power of two for Sobol points");
  return static_cast<unsigned>(std::countr_zero(n));
}

RandomizationKey outer_key(const RandomizationKey& key, std::size_t s) {
  return key.with_tag(key.tag + "/outer").with_indices(s, 0, 0);
}

RandomizationKey inner_key(const RandomizationKey& key, std::size_t s, std::size_t n, std::size_t r) {
  return key.with_tag(key.tag + "/inner").with_indices(s, n, r);
}

// Generates the M inner points of one (s, n, r) randomization.
class InnerPointSource {
 public:
  InnerPointSource(std::size_t dim, std::size_t M, const Sampler& sampler) : dim_(dim), M_(M), kind_(sampler.kind) {
    switch (kind_) {
      case SamplerKind::sobol_owen:
        if (dim > sobol_table().dimension) throw DomainError("inner dimension exceeds the Sobol table");
        sobol_.emplace(lds::sobol_sequence(sobol_table(), dim, log2_exact(M, "inner sample count M")));
        break;
      case SamplerKind::lattice_shift:
        if (sampler.inner_lattice.size() != dim) throw DomainError("inner lattice generating vector has wrong dimension");
        lattice_ = lds::lattice_points(sampler.inner_lattice, M);
        break;
      case SamplerKind::mc:
        break;
    }
  }

  // Fills `points` (M x dim, row-major).
  void generate(const RandomizationKey& key, std::vector<double>& points) const {
    points.resize(M_ * dim_);
    switch (kind_) {
      case SamplerKind::sobol_owen: {
        const auto keys = lds::owen_dimension_keys(key, dim_);
        for (std::size_t m = 0; m < M_; ++m)
          for (std::size_t j = 0; j < dim_; ++j)
            points[m * dim_ + j] = lds::owen_scramble_coordinate(sobol_->at(m, j), keys[j]);
        break;
      }
      case SamplerKind::lattice_shift: {
        const auto shift = lds::shift_vector(key, dim_);
        const auto shifted = lds::shift_points(lattice_, shift);
        std::copy(shifted.values().begin(), shifted.values().end(), points.begin());
        break;
      }
      case SamplerKind::mc: {
        const KeyedStream stream(key);
        for (std::size_t i = 0; i < M_ * dim_; ++i) points[i] = stream.uniform(i);
        break;
      }
    }
  }

 private:
  std::size_t dim_;
  std::size_t M_;
  SamplerKind kind_;
  std::optional<lds::DigitalSequence> sobol_;
  lds::PointSet lattice_;
};

// Inner mean over M points in the integrand's representation.
double inner_mean_one(const NestedProblem& problem, const InnerIntegrand& g, const std::vector<double>& points,
                      std::size_t M, std::vector<double>& scratch) {
  const std::size_t d2 = problem.inner_dim;
  scratch.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    scratch[m] = g(std::span<const double>(points.data() + m * d2, d2));
  }
  if (problem.log_form) return stats::log_sum_exp(scratch) - std::log(static_cast<double>(M));
  double s = 0.0;
  for (double v : scratch) s += v;
  return s / static_cast<double>(M);
}

double combine_replicates(const NestedProblem& problem, std::span<const double> per_r) {
  if (per_r.size() == 1) return per_r[0];
  if (problem.log_form) return stats::log_sum_exp(per_r) - std::log(static_cast<double>(per_r.size()));
  return stats::mean(per_r);
}

std::string failure_context(std::size_t s, std::size_t n, const std::exception& e) {
  return "outer sample (s=" + std::to_string(s) + ", n=" + std::to_string(n) + "): " + e.what();
}

// f-values of every (s, n) pair, row-major over s.
std::vector<double> nested_outer_values(const NestedProblem& problem, const Counts& c, const Sampler& sampler,
                                        const RandomizationKey& key) {
  if (!problem.bind) throw DomainError("nested problem has no integrand");
  if (c.N < 1 || c.M < 1 || c.S < 1 || c.R < 1) throw DomainError("sample counts must be positive");

  std::vector<lds::PointSet> outer(c.S);
  for (std::size_t s = 0; s < c.S; ++s) outer[s] = outer_points(problem.outer_dim, c.N, s, sampler, key);
  const InnerPointSource source(problem.inner_dim, c.M, sampler);

  std::vector<double> values(c.S * c.N);
  parallel_for(c.S * c.N, [&](std::size_t idx) {
    const std::size_t s = idx / c.N;
    const std::size_t n = idx % c.N;
    std::vector<double> points, scratch, per_r(c.R);
    InnerIntegrand g;
    try {
      g = problem.bind(outer[s].row(n));
    } catch (const NumericalError& e) {
      throw NumericalError(failure_context(s, n, e));
    } catch (const DomainError& e) {
      throw DomainError(failure_context(s, n, e));
    }
    for (std::size_t r = 0; r < c.R; ++r) {
      source.generate(inner_key(key, s, n, r), points);
      per_r[r] = inner_mean_one(problem, g, points, c.M, scratch);
    }
    try {
      values[idx] = problem.apply_outer(combine_replicates(problem, per_r));
    } catch (const NumericalError& e) {
      throw NumericalError(failure_context(s, n, e));
    }
  });
  return values;
}

EstimatorResult finish(std::vector<double> replicates, bool variance_available, const Counts& counts,
                       std::uint64_t seed, double work) {
  EstimatorResult res;
  res.estimate = pairwise_sum(replicates) / static_cast<double>(replicates.size());
  if (variance_available && replicates.size() >= 2) {
    res.variance_of_mean = stats::replicate_variance(replicates);
    res.standard_error = std::sqrt(*res.variance_of_mean);
  }
  res.replicate_values = std::move(replicates);
  res.counts = counts;
  res.seed = seed;
  res.work = work;
  return res;
}

}  // namespace

NestedProblem NestedProblem::from_integrand(
    std::size_t d1, std::size_t d2, OuterMap outer,
    std::function<double(std::span<const double>, std::span<const double>)> g, bool log_form) {
  NestedProblem p;
  p.outer_dim = d1;
  p.inner_dim = d2;
  p.outer = outer;
  p.log_form = log_form;
  p.bind = [g = std::move(g)](std::span<const double> y) -> InnerIntegrand {
    std::vector<double> yy(y.begin(), y.end());
    return [g, yy = std::move(yy)](std::span<const double> x) { return g(yy, x); };
  };
  return p;
}

double NestedProblem::apply_outer(double inner) const {
  switch (outer) {
    case OuterMap::identity:
      return log_form ? std::exp(inner) : inner;
    case OuterMap::log:
      if (log_form) {
        if (inner == -std::numeric_limits<double>::infinity())
          throw NumericalError("all inner weights vanished; log of zero inner mean");
        return inner;
      }
      if (!(inner > 0.0))
        throw NumericalError("inner mean underflowed to a non-positive value; supply the integrand in log form");
      return std::log(inner);
    case OuterMap::custom:
      if (!custom_outer) throw DomainError("custom outer map not set");
      return custom_outer(log_form ? std::exp(inner) : inner);
  }
  return inner;
}

double NestedProblem::cost_per_evaluation() const { return h ? std::pow(*h, -gamma) : 1.0; }

void NestedProblem::validate() const {
  if (!bind) throw DomainError("nested problem has no integrand");
  const double probes[] = {0.05, 0.3, 0.5, 0.7, 0.95};
  for (double a : probes) {
    std::vector<double> y(outer_dim, a);
    const auto g = bind(y);
    const auto lin = (log_form && bind_linear) ? bind_linear(y) : InnerIntegrand{};
    for (double b : probes) {
      std::vector<double> x(inner_dim, b);
      const double v = g(x);
      if (!(std::isfinite(v) || (log_form && v == -std::numeric_limits<double>::infinity())))
        throw DomainError("integrand not finite at an interior probe point");
      if (lin) {
        const double lv = lin(x);
        if (std::abs(std::exp(v) - lv) > 1e-10 * std::max(1.0, std::abs(lv)))
          throw DomainError("log-form integrand inconsistent with its linear companion");
      }
    }
  }
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::mc: return "mc";
    case SamplerKind::sobol_owen: return "rqmc-sobol-owen";
    case SamplerKind::lattice_shift: return "rqmc-lattice-shift";
  }
  return "?";
}

SamplerKind sampler_from_string(const std::string& name) {
  if (name == "mc") return SamplerKind::mc;
  if (name == "rqmc-sobol-owen" || name == "sobol") return SamplerKind::sobol_owen;
  if (name == "rqmc-lattice-shift" || name == "lattice") return SamplerKind::lattice_shift;
  throw DomainError("unknown sampler kind '" + name + "'");
}

lds::PointSet outer_points(std::size_t dim, std::size_t N, std::size_t s, const Sampler& sampler,
                           const RandomizationKey& key) {
  const RandomizationKey k = outer_key(key, s);
  switch (sampler.kind) {
    case SamplerKind::sobol_owen:
      if (dim > sobol_table().dimension) throw DomainError("outer dimension exceeds the Sobol table");
      return lds::owen_scramble(lds::sobol_sequence(sobol_table(), dim, log2_exact(N, "outer sample count N")), k);
    case SamplerKind::lattice_shift:
      if (sampler.outer_lattice.size() != dim) throw DomainError("outer lattice generating vector has wrong dimension");
      return lds::random_shift(lds::lattice_points(sampler.outer_lattice, N), k);
    case SamplerKind::mc: {
      const KeyedStream stream(k);
      std::vector<double> v(N * dim);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = stream.uniform(i);
      return lds::PointSet(N, dim, std::move(v));
    }
  }
  throw DomainError("unknown sampler kind");
}

std::vector<std::vector<double>> inner_means(const NestedProblem& problem, const lds::PointSet& outer,
                                             std::size_t M, std::size_t R, std::size_t s,
                                             const Sampler& sampler, const RandomizationKey& key) {
  if (outer.dimension() != problem.outer_dim) throw DomainError("outer point dimension mismatch");
  const InnerPointSource source(problem.inner_dim, M, sampler);
  std::vector<std::vector<double>> out(outer.count(), std::vector<double>(R));
  parallel_for(outer.count(), [&](std::size_t n) {
    std::vector<double> points, scratch;
    const auto g = problem.bind(outer.row(n));
    for (std::size_t r = 0; r < R; ++r) {
      source.generate(inner_key(key, s, n, r), points);
      out[n][r] = inner_mean_one(problem, g, points, M, scratch);
    }
  });
  return out;
}

EstimatorResult mc_estimate(const Integrand& integrand, std::size_t dim, std::size_t M,
                            const RandomizationKey& key) {
  if (M < 1) throw DomainError("mc_estimate needs M >= 1");
  const KeyedStream stream(key.with_tag(key.tag + "/mc"));
  std::vector<double> values(M);
  parallel_for(M, [&](std::size_t m) {
    std::vector<double> u(dim);
    for (std::size_t j = 0; j < dim; ++j) u[j] = stream.uniform(m * dim + j);
    values[m] = integrand(u);
  });
  return finish(std::move(values), true, Counts{1, M, 1, 1}, key.seed, static_cast<double>(M));
}

EstimatorResult rqmc_estimate(const Integrand& integrand, std::size_t dim, std::size_t M, std::size_t R,
                              const RandomizationKey& key, const Sampler& sampler) {
  if (R < 1) throw DomainError("rqmc_estimate needs R >= 1");
  const RandomizationKey base = key.with_tag(key.tag + "/rqmc");
  std::vector<double> replicates(R);
  for (std::size_t r = 0; r < R; ++r) {
    lds::PointSet pts;
    if (sampler.kind == SamplerKind::mc) {
      pts = outer_points(dim, M, r, sampler, base);
    } else if (sampler.kind == SamplerKind::sobol_owen) {
      if (dim > sobol_table().dimension) throw DomainError("dimension exceeds the Sobol table");
      pts = lds::owen_scramble(lds::sobol_sequence(sobol_table(), dim, log2_exact(M, "sample count M")),
                               base.with_indices(r, 0, 0));
    } else {
      if (sampler.outer_lattice.size() != dim) throw DomainError("lattice generating vector has wrong dimension");
      pts = lds::random_shift(lds::lattice_points(sampler.outer_lattice, M), base.with_indices(r, 0, 0));
    }
    std::vector<double> vals(M);
    parallel_for(M, [&](std::size_t m) { vals[m] = integrand(pts.row(m)); });
    replicates[r] = pairwise_sum(vals) / static_cast<double>(M);
  }
  return finish(std::move(replicates), true, Counts{1, M, 1, R}, key.seed, static_cast<double>(M * R));
}

EstimatorResult nested_estimate(const NestedProblem& problem, const Counts& counts, const Sampler& sampler,
                                const RandomizationKey& key) {
  auto values = nested_outer_values(problem, counts, sampler, key);
  const double work = static_cast<double>(counts.N * counts.M * counts.S * counts.R) * problem.cost_per_evaluation();

  if (sampler.kind == SamplerKind::mc && counts.S == 1) {
    return finish(std::move(values), true, counts, key.seed, work);
  }
  std::vector<double> replicates(counts.S);
  for (std::size_t s = 0; s < counts.S; ++s) {
    replicates[s] = pairwise_sum(std::span<const double>(values).subspan(s * counts.N, counts.N)) /
                    static_cast<double>(counts.N);
  }
  return finish(std::move(replicates), true, counts, key.seed, work);
}

EstimatorResult dlmc_estimate(const NestedProblem& problem, std::size_t N, std::size_t M,
                              const RandomizationKey& key) {
  return nested_estimate(problem, Counts{N, M, 1, 1}, Sampler{SamplerKind::mc, {}, {}}, key);
}

EstimatorResult rdlqmc_estimate(const NestedProblem& problem, std::size_t N, std::size_t M, std::size_t S,
                                std::size_t R, const RandomizationKey& key, const Sampler& sampler) {
  if (sampler.kind == SamplerKind::mc) throw DomainError("rdlqmc_estimate needs a low-discrepancy sampler");
  return nested_estimate(problem, Counts{N, M, S, R}, sampler, key);
}

QuadratureRule gauss_legendre(std::size_t order) {
  if (order < 1) throw DomainError("quadrature order must be positive");
  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const std::size_t n = order;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = 0.5 * (1.0 - x);
    rule.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    rule.weights[i] = rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

namespace {

// Tensor rule over [0,1]^d as flat node/weight lists.
void tensor_rule(const QuadratureRule& rule, std::size_t d, std::vector<double>& nodes, std::vector<double>& weights) {
  const std::size_t q = rule.nodes.size();
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= q;
  nodes.assign(total * d, 0.0);
  weights.assign(total, 1.0);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = rem % q;
      rem /= q;
      nodes[i * d + j] = rule.nodes[k];
      weights[i] *= rule.weights[k];
    }
  }
}

double quadrature_value(const NestedProblem& problem, std::size_t order_outer, std::size_t order_inner) {
  std::vector<double> yn, yw, xn, xw;
  tensor_rule(gauss_legendre(order_outer), problem.outer_dim, yn, yw);
  tensor_rule(gauss_legendre(order_inner), problem.inner_dim, xn, xw);
  const std::size_t d1 = problem.outer_dim;
  const std::size_t d2 = problem.inner_dim;

  std::vector<double> terms(yw.size());
  parallel_for(yw.size(), [&](std::size_t i) {
    const auto g = problem.bind(std::span<const double>(yn.data() + i * d1, d1));
    double inner = 0.0;
    if (problem.log_form) {
      std::vector<double> lv(xw.size());
      for (std::size_t k = 0; k < xw.size(); ++k)
        lv[k] = g(std::span<const double>(xn.data() + k * d2, d2)) + std::log(xw[k]);
      inner = stats::log_sum_exp(lv);
    } else {
      for (std::size_t k = 0; k < xw.size(); ++k) inner += xw[k] * g(std::span<const double>(xn.data() + k * d2, d2));
    }
    terms[i] = yw[i] * problem.apply_outer(inner);
  });
  return pairwise_sum(terms);
}

}  // namespace

QuadratureResult tensor_quadrature_reference(const NestedProblem& problem, std::size_t order_outer,
                                             std::size_t order_inner, bool check_doubling) {
  if (problem.outer_dim > 3 || problem.inner_dim > 3) throw DomainError("tensor quadrature limited to d1, d2 <= 3");
  if (order_outer > 64 || order_inner > 64) throw DomainError("tensor quadrature orders limited to 64 per axis");
  if (!problem.bind) throw DomainError("nested problem has no integrand");

  QuadratureResult res;
  res.value = quadrature_value(problem, order_outer, order_inner);
  if (check_doubling) {
    const double refined = quadrature_value(problem, 2 * order_outer, 2 * order_inner);
    res.doubling_change = std::abs(refined - res.value);
    res.accurate = res.doubling_change < 1e-10;
    if (!res.accurate) {
      res.warning = "order doubling changed the result by " + std::to_string(res.doubling_change);
    }
  }
  return res;
}

}  // namespace nestiq::est
