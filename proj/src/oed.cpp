#include "nestiq/oed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nestiq/errors.hpp"

namespace nestiq::oed {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string format_vector(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os.precision(10);
  os << "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ")";
  return os.str();
}

Eigen::VectorXd inverse_noise_variances(const OEDProblem& p) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(p.noise_variances.size()));
  for (std::size_t j = 0; j < p.noise_variances.size(); ++j) w[static_cast<Eigen::Index>(j)] = 1.0 / p.noise_variances[j];
  return w;
}

double log_normalizer(const OEDProblem& p) {
  double s = 0.0;
  for (double v : p.noise_variances) s += kLog2Pi + std::log(v);
  return -0.5 * static_cast<double>(p.N_e) * s;
}

/// Negative log posterior (up to a constant) with Gauss-Newton derivatives.
struct Objective {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

Objective objective(const Data& Y, const Eigen::VectorXd& theta, const OEDProblem& p) {
  const Eigen::VectorXd G = p.forward(theta);
  const Eigen::VectorXd w = inverse_noise_variances(p);
  const Eigen::MatrixXd R = Y.colwise() - G;
  const Eigen::VectorXd rsum = R.rowwise().sum();
  const Eigen::MatrixXd J = p.forward_jacobian(theta);
  const auto d = theta.size();
  std::vector<double> g(static_cast<std::size_t>(d)), hd(static_cast<std::size_t>(d));
  p.prior.log_density_derivatives(as_span(theta), g, hd);

  Objective o;
  o.value = 0.5 * (R.array().square().colwise() * w.array()).sum() - p.prior.log_density(as_span(theta));
  o.grad = -J.transpose() * (w.asDiagonal() * rsum);
  o.hess = static_cast<double>(p.N_e) * J.transpose() * w.asDiagonal() * J;
  for (Eigen::Index i = 0; i < d; ++i) {
    o.grad[i] -= g[static_cast<std::size_t>(i)];
    o.hess(i, i) -= hd[static_cast<std::size_t>(i)];
  }
  return o;
}

/// Full Hessian of the objective: the Gauss-Newton part plus the residual
/// curvature term, with second derivatives of G from differences of the
/// Jacobian (exactly zero for linear models).
Eigen::MatrixXd newton_hessian(const Data& Y, const Eigen::VectorXd& theta, const OEDProblem& p, const Objective& o) {
  const auto d = theta.size();
  const Eigen::VectorXd w = inverse_noise_variances(p);
  const Eigen::VectorXd wr = w.cwiseProduct((Y.colwise() - p.forward(theta)).rowwise().sum());
  Eigen::MatrixXd H = o.hess;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double step = 1e-6 * std::max(std::abs(theta[i]), 1e-3);
    Eigen::VectorXd a = theta, b = theta;
    a[i] += step;
    b[i] -= step;
    const Eigen::MatrixXd dJ = (p.forward_jacobian(a) - p.forward_jacobian(b)) / (a[i] - b[i]);
    H.col(i) -= dJ.transpose() * wr;
  }
  return 0.5 * (H + H.transpose());
}

/// Moves a starting point strictly inside the prior support.
Eigen::VectorXd project_to_support(Eigen::VectorXd theta, const stats::PriorSpec& prior) {
  const auto& comps = prior.components();
  for (std::size_t i = 0; i < comps.size(); ++i) {
    double& t = theta[static_cast<Eigen::Index>(i)];
    if (const auto* u = std::get_if<stats::Uniform>(&comps[i])) {
      const double pad = 1e-9 * (u->hi - u->lo);
      t = std::clamp(t, u->lo + pad, u->hi - pad);
    } else if (const auto* l = std::get_if<stats::LogNormal>(&comps[i])) {
      if (!(t > 0.0)) t = std::exp(l->mu_log);
    }
  }
  return theta;
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& A) { return 0.5 * (A + A.transpose()); }

est::EstimatorResult assemble_eig(est::EstimatorResult r, double entropy) {
  r.estimate = entropy - r.estimate;
  for (double& v : r.replicate_values) v = entropy - v;
  return r;
}

/// Outer point -> (theta, data).
struct OuterSample {
  Eigen::VectorXd theta;
  Data Y;
};

OuterSample outer_sample(std::span<const double> y, const OEDProblem& p) {
  const std::size_t dt = p.theta_dim();
  OuterSample s;
  s.theta = to_vector(p.prior.map(y.subspan(0, dt)));
  s.Y = simulate_data(s.theta, p, noise_from_unit(y.subspan(dt), p));
  return s;
}

/// One-dimensional rule against a prior component: nodes in theta, weights summing to 1.
struct ScalarRule {
  std::vector<double> nodes, weights;
};

ScalarRule composite_normal_rule(double lo, double hi, std::size_t panels) {
  const auto gl = est::gauss_legendre(8);
  ScalarRule r;
  const double w = (hi - lo) / static_cast<double>(panels);
  for (std::size_t k = 0; k < panels; ++k) {
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double z = lo + w * (static_cast<double>(k) + gl.nodes[i]);
      r.nodes.push_back(z);
      r.weights.push_back(w * gl.weights[i] * std::exp(stats::norm_logpdf(z)));
    }
  }
  double total = 0.0;
  for (double x : r.weights) total += x;
  for (double& x : r.weights) x /= total;
  return r;
}

ScalarRule prior_rule(const stats::PriorComponent& c, bool fine, std::size_t order, std::size_t panels) {
  ScalarRule z;
  if (const auto* u = std::get_if<stats::Uniform>(&c)) {
    ScalarRule r;
    if (fine) {
      const auto gl = est::gauss_legendre(8);
      const double w = 1.0 / static_cast<double>(panels);
      for (std::size_t k = 0; k < panels; ++k)
        for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
          r.nodes.push_back(u->lo + (u->hi - u->lo) * w * (static_cast<double>(k) + gl.nodes[i]));
          r.weights.push_back(w * gl.weights[i]);
        }
    } else {
      const auto gl = est::gauss_legendre(order);
      for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        r.nodes.push_back(u->lo + (u->hi - u->lo) * gl.nodes[i]);
        r.weights.push_back(gl.weights[i]);
      }
    }
    return r;
  }
  if (fine) {
    z = composite_normal_rule(-12.0, 12.0, panels);
  } else {
    const auto gh = gauss_hermite(order);
    z.nodes = gh.nodes;
    z.weights = gh.weights;
  }
  for (double& t : z.nodes) {
    if (const auto* n = std::get_if<stats::Normal>(&c)) t = n->mu + n->sigma * t;
    else if (const auto* l = std::get_if<stats::LogNormal>(&c)) t = std::exp(l->mu_log + l->sigma_log * t);
  }
  return z;
}

}  // namespace

std::size_t OEDProblem::output_dim() const {
  if (!model) throw DomainError("problem has no forward model");
  return model->output_dim(design);
}

Eigen::VectorXd OEDProblem::forward(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd G = model->evaluate(theta, design, h);
  if (!G.allFinite()) throw NumericalError("forward model returned a non-finite value at theta = " + format_vector(theta));
  return G;
}

Eigen::MatrixXd OEDProblem::forward_jacobian(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd J = model->jacobian(theta, design, h);
  if (!J.allFinite()) throw NumericalError("model Jacobian is non-finite at theta = " + format_vector(theta));
  return J;
}

void OEDProblem::validate() const {
  if (!model) throw DomainError("problem has no forward model");
  if (prior.dimension() != model->theta_dim())
    throw DomainError("prior dimension " + std::to_string(prior.dimension()) + " does not match model parameter dimension " +
                      std::to_string(model->theta_dim()));
  if (noise_variances.size() != output_dim())
    throw DomainError("need one noise variance per observation component (" + std::to_string(output_dim()) + ")");
  for (double v : noise_variances)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("noise variances must be positive and finite");
  if (N_e < 1) throw DomainError("N_e must be at least 1");
  if (truncation.enabled) (void)truncation.radius();
}

std::string to_string(LaplaceMode mode) {
  return mode == LaplaceMode::optimized_map ? "optimized-map" : "data-generating-theta";
}

LaplaceMode laplace_mode_from_string(const std::string& s) {
  if (s == "optimized-map" || s == "map") return LaplaceMode::optimized_map;
  if (s == "data-generating-theta" || s == "theta") return LaplaceMode::data_generating_theta;
  throw DomainError("unknown Laplace mode '" + s + "' (optimized-map | data-generating-theta)");
}

double log_likelihood(const Data& Y, const Eigen::VectorXd& theta, const OEDProblem& problem) {
  const auto dy = static_cast<Eigen::Index>(problem.noise_variances.size());
  if (Y.rows() != dy || Y.cols() != static_cast<Eigen::Index>(problem.N_e))
    throw DomainError("data must be d_y x N_e");
  const Eigen::VectorXd G = problem.forward(theta);
  double q = 0.0;
  for (Eigen::Index i = 0; i < Y.cols(); ++i)
    for (Eigen::Index j = 0; j < dy; ++j) {
      const double r = Y(j, i) - G[j];
      q += r * r / problem.noise_variances[static_cast<std::size_t>(j)];
    }
  return log_normalizer(problem) - 0.5 * q;
}

double closed_form_entropy_term(std::size_t N_e, std::span<const double> noise_variances) {
  double s = 0.0;
  for (double v : noise_variances) {
    if (!(v > 0.0)) throw DomainError("noise variances must be positive");
    s += kLog2Pi + std::log(v) + 1.0;
  }
  return -0.5 * static_cast<double>(N_e) * s;
}

double entropy_term(const OEDProblem& problem) {
  if (!problem.truncation.enabled) return closed_form_entropy_term(problem.N_e, problem.noise_variances);
  const double c = problem.truncation.radius();
  const double mass = 2.0 * stats::norm_cdf(c) - 1.0;
  const double second_moment = 1.0 - 2.0 * c * std::exp(stats::norm_logpdf(c)) / mass;
  double s = 0.0;
  for (double v : problem.noise_variances) s += kLog2Pi + std::log(v) + second_moment;
  return -0.5 * static_cast<double>(problem.N_e) * s;
}

Eigen::MatrixXd noise_from_unit(std::span<const double> u, const OEDProblem& problem) {
  const std::size_t dy = problem.noise_variances.size();
  if (u.size() != dy * problem.N_e) throw DomainError("noise coordinates must have N_e * d_y entries");
  Eigen::MatrixXd E(static_cast<Eigen::Index>(dy), static_cast<Eigen::Index>(problem.N_e));
  const double c = problem.truncation.enabled ? problem.truncation.radius() : 0.0;
  for (std::size_t i = 0; i < problem.N_e; ++i)
    for (std::size_t j = 0; j < dy; ++j) {
      const double x = u[i * dy + j];
      E(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          problem.truncation.enabled ? stats::truncated_inv_norm_cdf(x, c) : stats::inv_norm_cdf(x);
    }
  return E;
}

Data simulate_data(const Eigen::VectorXd& theta, const OEDProblem& problem, const Eigen::MatrixXd& noise_draw) {
  const auto dy = static_cast<Eigen::Index>(problem.noise_variances.size());
  if (noise_draw.rows() != dy || noise_draw.cols() != static_cast<Eigen::Index>(problem.N_e))
    throw DomainError("noise draw must be d_y x N_e");
  const Eigen::VectorXd G = problem.forward(theta);
  Eigen::VectorXd sd(dy);
  for (Eigen::Index j = 0; j < dy; ++j) sd[j] = std::sqrt(problem.noise_variances[static_cast<std::size_t>(j)]);
  Data Y = sd.asDiagonal() * noise_draw;
  Y.colwise() += G;
  return Y;
}

MapResult map_estimate(const Data& Y, const OEDProblem& problem, const Eigen::VectorXd& init) {
  constexpr std::size_t kMaxIter = 100;
  constexpr double kGradTol = 1e-8;
  if (static_cast<std::size_t>(init.size()) != problem.theta_dim()) throw DomainError("initial point has wrong dimension");

  Eigen::VectorXd theta = project_to_support(init, problem.prior);
  Objective obj = objective(Y, theta, problem);
  // Undamped Gauss-Newton first; damping only after a rejected step.
  double lambda = 0.0;
  double gnorm = obj.grad.norm();
  for (std::size_t it = 1; it <= kMaxIter; ++it) {
    gnorm = obj.grad.norm();
    if (gnorm < kGradTol) return {theta, it, gnorm};

    // Newton steps on the full Hessian; the Gauss-Newton diagonal sets the damping scale.
    const Eigen::MatrixXd H = newton_hessian(Y, theta, problem, obj);
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::MatrixXd A = H;
      for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, i) += lambda * std::max(std::abs(obj.hess(i, i)), 1e-12);
      const Eigen::VectorXd step = A.ldlt().solve(-obj.grad);
      const Eigen::VectorXd cand = theta + step;
      if (!step.allFinite() || !problem.prior.in_support(as_span(cand))) {
        lambda = std::max(lambda * 10.0, 1e-3);
        continue;
      }
      Objective next = objective(Y, cand, problem);
      const double slack = 1e-11 * (1.0 + std::abs(obj.value));
      // Close to the optimum the objective change drowns in rounding; there the
      // gradient norm decides.
      const bool flat = std::abs(next.value - obj.value) <= slack;
      if ((next.value < obj.value && !flat) || (flat && next.grad.norm() < gnorm)) {
        theta = cand;
        obj = std::move(next);
        lambda = lambda < 1e-9 ? 0.0 : lambda / 10.0;
        accepted = true;
      } else {
        lambda = std::max(lambda * 10.0, 1e-3);
      }
    }
    if (!accepted) break;
  }
  gnorm = obj.grad.norm();
  if (gnorm < kGradTol) return {theta, kMaxIter, gnorm};
  std::ostringstream os;
  os << "MAP estimate did not converge: gradient norm " << gnorm << " at theta = " << format_vector(theta);
  throw NumericalError(os.str());
}

Eigen::MatrixXd laplace_covariance(const Eigen::VectorXd& theta_hat, const OEDProblem& problem) {
  const Eigen::MatrixXd J = problem.forward_jacobian(theta_hat);
  const Eigen::VectorXd w = inverse_noise_variances(problem);
  Eigen::MatrixXd P = static_cast<double>(problem.N_e) * J.transpose() * w.asDiagonal() * J;
  const auto d = theta_hat.size();
  std::vector<double> g(static_cast<std::size_t>(d)), hd(static_cast<std::size_t>(d));
  problem.prior.log_density_derivatives(as_span(theta_hat), g, hd);
  for (Eigen::Index i = 0; i < d; ++i) P(i, i) -= hd[static_cast<std::size_t>(i)];
  const Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(P));
  if (llt.info() != Eigen::Success)
    throw NumericalError("Laplace precision is not positive definite at theta = " + format_vector(theta_hat));
  return symmetrized(llt.solve(Eigen::MatrixXd::Identity(d, d)));
}

LaplaceFit laplace_fit(const Data& Y, const Eigen::VectorXd& theta_true, const OEDProblem& problem, LaplaceMode mode) {
  LaplaceFit fit;
  fit.mode = mode;
  fit.theta_hat = mode == LaplaceMode::optimized_map ? map_estimate(Y, problem, theta_true).theta : theta_true;
  fit.covariance = laplace_covariance(fit.theta_hat, problem);
  const Eigen::LLT<Eigen::MatrixXd> llt(fit.covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("Laplace covariance is not positive definite");
  fit.chol_lower = llt.matrixL();
  fit.log_det_cov = 2.0 * fit.chol_lower.diagonal().array().log().sum();
  return fit;
}

est::NestedProblem marginal_problem(const OEDProblem& problem) {
  problem.validate();
  est::NestedProblem np;
  np.outer_dim = problem.outer_dim();
  np.inner_dim = problem.inner_dim();
  np.outer = est::OuterMap::log;
  np.log_form = true;
  np.h = problem.h;
  np.gamma = problem.model->gamma();
  np.eta = problem.model->eta();
  auto pp = std::make_shared<const OEDProblem>(problem);
  np.bind = [pp](std::span<const double> y) -> est::InnerIntegrand {
    auto s = std::make_shared<const OuterSample>(outer_sample(y, *pp));
    return [s, pp](std::span<const double> x) { return log_likelihood(s->Y, to_vector(pp->prior.map(x)), *pp); };
  };
  np.bind_linear = [bind = np.bind](std::span<const double> y) -> est::InnerIntegrand {
    auto f = bind(y);
    return [f](std::span<const double> x) { return std::exp(f(x)); };
  };
  return np;
}

est::NestedProblem importance_marginal_problem(const OEDProblem& problem, LaplaceMode mode) {
  problem.validate();
  if (problem.prior.has_uniform())
    throw DomainError("importance sampling is not available with uniform prior components (discontinuous weights)");
  est::NestedProblem np = marginal_problem(problem);
  auto pp = std::make_shared<const OEDProblem>(problem);
  np.bind = [pp, mode](std::span<const double> y) -> est::InnerIntegrand {
    const OEDProblem& problem = *pp;
    const OuterSample s = outer_sample(y, problem);
    auto fit = std::make_shared<const LaplaceFit>(laplace_fit(s.Y, s.theta, problem, mode));
    auto Y = std::make_shared<const Data>(s.Y);
    const double d = static_cast<double>(problem.theta_dim());
    const double log_norm = -0.5 * d * kLog2Pi - 0.5 * fit->log_det_cov;
    return [fit, Y, pp, log_norm](std::span<const double> x) {
      const OEDProblem& problem = *pp;
      Eigen::VectorXd z(static_cast<Eigen::Index>(x.size()));
      for (std::size_t i = 0; i < x.size(); ++i) z[static_cast<Eigen::Index>(i)] = stats::inv_norm_cdf(x[i]);
      const Eigen::VectorXd t = fit->theta_hat + fit->chol_lower * z;
      if (!problem.prior.in_support(as_span(t))) return -std::numeric_limits<double>::infinity();
      const double log_q = log_norm - 0.5 * z.squaredNorm();
      return log_likelihood(*Y, t, problem) + problem.prior.log_density(as_span(t)) - log_q;
    };
  };
  np.bind_linear = [bind = np.bind](std::span<const double> y) -> est::InnerIntegrand {
    auto f = bind(y);
    return [f](std::span<const double> x) { return std::exp(f(x)); };
  };
  return np;
}

est::EstimatorResult eig_nested(const OEDProblem& problem, const est::Counts& counts, const est::Sampler& sampler,
                                const RandomizationKey& key) {
  const auto np = marginal_problem(problem);
  return assemble_eig(est::nested_estimate(np, counts, sampler, key), entropy_term(problem));
}

est::EstimatorResult eig_importance_sampled(const OEDProblem& problem, const est::Counts& counts,
                                            const est::Sampler& sampler, LaplaceMode mode,
                                            const RandomizationKey& key) {
  const auto np = importance_marginal_problem(problem, mode);
  return assemble_eig(est::nested_estimate(np, counts, sampler, key), entropy_term(problem));
}

est::EstimatorResult eig_laplace_only(const OEDProblem& problem, std::size_t N, std::size_t S,
                                      const est::Sampler& sampler, const RandomizationKey& key) {
  problem.validate();
  if (S < 1) throw DomainError("eig_laplace_only needs S >= 1");
  const double d = static_cast<double>(problem.theta_dim());
  auto integrand = [&problem, d](std::span<const double> u) {
    const Eigen::VectorXd theta = to_vector(problem.prior.map(u));
    const Eigen::MatrixXd cov = laplace_covariance(theta, problem);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const double log_det = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * (d * kLog2Pi + log_det) - 0.5 * d - problem.prior.log_density(as_span(theta));
  };
  est::EstimatorResult r = (sampler.kind == est::SamplerKind::mc && S == 1)
                               ? est::mc_estimate(integrand, problem.theta_dim(), N, key)
                               : est::rqmc_estimate(integrand, problem.theta_dim(), N, S, key, sampler);
  r.counts = est::Counts{N, 1, S, 1};
  return r;
}

est::EstimatorResult eig_exact_evidence(const OEDProblem& problem, std::size_t N, std::size_t S,
                                        const est::Sampler& sampler, const RandomizationKey& key) {
  problem.validate();
  if (S < 1) throw DomainError("eig_exact_evidence needs S >= 1");
  const auto* lin = dynamic_cast<const models::LinearGaussianModel*>(problem.model.get());
  if (!lin) throw DomainError("closed-form evidence needs the linear model");
  if (problem.truncation.enabled) throw DomainError("closed-form evidence needs untruncated noise");
  const auto dt = static_cast<Eigen::Index>(problem.theta_dim());
  Eigen::VectorXd mu(dt), var(dt);
  for (Eigen::Index i = 0; i < dt; ++i) {
    const auto* c = std::get_if<stats::Normal>(&problem.prior.components()[static_cast<std::size_t>(i)]);
    if (!c) throw DomainError("closed-form evidence needs a normal prior");
    mu[i] = c->mu;
    var[i] = c->sigma * c->sigma;
  }
  // Stacked Y ~ N(1 (x) J mu, I (x) Sigma_eps + (1 (x) J) Sigma_p (1 (x) J)^T).
  const Eigen::MatrixXd& J = lin->matrix();
  const auto dy = J.rows();
  const auto ne = static_cast<Eigen::Index>(problem.N_e);
  Eigen::MatrixXd A(dy * ne, dt);
  for (Eigen::Index i = 0; i < ne; ++i) A.middleRows(i * dy, dy) = J;
  Eigen::MatrixXd cov = A * var.asDiagonal() * A.transpose();
  for (Eigen::Index i = 0; i < ne; ++i)
    for (Eigen::Index j = 0; j < dy; ++j) cov(i * dy + j, i * dy + j) += problem.noise_variances[static_cast<std::size_t>(j)];
  const Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(cov));
  if (llt.info() != Eigen::Success) throw NumericalError("evidence covariance is not positive definite");
  const Eigen::VectorXd mean = A * mu;
  const double log_norm =
      -0.5 * static_cast<double>(dy * ne) * kLog2Pi - Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();

  auto integrand = [&](std::span<const double> y) {
    const OuterSample s = outer_sample(y, problem);
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(s.Y.data(), s.Y.size()) - mean;
    const double log_evidence = log_norm - 0.5 * r.dot(llt.solve(r));
    return log_likelihood(s.Y, s.theta, problem) - log_evidence;
  };
  est::EstimatorResult r = (sampler.kind == est::SamplerKind::mc && S == 1)
                               ? est::mc_estimate(integrand, problem.outer_dim(), N, key)
                               : est::rqmc_estimate(integrand, problem.outer_dim(), N, S, key, sampler);
  r.counts = est::Counts{N, 1, S, 1};
  return r;
}

double eig_conjugate_oracle(std::span<const double> prior_variances, std::span<const double> noise_variances,
                            const Eigen::MatrixXd& J, std::size_t N_e) {
  const auto dt = static_cast<Eigen::Index>(prior_variances.size());
  const auto dy = static_cast<Eigen::Index>(noise_variances.size());
  if (J.rows() != dy || J.cols() != dt) throw DomainError("Jacobian must be d_y x d_theta");
  Eigen::VectorXd sp(dt), w(dy);
  for (Eigen::Index i = 0; i < dt; ++i) {
    if (!(prior_variances[static_cast<std::size_t>(i)] > 0.0)) throw DomainError("prior variances must be positive");
    sp[i] = std::sqrt(prior_variances[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index j = 0; j < dy; ++j) {
    if (!(noise_variances[static_cast<std::size_t>(j)] > 0.0)) throw DomainError("noise variances must be positive");
    w[j] = 1.0 / noise_variances[static_cast<std::size_t>(j)];
  }
  // det(I + Sp A) = det(I + Sp^1/2 A Sp^1/2), the latter symmetric positive definite.
  const Eigen::MatrixXd B = sp.asDiagonal() * J.transpose() * w.asDiagonal() * J * sp.asDiagonal();
  const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(dt, dt) + static_cast<double>(N_e) * B;
  const Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(S));
  if (llt.info() != Eigen::Success) throw NumericalError("oracle matrix is not positive definite");
  return Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

est::QuadratureRule gauss_hermite(std::size_t order) {
  if (order < 1 || order > 512) throw DomainError("Gauss-Hermite order must be in [1, 512]");
  const auto n = static_cast<Eigen::Index>(order);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) T(k, k - 1) = T(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(T);
  est::QuadratureRule r;
  for (Eigen::Index i = 0; i < n; ++i) {
    r.nodes.push_back(eig.eigenvalues()[i]);
    const double v = eig.eigenvectors()(0, i);
    r.weights.push_back(v * v);
  }
  return r;
}

double eig_quadrature_scalar(const OEDProblem& problem, std::size_t outer_order, std::size_t inner_panels) {
  problem.validate();
  if (problem.theta_dim() != 1 || problem.output_dim() != 1)
    throw DomainError("scalar quadrature needs one parameter and one observation component");
  if (problem.truncation.enabled && problem.N_e != 1) throw DomainError("truncated scalar quadrature needs N_e = 1");

  // The sample mean is sufficient: N_e observations act as one with variance sigma^2 / N_e.
  const double var = problem.noise_variances[0] / static_cast<double>(problem.N_e);
  const double sd = std::sqrt(var);
  const auto& comp = problem.prior.components()[0];
  const ScalarRule outer = prior_rule(comp, false, outer_order, 0);
  const ScalarRule inner = prior_rule(comp, true, 0, inner_panels);

  ScalarRule noise;
  if (problem.truncation.enabled) {
    const double c = problem.truncation.radius();
    const auto gl = est::gauss_legendre(outer_order);
    double total = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double z = -c + 2.0 * c * gl.nodes[i];
      noise.nodes.push_back(z);
      noise.weights.push_back(gl.weights[i] * std::exp(stats::norm_logpdf(z)));
      total += noise.weights.back();
    }
    for (double& w : noise.weights) w /= total;
  } else {
    const auto gh = gauss_hermite(outer_order);
    noise.nodes = gh.nodes;
    noise.weights = gh.weights;
  }

  auto G = [&](double t) {
    Eigen::VectorXd v(1);
    v[0] = t;
    return problem.forward(v)[0];
  };
  std::vector<double> G_inner(inner.nodes.size()), log_w_inner(inner.nodes.size());
  for (std::size_t m = 0; m < inner.nodes.size(); ++m) {
    G_inner[m] = G(inner.nodes[m]);
    log_w_inner[m] = std::log(inner.weights[m]);
  }
  const double log_norm = -0.5 * (kLog2Pi + std::log(var));

  double total = 0.0;
  std::vector<double> terms(inner.nodes.size());
  for (std::size_t a = 0; a < outer.nodes.size(); ++a) {
    const double g = G(outer.nodes[a]);
    for (std::size_t b = 0; b < noise.nodes.size(); ++b) {
      const double eps = noise.nodes[b];
      const double y = g + sd * eps;
      for (std::size_t m = 0; m < inner.nodes.size(); ++m) {
        const double r = y - G_inner[m];
        terms[m] = log_w_inner[m] + log_norm - 0.5 * r * r / var;
      }
      const double log_marginal = stats::log_sum_exp(terms);
      const double log_lik = log_norm - 0.5 * eps * eps;
      total += outer.weights[a] * noise.weights[b] * (log_lik - log_marginal);
    }
  }
  return total;
}

}  // namespace nestiq::oed
