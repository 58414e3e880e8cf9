#pragma once

// Expected information gain for y_i = G(theta, xi) + eps_i, eps_i ~ N(0, diag(sigma^2)),
// i = 1..N_e:
//   EIG = E[log p(Y | theta)] - E[log p(Y)].
// The first term has a closed form; the second is a nested integral with
// inner integrand p(Y | theta') under the prior (or a Laplace importance density).

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nestiq/estimators.hpp"
#include "nestiq/keyed_rng.hpp"
#include "nestiq/models.hpp"
#include "nestiq/stats.hpp"

namespace nestiq::oed {

/// Observations: d_y x N_e, one column per repeated experiment.
using Data = Eigen::MatrixXd;

struct OEDProblem {
  std::shared_ptr<const models::ForwardModel> model;
  std::vector<double> design;
  stats::PriorSpec prior;
  std::vector<double> noise_variances;  // diagonal of the noise covariance, length d_y
  std::size_t N_e = 1;
  stats::TruncationSetting truncation;
  std::optional<double> h;  // discretization level for discretized models

  std::size_t theta_dim() const { return prior.dimension(); }
  std::size_t output_dim() const;
  /// theta coordinates first, then noise coordinates observation by observation.
  std::size_t outer_dim() const { return theta_dim() + N_e * output_dim(); }
  std::size_t inner_dim() const { return theta_dim(); }

  Eigen::VectorXd forward(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd forward_jacobian(const Eigen::VectorXd& theta) const;

  void validate() const;
};

enum class LaplaceMode { optimized_map, data_generating_theta };
std::string to_string(LaplaceMode mode);
LaplaceMode laplace_mode_from_string(const std::string& s);

struct LaplaceFit {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd chol_lower;  // covariance = L L^T
  double log_det_cov = 0.0;
  LaplaceMode mode = LaplaceMode::optimized_map;
};

double log_likelihood(const Data& Y, const Eigen::VectorXd& theta, const OEDProblem& problem);

/// E[log p(Y | theta)] = -(N_e/2) sum_j (log(2 pi sigma_j^2) + 1).
double closed_form_entropy_term(std::size_t N_e, std::span<const double> noise_variances);

/// The first EIG term for the problem's noise law: the closed form, with the
/// second moment of the truncated normal in place of 1 when truncation is on.
double entropy_term(const OEDProblem& problem);

/// Standard (or truncated) normal noise, d_y x N_e, from unit-cube coordinates.
Eigen::MatrixXd noise_from_unit(std::span<const double> u, const OEDProblem& problem);

/// G(theta) + sigma * draw, column by column.
Data simulate_data(const Eigen::VectorXd& theta, const OEDProblem& problem, const Eigen::MatrixXd& noise_draw);

struct MapResult {
  Eigen::VectorXd theta;
  std::size_t iterations = 0;  // gradient evaluations
  double gradient_norm = 0.0;
};

/// Minimizer of 1/2 sum r^T Sigma^-1 r - log pi(theta) by damped Newton steps
/// (residual curvature from differences of the Jacobian, Marquardt damping).
/// Converged when |grad| < 1e-8; 100 iterations max.
MapResult map_estimate(const Data& Y, const OEDProblem& problem, const Eigen::VectorXd& init);

/// (N_e J^T Sigma^-1 J - Hess log pi)^-1 at theta_hat.
Eigen::MatrixXd laplace_covariance(const Eigen::VectorXd& theta_hat, const OEDProblem& problem);

/// Laplace fit for data Y generated at theta_true: the MAP (started from
/// theta_true) or theta_true itself.
LaplaceFit laplace_fit(const Data& Y, const Eigen::VectorXd& theta_true, const OEDProblem& problem,
                       LaplaceMode mode);

/// Nested problem for E[log p(Y)] with prior inner sampling (log form).
est::NestedProblem marginal_problem(const OEDProblem& problem);

/// Same with inner samples from the Laplace fit of each outer datum.
est::NestedProblem importance_marginal_problem(const OEDProblem& problem, LaplaceMode mode);

/// EIG by double loop; prior inner sampling.
est::EstimatorResult eig_nested(const OEDProblem& problem, const est::Counts& counts, const est::Sampler& sampler,
                                const RandomizationKey& key);

/// EIG by double loop with Laplace importance sampling. Uniform priors are rejected.
est::EstimatorResult eig_importance_sampled(const OEDProblem& problem, const est::Counts& counts,
                                            const est::Sampler& sampler, LaplaceMode mode,
                                            const RandomizationKey& key);

/// Single-loop Laplace EIG: mean over prior draws of
/// -1/2 log det(2 pi Sigma(theta)) - d_theta/2 - log pi(theta).
/// S >= 2 replicates give a variance for the low-discrepancy samplers.
est::EstimatorResult eig_laplace_only(const OEDProblem& problem, std::size_t N, std::size_t S,
                                      const est::Sampler& sampler, const RandomizationKey& key);

/// Single-loop EIG with the evidence p(Y) in closed form: mean of
/// log p(Y | theta) - log p(Y). Needs the linear model, a normal prior and
/// untruncated noise.
est::EstimatorResult eig_exact_evidence(const OEDProblem& problem, std::size_t N, std::size_t S,
                                        const est::Sampler& sampler, const RandomizationKey& key);

/// 1/2 log det(I + N_e Sigma_p J^T Sigma_eps^-1 J).
double eig_conjugate_oracle(std::span<const double> prior_variances, std::span<const double> noise_variances,
                            const Eigen::MatrixXd& J, std::size_t N_e);

/// Gauss-Hermite rule for the standard normal weight (weights sum to 1).
est::QuadratureRule gauss_hermite(std::size_t order);

/// Quadrature EIG for scalar theta and scalar observations. With untruncated
/// noise the N_e observations reduce to their mean; with truncation N_e must be 1.
double eig_quadrature_scalar(const OEDProblem& problem, std::size_t outer_order = 48, std::size_t inner_panels = 600);

}  // namespace nestiq::oed
