#include "nestiq/models.hpp"

#include <cmath>

#include "nestiq/errors.hpp"

namespace nestiq::models {

namespace {

void check_theta(const Eigen::VectorXd& theta, std::size_t dim) {
  if (static_cast<std::size_t>(theta.size()) != dim) throw DomainError("parameter dimension mismatch");
}

double require_h(std::optional<double> h) {
  if (!h) throw DomainError("discretized model needs a discretization level h");
  if (!(*h > 0.0)) throw DomainError("discretization level h must be positive");
  return *h;
}

}  // namespace

Eigen::MatrixXd ForwardModel::jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                                       std::optional<double> h) const {
  return finite_difference_jacobian(*this, theta, xi, h);
}

Eigen::MatrixXd finite_difference_jacobian(const ForwardModel& model, const Eigen::VectorXd& theta,
                                           std::span<const double> xi, std::optional<double> h) {
  const auto d = static_cast<Eigen::Index>(model.theta_dim());
  const auto dy = static_cast<Eigen::Index>(model.output_dim(xi));
  Eigen::MatrixXd J(dy, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double step = 1e-6 * std::max(1.0, std::abs(theta[i]));
    Eigen::VectorXd a = theta, b = theta;
    a[i] += step;
    b[i] -= step;
    J.col(i) = (model.evaluate(a, xi, h) - model.evaluate(b, xi, h)) / (a[i] - b[i]);
  }
  return J;
}

Eigen::VectorXd PharmacokineticModel::evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                                               std::optional<double>) const {
  check_theta(theta, 3);
  const double t1 = theta[0], t2 = theta[1], t3 = theta[2];
  if (!(t1 > 0.0 && t2 > 0.0 && t3 > 0.0)) throw DomainError("pharmacokinetic parameters must be positive");
  const double K = kDose / t3;
  const double d = t1 - t2;
  const bool limit = std::abs(d) < 1e-10 * std::abs(t1);
  Eigen::VectorXd G(static_cast<Eigen::Index>(xi.size()));
  for (std::size_t j = 0; j < xi.size(); ++j) {
    const double x = xi[j];
    if (limit) {
      G[j] = K * t1 * x * std::exp(-t1 * x);
    } else {
      // exp(-t2 x) - exp(-t1 x) without cancellation for t1 close to t2.
      const double diff = -std::exp(-t2 * x) * std::expm1(-d * x);
      G[j] = K * (t1 / d) * diff;
    }
  }
  return G;
}

Eigen::MatrixXd PharmacokineticModel::jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                                               std::optional<double> h) const {
  const Eigen::VectorXd G = evaluate(theta, xi, h);
  const double t1 = theta[0], t2 = theta[1], t3 = theta[2];
  const double K = kDose / t3;
  const double d = t1 - t2;
  const bool limit = std::abs(d) < 1e-10 * std::abs(t1);
  Eigen::MatrixXd J(static_cast<Eigen::Index>(xi.size()), 3);
  for (std::size_t j = 0; j < xi.size(); ++j) {
    const double x = xi[j];
    const double e1 = std::exp(-t1 * x), e2 = std::exp(-t2 * x);
    if (limit) {
      J(j, 0) = K * e1 * (x - 0.5 * t1 * x * x);
      J(j, 1) = -K * e1 * 0.5 * t1 * x * x;
    } else {
      const double diff = -e2 * std::expm1(-d * x);
      J(j, 0) = K * (-t2 / (d * d) * diff + (t1 / d) * x * e1);
      J(j, 1) = K * (t1 / (d * d) * diff - (t1 / d) * x * e2);
    }
    J(j, 2) = -G[j] / t3;
  }
  return J;
}

PkDesigns pk_designs() {
  PkDesigns d;
  for (int j = 0; j < 15; ++j) {
    d.geometric.push_back(0.94 * std::pow(1.25, j));
    d.even.push_back(0.3 + 1.6 * j);
  }
  return d;
}

std::string to_string(PriorScaleReading r) { return r == PriorScaleReading::variance ? "variance" : "stddev"; }

PriorScaleReading prior_reading_from_string(const std::string& s) {
  if (s == "variance") return PriorScaleReading::variance;
  if (s == "stddev") return PriorScaleReading::stddev;
  throw DomainError("prior scale reading must be 'variance' or 'stddev', got '" + s + "'");
}

stats::PriorSpec pk_prior(PriorScaleReading reading) {
  const double s = reading == PriorScaleReading::variance ? std::sqrt(0.05) : 0.05;
  return stats::PriorSpec(
      {stats::LogNormal{0.0, s}, stats::LogNormal{std::log(0.1), s}, stats::LogNormal{std::log(20.0), s}});
}

LinearGaussianModel::LinearGaussianModel(Eigen::MatrixXd J) : J_(std::move(J)) {
  if (J_.size() == 0) throw DomainError("linear model needs a non-empty matrix");
}

Eigen::VectorXd LinearGaussianModel::evaluate(const Eigen::VectorXd& theta, std::span<const double>,
                                              std::optional<double>) const {
  check_theta(theta, theta_dim());
  return J_ * theta;
}

Eigen::MatrixXd LinearGaussianModel::jacobian(const Eigen::VectorXd& theta, std::span<const double>,
                                              std::optional<double>) const {
  check_theta(theta, theta_dim());
  return J_;
}

Eigen::VectorXd QuadraticModel::evaluate(const Eigen::VectorXd& theta, std::span<const double>,
                                         std::optional<double>) const {
  check_theta(theta, dim_);
  return theta + c_ * theta.cwiseProduct(theta);
}

Eigen::MatrixXd QuadraticModel::jacobian(const Eigen::VectorXd& theta, std::span<const double>,
                                         std::optional<double>) const {
  check_theta(theta, dim_);
  Eigen::VectorXd diag = Eigen::VectorXd::Ones(theta.size()) + 2.0 * c_ * theta;
  return diag.asDiagonal();
}

SyntheticDiscretizedModel::SyntheticDiscretizedModel(Eigen::MatrixXd J, double C, double eta, double gamma)
    : J_(std::move(J)), C_(C), eta_(eta), gamma_(gamma) {
  if (J_.size() == 0) throw DomainError("synthetic model needs a non-empty matrix");
  if (!(eta_ > 0.0) || !(gamma_ >= 0.0)) throw DomainError("synthetic model needs eta > 0 and gamma >= 0");
}

Eigen::VectorXd SyntheticDiscretizedModel::evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                                                    std::optional<double> h) const {
  check_theta(theta, theta_dim());
  const double hv = require_h(h);
  const auto dy = J_.rows();
  if (static_cast<Eigen::Index>(xi.size()) != dy) throw DomainError("synthetic model design must have d_y entries");
  const double amp = C_ * std::pow(hv, eta_);
  const double s = theta.sum();
  Eigen::VectorXd G = J_ * theta;
  for (Eigen::Index j = 0; j < dy; ++j) G[j] += amp * std::sin(s + xi[static_cast<std::size_t>(j)]);
  work_.fetch_add(std::pow(hv, -gamma_));
  calls_.fetch_add(1);
  return G;
}

Eigen::MatrixXd SyntheticDiscretizedModel::jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                                                    std::optional<double> h) const {
  check_theta(theta, theta_dim());
  const double hv = require_h(h);
  const double amp = C_ * std::pow(hv, eta_);
  const double s = theta.sum();
  Eigen::MatrixXd J = J_;
  for (Eigen::Index j = 0; j < J.rows(); ++j) J.row(j).array() += amp * std::cos(s + xi[static_cast<std::size_t>(j)]);
  return J;
}

void SyntheticDiscretizedModel::reset_work() const {
  work_.store(0.0);
  calls_.store(0);
}

}  // namespace nestiq::models
