#pragma once

// Forward models G(theta, xi) for the experimental-design estimators.

#include <atomic>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nestiq/stats.hpp"

namespace nestiq::models {

class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t theta_dim() const = 0;
  /// Observation dimension d_y for design xi.
  virtual std::size_t output_dim(std::span<const double> xi) const = 0;

  /// G(theta, xi) at discretization level h (ignored by exact models).
  virtual Eigen::VectorXd evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                                   std::optional<double> h = std::nullopt) const = 0;

  /// d_y x d_theta Jacobian; the default is central finite differences.
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                                   std::optional<double> h = std::nullopt) const;

  /// Cost exponent gamma and accuracy order eta; zero for exact models.
  virtual double gamma() const { return 0.0; }
  virtual double eta() const { return 0.0; }
};

/// Central-difference Jacobian with per-component relative steps.
Eigen::MatrixXd finite_difference_jacobian(const ForwardModel& model, const Eigen::VectorXd& theta,
                                           std::span<const double> xi, std::optional<double> h = std::nullopt);

/// One-compartment pharmacokinetic model: concentrations at sampling times xi,
/// (D / t3) (t1 / (t1 - t2)) (exp(-t2 xi) - exp(-t1 xi)), D = 400.
class PharmacokineticModel final : public ForwardModel {
 public:
  static constexpr double kDose = 400.0;

  std::string name() const override { return "pk"; }
  std::size_t theta_dim() const override { return 3; }
  std::size_t output_dim(std::span<const double> xi) const override { return xi.size(); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
};

struct PkDesigns {
  std::vector<double> geometric;
  std::vector<double> even;
};
/// geometric_j = 0.94 * 1.25^(j-1), even_j = 0.3 + 1.6 (j-1), j = 1..15.
PkDesigns pk_designs();

/// How the prior scale 0.05 of log(theta) is read.
enum class PriorScaleReading { variance, stddev };
std::string to_string(PriorScaleReading r);
PriorScaleReading prior_reading_from_string(const std::string& s);

/// Lognormal components with medians 1, 0.1, 20 and log-scale 0.05.
stats::PriorSpec pk_prior(PriorScaleReading reading = PriorScaleReading::variance);

/// G(theta) = J theta; the design is unused.
class LinearGaussianModel final : public ForwardModel {
 public:
  explicit LinearGaussianModel(Eigen::MatrixXd J);

  std::string name() const override { return "linear_gaussian"; }
  std::size_t theta_dim() const override { return static_cast<std::size_t>(J_.cols()); }
  std::size_t output_dim(std::span<const double>) const override { return static_cast<std::size_t>(J_.rows()); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  const Eigen::MatrixXd& matrix() const { return J_; }

 private:
  Eigen::MatrixXd J_;
};

/// Componentwise G_i(theta) = theta_i + c theta_i^2.
class QuadraticModel final : public ForwardModel {
 public:
  QuadraticModel(std::size_t dim, double c) : dim_(dim), c_(c) {}

  std::string name() const override { return "quadratic"; }
  std::size_t theta_dim() const override { return dim_; }
  std::size_t output_dim(std::span<const double>) const override { return dim_; }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;

 private:
  std::size_t dim_;
  double c_;
};

/// J theta + C h^eta sin(sum(theta) + xi_j): a discretized stand-in whose
/// bias decays like h^eta; each call charges h^-gamma to the work counter.
class SyntheticDiscretizedModel final : public ForwardModel {
 public:
  SyntheticDiscretizedModel(Eigen::MatrixXd J, double C = 1.0, double eta = 2.0, double gamma = 2.0);

  std::string name() const override { return "synthetic"; }
  std::size_t theta_dim() const override { return static_cast<std::size_t>(J_.cols()); }
  std::size_t output_dim(std::span<const double>) const override { return static_cast<std::size_t>(J_.rows()); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, std::span<const double> xi,
                           std::optional<double> h = std::nullopt) const override;
  double gamma() const override { return gamma_; }
  double eta() const override { return eta_; }
  double perturbation_constant() const { return C_; }
  const Eigen::MatrixXd& matrix() const { return J_; }

  double work() const { return work_.load(); }
  std::size_t evaluations() const { return calls_.load(); }
  void reset_work() const;

 private:
  Eigen::MatrixXd J_;
  double C_, eta_, gamma_;
  mutable std::atomic<double> work_{0.0};
  mutable std::atomic<std::size_t> calls_{0};
};

}  // namespace nestiq::models
