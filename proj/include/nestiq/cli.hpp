#pragma once

// Config-driven commands behind the nestiq tool. Each command returns the
// content of its machine-readable output file and writes a human summary to
// `log`; nothing here touches the filesystem except load_config.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nestiq/allocation.hpp"
#include "nestiq/errors.hpp"
#include "nestiq/estimators.hpp"
#include "nestiq/models.hpp"
#include "nestiq/oed.hpp"
#include "nestiq/stats.hpp"

namespace nestiq::cli {

/// Bad command line or a command/config combination that cannot run.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class EstimatorId { mc, rqmc, dlmc, dlmcis, rdlqmc, rdlqmcis, mcla, rqmcla };

std::string to_string(EstimatorId id);
EstimatorId estimator_from_string(const std::string& s);

/// Double-loop estimators have an inner count M and an inner pilot.
bool is_nested(EstimatorId id);

/// Estimators built on iid points (the MC family) rather than randomized LDS.
bool is_iid(EstimatorId id);

struct PilotSettings {
  std::vector<std::size_t> outer_ladder{128, 256, 512, 1024, 2048};
  std::size_t outer_M = 4;
  std::size_t S = 32;
  std::vector<std::size_t> inner_ladder{1, 2, 4, 8, 16};
  std::size_t inner_N = 256;
  std::size_t R = 32;
};

struct ExperimentConfig {
  std::string model = "pk";  // pk | linear_gaussian | synthetic
  std::string design = "geom";  // geom | even | explicit
  std::vector<double> design_values;
  models::PriorScaleReading prior_reading = models::PriorScaleReading::variance;
  stats::PriorSpec prior;
  Eigen::MatrixXd J;  // linear and synthetic models
  double perturbation = 1.0;  // synthetic amplitude C
  double eta = 2.0;
  double gamma = 2.0;
  std::optional<double> h;
  std::vector<double> noise_variances;
  std::size_t N_e = 1;
  stats::TruncationSetting truncation;
  EstimatorId estimator = EstimatorId::rdlqmcis;
  est::Sampler sampler;
  oed::LaplaceMode laplace_mode = oed::LaplaceMode::optimized_map;
  std::uint64_t seed = 1;
  PilotSettings pilot;
  double C_disc = 0.0;
  double h_max = 1.0;
  double h_min = 0.0;
  double bias_split = 0.5;

  /// Sorted "key = value" lines of the entries as given; the hash input.
  std::string canonical;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown or repeated
/// keys and malformed values raise ParseError with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);

/// 16 hex digits of fnv1a64(config.canonical).
std::string config_hash(const ExperimentConfig& config);

oed::OEDProblem build_problem(const ExperimentConfig& config);

/// Estimator result for explicit counts (M and R ignored by single-loop ids).
est::EstimatorResult run_estimator(const ExperimentConfig& config, const est::Counts& counts,
                                   std::optional<double> h, std::uint64_t seed);

struct PilotOptions {
  std::optional<std::vector<std::size_t>> outer_ladder;
  std::optional<std::vector<std::size_t>> inner_ladder;
  std::optional<std::size_t> S;
  std::optional<std::size_t> R;
  std::optional<std::uint64_t> seed;
};

struct PlanOptions {
  double tol = 0.0;
  double alpha = 0.05;
  bool chebyshev = false;
};

struct EstimateOptions {
  std::optional<std::string> plan;  // plan file content
  std::optional<std::size_t> N, M, S, R;
  std::optional<std::uint64_t> seed;
};

struct SweepOptions {
  std::vector<double> tols;
  double alpha = 0.05;
  bool chebyshev = false;
  std::optional<std::uint64_t> seed;
};

std::string cmd_pilot(const ExperimentConfig& config, const PilotOptions& options, std::ostream& log);
std::string cmd_plan(const std::string& pilot, const PlanOptions& options, std::ostream& log);
std::string cmd_estimate(const ExperimentConfig& config, const EstimateOptions& options, std::ostream& log);
std::string cmd_sweep(const ExperimentConfig& config, const std::string& pilot, const SweepOptions& options,
                      std::ostream& log);

/// Pilot file content back to constants; ParseError on malformed input.
alloc::PilotConstants read_pilot(const std::string& pilot);

/// Comma-separated lists as used by the flags and the config.
std::vector<double> parse_double_list(const std::string& s);
std::vector<std::size_t> parse_count_list(const std::string& s);

/// Shortest round-trip decimal form.
std::string format_double(double x);

/// Exit status for an exception escaping a command: 2 usage, 3 infeasible, 4 numerical.
int exit_code_for(const std::exception& e);

}  // namespace nestiq::cli
