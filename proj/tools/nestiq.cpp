// nestiq: pilot, plan, estimate and sweep commands over a key = value config.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nestiq/cli.hpp"

namespace cli = nestiq::cli;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cli::UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cli::UsageError("cannot write '" + path + "'");
  out << content;
  if (!out) throw cli::UsageError("write to '" + path + "' failed");
}

template <class T>
std::optional<T> opt_if(const CLI::Option* o, const T& v) {
  return o->count() ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested-integration estimators, pilot-based allocation and EIG estimation"};
  app.require_subcommand(1);

  std::string config_path, pilot_path, plan_path, out_path, outer_ladder, inner_ladder, tols;
  std::size_t S = 0, R = 0, N = 0, M = 0;
  std::uint64_t seed = 0;
  double tol = 0.0, alpha = 0.05;
  bool chebyshev = false;

  auto* pilot = app.add_subcommand("pilot", "fit the rate constants from pilot runs");
  pilot->add_option("config", config_path, "config file")->required();
  auto* p_outer = pilot->add_option("--outer-ladder", outer_ladder, "outer sample counts, e.g. 128,256,512");
  auto* p_inner = pilot->add_option("--inner-ladder", inner_ladder, "inner sample counts, e.g. 1,2,4,8");
  auto* p_S = pilot->add_option("--S", S, "outer randomizations");
  auto* p_R = pilot->add_option("--R", R, "inner randomizations");
  auto* p_seed = pilot->add_option("--seed", seed, "master seed (overrides the config)");
  pilot->add_option("--out", out_path, "output file (default stdout)");

  auto* plan = app.add_subcommand("plan", "near-optimal N, M (and h) for a tolerance");
  plan->add_option("--pilot", pilot_path, "pilot file")->required();
  plan->add_option("--tol", tol, "tolerance")->required();
  plan->add_option("--alpha", alpha, "confidence level alpha");
  plan->add_flag("--chebyshev", chebyshev, "use the Chebyshev constant 1/sqrt(alpha)");
  plan->add_option("--out", out_path, "output file (default stdout)");

  auto* estimate = app.add_subcommand("estimate", "run the configured estimator");
  estimate->add_option("config", config_path, "config file")->required();
  auto* e_plan = estimate->add_option("--plan", plan_path, "plan file");
  auto* e_N = estimate->add_option("--N", N, "outer samples");
  auto* e_M = estimate->add_option("--M", M, "inner samples");
  auto* e_S = estimate->add_option("--S", S, "outer randomizations (default 1)");
  auto* e_R = estimate->add_option("--R", R, "inner randomizations (default 1)");
  auto* e_seed = estimate->add_option("--seed", seed, "master seed (overrides the config)");
  estimate->add_option("--out", out_path, "output file (default stdout)");

  auto* sweep = app.add_subcommand("sweep", "plan and estimate over a list of tolerances");
  sweep->add_option("config", config_path, "config file")->required();
  sweep->add_option("--pilot", pilot_path, "pilot file")->required();
  sweep->add_option("--tols", tols, "comma-separated tolerances")->required();
  sweep->add_option("--alpha", alpha, "confidence level alpha");
  sweep->add_flag("--chebyshev", chebyshev, "use the Chebyshev constant 1/sqrt(alpha)");
  auto* s_seed = sweep->add_option("--seed", seed, "master seed (overrides the config)");
  sweep->add_option("--out", out_path, "CSV output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (pilot->parsed()) {
      cli::PilotOptions o;
      if (p_outer->count()) o.outer_ladder = cli::parse_count_list(outer_ladder);
      if (p_inner->count()) o.inner_ladder = cli::parse_count_list(inner_ladder);
      o.S = opt_if(p_S, S);
      o.R = opt_if(p_R, R);
      o.seed = opt_if(p_seed, seed);
      write_output(out_path, cli::cmd_pilot(cli::load_config(config_path), o, std::cerr));
    } else if (plan->parsed()) {
      cli::PlanOptions o{tol, alpha, chebyshev};
      write_output(out_path, cli::cmd_plan(read_file(pilot_path), o, std::cerr));
    } else if (estimate->parsed()) {
      cli::EstimateOptions o;
      if (e_plan->count()) o.plan = read_file(plan_path);
      o.N = opt_if(e_N, N);
      o.M = opt_if(e_M, M);
      o.S = opt_if(e_S, S);
      o.R = opt_if(e_R, R);
      o.seed = opt_if(e_seed, seed);
      write_output(out_path, cli::cmd_estimate(cli::load_config(config_path), o, std::cerr));
    } else if (sweep->parsed()) {
      cli::SweepOptions o;
      o.tols = cli::parse_double_list(tols);
      o.alpha = alpha;
      o.chebyshev = chebyshev;
      o.seed = opt_if(s_seed, seed);
      const auto config = cli::load_config(config_path);
      write_output(out_path, cli::cmd_sweep(config, read_file(pilot_path), o, std::cerr));
    }
  } catch (const std::exception& e) {
    std::cerr << "nestiq: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return 0;
}
