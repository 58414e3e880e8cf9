#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nestiq/cli.hpp"

using namespace nestiq;
using namespace nestiq::cli;
using Json = nlohmann::json;

namespace {

const char* kLinear = R"(
model = linear_gaussian
estimator = rdlqmcis
seed = 5
pilot.outer_ladder = 64, 128, 256, 512
pilot.S = 8
pilot.inner_ladder = 1, 2, 4, 8
pilot.inner_N = 32
pilot.R = 8
)";

std::ostringstream sink;

std::string pilot_for(const std::string& text) { return cmd_pilot(parse_config(text), {}, sink); }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Config, PkDefaults) {
  const auto c = parse_config("model = pk\n");
  EXPECT_EQ(c.design_values.size(), 15u);
  EXPECT_DOUBLE_EQ(c.design_values[0], 0.94);
  ASSERT_EQ(c.noise_variances.size(), 15u);
  EXPECT_DOUBLE_EQ(c.noise_variances[3], 1e-2);
  EXPECT_EQ(c.estimator, EstimatorId::rdlqmcis);
  EXPECT_EQ(c.sampler.kind, est::SamplerKind::sobol_owen);
  EXPECT_EQ(c.prior.dimension(), 3u);
  const auto e = parse_config("model = pk\ndesign = even\nprior.reading = stddev\n");
  EXPECT_DOUBLE_EQ(e.design_values[1], 1.9);
  EXPECT_DOUBLE_EQ(std::get<stats::LogNormal>(e.prior.components()[0]).sigma_log, 0.05);
}

TEST(Config, LinearAndSyntheticModels) {
  const auto c = parse_config("model = linear_gaussian\nmodel.J = 1, 0.5; 0, 2\nprior = normal(0,1), uniform(-1, 1)\n"
                              "noise.variance = 0.5, 2\nN_e = 3\nestimator = dlmc\n");
  EXPECT_EQ(c.J.rows(), 2);
  EXPECT_DOUBLE_EQ(c.J(0, 1), 0.5);
  EXPECT_TRUE(c.prior.has_uniform());
  EXPECT_EQ(c.N_e, 3u);
  EXPECT_EQ(c.sampler.kind, est::SamplerKind::mc);
  const auto s = parse_config("model = synthetic\nmodel.h = 0.25\ndesign.values = 0.3\nestimator = rdlqmc\n");
  ASSERT_TRUE(s.h);
  EXPECT_DOUBLE_EQ(*s.h, 0.25);
  EXPECT_EQ(s.design_values, std::vector<double>{0.3});
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("model = pk\nnoise.varience = 1\n"), ParseError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ParseError);
  EXPECT_THROW(parse_config("model pk\n"), ParseError);
  EXPECT_THROW(parse_config("model = fem\n"), ParseError);
  EXPECT_THROW(parse_config("N_e = 0\n"), ParseError);
  EXPECT_THROW(parse_config("noise.variance = -1\n"), ParseError);
  EXPECT_THROW(parse_config("noise.variance = 1, 2\n"), ParseError);
  EXPECT_THROW(parse_config("estimator = dlmc\nsampler = sobol\n"), ParseError);
  EXPECT_THROW(parse_config("estimator = rdlqmc\nsampler = mc\n"), ParseError);
  EXPECT_THROW(parse_config("model = pk\nprior = normal(0,1)\n"), ParseError);
  EXPECT_THROW(parse_config("model = linear_gaussian\nprior = normal(0,1), normal(0,1)\n"), ParseError);
  EXPECT_THROW(parse_config("model = linear_gaussian\nprior = cauchy(0,1)\n"), ParseError);
  EXPECT_THROW(parse_config("design = explicit\n"), ParseError);
  EXPECT_THROW(parse_config("truncation.enabled = yes\n"), ParseError);
  try {
    parse_config("\n# comment\nmodel = pk\nbogus = 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(Config, HashIgnoresLayoutButNotValues) {
  const auto a = parse_config("model = pk\nseed = 3\n");
  const auto b = parse_config("# same\n  seed=3   \n\nmodel   =   pk # trailing\n");
  const auto c = parse_config("model = pk\nseed = 4\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Lists, ParseAndFormat) {
  EXPECT_EQ(parse_double_list("0.1, 0.05,0.025"), (std::vector<double>{0.1, 0.05, 0.025}));
  EXPECT_TRUE(parse_double_list("").empty());
  EXPECT_EQ(parse_count_list("1,2,4"), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_THROW(parse_count_list("1,x"), ParseError);
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(0.0025), "0.0025");
  EXPECT_EQ(format_double(2048.0), "2048");
}

TEST(Pilot, RefusesSingleReplicateAndBadLadders) {
  const auto c = parse_config(kLinear);
  PilotOptions o;
  o.S = 1;
  EXPECT_THROW(cmd_pilot(c, o, sink), UsageError);
  PilotOptions r;
  r.R = 1;
  EXPECT_THROW(cmd_pilot(c, r, sink), UsageError);
  PilotOptions l;
  l.outer_ladder = std::vector<std::size_t>{64, 96};
  EXPECT_THROW(cmd_pilot(c, l, sink), UsageError);
}

TEST(Pilot, ConstantsInRangeAndDeterministic) {
  const std::string a = pilot_for(kLinear);
  const std::string b = pilot_for(kLinear);
  EXPECT_EQ(a, b);
  const Json j = Json::parse(a);
  EXPECT_EQ(j["config_hash"], config_hash(parse_config(kLinear)));
  EXPECT_EQ(j["seed"], 5);
  const double beta = j["constants"]["beta"], delta = j["constants"]["delta"];
  EXPECT_GE(beta, 0.0);
  EXPECT_LE(beta, 1.0);
  EXPECT_GE(delta, 0.0);
  EXPECT_LE(delta, 1.0);
  EXPECT_EQ(j["outer_rungs"].size(), 4u);
  const auto k = read_pilot(a);
  EXPECT_DOUBLE_EQ(k.beta, beta);
  PilotOptions o;
  o.seed = 6;
  EXPECT_NE(cmd_pilot(parse_config(kLinear), o, sink), a);
}

TEST(Pilot, PkDefaultsGiveRatesInRange) {
  const Json j = Json::parse(pilot_for("model = pk\n"));
  for (const char* k : {"beta", "delta"}) {
    const double v = j["constants"][k];
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Pilot, SingleLoopHasNoInnerConstants) {
  const Json j = Json::parse(pilot_for("model = linear_gaussian\nestimator = rqmcla\n"
                                       "pilot.outer_ladder = 64,128,256\npilot.S = 8\n"));
  EXPECT_FALSE(j["nested"].get<bool>());
  EXPECT_EQ(j["constants"]["C_Q2"], 0.0);
  EXPECT_TRUE(j["inner_rungs"].empty());
}

TEST(Plan, ConfidenceConstants) {
  const std::string p = pilot_for(kLinear);
  const Json a = Json::parse(cmd_plan(p, {0.01, 0.05, false}, sink));
  EXPECT_NEAR(a["C_alpha"].get<double>(), 1.959964, 5e-7);
  const Json b = Json::parse(cmd_plan(p, {0.01, 0.05, true}, sink));
  EXPECT_NEAR(b["C_alpha"].get<double>(), std::sqrt(20.0), 1e-12);
  EXPECT_TRUE(a["h_star"].is_null());
  EXPECT_TRUE(a.contains("M_star"));
  EXPECT_EQ(a["config_hash"], Json::parse(p)["config_hash"]);
}

TEST(Plan, HalvingTolGrowsN) {
  const std::string p = pilot_for(kLinear);
  const double beta = Json::parse(p)["constants"]["beta"];
  for (double tol : {0.02, 0.01, 0.005}) {
    const Json a = Json::parse(cmd_plan(p, {tol, 0.05, false}, sink));
    const Json b = Json::parse(cmd_plan(p, {tol / 2, 0.05, false}, sink));
    const double ratio = b["N_star"].get<double>() / a["N_star"].get<double>();
    EXPECT_GE(ratio, std::pow(2.0, 2.0 / (1.0 + beta)) / 2.0);
  }
}

TEST(Plan, RejectsBadInput) {
  const std::string p = pilot_for(kLinear);
  EXPECT_THROW(cmd_plan(p, {-1.0, 0.05, false}, sink), UsageError);
  EXPECT_THROW(cmd_plan(p, {0.01, 1.5, false}, sink), UsageError);
  EXPECT_THROW(cmd_plan("{}", {0.01, 0.05, false}, sink), ParseError);
  EXPECT_THROW(cmd_plan("not json", {0.01, 0.05, false}, sink), ParseError);
  EXPECT_THROW(cmd_plan(p, {1e-30, 0.05, false}, sink), InfeasibleError);
}

TEST(Estimate, LinearPlanNearOracle) {
  const auto c = parse_config(kLinear);
  const std::string p = cmd_plan(pilot_for(kLinear), {0.01, 0.05, false}, sink);
  EstimateOptions o;
  o.plan = p;
  const Json j = Json::parse(cmd_estimate(c, o, sink));
  EXPECT_NEAR(j["estimate"].get<double>(), 0.5 * std::log(2.0), 0.01);
  EXPECT_TRUE(j["stderr"].is_null());
  EXPECT_EQ(j["counts"]["N"], Json::parse(p)["N_star"]);
  EXPECT_EQ(j["config_hash"], config_hash(c));
}

TEST(Estimate, ExplicitCountsWithinStderr) {
  for (const char* est : {"rdlqmc", "rdlqmcis", "dlmc", "dlmcis", "mc", "rqmc", "mcla", "rqmcla"}) {
    const auto c = parse_config(std::string("model = linear_gaussian\nestimator = ") + est + "\n");
    EstimateOptions o;
    o.N = 1024;
    if (is_nested(c.estimator)) o.M = 64;
    o.S = 8;
    const Json j = Json::parse(cmd_estimate(c, o, sink));
    EXPECT_LT(std::abs(j["estimate"].get<double>() - 0.5 * std::log(2.0)), 4.0 * j["stderr"].get<double>() + 1e-12)
        << est;
  }
}

TEST(Estimate, SingleLoopHasNoInnerCount) {
  const auto c = parse_config("model = pk\nestimator = mcla\n");
  EstimateOptions o;
  o.N = 2048;
  const Json j = Json::parse(cmd_estimate(c, o, sink));
  EXPECT_FALSE(j["counts"].contains("M"));
  EXPECT_EQ(j["counts"]["N"], 2048);
  o.M = 4;
  EXPECT_THROW(cmd_estimate(c, o, sink), UsageError);
}

TEST(Estimate, UsageAndMismatchErrors) {
  const auto c = parse_config(kLinear);
  EXPECT_THROW(cmd_estimate(c, {}, sink), UsageError);
  EstimateOptions nm;
  nm.N = 64;
  EXPECT_THROW(cmd_estimate(c, nm, sink), UsageError);
  const auto u = parse_config("model = linear_gaussian\nprior = uniform(-1,1)\nestimator = dlmcis\n");
  EstimateOptions o;
  o.N = 16;
  o.M = 4;
  try {
    cmd_estimate(u, o, sink);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(exit_code_for(e), 2);
  }
  const auto pk = parse_config("model = pk\nestimator = rqmc\n");
  EstimateOptions q;
  q.N = 16;
  EXPECT_THROW(cmd_estimate(pk, q, sink), DomainError);
  EstimateOptions wrong;
  wrong.plan = cmd_plan(pilot_for(kLinear), {0.05, 0.05, false}, sink);
  EXPECT_THROW(cmd_estimate(parse_config("model = linear_gaussian\n"), wrong, sink), UsageError);
}

TEST(Estimate, SyntheticUsesPlannedLevel) {
  const std::string cfg =
      "model = synthetic\nmodel.J = 1\ndesign.values = 0.2\nestimator = rdlqmc\ndiscretization.C_disc = 0.05\n"
      "discretization.h_max = 0.5\npilot.outer_ladder = 64,128,256\npilot.S = 8\npilot.inner_ladder = 4,8,16,32\n"
      "pilot.inner_N = 32\npilot.R = 8\n";
  const auto c = parse_config(cfg);
  const std::string plan = cmd_plan(cmd_pilot(c, {}, sink), {0.05, 0.05, false}, sink);
  const Json pj = Json::parse(plan);
  ASSERT_FALSE(pj["h_star"].is_null());
  EstimateOptions o;
  o.plan = plan;
  const Json j = Json::parse(cmd_estimate(c, o, sink));
  EXPECT_EQ(j["h"], pj["h_star"]);
  const double h = pj["h_star"], n = pj["N_star"], m = pj["M_star"];
  EXPECT_DOUBLE_EQ(j["work"].get<double>(), n * m * std::pow(h, -2.0));
}

TEST(Sweep, RowsHeaderAndErrors) {
  const auto c = parse_config(kLinear);
  const std::string p = pilot_for(kLinear);
  SweepOptions o;
  o.tols = {0.1, 0.05, 0.025};
  const auto rows = lines(cmd_sweep(c, p, o, sink));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "tol,kappa_star,N_star,M_star,h_star,predicted_work,estimate,stderr,realized_work,seed,error");
  double last = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::istringstream in(rows[i]);
    for (std::string x; std::getline(in, x, ',');) f.push_back(x);
    const double w = std::stod(f[5]);
    EXPECT_GE(w, last);
    last = w;
    EXPECT_EQ(f[5], f[8]);
  }
  EXPECT_EQ(rows[1].substr(0, 4), "0.1,");

  SweepOptions empty;
  EXPECT_EQ(lines(cmd_sweep(c, p, empty, sink)).size(), 1u);

  SweepOptions bad;
  bad.tols = {0.05, 1e-30, 0.05};
  const auto br = lines(cmd_sweep(c, p, bad, sink));
  ASSERT_EQ(br.size(), 4u);
  EXPECT_EQ(br[1].back(), ',');  // empty error field
  EXPECT_NE(br[2].find("tolerance"), std::string::npos);
  // The plan columns of row 3 repeat row 1.
  auto plan_part = [](const std::string& r) {
    std::size_t pos = 0;
    for (int k = 0; k < 6; ++k) pos = r.find(',', pos) + 1;
    return r.substr(0, pos);
  };
  EXPECT_EQ(plan_part(br[1]), plan_part(br[3]));
}

TEST(Sweep, RejectsForeignPilot) {
  const std::string p = pilot_for(kLinear);
  SweepOptions o;
  o.tols = {0.1};
  EXPECT_THROW(cmd_sweep(parse_config("model = linear_gaussian\n"), p, o, sink), UsageError);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(UsageError("x")), 2);
  EXPECT_EQ(exit_code_for(ParseError("x")), 2);
  EXPECT_EQ(exit_code_for(InfeasibleError("x", "variance")), 3);
  EXPECT_EQ(exit_code_for(NumericalError("x")), 4);
  EXPECT_EQ(exit_code_for(FitQualityError("x")), 4);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}
