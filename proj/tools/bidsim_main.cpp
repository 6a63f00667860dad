#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bidsim/harness.hpp"
#include "bidsim/rng.hpp"

#if __has_include("bidsim/build_info.hpp")
#include "bidsim/build_info.hpp"
#else
namespace bidsim {
inline constexpr const char* kGitCommit = "unknown";
}
#endif

namespace {

using bidsim::EnvironmentConfig;
using bidsim::ExperimentConfig;
using bidsim::NoiseModel;
using bidsim::PolicyKind;
using bidsim::RegretTrace;
using bidsim::ScalingFit;
using bidsim::ValueFn;
using nlohmann::json;

PolicyKind parse_policy(const std::string& name) {
  if (name == "clairvoyant") return PolicyKind::Clairvoyant;
  if (name == "fixed_bid") return PolicyKind::FixedBid;
  if (name == "binary_known") return PolicyKind::BinaryKnown;
  if (name == "binary_partial") return PolicyKind::BinaryPartial;
  if (name == "full_info") return PolicyKind::FullInfo;
  throw bidsim::ConfigError("unknown policy: " + name);
}

NoiseModel parse_noise(const json& j) {
  std::string kind = j.value("kind", "gaussian");
  double param = j.value("param", 0.5);
  if (kind == "gaussian") return NoiseModel::gaussian(param);
  if (kind == "logistic") return NoiseModel::logistic(param);
  if (kind == "laplace") return NoiseModel::laplace(param);
  if (kind == "uniform") return NoiseModel::uniform(param);
  throw bidsim::ConfigError("unknown noise kind: " + kind);
}

bidsim::ContextDist parse_context(const std::string& name) {
  if (name == "unit_ball_uniform") return bidsim::ContextDist::UnitBallUniform;
  if (name == "truncated_gaussian") return bidsim::ContextDist::TruncatedGaussian;
  if (name == "rademacher_scaled") return bidsim::ContextDist::RademacherScaled;
  if (name == "rademacher_raw") return bidsim::ContextDist::RademacherRaw;
  throw bidsim::ConfigError("unknown context distribution: " + name);
}

Eigen::VectorXd parse_vector(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw bidsim::ConfigError("unknown key \"" + item.key() + "\" in " + where);
    }
  }
}

// The config file mirrors the manifest echo: a manifest's "environment" and
// "options" sections are valid config input. Missing keys keep defaults.
ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.environment.d = 3;
  cfg.environment.alpha0 = (Eigen::VectorXd(3) << 0.3, -0.2, 0.1).finished();
  cfg.environment.value_fn = ValueFn::make_constant(0.8);
  cfg.environment.noise = NoiseModel::gaussian(0.5);

  reject_unknown_keys(j,
                      {"policy", "environment", "options", "horizons", "replications",
                       "seed_base", "record_rounds", "out_dir"},
                      "config");
  if (j.contains("policy")) cfg.policy = parse_policy(j["policy"].get<std::string>());
  if (j.contains("environment")) {
    const json& e = j["environment"];
    reject_unknown_keys(e,
                        {"d", "alpha0", "W", "noise", "context_dist", "context_sigma",
                         "value_fn", "seed", "allow_raw_contexts"},
                        "environment");
    if (e.contains("alpha0")) {
      cfg.environment.alpha0 = parse_vector(e["alpha0"]);
      cfg.environment.d = static_cast<int>(cfg.environment.alpha0.size());
    }
    if (e.contains("d")) cfg.environment.d = e["d"].get<int>();
    cfg.environment.W = e.value("W", cfg.environment.W);
    if (e.contains("noise")) cfg.environment.noise = parse_noise(e["noise"]);
    if (e.contains("context_dist")) {
      cfg.environment.context_dist = parse_context(e["context_dist"].get<std::string>());
    }
    cfg.environment.context_sigma = e.value("context_sigma", cfg.environment.context_sigma);
    cfg.environment.allow_raw_contexts =
        e.value("allow_raw_contexts", cfg.environment.allow_raw_contexts);
    if (e.contains("value_fn")) {
      const json& v = e["value_fn"];
      reject_unknown_keys(v, {"kind", "constant", "beta"}, "value_fn");
      std::string kind = v.value("kind", "constant");
      if (kind == "constant") {
        cfg.environment.value_fn = ValueFn::make_constant(v.value("constant", 0.8));
      } else if (kind == "clipped_linear") {
        if (!v.contains("beta")) throw bidsim::ConfigError("clipped_linear needs beta");
        cfg.environment.value_fn = ValueFn::clipped_linear(parse_vector(v["beta"]));
      } else {
        throw bidsim::ConfigError("unknown value_fn kind: " + kind);
      }
    }
  }
  if (j.contains("options")) {
    const json& o = j["options"];
    reject_unknown_keys(o, {"delta", "grid_tol", "refit_period", "base_noise", "fixed_bid"},
                        "options");
    cfg.options.delta = o.value("delta", cfg.options.delta);
    cfg.options.grid_tol = o.value("grid_tol", cfg.options.grid_tol);
    cfg.options.refit_period = o.value("refit_period", cfg.options.refit_period);
    if (o.contains("base_noise")) cfg.options.base = parse_noise(o["base_noise"]);
    cfg.options.fixed_bid = o.value("fixed_bid", cfg.options.fixed_bid);
  }
  if (j.contains("horizons")) cfg.horizons = j["horizons"].get<std::vector<long>>();
  cfg.replications = j.value("replications", cfg.replications);
  cfg.seed_base = j.value("seed_base", cfg.seed_base);
  cfg.record_rounds = j.value("record_rounds", cfg.record_rounds);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return parse_config(json::object());
  std::ifstream in(path);
  if (!in) throw bidsim::IoError("cannot read config: " + path);
  json j;
  in >> j;
  return parse_config(j);
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int replications = 0;
  bool quiet = false;

  void attach(CLI::App* cmd, bool with_config = true) {
    if (with_config) cmd->add_option("--config", config_path, "JSON experiment config");
    cmd->add_option("--out", out_dir, "output directory for CSVs and the manifest");
    cmd->add_option("--seed", seed, "override the seed base");
    cmd->add_option("--replications", replications, "override the replication count");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  }

  ExperimentConfig load_and_override() const {
    ExperimentConfig cfg = load_config(config_path);
    if (seed != 0) cfg.seed_base = seed;
    if (replications != 0) cfg.replications = replications;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) cfg.out_dir = "out";
    return cfg;
  }
};

void print_summary(const std::vector<RegretTrace>& traces, bool quiet) {
  if (quiet) return;
  for (const auto& h : bidsim::summarize(traces)) {
    std::printf("T=%-8ld meanR=%12.4f  stdR=%10.4f\n", h.horizon, h.mean_regret, h.std_regret);
  }
}

void print_fit_if_possible(const std::vector<RegretTrace>& traces, bool quiet) {
  std::vector<bidsim::HorizonSummary> sums = bidsim::summarize(traces);
  if (sums.size() < 3) return;
  for (const auto& h : sums) {
    if (!(h.mean_regret > 0.0)) return;
  }
  ScalingFit fit = bidsim::fit_scaling(traces);
  if (!quiet) {
    std::printf("log-log fit: slope=%.4f intercept=%.4f r2=%.4f\n", fit.slope, fit.intercept,
                fit.r_squared);
  }
}

// Round log reconstruction: draws are a pure function of (seed, t), so the
// logged stream is regenerated instead of being carried in memory.
void dump_rounds(const std::vector<RegretTrace>& traces, const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  for (const RegretTrace& tr : traces) {
    if (tr.bids.empty()) continue;
    EnvironmentConfig env = cfg.environment;
    env.seed = tr.seed;
    std::filesystem::path path =
        dir / ("rounds_T" + std::to_string(tr.horizon) + "_rep" +
               std::to_string(tr.replication) + ".csv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw bidsim::IoError("cannot open for writing: " + path.string());
    out << "t";
    for (int k = 0; k < env.d; ++k) out << ",x_" << k;
    out << ",value,bid,m,win\n";
    char buf[32];
    auto cell = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf;
    };
    for (long t = 0; t < tr.horizon; ++t) {
      bidsim::RoundDraw draw = bidsim::draw_round(env, t);
      out << t;
      for (int k = 0; k < env.d; ++k) {
        out << ',';
        cell(draw.x[k]);
      }
      out << ',';
      cell(draw.value);
      out << ',';
      cell(tr.bids[t]);
      out << ',';
      cell(draw.m);
      out << ',' << int(tr.wins[t]) << '\n';
    }
    out.flush();
    if (!out) throw bidsim::IoError("write failed: " + path.string());
  }
}

int cmd_run(const CommonFlags& flags, bool rounds) {
  ExperimentConfig cfg = flags.load_and_override();
  cfg.validate();
  std::vector<RegretTrace> traces = bidsim::run_experiment(cfg);
  print_summary(traces, flags.quiet);
  print_fit_if_possible(traces, flags.quiet);
  bidsim::write_outputs(traces, cfg, cfg.out_dir);
  if (rounds) dump_rounds(traces, cfg);
  if (!flags.quiet) std::printf("outputs: %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_scaling(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.load_and_override();
  cfg.record_rounds = false;  // sweeps keep only the aggregates
  cfg.validate();
  if (cfg.horizons.size() < 3) {
    throw bidsim::ConfigError("scaling needs at least 3 horizons");
  }
  std::vector<RegretTrace> traces = bidsim::run_experiment(cfg);
  print_summary(traces, flags.quiet);
  ScalingFit fit = bidsim::fit_scaling(traces);
  std::printf("slope=%.6f intercept=%.6f r2=%.6f\n", fit.slope, fit.intercept, fit.r_squared);
  bidsim::write_outputs(traces, cfg, cfg.out_dir);
  if (!flags.quiet) std::printf("outputs: %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_lower_bound(const CommonFlags& flags) {
  std::vector<long> horizons = {1000, 3162, 10000, 31623, 100000};
  int replications = flags.replications > 0 ? flags.replications : 10;
  std::uint64_t seed_base = flags.seed != 0 ? flags.seed : 1;
  auto t0 = std::chrono::steady_clock::now();
  bidsim::LowerBoundResult res =
      bidsim::run_lower_bound_instance(horizons, replications, seed_base);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_summary(res.traces, flags.quiet);
  std::printf("slope=%.6f intercept=%.6f r2=%.6f\n", res.fit.slope, res.fit.intercept,
              res.fit.r_squared);

  if (!flags.out_dir.empty()) {
    std::filesystem::path dir(flags.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw bidsim::IoError("cannot create output directory: " + dir.string());
    {
      std::ofstream out(dir / "scaling.csv", std::ios::binary | std::ios::trunc);
      if (!out) throw bidsim::IoError("cannot open for writing: scaling.csv");
      out << "T,mean_R,std_R,slope,intercept,r2\n";
      char buf[32];
      auto cell = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
      };
      for (const auto& h : bidsim::summarize(res.traces)) {
        out << h.horizon << ',';
        cell(h.mean_regret);
        out << ',';
        cell(h.std_regret);
        out << ',';
        cell(res.fit.slope);
        out << ',';
        cell(res.fit.intercept);
        out << ',';
        cell(res.fit.r_squared);
        out << '\n';
      }
      out.flush();
      if (!out) throw bidsim::IoError("write failed: scaling.csv");
    }
    bidsim::LowerBoundInstance inst;
    json manifest;
    manifest["experiment"] = "lower_bound";
    manifest["instance"] = {{"d", inst.d},
                            {"alpha0", std::vector<double>(inst.alpha0.data(),
                                                           inst.alpha0.data() + inst.alpha0.size())},
                            {"W", inst.W},
                            {"sigma", inst.sigma},
                            {"delta", inst.delta},
                            {"value", inst.value}};
    manifest["horizons"] = horizons;
    manifest["replications"] = replications;
    manifest["seed_base"] = seed_base;
    manifest["fit"] = {{"slope", res.fit.slope},
                       {"intercept", res.fit.intercept},
                       {"r_squared", res.fit.r_squared}};
    json runs = json::array();
    for (const RegretTrace& tr : res.traces) {
      runs.push_back({{"horizon", tr.horizon},
                      {"replication", tr.replication},
                      {"seed", tr.seed},
                      {"final_regret", tr.final_regret}});
    }
    manifest["runs"] = runs;
    manifest["commit"] = bidsim::kGitCommit;
    manifest["wall_time_seconds"] = wall;
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw bidsim::IoError("cannot open for writing: manifest.json");
    out << manifest.dump(2) << '\n';
    out.flush();
    if (!out) throw bidsim::IoError("write failed: manifest.json");
    if (!flags.quiet) std::printf("outputs: %s\n", flags.out_dir.c_str());
  }
  return 0;
}

int check(bool ok, const char* name, int& failures) {
  std::printf("%s - %s\n", ok ? "ok  " : "FAIL", name);
  if (!ok) ++failures;
  return failures;
}

// Fast invariant sweep: determinism, accounting, schedule bookkeeping, and
// the plug-in identities, printed one line per check.
int cmd_selftest(bool quiet) {
  (void)quiet;
  int failures = 0;

  {
    bool ok = true;
    for (long T : {1L, 2L, 57L, 1000L, 31623L, 100000L}) {
      bidsim::EpisodeSchedule s(T);
      long sum = 0;
      for (long len : s.lengths()) {
        ok = ok && len > 0;
        sum += len;
      }
      ok = ok && sum == T;
      for (int k = 0; k + 2 < s.episodes(); ++k) {
        ok = ok && s.lengths()[k] <= s.lengths()[k + 1];
      }
    }
    check(ok, "episode lengths partition every horizon", failures);
  }

  ExperimentConfig cfg;
  cfg.environment.d = 3;
  cfg.environment.alpha0 = (Eigen::VectorXd(3) << 0.3, -0.2, 0.1).finished();
  cfg.environment.noise = NoiseModel::gaussian(0.5);
  cfg.environment.value_fn = ValueFn::make_constant(0.8);
  cfg.horizons = {500};
  cfg.replications = 1;

  {
    cfg.policy = PolicyKind::Clairvoyant;
    RegretTrace tr = bidsim::run_single(cfg, 500, 0);
    bool ok = true;
    for (double r : tr.cum_regret) ok = ok && r <= 1e-6;
    check(ok, "clairvoyant run accrues no regret", failures);
  }

  {
    cfg.policy = PolicyKind::BinaryKnown;
    RegretTrace a = bidsim::run_single(cfg, 500, 0);
    RegretTrace b = bidsim::run_single(cfg, 500, 0);
    bool ok = a.bids == b.bids && a.final_regret == b.final_regret;
    check(ok, "identical seeds reproduce identical runs", failures);

    double sum = 0.0;
    bool exact = true;
    bool nonneg = true;
    for (std::size_t t = 0; t < a.inst_regret.size(); ++t) {
      sum += a.inst_regret[t];
      exact = exact && a.cum_regret[t] == sum;
      nonneg = nonneg && a.inst_regret[t] >= -1e-9;
    }
    check(exact, "cumulative regret equals prefix sums exactly", failures);
    check(nonneg, "instantaneous regret never beats the benchmark", failures);
  }

  {
    bidsim::CounterRng rng(2024, 0);
    EnvironmentConfig env = cfg.environment;
    env.W = 2.5;
    double rho0 = 2.0;  // sigma 0.5 under a unit-scale base family
    bool ok = true;
    for (int i = 0; i < 200; ++i) {
      Eigen::VectorXd x(3);
      for (int k = 0; k < 3; ++k) x[k] = (2.0 * rng.next_double() - 1.0) / std::sqrt(3.0);
      double direct = bidsim::plug_in_bid(env.noise, env.alpha0, x, 0.8);
      double truth = bidsim::clairvoyant_bid(env, x);
      ok = ok && std::fabs(direct - truth) <= 1e-9;
      double scaled = bidsim::partial_plug_in_bid(NoiseModel::gaussian(1.0),
                                                  rho0 * env.alpha0, rho0, 0.01, x, 0.8);
      double trunc = bidsim::truncated_benchmark_bid(env, 0.01, x);
      ok = ok && std::fabs(scaled - trunc) <= 1e-8;
    }
    check(ok, "plug-in bids at the true parameters match the benchmarks", failures);
  }

  std::printf(failures == 0 ? "selftest passed\n" : "selftest FAILED (%d)\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for learned bidding in repeated first-price auctions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bidsim::kGitCommit));

  CommonFlags run_flags;
  bool run_rounds = false;
  CLI::App* run = app.add_subcommand("run", "execute an experiment config");
  run_flags.attach(run);
  run->add_flag("--dump-rounds", run_rounds, "also write per-round draw logs");

  CommonFlags scaling_flags;
  CLI::App* scaling = app.add_subcommand("scaling", "sweep horizons and fit the regret slope");
  scaling_flags.attach(scaling);

  CommonFlags lb_flags;
  CLI::App* lower = app.add_subcommand("lower-bound", "run the hard sign-flip instance");
  lb_flags.attach(lower, false);

  bool st_quiet = false;
  CLI::App* selftest = app.add_subcommand("selftest", "run the built-in invariant checks");
  selftest->add_flag("--quiet", st_quiet, "suppress progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_flags, run_rounds);
    if (scaling->parsed()) return cmd_scaling(scaling_flags);
    if (lower->parsed()) return cmd_lower_bound(lb_flags);
    if (selftest->parsed()) return cmd_selftest(st_quiet);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
