#include "bidsim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#if __has_include("bidsim/build_info.hpp")
#include "bidsim/build_info.hpp"
#else
namespace bidsim {
inline constexpr const char* kGitCommit = "unknown";
}
#endif

namespace bidsim {
namespace {

const char* policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Clairvoyant: return "clairvoyant";
    case PolicyKind::FixedBid: return "fixed_bid";
    case PolicyKind::BinaryKnown: return "binary_known";
    case PolicyKind::BinaryPartial: return "binary_partial";
    case PolicyKind::FullInfo: return "full_info";
  }
  return "unknown";
}

const char* noise_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Logistic: return "logistic";
    case NoiseKind::Laplace: return "laplace";
    case NoiseKind::Uniform: return "uniform";
  }
  return "unknown";
}

const char* context_name(ContextDist dist) {
  switch (dist) {
    case ContextDist::UnitBallUniform: return "unit_ball_uniform";
    case ContextDist::TruncatedGaussian: return "truncated_gaussian";
    case ContextDist::RademacherScaled: return "rademacher_scaled";
    case ContextDist::RademacherRaw: return "rademacher_raw";
  }
  return "unknown";
}

std::unique_ptr<Policy> make_policy(const ExperimentConfig& cfg, const EnvironmentConfig& env,
                                    const EpisodeSchedule& schedule) {
  const PolicyOptions& opt = cfg.options;
  switch (cfg.policy) {
    case PolicyKind::Clairvoyant:
      return std::make_unique<ClairvoyantPolicy>(env);
    case PolicyKind::FixedBid:
      return std::make_unique<FixedBidPolicy>(opt.fixed_bid);
    case PolicyKind::BinaryKnown:
      return std::make_unique<BinaryKnownPolicy>(schedule, env.noise, env.d, env.W,
                                                 opt.optimizer);
    case PolicyKind::BinaryPartial:
      return std::make_unique<BinaryPartialPolicy>(schedule, opt.base, env.d, env.W, opt.delta,
                                                   opt.optimizer);
    case PolicyKind::FullInfo:
      return std::make_unique<FullInfoPolicy>(schedule, env.d, env.W, opt.refit_period,
                                              opt.grid_tol, opt.optimizer, opt.fit);
  }
  throw ConfigError("unknown policy kind");
}

// Shared round loop: drives the policy, scores it against the per-round
// benchmark, and accumulates the augmented Gram matrix.
RegretTrace drive_run(const EnvironmentConfig& env, Policy& pol, bool truncated_benchmark,
                      double delta, long T, bool record) {
  RegretTrace tr;
  tr.horizon = T;
  tr.seed = env.seed;
  if (record) {
    tr.inst_regret.reserve(T);
    tr.cum_regret.reserve(T);
    tr.bids.reserve(T);
    tr.benchmark_bids.reserve(T);
    tr.wins.reserve(T);
    tr.realized_utility.reserve(T);
    tr.benchmark_realized_utility.reserve(T);
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(env.d + 1, env.d + 1);
  Eigen::VectorXd aug(env.d + 1);
  double cum = 0.0;
  for (long t = 0; t < T; ++t) {
    RoundDraw draw = draw_round(env, t);
    double b = pol.bid(draw.x, draw.value);
    AuctionRound round = resolve_round(t, draw, b);
    pol.observe(round, feedback(round, pol.feedback_mode()));
    double bstar = truncated_benchmark ? truncated_benchmark_bid(env, delta, draw.x)
                                       : clairvoyant_bid(env, draw.x);
    double r = expected_utility(env, bstar, draw.x) - expected_utility(env, b, draw.x);
    cum += r;
    aug.head(env.d) = draw.x;
    aug[env.d] = -b;
    gram.selfadjointView<Eigen::Lower>().rankUpdate(aug);
    if (record) {
      tr.inst_regret.push_back(r);
      tr.cum_regret.push_back(cum);
      tr.bids.push_back(b);
      tr.benchmark_bids.push_back(bstar);
      tr.wins.push_back(round.win ? 1 : 0);
      tr.realized_utility.push_back(round.win ? draw.value - b : 0.0);
      tr.benchmark_realized_utility.push_back(bstar >= draw.m ? draw.value - bstar : 0.0);
    }
  }
  tr.final_regret = cum;
  gram /= static_cast<double>(T);
  Eigen::MatrixXd sym = gram.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  tr.min_aug_eig = eig.eigenvalues().minCoeff();
  return tr;
}

void fill_episode_rows(RegretTrace& tr, const Policy& pol, const EnvironmentConfig& env) {
  for (const EpisodeRecord& rec : pol.episode_records()) {
    EpisodeRow row;
    row.episode = rec.episode;
    row.start_t = rec.start_t;
    row.length = rec.length;
    if (rec.alpha_hat.size() == env.alpha0.size()) {
      row.alpha_err_l2 = (rec.alpha_hat - env.alpha0).norm();
    }
    row.rho_hat = rec.rho_hat;
    row.loss = rec.loss;
    row.flagged = rec.flagged;
    tr.episodes.push_back(row);
    if (rec.fit) {
      double hi = 1.0 + env.W;
      double sup = 0.0;
      for (double z = -hi; z <= hi + 1e-12; z += 0.01) {
        sup = std::max(sup, std::fabs(rec.fit->cdf(z) - env.noise.cdf(z)));
      }
      tr.fit_sup_errors.push_back(sup);
    }
  }
}

std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  environment.validate();
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (horizons.empty()) throw ConfigError("at least one horizon is required");
  for (std::size_t i = 0; i + 1 < horizons.size(); ++i) {
    if (horizons[i] > horizons[i + 1]) throw ConfigError("horizons must be sorted ascending");
  }
  for (long T : horizons) {
    if (T < 1) throw ConfigError("horizons must be positive");
  }
  if (policy == PolicyKind::BinaryPartial && options.delta <= 0.0) {
    throw ConfigError("bid floor delta must be positive");
  }
}

RegretTrace run_single(const ExperimentConfig& cfg, long horizon, int replication) {
  cfg.validate();
  EnvironmentConfig env = cfg.environment;
  env.seed = CounterRng::derive(cfg.seed_base, static_cast<std::uint64_t>(horizon),
                                static_cast<std::uint64_t>(replication));
  EpisodeSchedule schedule(horizon);
  std::unique_ptr<Policy> pol = make_policy(cfg, env, schedule);
  bool truncated = cfg.policy == PolicyKind::BinaryPartial;
  RegretTrace tr =
      drive_run(env, *pol, truncated, cfg.options.delta, horizon, cfg.record_rounds);
  tr.replication = replication;
  fill_episode_rows(tr, *pol, env);
  return tr;
}

std::vector<RegretTrace> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RegretTrace> traces;
  traces.reserve(cfg.horizons.size() * cfg.replications);
  for (long T : cfg.horizons) {
    for (int rep = 0; rep < cfg.replications; ++rep) {
      traces.push_back(run_single(cfg, T, rep));
    }
  }
  return traces;
}

std::vector<HorizonSummary> summarize(const std::vector<RegretTrace>& traces) {
  std::vector<HorizonSummary> out;
  for (const RegretTrace& tr : traces) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const HorizonSummary& h) { return h.horizon == tr.horizon; });
    if (it == out.end()) {
      out.push_back({tr.horizon, 0.0, 0.0});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const HorizonSummary& a, const HorizonSummary& b) { return a.horizon < b.horizon; });
  for (HorizonSummary& h : out) {
    double sum = 0.0;
    long n = 0;
    for (const RegretTrace& tr : traces) {
      if (tr.horizon == h.horizon) {
        sum += tr.final_regret;
        ++n;
      }
    }
    h.mean_regret = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const RegretTrace& tr : traces) {
      if (tr.horizon == h.horizon) {
        double d = tr.final_regret - h.mean_regret;
        ss += d * d;
      }
    }
    h.std_regret = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  return out;
}

ScalingFit fit_scaling(const std::vector<long>& horizons, const std::vector<double>& regrets) {
  if (horizons.size() != regrets.size()) {
    throw ConfigError("horizon and regret lists must have equal length");
  }
  std::vector<long> distinct = horizons;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw InsufficientDataError("scaling fit needs at least 3 distinct horizons");
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  double n = static_cast<double>(horizons.size());
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(regrets[i] > 0.0)) {
      throw NumericalError("scaling fit needs positive regrets");
    }
    double lx = std::log(static_cast<double>(horizons[i]));
    double ly = std::log(regrets[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
  }
  double vx = sxx - sx * sx / n;
  double vy = syy - sy * sy / n;
  double cxy = sxy - sx * sy / n;
  ScalingFit fit;
  fit.slope = cxy / vx;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.r_squared = vy > 0.0 ? (cxy * cxy) / (vx * vy) : 1.0;
  return fit;
}

ScalingFit fit_scaling(const std::vector<RegretTrace>& traces) {
  std::vector<HorizonSummary> sums = summarize(traces);
  std::vector<long> horizons;
  std::vector<double> means;
  for (const HorizonSummary& h : sums) {
    horizons.push_back(h.horizon);
    means.push_back(h.mean_regret);
  }
  return fit_scaling(horizons, means);
}

EnvironmentConfig LowerBoundInstance::to_environment(std::uint64_t seed) const {
  EnvironmentConfig env;
  env.d = d;
  env.alpha0 = alpha0;
  env.W = W;
  env.noise = NoiseModel::gaussian(sigma);
  env.context_dist = ContextDist::RademacherRaw;
  env.allow_raw_contexts = true;
  env.value_fn = ValueFn::make_constant(value);
  env.seed = seed;
  return env;
}

PlugInLsPolicy::PlugInLsPolicy(const EpisodeSchedule& schedule, const NoiseModel& model, int d,
                               double W, const MinimizeOptions& opt)
    : EpisodicPolicy(schedule),
      model_(model),
      W_(W),
      opt_(opt),
      alpha_(Eigen::VectorXd::Zero(d)) {}

double PlugInLsPolicy::bid(const Eigen::VectorXd& x, double value) {
  return plug_in_bid(model_, alpha_, x, value);
}

void PlugInLsPolicy::update_estimates(EpisodeRecord& record) {
  FullInfoBatch batch = full_info_buffer();
  long n = batch.rounds();
  auto loss = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd resid = batch.max_bids - batch.contexts * a;
    LossEvaluation e;
    e.value = resid.squaredNorm() / static_cast<double>(n);
    e.gradient = -2.0 / static_cast<double>(n) * (batch.contexts.transpose() * resid);
    return e;
  };
  auto proj = [&](const Eigen::VectorXd& v) { return project_l1(v, W_); };
  try {
    MinimizeResult r = minimize(loss, proj, alpha_, opt_);
    alpha_ = r.point;
    record.loss = r.value;
  } catch (const ConvergenceError&) {
    record.flagged = true;
    record.loss = loss(alpha_).value;
  }
  record.alpha_hat = alpha_;
}

LowerBoundResult run_lower_bound_instance(const std::vector<long>& horizons, int replications,
                                          std::uint64_t seed_base,
                                          const LowerBoundInstance& inst) {
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (horizons.empty()) throw ConfigError("at least one horizon is required");
  LowerBoundResult out;
  for (long T : horizons) {
    for (int rep = 0; rep < replications; ++rep) {
      std::uint64_t seed = CounterRng::derive(seed_base, static_cast<std::uint64_t>(T),
                                              static_cast<std::uint64_t>(rep));
      EnvironmentConfig env = inst.to_environment(seed);
      env.validate();
      EpisodeSchedule schedule(T);
      PlugInLsPolicy pol(schedule, env.noise, env.d, env.W);
      RegretTrace tr = drive_run(env, pol, false, 0.0, T, false);
      tr.replication = rep;
      fill_episode_rows(tr, pol, env);
      out.traces.push_back(std::move(tr));
    }
  }
  std::vector<long> distinct = horizons;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() >= 3) {
    out.fit = fit_scaling(out.traces);
  }
  return out;
}

void write_outputs(const std::vector<RegretTrace>& traces, const ExperimentConfig& cfg,
                   const std::string& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());

  for (const RegretTrace& tr : traces) {
    std::string tag = "T" + std::to_string(tr.horizon) + "_rep" + std::to_string(tr.replication);
    if (!tr.inst_regret.empty()) {
      std::filesystem::path path = dir / ("trace_" + tag + ".csv");
      std::ofstream out = open_for_write(path);
      out << "t,inst_regret,cum_regret,bid,benchmark_bid,win,realized_utility,"
             "benchmark_realized_utility\n";
      for (std::size_t t = 0; t < tr.inst_regret.size(); ++t) {
        out << t << ',' << format_cell(tr.inst_regret[t]) << ',' << format_cell(tr.cum_regret[t])
            << ',' << format_cell(tr.bids[t]) << ',' << format_cell(tr.benchmark_bids[t]) << ','
            << int(tr.wins[t]) << ',' << format_cell(tr.realized_utility[t]) << ','
            << format_cell(tr.benchmark_realized_utility[t]) << '\n';
      }
      finish_write(out, path);
    }
    if (!tr.episodes.empty()) {
      std::filesystem::path path = dir / ("episodes_" + tag + ".csv");
      std::ofstream out = open_for_write(path);
      out << "episode,start_t,length,alpha_err_l2,rho_hat,loss\n";
      for (const EpisodeRow& row : tr.episodes) {
        out << row.episode << ',' << row.start_t << ',' << row.length << ','
            << format_cell(row.alpha_err_l2) << ',' << format_cell(row.rho_hat) << ','
            << format_cell(row.loss) << '\n';
      }
      finish_write(out, path);
    }
  }

  {
    std::filesystem::path path = dir / "scaling.csv";
    std::ofstream out = open_for_write(path);
    out << "T,mean_R,std_R,slope,intercept,r2\n";
    if (!traces.empty()) {
      std::vector<HorizonSummary> sums = summarize(traces);
      bool have_fit = false;
      ScalingFit fit;
      if (sums.size() >= 3) {
        bool positive = true;
        for (const HorizonSummary& h : sums) positive = positive && h.mean_regret > 0.0;
        if (positive) {
          fit = fit_scaling(traces);
          have_fit = true;
        }
      }
      for (const HorizonSummary& h : sums) {
        out << h.horizon << ',' << format_cell(h.mean_regret) << ','
            << format_cell(h.std_regret) << ',';
        if (have_fit) {
          out << format_cell(fit.slope) << ',' << format_cell(fit.intercept) << ','
              << format_cell(fit.r_squared);
        } else {
          out << "nan,nan,nan";
        }
        out << '\n';
      }
    }
    finish_write(out, path);
  }

  {
    nlohmann::json env;
    env["d"] = cfg.environment.d;
    env["alpha0"] = std::vector<double>(cfg.environment.alpha0.data(),
                                        cfg.environment.alpha0.data() + cfg.environment.alpha0.size());
    env["W"] = cfg.environment.W;
    env["noise"] = {{"kind", noise_name(cfg.environment.noise.kind())},
                    {"param", cfg.environment.noise.param()}};
    env["context_dist"] = context_name(cfg.environment.context_dist);
    env["context_sigma"] = cfg.environment.context_sigma;
    if (cfg.environment.value_fn.kind == ValueFn::Kind::Constant) {
      env["value_fn"] = {{"kind", "constant"}, {"constant", cfg.environment.value_fn.constant}};
    } else {
      env["value_fn"] = {{"kind", "clipped_linear"},
                         {"beta", std::vector<double>(
                                      cfg.environment.value_fn.beta.data(),
                                      cfg.environment.value_fn.beta.data() +
                                          cfg.environment.value_fn.beta.size())}};
    }

    nlohmann::json manifest;
    manifest["policy"] = policy_name(cfg.policy);
    manifest["environment"] = env;
    manifest["options"] = {{"delta", cfg.options.delta},
                           {"grid_tol", cfg.options.grid_tol},
                           {"refit_period", cfg.options.refit_period},
                           {"base_noise", {{"kind", noise_name(cfg.options.base.kind())},
                                           {"param", cfg.options.base.param()}}},
                           {"fixed_bid", cfg.options.fixed_bid}};
    manifest["horizons"] = cfg.horizons;
    manifest["replications"] = cfg.replications;
    manifest["seed_base"] = cfg.seed_base;
    manifest["record_rounds"] = cfg.record_rounds;
    manifest["commit"] = kGitCommit;
    nlohmann::json runs = nlohmann::json::array();
    for (const RegretTrace& tr : traces) {
      runs.push_back({{"horizon", tr.horizon},
                      {"replication", tr.replication},
                      {"seed", tr.seed},
                      {"final_regret", tr.final_regret},
                      {"min_aug_eig", tr.min_aug_eig}});
    }
    manifest["runs"] = runs;
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest["wall_time_seconds"] = wall;

    std::filesystem::path path = dir / "manifest.json";
    std::ofstream out = open_for_write(path);
    out << manifest.dump(2) << '\n';
    finish_write(out, path);
  }
}

}  // namespace bidsim
