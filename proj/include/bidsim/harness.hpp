#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/environment.hpp"
#include "bidsim/policies.hpp"

namespace bidsim {

enum class PolicyKind { Clairvoyant, FixedBid, BinaryKnown, BinaryPartial, FullInfo };

struct PolicyOptions {
  double delta = 0.01;     // bid floor for the scale-free learner
  double grid_tol = 1e-6;  // full-info bid search precision
  int refit_period = 5;    // accepted steps between CDF refits
  NoiseModel base = NoiseModel::gaussian(1.0);  // base family, scale-free learner
  double fixed_bid = 1.0;
  MinimizeOptions optimizer;
  LogConcaveFitOptions fit;
};

// One episode update, flattened for CSV output.
struct EpisodeRow {
  int episode = 0;
  long start_t = 0;
  long length = 0;
  double alpha_err_l2 = std::numeric_limits<double>::quiet_NaN();
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;
};

// One run's regret accounting. Instantaneous regret is computed with the true
// noise CDF (expected utility), keeping Monte Carlo noise out of the primary
// metric; realized utilities are carried as diagnostics. Per-round vectors are
// filled only when the experiment records rounds.
struct RegretTrace {
  long horizon = 0;
  int replication = 0;
  std::uint64_t seed = 0;
  double final_regret = 0.0;
  // Min eigenvalue of (1/T) sum (x_t; -b_t)(x_t; -b_t)^T over the run, the
  // strong-convexity witness for the scale-free learner's loss.
  double min_aug_eig = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> inst_regret;
  std::vector<double> cum_regret;
  std::vector<double> bids;
  std::vector<double> benchmark_bids;
  std::vector<char> wins;
  std::vector<double> realized_utility;
  std::vector<double> benchmark_realized_utility;
  std::vector<EpisodeRow> episodes;
  // Per-episode sup |Fhat - F| on a grid over [-(1+W), 1+W] (full-info runs).
  std::vector<double> fit_sup_errors;
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  PolicyKind policy = PolicyKind::Clairvoyant;
  PolicyOptions options;
  std::vector<long> horizons = {1000, 3162, 10000, 31623, 100000};
  int replications = 10;
  std::uint64_t seed_base = 1;
  bool record_rounds = true;  // keep per-round vectors in the traces
  std::string out_dir;        // optional output directory used by the CLI

  void validate() const;  // ConfigError on invalid sweep or environment
};

// Least-squares fit of log R(T) against log T.
struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

struct HorizonSummary {
  long horizon = 0;
  double mean_regret = 0.0;
  double std_regret = 0.0;  // sample standard deviation across replications
};

// Runs one (horizon, replication) cell. The run seed is derived from
// (seed_base, horizon, replication), so cells are independent of sweep order.
// The benchmark is the per-round clairvoyant bid, except for the scale-free
// learner which is measured against the delta-truncated benchmark.
RegretTrace run_single(const ExperimentConfig& cfg, long horizon, int replication);

// Full sweep: one trace per (horizon, replication), horizons outermost.
std::vector<RegretTrace> run_experiment(const ExperimentConfig& cfg);

// Mean and sample standard deviation of final regret per horizon.
std::vector<HorizonSummary> summarize(const std::vector<RegretTrace>& traces);

// Core scaling fit; requires >= 3 distinct horizons (InsufficientDataError)
// and positive regrets (NumericalError: zero regret has no log).
ScalingFit fit_scaling(const std::vector<long>& horizons,
                       const std::vector<double>& regrets);

// Groups traces by horizon, averages final regret over replications, fits.
ScalingFit fit_scaling(const std::vector<RegretTrace>& traces);

// Hard instance for the square-root regret floor: Rademacher +-1 coordinates
// (raw, norm sqrt(d)), Gaussian noise, constant valuation above the
// delta + sigma/g((delta+W)/sigma) threshold of the construction.
struct LowerBoundInstance {
  int d = 2;
  Eigen::VectorXd alpha0 = (Eigen::VectorXd(2) << 0.15, 0.0).finished();
  double W = 0.15;
  double sigma = 0.2;
  double delta = 0.05;
  double value = 0.9;

  EnvironmentConfig to_environment(std::uint64_t seed) const;
};

// Plug-in bidder with an episodically refreshed estimate: the estimate is a
// projected least-squares fit of the observed maxima on the contexts, frozen
// within each episode, so the bid at round t depends only on rounds < t. This
// is the policy-class member driven against the hard instance.
class PlugInLsPolicy : public EpisodicPolicy {
 public:
  PlugInLsPolicy(const EpisodeSchedule& schedule, const NoiseModel& model, int d, double W,
                 const MinimizeOptions& opt = {});
  double bid(const Eigen::VectorXd& x, double value) override;
  FeedbackMode feedback_mode() const override { return FeedbackMode::FullInfo; }
  const Eigen::VectorXd& alpha_hat() const { return alpha_; }

 protected:
  void update_estimates(EpisodeRecord& record) override;

 private:
  NoiseModel model_;
  double W_;
  MinimizeOptions opt_;
  Eigen::VectorXd alpha_;
};

struct LowerBoundResult {
  std::vector<RegretTrace> traces;
  ScalingFit fit;
};

// Sweeps the plug-in policy over the hard instance and fits the regret
// scaling. This is a one-sided empirical check: a measured slope near 1/2 is
// consistent with the square-root floor, not a proof of it.
LowerBoundResult run_lower_bound_instance(const std::vector<long>& horizons, int replications,
                                          std::uint64_t seed_base,
                                          const LowerBoundInstance& inst = {});

// Writes trace/episode CSVs for each trace, a scaling CSV (header-only when
// there is nothing to aggregate), and a manifest.json with the config echo,
// per-trace seeds, commit id, and wall time. Numeric cells use %.17g, so the
// CSVs are byte-identical across reruns of the same config; the manifest's
// wall time is not. IoError on unwritable paths.
void write_outputs(const std::vector<RegretTrace>& traces, const ExperimentConfig& cfg,
                   const std::string& out_dir);

}  // namespace bidsim
