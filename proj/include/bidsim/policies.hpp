#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/convex_opt.hpp"
#include "bidsim/environment.hpp"
#include "bidsim/logconcave.hpp"
#include "bidsim/noise_model.hpp"

namespace bidsim {

// Episode lengths T_s = round(T^(1 - 2^-s)) with the final episode truncated
// so the lengths sum exactly to the horizon.
class EpisodeSchedule {
 public:
  explicit EpisodeSchedule(long T);

  long horizon() const { return T_; }
  int episodes() const { return static_cast<int>(lengths_.size()); }
  const std::vector<long>& lengths() const { return lengths_; }
  long start(int episode) const { return starts_[episode]; }

 private:
  long T_ = 0;
  std::vector<long> lengths_;
  std::vector<long> starts_;
};

// One finished episode's update outcome, kept for diagnostics and traces.
struct EpisodeRecord {
  int episode = 0;  // 1-based index of the episode that just ended
  long start_t = 0;
  long length = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd alpha_hat;  // implied estimate of the linear weight
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;  // optimizer failed; previous estimate kept
  std::optional<LogConcaveFit> fit;  // noise estimate snapshot (full info)
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual double bid(const Eigen::VectorXd& x, double value) = 0;
  virtual void observe(const AuctionRound& round, const Observation& obs) = 0;
  virtual FeedbackMode feedback_mode() const { return FeedbackMode::Binary; }
  const std::vector<EpisodeRecord>& episode_records() const { return records_; }

 protected:
  std::vector<EpisodeRecord> records_;
};

// b = clamp(a.x + phi^-1(value - a.x), [0, value]); the inversion argument is
// clamped into phi's range so bounded-support noise resolves to the support
// endpoint (win probability exactly 0 or 1 beyond it).
double plug_in_bid(const NoiseModel& model, const Eigen::VectorXd& alpha,
                   const Eigen::VectorXd& x, double value);

// b = max{delta, (mu.x + phi0^-1(rho value - mu.x)) / rho} for the scaled
// family F(z) = F0(rho z).
double partial_plug_in_bid(const NoiseModel& base, const Eigen::VectorXd& mu, double rho,
                           double delta, const Eigen::VectorXd& x, double value);

// argmax over [0, value] of (value - b) Fhat(b - a.x): ternary search on the
// log-concave objective, with a 1e-3 grid fallback when part of the range has
// zero estimated win probability.
double full_info_bid(const LogConcaveFit& fit, const Eigen::VectorXd& alpha,
                     const Eigen::VectorXd& x, double value, double grid_tol = 1e-6);

// Per-round optimal bid under full knowledge of the environment.
double clairvoyant_bid(const EnvironmentConfig& cfg, const Eigen::VectorXd& x);

// Delta-truncated benchmark for the partially-known-noise setting.
double truncated_benchmark_bid(const EnvironmentConfig& cfg, double delta,
                               const Eigen::VectorXd& x);

class ClairvoyantPolicy : public Policy {
 public:
  explicit ClairvoyantPolicy(const EnvironmentConfig& cfg) : cfg_(cfg) {}
  double bid(const Eigen::VectorXd& x, double value) override;
  void observe(const AuctionRound&, const Observation&) override {}

 private:
  EnvironmentConfig cfg_;
};

class FixedBidPolicy : public Policy {
 public:
  explicit FixedBidPolicy(double b) : b_(b) {}
  double bid(const Eigen::VectorXd&, double) override { return b_; }
  void observe(const AuctionRound&, const Observation&) override {}

 private:
  double b_;
};

// Shared episodic mechanics: buffer one episode of observations, fire the
// subclass update at each boundary, clear, advance.
class EpisodicPolicy : public Policy {
 public:
  void observe(const AuctionRound& round, const Observation& obs) override;
  int current_episode() const { return episode_; }
  const EpisodeSchedule& schedule() const { return schedule_; }

 protected:
  explicit EpisodicPolicy(const EpisodeSchedule& schedule) : schedule_(schedule) {}
  virtual void update_estimates(EpisodeRecord& record) = 0;

  BinaryBatch binary_buffer() const;
  FullInfoBatch full_info_buffer() const;

  EpisodeSchedule schedule_;
  int episode_ = 0;
  std::vector<Eigen::VectorXd> xs_;
  std::vector<double> bids_;
  std::vector<double> ms_;
  std::vector<char> wins_;
};

// Binary feedback, known noise: episode 1 bids 1, then plug-in bids at the
// episode-wise constrained MLE of the linear weight.
class BinaryKnownPolicy : public EpisodicPolicy {
 public:
  BinaryKnownPolicy(const EpisodeSchedule& schedule, const NoiseModel& model, int d, double W,
                    const MinimizeOptions& opt = {});
  double bid(const Eigen::VectorXd& x, double value) override;
  const Eigen::VectorXd& alpha_hat() const { return alpha_; }

 protected:
  void update_estimates(EpisodeRecord& record) override;

 private:
  NoiseModel model_;
  double W_;
  MinimizeOptions opt_;
  Eigen::VectorXd alpha_;
};

// Binary feedback, noise known up to scale: estimates (mu, rho) = (alpha rho,
// 1/sigma) over the cone Lambda, bids through the base quantile machinery.
class BinaryPartialPolicy : public EpisodicPolicy {
 public:
  BinaryPartialPolicy(const EpisodeSchedule& schedule, const NoiseModel& base, int d, double W,
                      double delta = 0.01, const MinimizeOptions& opt = {});
  double bid(const Eigen::VectorXd& x, double value) override;
  const Eigen::VectorXd& mu_hat() const { return mu_; }
  double rho_hat() const { return rho_; }

 protected:
  void update_estimates(EpisodeRecord& record) override;

 private:
  NoiseModel base_;
  double W_;
  double delta_;
  LambdaSet set_;
  MinimizeOptions opt_;
  Eigen::VectorXd mu_;
  double rho_;
};

// Full information, unknown noise: alternating estimation of the linear
// weight and a log-concave residual density, bids by direct utility search.
class FullInfoPolicy : public EpisodicPolicy {
 public:
  FullInfoPolicy(const EpisodeSchedule& schedule, int d, double W, int refit_period = 5,
                 double grid_tol = 1e-6, const MinimizeOptions& opt = {},
                 const LogConcaveFitOptions& fit_opt = {});
  double bid(const Eigen::VectorXd& x, double value) override;
  FeedbackMode feedback_mode() const override { return FeedbackMode::FullInfo; }
  const Eigen::VectorXd& alpha_hat() const { return alpha_; }
  bool has_fit() const { return fit_.has_value(); }
  const LogConcaveFit& fit() const { return *fit_; }

 protected:
  void update_estimates(EpisodeRecord& record) override;

 private:
  double W_;
  int refit_period_;
  double grid_tol_;
  MinimizeOptions opt_;
  LogConcaveFitOptions fit_opt_;
  Eigen::VectorXd alpha_;
  std::optional<LogConcaveFit> fit_;
};

}  // namespace bidsim
