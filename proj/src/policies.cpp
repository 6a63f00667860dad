#include "bidsim/policies.hpp"

#include <algorithm>
#include <cmath>

namespace bidsim {

EpisodeSchedule::EpisodeSchedule(long T) : T_(T) {
  if (T < 1) throw ConfigError("horizon must be positive");
  long cum = 0;
  for (int s = 1; cum < T; ++s) {
    double expo = 1.0 - std::pow(2.0, -s);
    long len = std::llround(std::pow(static_cast<double>(T), expo));
    len = std::max<long>(1, len);
    if (cum + len >= T) len = T - cum;  // truncated tail
    starts_.push_back(cum);
    lengths_.push_back(len);
    cum += len;
  }
}

double plug_in_bid(const NoiseModel& model, const Eigen::VectorXd& alpha,
                   const Eigen::VectorXd& x, double value) {
  double ax = alpha.dot(x);
  auto range = model.phi_range();
  double y = std::clamp(value - ax, range.first, range.second);
  double b = ax + model.virtual_phi_inverse(y);
  return std::clamp(b, 0.0, std::max(0.0, value));
}

double partial_plug_in_bid(const NoiseModel& base, const Eigen::VectorXd& mu, double rho,
                           double delta, const Eigen::VectorXd& x, double value) {
  double mx = mu.dot(x);
  auto range = base.phi_range();
  double y = std::clamp(rho * value - mx, range.first, range.second);
  double b = (mx + base.virtual_phi_inverse(y)) / rho;
  b = std::min(b, std::max(0.0, value));
  return std::max(delta, b);
}

double full_info_bid(const LogConcaveFit& fit, const Eigen::VectorXd& alpha,
                     const Eigen::VectorXd& x, double value, double grid_tol) {
  if (value <= 0.0) return 0.0;
  double ax = alpha.dot(x);
  auto util = [&](double b) { return (value - b) * fit.cdf(b - ax); };

  double lo = 0.0;
  double hi = value;
  double support_lo = ax + fit.knots().front();
  double fallback = 0.0;
  if (support_lo > lo) {
    // Part of [0, value] has zero estimated win probability: locate the
    // maximizer on a coarse grid, then refine on the positive piece.
    double best_b = 0.0, best_u = util(0.0);
    for (double b = 1e-3; b < hi + 5e-4; b += 1e-3) {
      double bb = std::min(b, hi);
      double u = util(bb);
      if (u > best_u) {
        best_u = u;
        best_b = bb;
      }
    }
    fallback = best_b;
    lo = std::max(std::max(0.0, support_lo), best_b - 1e-3);
    hi = std::min(hi, best_b + 1e-3);
    if (hi <= lo) return fallback;
  }
  for (int it = 0; it < 200 && hi - lo > grid_tol; ++it) {
    double m1 = lo + (hi - lo) / 3.0;
    double m2 = hi - (hi - lo) / 3.0;
    if (util(m1) < util(m2)) {
      lo = m1;
    } else {
      hi = m2;
    }
  }
  double b = 0.5 * (lo + hi);
  return util(b) >= util(fallback) ? b : fallback;
}

double clairvoyant_bid(const EnvironmentConfig& cfg, const Eigen::VectorXd& x) {
  return plug_in_bid(cfg.noise, cfg.alpha0, x, cfg.value_fn(x));
}

double truncated_benchmark_bid(const EnvironmentConfig& cfg, double delta,
                               const Eigen::VectorXd& x) {
  return std::max(delta, plug_in_bid(cfg.noise, cfg.alpha0, x, cfg.value_fn(x)));
}

double ClairvoyantPolicy::bid(const Eigen::VectorXd& x, double) {
  return clairvoyant_bid(cfg_, x);
}

void EpisodicPolicy::observe(const AuctionRound& round, const Observation& obs) {
  if (episode_ >= schedule_.episodes()) return;  // horizon exhausted
  xs_.push_back(round.x);
  bids_.push_back(round.bid);
  wins_.push_back(obs.win ? 1 : 0);
  ms_.push_back(obs.max_bid.value_or(std::numeric_limits<double>::quiet_NaN()));
  if (static_cast<long>(xs_.size()) < schedule_.lengths()[episode_]) return;

  EpisodeRecord record;
  record.episode = episode_ + 1;
  record.start_t = schedule_.start(episode_);
  record.length = schedule_.lengths()[episode_];
  update_estimates(record);
  records_.push_back(std::move(record));
  xs_.clear();
  bids_.clear();
  ms_.clear();
  wins_.clear();
  ++episode_;
}

BinaryBatch EpisodicPolicy::binary_buffer() const {
  long n = static_cast<long>(xs_.size());
  BinaryBatch batch;
  batch.contexts = Eigen::MatrixXd(n, n > 0 ? xs_[0].size() : 0);
  batch.bids = Eigen::VectorXd(n);
  batch.wins = Eigen::VectorXd(n);
  for (long t = 0; t < n; ++t) {
    batch.contexts.row(t) = xs_[t].transpose();
    batch.bids[t] = bids_[t];
    batch.wins[t] = wins_[t];
  }
  return batch;
}

FullInfoBatch EpisodicPolicy::full_info_buffer() const {
  long n = static_cast<long>(xs_.size());
  FullInfoBatch batch;
  batch.contexts = Eigen::MatrixXd(n, n > 0 ? xs_[0].size() : 0);
  batch.bids = Eigen::VectorXd(n);
  batch.max_bids = Eigen::VectorXd(n);
  for (long t = 0; t < n; ++t) {
    batch.contexts.row(t) = xs_[t].transpose();
    batch.bids[t] = bids_[t];
    batch.max_bids[t] = ms_[t];
  }
  return batch;
}

BinaryKnownPolicy::BinaryKnownPolicy(const EpisodeSchedule& schedule, const NoiseModel& model,
                                     int d, double W, const MinimizeOptions& opt)
    : EpisodicPolicy(schedule),
      model_(model),
      W_(W),
      opt_(opt),
      alpha_(Eigen::VectorXd::Zero(d)) {}

double BinaryKnownPolicy::bid(const Eigen::VectorXd& x, double value) {
  if (episode_ == 0) return 1.0;
  return plug_in_bid(model_, alpha_, x, value);
}

void BinaryKnownPolicy::update_estimates(EpisodeRecord& record) {
  BinaryBatch batch = binary_buffer();
  auto loss = [&](const Eigen::VectorXd& a) { return loss_binary_known(batch, model_, a); };
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

BinaryPartialPolicy::BinaryPartialPolicy(const EpisodeSchedule& schedule, const NoiseModel& base,
                                         int d, double W, double delta,
                                         const MinimizeOptions& opt)
    : EpisodicPolicy(schedule),
      base_(base),
      W_(W),
      delta_(delta),
      set_{W, 1e-3},
      opt_(opt),
      mu_(Eigen::VectorXd::Zero(d)),
      rho_(std::clamp(1.0, set_.rho_min, W)) {}

double BinaryPartialPolicy::bid(const Eigen::VectorXd& x, double value) {
  if (episode_ == 0) return 1.0;
  return partial_plug_in_bid(base_, mu_, rho_, delta_, x, value);
}

void BinaryPartialPolicy::update_estimates(EpisodeRecord& record) {
  BinaryBatch batch = binary_buffer();
  int d = static_cast<int>(mu_.size());
  auto loss = [&](const Eigen::VectorXd& p) {
    return loss_binary_partial(batch, base_, p.head(d), p[d]);
  };
  auto proj = [&](const Eigen::VectorXd& p) {
    auto projected = project_lambda(p.head(d), p[d], set_);
    Eigen::VectorXd q(d + 1);
    q << projected.first, projected.second;
    return q;
  };
  Eigen::VectorXd init(d + 1);
  init << mu_, rho_;
  try {
    MinimizeResult r = minimize(loss, proj, init, opt_);
    mu_ = r.point.head(d);
    rho_ = r.point[d];
    record.loss = r.value;
  } catch (const ConvergenceError&) {
    record.flagged = true;
    record.loss = loss(init).value;
  }
  record.alpha_hat = mu_ / rho_;
  record.rho_hat = rho_;
}

FullInfoPolicy::FullInfoPolicy(const EpisodeSchedule& schedule, int d, double W,
                               int refit_period, double grid_tol, const MinimizeOptions& opt,
                               const LogConcaveFitOptions& fit_opt)
    : EpisodicPolicy(schedule),
      W_(W),
      refit_period_(refit_period),
      grid_tol_(grid_tol),
      opt_(opt),
      fit_opt_(fit_opt),
      alpha_(Eigen::VectorXd::Zero(d)) {}

double FullInfoPolicy::bid(const Eigen::VectorXd& x, double value) {
  if (episode_ == 0 || !fit_) return 1.0;
  return full_info_bid(*fit_, alpha_, x, value, grid_tol_);
}

void FullInfoPolicy::update_estimates(EpisodeRecord& record) {
  FullInfoBatch batch = full_info_buffer();
  auto provider = [this](const std::vector<double>& samples, const LogConcaveFit* warm) {
    if (warm == nullptr && fit_) warm = &*fit_;
    return fit_logconcave(samples, fit_opt_, warm);
  };
  FullInfoObjective objective(batch, provider, refit_period_);
  auto loss = [&](const Eigen::VectorXd& a) { return objective(a); };
  auto proj = [&](const Eigen::VectorXd& v) { return project_l1(v, W_); };
  auto hook = [&](const Eigen::VectorXd& a) { return objective.on_accept(a); };
  try {
    MinimizeResult r = minimize(loss, proj, alpha_, opt_, hook);
    alpha_ = r.point;
    record.loss = r.value;
    Eigen::VectorXd resid = batch.max_bids - batch.contexts * alpha_;
    std::vector<double> samples(resid.data(), resid.data() + resid.size());
    fit_ = fit_logconcave(samples, fit_opt_, objective.has_fit() ? &objective.fit() : nullptr);
  } catch (const ConvergenceError&) {
    record.flagged = true;
    if (!fit_ && batch.rounds() > 0) {
      // First episode with no carried fit: bidding needs some distribution,
      // so fit the residuals at the kept coefficient estimate.
      Eigen::VectorXd resid = batch.max_bids - batch.contexts * alpha_;
      std::vector<double> samples(resid.data(), resid.data() + resid.size());
      fit_ = fit_logconcave(samples, fit_opt_, nullptr);
    }
  }
  record.alpha_hat = alpha_;
  record.fit = fit_;
}

}  // namespace bidsim
