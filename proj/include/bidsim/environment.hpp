#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "bidsim/errors.hpp"
#include "bidsim/noise_model.hpp"
#include "bidsim/rng.hpp"

namespace bidsim {

// Context distributions. RademacherRaw draws +-1 coordinates and violates the
// unit-norm contract; it exists for the lower-bound instance only and must be
// enabled explicitly.
enum class ContextDist { UnitBallUniform, TruncatedGaussian, RademacherScaled, RademacherRaw };

// Valuation beta_0: either a constant in [0,1] or a linear form clipped to
// [0,1]. The valuation is known to the bidder and shared with the policies.
struct ValueFn {
  enum class Kind { Constant, ClippedLinear } kind = Kind::Constant;
  double constant = 1.0;
  Eigen::VectorXd beta;

  static ValueFn make_constant(double v);
  static ValueFn clipped_linear(const Eigen::VectorXd& beta);
  double operator()(const Eigen::VectorXd& x) const;
};

// Synthetic auction: m_t = alpha0.x_t + z_t with z from the noise model.
struct EnvironmentConfig {
  int d = 1;
  Eigen::VectorXd alpha0;
  double W = 1.0;
  NoiseModel noise = NoiseModel::gaussian(0.5);
  ContextDist context_dist = ContextDist::UnitBallUniform;
  double context_sigma = 0.5;  // per-coordinate scale for TruncatedGaussian
  ValueFn value_fn;
  std::uint64_t seed = 1;
  bool allow_raw_contexts = false;

  void validate() const;  // throws ConfigError on violated invariants
};

struct RoundDraw {
  Eigen::VectorXd x;
  double value = 0.0;
  double m = 0.0;
};

struct AuctionRound {
  long t = 0;
  Eigen::VectorXd x;
  double value = 0.0;
  double bid = 0.0;
  double m = 0.0;
  bool win = false;
};

enum class FeedbackMode { Binary, FullInfo };

struct Observation {
  bool win = false;
  std::optional<double> max_bid;  // present under full information only
};

// Deterministic function of (cfg.seed, t): rounds can be drawn in any order.
RoundDraw draw_round(const EnvironmentConfig& cfg, long t);

// Ties go to the learner: win iff bid >= m.
AuctionRound resolve_round(long t, const RoundDraw& draw, double bid);

Observation feedback(const AuctionRound& round, FeedbackMode mode);

// u(b, x) = (beta_0(x) - b) F(b - alpha0.x) under the true noise CDF.
double expected_utility(const EnvironmentConfig& cfg, double b, const Eigen::VectorXd& x);

}  // namespace bidsim
