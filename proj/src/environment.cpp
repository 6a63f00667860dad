#include "bidsim/environment.hpp"

#include <algorithm>
#include <cmath>

namespace bidsim {

ValueFn ValueFn::make_constant(double v) {
  ValueFn f;
  f.kind = Kind::Constant;
  f.constant = v;
  return f;
}

ValueFn ValueFn::clipped_linear(const Eigen::VectorXd& beta) {
  ValueFn f;
  f.kind = Kind::ClippedLinear;
  f.beta = beta;
  return f;
}

double ValueFn::operator()(const Eigen::VectorXd& x) const {
  if (kind == Kind::Constant) return constant;
  return std::clamp(beta.dot(x), 0.0, 1.0);
}

void EnvironmentConfig::validate() const {
  if (d < 1) throw ConfigError("context dimension must be positive");
  if (alpha0.size() != d) throw ConfigError("alpha0 dimension does not match d");
  if (W <= 0.0) throw ConfigError("W must be positive");
  if (alpha0.lpNorm<1>() > W + 1e-12) throw ConfigError("alpha0 exceeds the L1 budget W");
  if (value_fn.kind == ValueFn::Kind::Constant &&
      (value_fn.constant < 0.0 || value_fn.constant > 1.0)) {
    throw ConfigError("constant valuation must lie in [0,1]");
  }
  if (value_fn.kind == ValueFn::Kind::ClippedLinear && value_fn.beta.size() != d) {
    throw ConfigError("valuation coefficient dimension does not match d");
  }
  if (context_dist == ContextDist::RademacherRaw && !allow_raw_contexts) {
    throw ConfigError("raw Rademacher contexts violate the unit-norm contract; "
                      "enable allow_raw_contexts for the lower-bound instance");
  }
  if (context_dist == ContextDist::TruncatedGaussian && context_sigma <= 0.0) {
    throw ConfigError("context_sigma must be positive");
  }
}

namespace {

Eigen::VectorXd draw_context(const EnvironmentConfig& cfg, CounterRng& rng) {
  int d = cfg.d;
  Eigen::VectorXd x(d);
  switch (cfg.context_dist) {
    case ContextDist::UnitBallUniform: {
      // Gaussian direction times a radius with density proportional to r^(d-1).
      double n2 = 0.0;
      for (int j = 0; j < d; ++j) {
        x[j] = rng.next_gaussian();
        n2 += x[j] * x[j];
      }
      double r = std::pow(rng.next_double(), 1.0 / d);
      x *= (n2 > 0.0 ? r / std::sqrt(n2) : 0.0);
      return x;
    }
    case ContextDist::TruncatedGaussian: {
      for (int tries = 0; tries < 10000; ++tries) {
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) {
          x[j] = cfg.context_sigma * rng.next_gaussian();
          n2 += x[j] * x[j];
        }
        if (n2 <= 1.0) return x;
      }
      return x / x.norm();  // unreachable for sane sigma; keeps the draw total
    }
    case ContextDist::RademacherScaled: {
      double s = 1.0 / std::sqrt(static_cast<double>(d));
      for (int j = 0; j < d; ++j) x[j] = (rng.next_u64() & 1) ? s : -s;
      return x;
    }
    case ContextDist::RademacherRaw: {
      for (int j = 0; j < d; ++j) x[j] = (rng.next_u64() & 1) ? 1.0 : -1.0;
      return x;
    }
  }
  throw ConfigError("unknown context distribution");
}

}  // namespace

RoundDraw draw_round(const EnvironmentConfig& cfg, long t) {
  CounterRng rng(CounterRng::derive(cfg.seed, static_cast<std::uint64_t>(t)), 0);
  RoundDraw draw;
  draw.x = draw_context(cfg, rng);
  draw.value = cfg.value_fn(draw.x);
  draw.m = cfg.alpha0.dot(draw.x) + cfg.noise.sample(rng);
  return draw;
}

AuctionRound resolve_round(long t, const RoundDraw& draw, double bid) {
  AuctionRound r;
  r.t = t;
  r.x = draw.x;
  r.value = draw.value;
  r.bid = bid;
  r.m = draw.m;
  r.win = bid >= draw.m;
  return r;
}

Observation feedback(const AuctionRound& round, FeedbackMode mode) {
  Observation obs;
  obs.win = round.win;
  if (mode == FeedbackMode::FullInfo) obs.max_bid = round.m;
  return obs;
}

double expected_utility(const EnvironmentConfig& cfg, double b, const Eigen::VectorXd& x) {
  return (cfg.value_fn(x) - b) * cfg.noise.cdf(b - cfg.alpha0.dot(x));
}

}  // namespace bidsim
