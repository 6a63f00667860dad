#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/environment.hpp"
#include "bidsim/policies.hpp"
#include "bidsim/rng.hpp"

using bidsim::AuctionRound;
using bidsim::BinaryKnownPolicy;
using bidsim::BinaryPartialPolicy;
using bidsim::CounterRng;
using bidsim::EnvironmentConfig;
using bidsim::EpisodeSchedule;
using bidsim::FullInfoPolicy;
using bidsim::LogConcaveFit;
using bidsim::NoiseModel;
using bidsim::Policy;
using bidsim::ValueFn;
using Eigen::VectorXd;

namespace {

VectorXd unit_ball_point(CounterRng& rng, int d) {
  VectorXd x(d);
  double n2 = 0.0;
  for (int j = 0; j < d; ++j) {
    x[j] = rng.next_gaussian();
    n2 += x[j] * x[j];
  }
  x *= std::pow(rng.next_double(), 1.0 / d) / std::sqrt(n2);
  return x;
}

VectorXd l1_point(CounterRng& rng, int d, double W) {
  VectorXd v(d);
  for (int j = 0; j < d; ++j) v[j] = 2.0 * rng.next_double() - 1.0;
  return bidsim::project_l1(v * W * 1.5, W);
}

// Drives one policy through the simulated rounds and returns every bid.
std::vector<double> run_rounds(Policy& pol, const EnvironmentConfig& cfg, long T) {
  std::vector<double> bids;
  bids.reserve(T);
  for (long t = 0; t < T; ++t) {
    bidsim::RoundDraw draw = bidsim::draw_round(cfg, t);
    double b = pol.bid(draw.x, draw.value);
    bids.push_back(b);
    AuctionRound round = bidsim::resolve_round(t, draw, b);
    pol.observe(round, bidsim::feedback(round, pol.feedback_mode()));
  }
  return bids;
}

EnvironmentConfig three_dim_config(std::uint64_t seed) {
  EnvironmentConfig cfg;
  cfg.d = 3;
  cfg.alpha0 = (VectorXd(3) << 0.3, -0.2, 0.1).finished();
  cfg.W = 1.0;
  cfg.noise = NoiseModel::gaussian(0.5);
  cfg.value_fn = ValueFn::make_constant(0.8);
  cfg.seed = seed;
  return cfg;
}

int count_nonincreasing(const std::vector<double>& v) {
  int n = 0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    if (v[i + 1] <= v[i] + 1e-12) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("episode schedule reproduces the closed-form lengths") {
  EpisodeSchedule big(100000);
  CHECK(big.lengths() == std::vector<long>{316, 5623, 23714, 48697, 21650});
  EpisodeSchedule small(1000);
  CHECK(small.lengths() == std::vector<long>{32, 178, 422, 368});
  EpisodeSchedule mid(20000);
  CHECK(mid.lengths() == std::vector<long>{141, 1682, 5800, 10770, 1607});
  CHECK(mid.start(0) == 0);
  CHECK(mid.start(1) == 141);
  CHECK(mid.start(4) == 141 + 1682 + 5800 + 10770);
}

TEST_CASE("episode schedule accounting holds across horizons") {
  for (long T : {1L, 2L, 3L, 10L, 57L, 100L, 999L, 1000L, 4096L, 31623L, 100000L, 314159L}) {
    CAPTURE(T);
    EpisodeSchedule s(T);
    const auto& len = s.lengths();
    long sum = 0;
    for (std::size_t i = 0; i < len.size(); ++i) {
      CHECK(len[i] >= 1);
      CHECK(s.start(static_cast<int>(i)) == sum);
      sum += len[i];
      // Lengths grow geometrically; only the truncated tail may shrink.
      if (i + 2 < len.size()) CHECK(len[i] <= len[i + 1]);
    }
    CHECK(sum == T);
    CHECK(s.horizon() == T);
    if (T >= 3) {
      int bound = static_cast<int>(std::ceil(std::log2(std::log2(static_cast<double>(T))))) + 1;
      CHECK(s.episodes() <= bound);
    }
  }
}

TEST_CASE("clairvoyant bid matches a grid search of the expected utility") {
  // Uniform noise on [-1/2, 1/2], no context: maximize (1-b)(b+1/2) -> 1/4.
  EnvironmentConfig flat;
  flat.d = 1;
  flat.alpha0 = VectorXd::Zero(1);
  flat.noise = NoiseModel::uniform(0.5);
  flat.value_fn = ValueFn::make_constant(1.0);
  CHECK(bidsim::clairvoyant_bid(flat, VectorXd::Ones(1)) == doctest::Approx(0.25).epsilon(1e-9));

  // The bid never goes negative even when the shading formula does.
  EnvironmentConfig low = three_dim_config(1);
  low.alpha0 = (VectorXd(3) << -0.9, 0.0, 0.0).finished();
  low.value_fn = ValueFn::make_constant(0.2);
  VectorXd e1 = (VectorXd(3) << 1.0, 0.0, 0.0).finished();
  CHECK(bidsim::clairvoyant_bid(low, e1) == 0.0);

  std::vector<NoiseModel> models = {NoiseModel::gaussian(0.5), NoiseModel::logistic(0.3),
                                    NoiseModel::laplace(0.4), NoiseModel::uniform(2.5)};
  CounterRng rng(11, 0);
  for (int trial = 0; trial < 32; ++trial) {
    EnvironmentConfig cfg;
    cfg.d = 3;
    cfg.noise = models[trial % models.size()];
    cfg.alpha0 = l1_point(rng, 3, 1.0);
    cfg.value_fn = ValueFn::make_constant(0.1 + 0.9 * rng.next_double());
    VectorXd x = unit_ball_point(rng, 3);
    double b = bidsim::clairvoyant_bid(cfg, x);
    double ub = bidsim::expected_utility(cfg, b, x);
    double best_u = -1e300;
    double best_b = 0.0;
    double value = cfg.value_fn(x);
    for (double g = 0.0; g <= value + 5e-5; g += 1e-4) {
      double u = bidsim::expected_utility(cfg, std::min(g, value), x);
      if (u > best_u) {
        best_u = u;
        best_b = std::min(g, value);
      }
    }
    CAPTURE(trial);
    CAPTURE(best_b);
    CHECK(std::fabs(b - best_b) <= 1e-3);
    CHECK(ub >= best_u - 1e-6);
  }
}

TEST_CASE("reparametrized bid at the true pair equals the truncated benchmark") {
  // True noise N(0, sigma^2) viewed through the standard-normal base with
  // rho0 = 1/sigma, mu0 = rho0 alpha0: the two phi machineries must agree.
  double sigma = 0.5;
  double rho0 = 1.0 / sigma;
  EnvironmentConfig cfg = three_dim_config(2);
  cfg.W = 2.5;
  cfg.value_fn = ValueFn::clipped_linear((VectorXd(3) << 0.4, 0.3, -0.2).finished());
  NoiseModel base = NoiseModel::gaussian(1.0);
  VectorXd mu0 = rho0 * cfg.alpha0;
  double delta = 0.01;
  CounterRng rng(12, 0);
  for (int i = 0; i < 500; ++i) {
    VectorXd x = unit_ball_point(rng, 3);
    double value = cfg.value_fn(x);
    double lhs = bidsim::partial_plug_in_bid(base, mu0, rho0, delta, x, value);
    double rhs = bidsim::truncated_benchmark_bid(cfg, delta, x);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
  }
}

TEST_CASE("unit scale reduces the reparametrized bid to the plain plug-in") {
  NoiseModel model = NoiseModel::gaussian(0.7);
  CounterRng rng(13, 0);
  double delta = 0.01;
  for (int i = 0; i < 500; ++i) {
    VectorXd alpha = l1_point(rng, 3, 1.0);
    VectorXd x = unit_ball_point(rng, 3);
    double value = rng.next_double();
    double lhs = bidsim::partial_plug_in_bid(model, alpha, 1.0, delta, x, value);
    double rhs = std::max(delta, bidsim::plug_in_bid(model, alpha, x, value));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("reparametrized bid truncates at delta") {
  // Tiny value: the shading formula goes negative and the floor binds.
  NoiseModel base = NoiseModel::gaussian(1.0);
  VectorXd mu = VectorXd::Zero(2);
  VectorXd x = (VectorXd(2) << 0.5, -0.5).finished();
  CHECK(bidsim::partial_plug_in_bid(base, mu, 1.0, 0.01, x, 0.05) == 0.01);
  CHECK(bidsim::partial_plug_in_bid(base, mu, 1.0, 0.025, x, 0.05) == 0.025);
}

TEST_CASE("full-info bid maximizes the fitted utility") {
  // Exact uniform CDF on [-1/2, 1/2] built directly from knots.
  LogConcaveFit uniform({-0.5, 0.5}, {0.0, 0.0}, 50.0);
  VectorXd zero = VectorXd::Zero(2);
  VectorXd x = (VectorXd(2) << 0.3, -0.3).finished();
  CHECK(bidsim::full_info_bid(uniform, zero, x, 1.0) == doctest::Approx(0.25).epsilon(1e-4));
  CHECK(bidsim::full_info_bid(uniform, zero, x, 0.0) == 0.0);
  CHECK(bidsim::full_info_bid(uniform, zero, x, -0.3) == 0.0);

  // Random fitted CDFs: the returned bid beats a fine grid up to tolerance.
  CounterRng rng(14, 0);
  NoiseModel noise = NoiseModel::gaussian(0.5);
  for (int outer = 0; outer < 5; ++outer) {
    std::vector<double> samples(300);
    for (auto& s : samples) s = noise.sample(rng);
    LogConcaveFit fit = bidsim::fit_logconcave(samples);
    for (int inner = 0; inner < 20; ++inner) {
      VectorXd alpha = l1_point(rng, 3, 1.0);
      VectorXd ctx = unit_ball_point(rng, 3);
      double value = rng.next_double();
      double b = bidsim::full_info_bid(fit, alpha, ctx, value);
      CHECK(b >= 0.0);
      CHECK(b <= value + 1e-12);
      double ax = alpha.dot(ctx);
      double ub = (value - b) * fit.cdf(b - ax);
      double best = 0.0;
      for (double g = 0.0; g <= value + 5e-5; g += 1e-4) {
        double gb = std::min(g, value);
        best = std::max(best, (value - gb) * fit.cdf(gb - ax));
      }
      CAPTURE(outer);
      CAPTURE(inner);
      CHECK(ub >= best - 1e-6);
    }
  }

  // Support starting above zero exercises the grid fallback: win probability
  // is zero on the low part of [0, value].
  LogConcaveFit shifted({0.1, 0.9}, {0.0, 0.0}, 50.0);
  double b = bidsim::full_info_bid(shifted, zero, x, 1.0);
  double best = 0.0;
  for (double g = 0.0; g <= 1.0 + 5e-5; g += 1e-4) {
    double gb = std::min(g, 1.0);
    best = std::max(best, (1.0 - gb) * shifted.cdf(gb));
  }
  CHECK((1.0 - b) * shifted.cdf(b) >= best - 1e-6);
}

TEST_CASE("plug-in utility loss is quadratic in the estimate error") {
  // u(b*) - u(bhat) <= 2 C (x.(a0 - ahat))^2 with C = 2 B2 + B3: the utility
  // curvature |u''| <= C and the bid map moves at most twice the mean shift.
  struct Case {
    NoiseModel model;
    const char* name;
  };
  std::vector<Case> cases = {{NoiseModel::gaussian(0.5), "gaussian"},
                             {NoiseModel::logistic(0.3), "logistic"},
                             {NoiseModel::laplace(0.4), "laplace"},
                             {NoiseModel::uniform(2.5), "uniform"}};
  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto consts = bidsim::compute_noise_constants(c.model.with_window(1.0));
    double C = 2.0 * consts.B2 + consts.B3;
    CounterRng rng(15, 0);
    for (int i = 0; i < 2500; ++i) {
      VectorXd a0 = l1_point(rng, 3, 1.0);
      VectorXd ahat = l1_point(rng, 3, 1.0);
      VectorXd x = unit_ball_point(rng, 3);
      double value = rng.next_double();
      double bstar = bidsim::plug_in_bid(c.model, a0, x, value);
      double bhat = bidsim::plug_in_bid(c.model, ahat, x, value);
      double a0x = a0.dot(x);
      double gap = (value - bstar) * c.model.cdf(bstar - a0x) -
                   (value - bhat) * c.model.cdf(bhat - a0x);
      double shift = x.dot(a0 - ahat);
      CHECK(gap >= -1e-9);
      CHECK(gap <= 2.0 * C * shift * shift + 1e-9);
    }
  }
}

TEST_CASE("policies explore in episode one and respect bid caps afterwards") {
  EnvironmentConfig cfg;
  cfg.d = 2;
  cfg.alpha0 = (VectorXd(2) << 0.4, -0.3).finished();
  cfg.W = 1.0;
  cfg.noise = NoiseModel::gaussian(0.5);
  cfg.value_fn = ValueFn::clipped_linear((VectorXd(2) << 0.6, 0.2).finished());
  cfg.seed = 21;
  long T = 1000;
  EpisodeSchedule sched(T);
  double delta = 0.01;

  BinaryKnownPolicy known(sched, cfg.noise, 2, cfg.W);
  BinaryPartialPolicy partial(sched, NoiseModel::gaussian(1.0), 2, 2.5, delta);
  FullInfoPolicy full(sched, 2, cfg.W);
  std::vector<Policy*> pols = {&known, &partial, &full};
  std::vector<const char*> names = {"known", "partial", "full"};
  for (std::size_t p = 0; p < pols.size(); ++p) {
    CAPTURE(names[p]);
    auto bids = run_rounds(*pols[p], cfg, T);
    long first_len = sched.lengths()[0];
    for (long t = 0; t < first_len; ++t) CHECK(bids[t] == 1.0);
    for (long t = first_len; t < T; ++t) {
      bidsim::RoundDraw draw = bidsim::draw_round(cfg, t);
      CAPTURE(t);
      CHECK(bids[t] >= 0.0);
      CHECK(bids[t] <= 1.0);
      if (p == 1) {
        CHECK(bids[t] >= delta);
        CHECK(bids[t] <= std::max(draw.value, delta) + 1e-12);
      } else {
        CHECK(bids[t] <= draw.value + 1e-12);
      }
    }
  }
}

TEST_CASE("episode records carry the schedule bookkeeping and feasibility") {
  EnvironmentConfig cfg = three_dim_config(5);
  long T = 1000;
  EpisodeSchedule sched(T);

  BinaryKnownPolicy known(sched, cfg.noise, 3, cfg.W);
  run_rounds(known, cfg, T);
  const auto& kr = known.episode_records();
  REQUIRE(static_cast<int>(kr.size()) == sched.episodes());
  CHECK(known.current_episode() == sched.episodes());
  for (std::size_t i = 0; i < kr.size(); ++i) {
    CHECK(kr[i].episode == static_cast<int>(i) + 1);
    CHECK(kr[i].start_t == sched.start(static_cast<int>(i)));
    CHECK(kr[i].length == sched.lengths()[i]);
    CHECK(std::isfinite(kr[i].loss));
    CHECK(kr[i].alpha_hat.lpNorm<1>() <= cfg.W + 1e-9);
  }

  EnvironmentConfig pcfg = three_dim_config(6);
  pcfg.W = 2.5;
  BinaryPartialPolicy partial(sched, NoiseModel::gaussian(1.0), 3, pcfg.W, 0.01);
  run_rounds(partial, pcfg, T);
  for (const auto& rec : partial.episode_records()) {
    CHECK(rec.rho_hat >= 1e-3 - 1e-12);
    CHECK(rec.rho_hat <= pcfg.W + 1e-9);
    CHECK((rec.alpha_hat * rec.rho_hat).lpNorm<1>() <= pcfg.W * rec.rho_hat + 1e-6);
  }

  EnvironmentConfig fcfg = three_dim_config(7);
  FullInfoPolicy full(sched, 3, fcfg.W);
  run_rounds(full, fcfg, T);
  for (const auto& rec : full.episode_records()) {
    CHECK(rec.fit.has_value());
    CHECK(rec.alpha_hat.lpNorm<1>() <= fcfg.W + 1e-9);
  }

  // Extra rounds past the horizon are ignored.
  bidsim::RoundDraw draw = bidsim::draw_round(cfg, T);
  AuctionRound extra = bidsim::resolve_round(T, draw, 0.5);
  known.observe(extra, bidsim::feedback(extra, known.feedback_mode()));
  CHECK(known.episode_records().size() == kr.size());
}

TEST_CASE("episode updates converge toward the generator") {
  long T = 20000;
  EpisodeSchedule sched(T);
  int S = sched.episodes();

  EnvironmentConfig cfg = three_dim_config(5);
  BinaryKnownPolicy known(sched, cfg.noise, 3, cfg.W);
  run_rounds(known, cfg, T);
  std::vector<double> errs;
  for (const auto& rec : known.episode_records()) {
    CHECK_FALSE(rec.flagged);
    errs.push_back((rec.alpha_hat - cfg.alpha0).norm());
  }
  CHECK(errs.back() <= 0.1);
  // Soft monotonicity: reported, not asserted hard; the truncated tail
  // retrains on less data and may move backwards.
  MESSAGE("known-noise episode errors: ", errs[0], " ", errs[1], " ", errs[2], " ", errs[3],
          " ", errs[4]);
  WARN(count_nonincreasing(errs) >= S - 2);

  EnvironmentConfig pcfg = three_dim_config(6);
  pcfg.W = 2.5;
  BinaryPartialPolicy partial(sched, NoiseModel::gaussian(1.0), 3, pcfg.W, 0.01);
  run_rounds(partial, pcfg, T);
  const auto& pr = partial.episode_records();
  for (const auto& rec : pr) CHECK_FALSE(rec.flagged);
  // The estimate in force during the final episode comes from the largest
  // fully-sized episode; the true scale is 1/sigma = 2.
  CHECK(std::fabs(pr[S - 2].rho_hat - 2.0) <= 0.3);
  CHECK((partial.mu_hat() / partial.rho_hat() - pcfg.alpha0).norm() <= 0.15);

  EnvironmentConfig fcfg = three_dim_config(7);
  FullInfoPolicy full(sched, 3, fcfg.W);
  run_rounds(full, fcfg, T);
  const auto& fr = full.episode_records();
  std::vector<double> sups;
  for (const auto& rec : fr) {
    CHECK_FALSE(rec.flagged);
    REQUIRE(rec.fit.has_value());
    double sup = 0.0;
    for (double z = -2.0; z <= 2.0; z += 0.01) {
      sup = std::max(sup, std::fabs(rec.fit->cdf(z) - fcfg.noise.cdf(z)));
    }
    sups.push_back(sup);
  }
  CHECK((full.alpha_hat() - fcfg.alpha0).norm() <= 0.15);
  CHECK(sups[S - 2] <= 0.02);
  MESSAGE("full-info sup CDF errors: ", sups[0], " ", sups[1], " ", sups[2], " ", sups[3], " ",
          sups[4]);
  CHECK(count_nonincreasing(sups) >= S - 2);
}

TEST_CASE("a failed update keeps the previous estimate and flags the episode") {
  EnvironmentConfig cfg = three_dim_config(9);
  long T = 1000;
  EpisodeSchedule sched(T);
  bidsim::MinimizeOptions cramped;
  cramped.max_iters = 1;

  BinaryKnownPolicy known(sched, cfg.noise, 3, cfg.W, cramped);
  run_rounds(known, cfg, T);
  for (const auto& rec : known.episode_records()) {
    CHECK(rec.flagged);
    CHECK(rec.alpha_hat.norm() == 0.0);
    CHECK(std::isfinite(rec.loss));
  }

  EnvironmentConfig pcfg = three_dim_config(10);
  pcfg.W = 2.5;
  BinaryPartialPolicy partial(sched, NoiseModel::gaussian(1.0), 3, pcfg.W, 0.01, cramped);
  run_rounds(partial, pcfg, T);
  for (const auto& rec : partial.episode_records()) {
    CHECK(rec.flagged);
    CHECK(rec.rho_hat == 1.0);
    CHECK(rec.alpha_hat.norm() == 0.0);
  }

  EnvironmentConfig fcfg = three_dim_config(11);
  FullInfoPolicy full(sched, 3, fcfg.W, 5, 1e-6, cramped);
  auto bids = run_rounds(full, fcfg, T);
  const auto& fr = full.episode_records();
  for (const auto& rec : fr) {
    CHECK(rec.flagged);
    CHECK(rec.alpha_hat.norm() == 0.0);
  }
  // Even a flagged first episode leaves a usable residual fit behind, so the
  // second episode bids from the distribution rather than repeating 1.0.
  CHECK(full.has_fit());
  long first_len = sched.lengths()[0];
  bool informed = false;
  for (long t = first_len; t < first_len + 50; ++t) {
    if (bids[t] < 1.0) informed = true;
  }
  CHECK(informed);
}

TEST_CASE("identical runs produce identical bid streams") {
  EnvironmentConfig cfg = three_dim_config(17);
  long T = 1000;
  BinaryKnownPolicy a(EpisodeSchedule(T), cfg.noise, 3, cfg.W);
  BinaryKnownPolicy b(EpisodeSchedule(T), cfg.noise, 3, cfg.W);
  auto ba = run_rounds(a, cfg, T);
  auto bb = run_rounds(b, cfg, T);
  CHECK(ba == bb);
}
