#include "bidsim/convex_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bidsim {
namespace {

const double kLogFloor = std::log(kProbFloor);

// Shared core of the two binary likelihoods: z holds the CDF query points,
// regressors holds d(z)/d(parameter) with a leading minus sign folded in
// (z = shift - regressors . theta), so grad = (1/T) regressors^T * weights.
LossEvaluation binary_core(const Eigen::VectorXd& z, const Eigen::VectorXd& wins,
                           const Eigen::MatrixXd& regressors, const NoiseModel& model) {
  Eigen::Index T = z.size();
  LossEvaluation out;
  out.gradient = Eigen::VectorXd::Zero(regressors.cols());
  if (T == 0) return out;
  Eigen::VectorXd weights(T);
  double value = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (wins[t] != 0.0) {
      double lf = model.log_cdf(z[t]);
      if (lf <= kLogFloor) {
        value -= kLogFloor;
        weights[t] = 0.0;
      } else {
        value -= lf;
        weights[t] = model.hazard_low(z[t]);
      }
    } else {
      double ls = model.log_sf(z[t]);
      if (ls <= kLogFloor) {
        value -= kLogFloor;
        weights[t] = 0.0;
      } else {
        value -= ls;
        weights[t] = -model.hazard_high(z[t]);
      }
    }
  }
  if (!std::isfinite(value)) throw NumericalError("binary likelihood is not finite");
  double inv_T = 1.0 / static_cast<double>(T);
  out.value = value * inv_T;
  out.gradient = regressors.transpose() * weights * inv_T;
  return out;
}

}  // namespace

LossEvaluation loss_binary_known(const BinaryBatch& batch, const NoiseModel& model,
                                 const Eigen::VectorXd& alpha) {
  if (batch.rounds() == 0) {
    return {0.0, Eigen::VectorXd::Zero(alpha.size())};
  }
  Eigen::VectorXd z = batch.bids - batch.contexts * alpha;
  return binary_core(z, batch.wins, batch.contexts, model);
}

LossEvaluation loss_binary_partial(const BinaryBatch& batch, const NoiseModel& base,
                                   const Eigen::VectorXd& mu, double rho) {
  Eigen::Index d = mu.size();
  if (batch.rounds() == 0) {
    return {0.0, Eigen::VectorXd::Zero(d + 1)};
  }
  Eigen::VectorXd z = rho * batch.bids - batch.contexts * mu;
  Eigen::MatrixXd augmented(batch.rounds(), d + 1);
  augmented.leftCols(d) = batch.contexts;
  augmented.col(d) = -batch.bids;
  return binary_core(z, batch.wins, augmented, base);
}

namespace {

LossEvaluation full_info_frozen(const FullInfoBatch& batch, const Eigen::VectorXd& alpha,
                                const LogConcaveFit& fit) {
  Eigen::Index T = batch.rounds();
  LossEvaluation out;
  out.gradient = Eigen::VectorXd::Zero(alpha.size());
  if (T == 0) return out;
  Eigen::VectorXd z = batch.bids - batch.contexts * alpha;
  Eigen::VectorXd weights(T);
  double value = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    double F = fit.cdf(z[t]);
    bool win = batch.bids[t] >= batch.max_bids[t];
    if (win) {
      if (F <= kProbFloor) {
        value -= kLogFloor;
        weights[t] = 0.0;
      } else {
        value -= std::log(F);
        weights[t] = fit.density(z[t]) / F;
      }
    } else {
      double S = 1.0 - F;
      if (S <= kProbFloor) {
        value -= kLogFloor;
        weights[t] = 0.0;
      } else {
        value -= std::log(S);
        weights[t] = -fit.density(z[t]) / S;
      }
    }
  }
  if (!std::isfinite(value)) throw NumericalError("full-info likelihood is not finite");
  double inv_T = 1.0 / static_cast<double>(T);
  out.value = value * inv_T;
  out.gradient = batch.contexts.transpose() * weights * inv_T;
  return out;
}

std::vector<double> residuals_at(const FullInfoBatch& batch, const Eigen::VectorXd& alpha) {
  Eigen::VectorXd r = batch.max_bids - batch.contexts * alpha;
  return std::vector<double>(r.data(), r.data() + r.size());
}

}  // namespace

LossEvaluation loss_full_info(const FullInfoBatch& batch, const Eigen::VectorXd& alpha,
                              const FitProvider& provider) {
  LogConcaveFit fit = provider(residuals_at(batch, alpha), nullptr);
  return full_info_frozen(batch, alpha, fit);
}

FullInfoObjective::FullInfoObjective(const FullInfoBatch& batch, FitProvider provider,
                                     int refit_period)
    : batch_(batch), provider_(std::move(provider)), refit_period_(refit_period) {
  if (refit_period_ < 1) throw ConfigError("refit period must be >= 1");
}

LossEvaluation FullInfoObjective::operator()(const Eigen::VectorXd& alpha) {
  if (!has_fit_) refit(alpha);
  return full_info_frozen(batch_, alpha, fit_);
}

bool FullInfoObjective::on_accept(const Eigen::VectorXd& alpha) {
  ++accepts_;
  if (accepts_ % refit_period_ != 0) return false;
  double before = has_fit_ ? full_info_frozen(batch_, alpha, fit_).value
                           : std::numeric_limits<double>::infinity();
  refit(alpha);
  double after = full_info_frozen(batch_, alpha, fit_).value;
  if (after > before + 1e-12) ++non_monotone_refits_;
  return true;
}

void FullInfoObjective::refit(const Eigen::VectorXd& alpha) {
  fit_ = provider_(residuals_at(batch_, alpha), has_fit_ ? &fit_ : nullptr);
  has_fit_ = true;
}

const LogConcaveFit& FullInfoObjective::fit() const {
  if (!has_fit_) throw ConfigError("no fit computed yet");
  return fit_;
}

Eigen::VectorXd project_l1(const Eigen::VectorXd& v, double W) {
  if (!(W > 0.0)) throw ConfigError("L1 radius must be positive");
  if (v.lpNorm<1>() <= W) return v;
  // Sort-based exact soft threshold.
  std::vector<double> u(v.data(), v.data() + v.size());
  for (auto& a : u) a = std::fabs(a);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    double cand = (cum - W) / static_cast<double>(j + 1);
    if (u[j] - cand > 0.0) {
      theta = cand;
    } else {
      break;
    }
  }
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double mag = std::fabs(v[i]) - theta;
    out[i] = mag > 0.0 ? (v[i] > 0.0 ? mag : -mag) : 0.0;
  }
  return out;
}

namespace {

// Euclidean projection onto the cone ||mu||_1 <= W rho: soft threshold at
// level lambda on mu paired with rho + lambda W, lambda found by bisection on
// the complementarity equation.
void project_cone(Eigen::VectorXd& mu, double& rho, double W) {
  if (mu.lpNorm<1>() <= W * rho) return;
  auto gap = [&](double lambda) {
    double norm = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      norm += std::max(std::fabs(mu[i]) - lambda, 0.0);
    }
    return norm - W * (rho + lambda * W);
  };
  double lo = 0.0;
  double hi = mu.lpNorm<Eigen::Infinity>() + (1.0 + std::fabs(rho)) / W + 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
    double mid = 0.5 * (lo + hi);
    (gap(mid) > 0.0 ? lo : hi) = mid;
  }
  double lambda = 0.5 * (lo + hi);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    double mag = std::fabs(mu[i]) - lambda;
    mu[i] = mag > 0.0 ? (mu[i] > 0.0 ? mag : -mag) : 0.0;
  }
  rho += lambda * W;
}

}  // namespace

std::pair<Eigen::VectorXd, double> project_lambda(const Eigen::VectorXd& mu, double rho,
                                                  const LambdaSet& set) {
  if (!(set.W > 0.0) || !(set.rho_min > 0.0) || set.rho_min > set.W) {
    throw ConfigError("invalid Lambda set parameters");
  }
  Eigen::Index d = mu.size();
  Eigen::VectorXd x_mu = mu;
  double x_rho = rho;
  Eigen::VectorXd p_mu = Eigen::VectorXd::Zero(d);
  double p_rho = 0.0;
  Eigen::VectorXd q_mu = Eigen::VectorXd::Zero(d);
  double q_rho = 0.0;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    Eigen::VectorXd prev_mu = x_mu;
    double prev_rho = x_rho;
    // The iterate can sit still for many sweeps while the corrections drift
    // (cone apex against the rho floor), so stability of the corrections is
    // part of the stopping rule.
    double prev_p_rho = p_rho;
    double prev_q_rho = q_rho;
    Eigen::VectorXd prev_p_mu = p_mu;
    Eigen::VectorXd prev_q_mu = q_mu;

    Eigen::VectorXd y_mu = x_mu + p_mu;
    double y_rho = x_rho + p_rho;
    Eigen::VectorXd c_mu = y_mu;
    double c_rho = y_rho;
    project_cone(c_mu, c_rho, set.W);
    p_mu = y_mu - c_mu;
    p_rho = y_rho - c_rho;

    y_mu = c_mu + q_mu;
    y_rho = c_rho + q_rho;
    x_mu = y_mu;
    x_rho = std::clamp(y_rho, set.rho_min, set.W);
    q_mu = y_mu - x_mu;
    q_rho = y_rho - x_rho;

    double change = (x_mu - prev_mu).norm() + std::fabs(x_rho - prev_rho) +
                    (p_mu - prev_p_mu).norm() + std::fabs(p_rho - prev_p_rho) +
                    (q_mu - prev_q_mu).norm() + std::fabs(q_rho - prev_q_rho);
    bool feasible = x_mu.lpNorm<1>() <= set.W * x_rho + 1e-10 &&
                    x_rho >= set.rho_min - 1e-12 && x_rho <= set.W + 1e-12;
    if (sweep > 0 && change <= 1e-12 && feasible) {
      return {x_mu, x_rho};
    }
  }
  throw ConvergenceError("Dykstra projection onto Lambda did not converge");
}

MinimizeResult minimize(const LossFn& loss, const ProjectFn& project,
                        const Eigen::VectorXd& init, const MinimizeOptions& options,
                        const AcceptHook& on_accept) {
  Eigen::VectorXd x = project(init);
  LossEvaluation cur = loss(x);
  double step = options.init_step;
  MinimizeResult result;
  int stagnant = 0;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    Eigen::VectorXd cand = project(x - step * cur.gradient);
    Eigen::VectorXd dx = cand - x;
    double dx_norm = dx.norm();
    if (dx_norm / std::max(step, 1e-18) <= options.tol) {
      result.point = x;
      result.value = cur.value;
      result.iterations = iter;
      return result;
    }
    LossEvaluation trial = loss(cand);
    // Sufficient decrease against the proximal model at the current step.
    double model_gain = cur.gradient.dot(dx) + dx_norm * dx_norm / (2.0 * step);
    if (trial.value <= cur.value + model_gain + 1e-14 * std::fabs(cur.value)) {
      double decrease = cur.value - trial.value;
      x = std::move(cand);
      cur = std::move(trial);
      step = std::min(step * 2.0, 1e3);
      if (on_accept && on_accept(x)) cur = loss(x);
      // At a kink of a piecewise surface the mapping norm never reaches tol
      // while accepted steps shrink geometrically; a run of accepts with no
      // measurable decrease is the same stall as an exhausted line search.
      if (decrease <= 1e-13 * (1.0 + std::fabs(cur.value))) {
        if (++stagnant >= 30) {
          result.point = x;
          result.value = cur.value;
          result.iterations = iter;
          result.stalled = true;
          return result;
        }
      } else {
        stagnant = 0;
      }
    } else {
      step *= options.backtrack;
      if (step < 1e-18) {
        result.point = x;
        result.value = cur.value;
        result.iterations = iter;
        result.stalled = true;
        return result;
      }
    }
  }
  throw ConvergenceError("projected gradient descent exhausted max_iters");
}

}  // namespace bidsim
