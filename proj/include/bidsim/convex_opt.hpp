#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bidsim/errors.hpp"
#include "bidsim/logconcave.hpp"
#include "bidsim/noise_model.hpp"

namespace bidsim {

struct LossEvaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

// Rounds with win/lose feedback only: row t of contexts is x_t.
struct BinaryBatch {
  Eigen::MatrixXd contexts;  // T x d
  Eigen::VectorXd bids;      // T
  Eigen::VectorXd wins;      // T, entries 0 or 1

  Eigen::Index rounds() const { return bids.size(); }
  Eigen::Index dimension() const { return contexts.cols(); }
};

// Rounds where the competing maximum bid itself is observed.
struct FullInfoBatch {
  Eigen::MatrixXd contexts;  // T x d
  Eigen::VectorXd bids;      // T
  Eigen::VectorXd max_bids;  // T

  Eigen::Index rounds() const { return bids.size(); }
  Eigen::Index dimension() const { return contexts.cols(); }
};

// Probabilities are floored at kProbFloor inside logs; where the floor is
// active the term is constant, so its gradient contribution is zero.
inline constexpr double kProbFloor = 1e-12;

// Negated average log-likelihood of win/lose outcomes when the noise CDF is
// known exactly: value and gradient in alpha.
LossEvaluation loss_binary_known(const BinaryBatch& batch, const NoiseModel& model,
                                 const Eigen::VectorXd& alpha);

// Same likelihood under the scale-parametrized family F(z) = F0(rho z),
// reparametrized with mu = alpha * rho. The gradient is over the stacked
// (mu, rho) vector, i.e. the augmented regressor (x; -b).
LossEvaluation loss_binary_partial(const BinaryBatch& batch, const NoiseModel& base,
                                   const Eigen::VectorXd& mu, double rho);

// Builds a log-concave fit from residual samples; the second argument is an
// optional warm start from a previous fit.
using FitProvider =
    std::function<LogConcaveFit(const std::vector<double>&, const LogConcaveFit*)>;

// Full-information MLE loss: refits the noise CDF from the residuals
// m_t - alpha.x_t, then scores win/lose outcomes against the fitted CDF.
// The gradient treats the fitted CDF as fixed.
LossEvaluation loss_full_info(const FullInfoBatch& batch, const Eigen::VectorXd& alpha,
                              const FitProvider& provider);

// Stateful variant for use inside minimize: the fit is refit only every
// refit_period accepted steps (the alternating scheme), with warm starts.
class FullInfoObjective {
 public:
  FullInfoObjective(const FullInfoBatch& batch, FitProvider provider,
                    int refit_period = 5);

  // Loss and gradient at alpha with the current fit frozen. Fits lazily on
  // first use.
  LossEvaluation operator()(const Eigen::VectorXd& alpha);

  // Accepted-step hook for minimize: refits every refit_period accepts.
  // Returns true when the loss surface changed.
  bool on_accept(const Eigen::VectorXd& alpha);

  // Force a refit of the noise CDF from the residuals at alpha.
  void refit(const Eigen::VectorXd& alpha);

  const LogConcaveFit& fit() const;
  bool has_fit() const { return has_fit_; }
  // Count of refits that raised the loss at the incumbent point (the
  // alternating scheme is not globally monotone).
  int non_monotone_refits() const { return non_monotone_refits_; }

 private:
  const FullInfoBatch& batch_;
  FitProvider provider_;
  int refit_period_;
  int accepts_ = 0;
  bool has_fit_ = false;
  LogConcaveFit fit_;
  int non_monotone_refits_ = 0;
};

// Euclidean projection onto the L1 ball of radius W (soft thresholding).
Eigen::VectorXd project_l1(const Eigen::VectorXd& v, double W);

// Feasible set for the partially-known-noise parameters:
// ||mu||_1 <= W * rho and rho in [rho_min, W].
struct LambdaSet {
  double W = 1.0;
  double rho_min = 1e-3;
};

// Euclidean projection onto LambdaSet by Dykstra's alternating projections
// between the cone ||mu||_1 <= W rho and the box on rho.
// ConvergenceError after 10000 sweeps.
std::pair<Eigen::VectorXd, double> project_lambda(const Eigen::VectorXd& mu, double rho,
                                                  const LambdaSet& set);

struct MinimizeOptions {
  double tol = 1e-8;      // on the projected-gradient mapping norm
  int max_iters = 50000;  // candidate evaluations before ConvergenceError
  double init_step = 1.0;
  double backtrack = 0.5;
};

using LossFn = std::function<LossEvaluation(const Eigen::VectorXd&)>;
using ProjectFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
// Called after each accepted step; return true if the loss surface changed
// (forces re-evaluation at the incumbent).
using AcceptHook = std::function<bool(const Eigen::VectorXd&)>;

struct MinimizeResult {
  Eigen::VectorXd point;
  double value = 0.0;
  int iterations = 0;
  bool stalled = false;  // no measurable progress (nonsmooth kink or floor)
};

// Projected gradient descent with backtracking line search. Terminates when
// ||x - project(x - step*grad)|| / step <= tol, or with stalled=true when the
// line search exhausts or a run of accepted steps stops decreasing the loss
// (kinks of piecewise surfaces); ConvergenceError when max_iters candidate
// evaluations pass without either.
MinimizeResult minimize(const LossFn& loss, const ProjectFn& project,
                        const Eigen::VectorXd& init, const MinimizeOptions& options = {},
                        const AcceptHook& on_accept = nullptr);

}  // namespace bidsim
