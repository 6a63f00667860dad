#pragma once

#include <string>
#include <vector>

#include "bidsim/errors.hpp"

namespace bidsim {

// Nonparametric log-concave density fit: Psi is concave piecewise linear,
// -inf outside [knots.front(), knots.back()], with an optional height cap
// psi <= cap. The stored knots are the bend points of the fitted Psi plus the
// support endpoints; Psi is linear between consecutive knots. normalization is
// integral(exp(Psi)) at convergence (1 up to tolerance when the cap is slack).
class LogConcaveFit {
 public:
  LogConcaveFit() = default;
  LogConcaveFit(std::vector<double> knots, std::vector<double> psi, double cap);

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& psi_values() const { return psi_; }
  double cap() const { return cap_; }
  double normalization() const { return normalization_; }

  // CDF of the fitted density, normalized so mass below the first knot is 0
  // and above the last knot is 1.
  double cdf(double z) const;

  // Piecewise-linear Psi(z); -inf outside the knot range.
  double log_unnormalized_density(double z) const;

  // exp(Psi(z)) / normalization, consistent with cdf.
  double density(double z) const;

  // Flat text round-trip: knot count, then knot/psi pairs, then cap.
  std::string to_text() const;
  static LogConcaveFit from_text(const std::string& text);

 private:
  void rebuild();

  std::vector<double> knots_;
  std::vector<double> psi_;
  double cap_ = 0.0;
  double normalization_ = 0.0;
  std::vector<double> prefix_;  // integral of exp(Psi) up to each knot
};

struct EmpiricalCdf {
  explicit EmpiricalCdf(std::vector<double> samples);
  double operator()(double z) const;
  std::size_t size() const { return sorted_.size(); }

  std::vector<double> sorted_;
};

struct LogConcaveFitOptions {
  double cap = 50.0;       // log-density height cap (log B2); 50 ~ inactive
  double tol = 1e-7;       // stop when an accepted step improves less than this
  int max_iters = 20000;   // accepted iterations before ConvergenceError
};

// Maximum-likelihood log-concave fit. The log-density is optimized over the
// cone of concave piecewise-linear functions on the sorted distinct samples
// (cap enforced by clipping) with an active-set strategy: damped Newton on the
// current bend points, plus an optimality scan that adds the best improving
// bend and drops bends that turn convex. The returned fit is compressed to its
// bend points. Requires >= 3 distinct samples (DegenerateError otherwise). An
// optional warm start seeds the initial values.
LogConcaveFit fit_logconcave(const std::vector<double>& samples,
                             const LogConcaveFitOptions& options = {},
                             const LogConcaveFit* warm_start = nullptr);

// Objective (1/n) sum_j count_j psi_j - integral(exp(Psi)) for the given knot
// values; weights are multiplicities normalized to sum to 1.
double logconcave_objective(const std::vector<double>& knots,
                            const std::vector<double>& weights,
                            const std::vector<double>& psi);

// Max violation of  ecdf(z) - 1/n <= Fhat(z) <= ecdf(z)  over the fit's
// knots; 0 when the sandwich holds everywhere. The inequality is a property
// of the exact maximizer at its bend points, so this doubles as a convergence
// certificate for fit_logconcave.
double knot_sandwich_check(const LogConcaveFit& fit, const EmpiricalCdf& ecdf);

}  // namespace bidsim
