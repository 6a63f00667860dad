#pragma once

#include <cstdint>
#include <utility>

#include "bidsim/errors.hpp"
#include "bidsim/rng.hpp"

namespace bidsim {

enum class NoiseKind { Gaussian, Logistic, Laplace, Uniform };

// Constants of a noise distribution over the working window [-W, 1+W]:
//   B1 <= f <= B2,  |f'| <= B3,
//   h_W = max(|d/dx log F|, |d/dx log(1-F)|),
//   ell_W = min(-d2/dx2 log F, -d2/dx2 log(1-F)).
struct NoiseConstants {
  double h_W = 0.0;
  double ell_W = 0.0;
  double B1 = 0.0;
  double B2 = 0.0;
  double B3 = 0.0;
};

// Mean-zero log-concave noise distribution for the highest competing bid.
// All kinds are symmetric about zero. The optional working window [-W, 1+W]
// is where regularity constants are evaluated; pointwise queries (pdf, cdf,
// virtual_phi, ...) do not require one.
class NoiseModel {
 public:
  static NoiseModel gaussian(double sigma);
  static NoiseModel logistic(double scale);
  static NoiseModel laplace(double scale);
  static NoiseModel uniform(double halfwidth);

  // Returns a copy with the working window [-W, 1+W] attached. For Uniform
  // the window must lie strictly inside the support (halfwidth > 1 + W),
  // otherwise the density vanishes somewhere in the window; throws
  // ConfigError when violated or when W <= 0.
  NoiseModel with_window(double W) const;

  NoiseKind kind() const { return kind_; }
  double param() const { return param_; }
  bool has_window() const { return window_ > 0.0; }
  double window() const { return window_; }

  // Density f(z); zero outside the support for Uniform.
  double pdf(double z) const;
  // CDF F(z); exact 0/1 outside the support for Uniform.
  double cdf(double z) const;
  // Derivative f'(z); for Laplace the kink at 0 reports 0.
  double pdf_derivative(double z) const;

  // log F and log(1-F), computed stably in the tails.
  double log_cdf(double z) const;
  double log_sf(double z) const;

  // Hazard-type ratios f/F and f/(1-F), stable in the tails.
  double hazard_low(double z) const;
  double hazard_high(double z) const;

  // d/dz log f(z) (0 at the Laplace kink).
  double log_pdf_derivative(double z) const;

  // Virtual bid map phi(x) = x + F(x)/f(x); strictly increasing with
  // phi'(x) > 1 wherever f > 0. Throws SupportError when f(x) = 0.
  double virtual_phi(double x) const;

  // Inverse of phi by bracketed bisection: |phi(result) - y| <= tol.
  // For Uniform, y outside phi's range clamps to the corresponding support
  // endpoint. Throws ConvergenceError if bracket expansion exceeds 64
  // doublings.
  double virtual_phi_inverse(double y, double tol = 1e-10) const;

  // Range of phi over the support: (-inf, +inf) except for Uniform.
  std::pair<double, double> phi_range() const;

  // One draw via inverse-CDF / Box-Muller transforms on the given stream.
  double sample(CounterRng& rng) const;

 private:
  NoiseModel(NoiseKind kind, double param) : kind_(kind), param_(param) {}

  NoiseKind kind_;
  double param_;
  double window_ = 0.0;
};

// Grid scan of the regularity constants over [-W, 1+W]; requires the model
// to carry a window. Grid resolution defaults to 1e-3.
NoiseConstants compute_noise_constants(const NoiseModel& model, double grid_step = 1e-3);

}  // namespace bidsim
