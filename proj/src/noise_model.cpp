#include "bidsim/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bidsim {
namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

// log Phi(u) for the standard normal, stable into the deep left tail.
double std_normal_log_cdf(double u) {
  if (u > -37.0) {
    return std::log(0.5 * std::erfc(-u / kSqrt2));
  }
  double u2 = u * u;
  return -0.5 * u2 - 0.5 * kLog2Pi - std::log(-u) +
         std::log1p(-1.0 / u2 + 3.0 / (u2 * u2));
}

// log(1 + e^t) without overflow.
double softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

double check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(what) + " must be a positive finite real");
  }
  return v;
}

}  // namespace

NoiseModel NoiseModel::gaussian(double sigma) {
  return NoiseModel(NoiseKind::Gaussian, check_positive(sigma, "gaussian sigma"));
}
NoiseModel NoiseModel::logistic(double scale) {
  return NoiseModel(NoiseKind::Logistic, check_positive(scale, "logistic scale"));
}
NoiseModel NoiseModel::laplace(double scale) {
  return NoiseModel(NoiseKind::Laplace, check_positive(scale, "laplace scale"));
}
NoiseModel NoiseModel::uniform(double halfwidth) {
  return NoiseModel(NoiseKind::Uniform, check_positive(halfwidth, "uniform halfwidth"));
}

NoiseModel NoiseModel::with_window(double W) const {
  check_positive(W, "window parameter W");
  if (kind_ == NoiseKind::Uniform && !(param_ > 1.0 + W)) {
    throw ConfigError(
        "uniform noise: window [-W, 1+W] must lie strictly inside the "
        "support, requires halfwidth > 1 + W");
  }
  NoiseModel out = *this;
  out.window_ = W;
  return out;
}

double NoiseModel::pdf(double z) const {
  switch (kind_) {
    case NoiseKind::Gaussian: {
      double u = z / param_;
      return std::exp(-0.5 * u * u - 0.5 * kLog2Pi) / param_;
    }
    case NoiseKind::Logistic: {
      // Symmetric form, stable in both tails.
      double e = std::exp(-std::fabs(z) / param_);
      double d = 1.0 + e;
      return e / (param_ * d * d);
    }
    case NoiseKind::Laplace:
      return std::exp(-std::fabs(z) / param_) / (2.0 * param_);
    case NoiseKind::Uniform:
      return std::fabs(z) <= param_ ? 0.5 / param_ : 0.0;
  }
  return 0.0;
}

double NoiseModel::cdf(double z) const {
  switch (kind_) {
    case NoiseKind::Gaussian:
      return 0.5 * std::erfc(-z / (param_ * kSqrt2));
    case NoiseKind::Logistic:
      return 1.0 / (1.0 + std::exp(-z / param_));
    case NoiseKind::Laplace:
      return z < 0.0 ? 0.5 * std::exp(z / param_)
                     : 1.0 - 0.5 * std::exp(-z / param_);
    case NoiseKind::Uniform:
      return std::clamp((z + param_) / (2.0 * param_), 0.0, 1.0);
  }
  return 0.0;
}

double NoiseModel::pdf_derivative(double z) const {
  switch (kind_) {
    case NoiseKind::Gaussian:
      return -(z / (param_ * param_)) * pdf(z);
    case NoiseKind::Logistic: {
      double F = cdf(z);
      return pdf(z) * (1.0 - 2.0 * F) / param_;
    }
    case NoiseKind::Laplace:
      if (z == 0.0) return 0.0;
      return -(z > 0.0 ? 1.0 : -1.0) * pdf(z) / param_;
    case NoiseKind::Uniform:
      return 0.0;
  }
  return 0.0;
}

double NoiseModel::log_cdf(double z) const {
  switch (kind_) {
    case NoiseKind::Gaussian:
      return std_normal_log_cdf(z / param_);
    case NoiseKind::Logistic:
      return -softplus(-z / param_);
    case NoiseKind::Laplace:
      return z < 0.0 ? z / param_ - 0.6931471805599453094
                     : std::log1p(-0.5 * std::exp(-z / param_));
    case NoiseKind::Uniform: {
      double F = cdf(z);
      return F > 0.0 ? std::log(F) : -kInf;
    }
  }
  return -kInf;
}

double NoiseModel::log_sf(double z) const {
  // All kinds are symmetric about zero: 1 - F(z) = F(-z).
  return log_cdf(-z);
}

double NoiseModel::log_pdf_derivative(double z) const {
  switch (kind_) {
    case NoiseKind::Gaussian:
      return -z / (param_ * param_);
    case NoiseKind::Logistic:
      return (1.0 - 2.0 * cdf(z)) / param_;
    case NoiseKind::Laplace:
      if (z == 0.0) return 0.0;
      return -(z > 0.0 ? 1.0 : -1.0) / param_;
    case NoiseKind::Uniform:
      return 0.0;
  }
  return 0.0;
}

double NoiseModel::hazard_low(double z) const {
  if (kind_ == NoiseKind::Uniform) {
    if (std::fabs(z) > param_) {
      throw SupportError("hazard queried outside the uniform support");
    }
    double denom = z + param_;
    return denom > 0.0 ? 1.0 / denom : kInf;
  }
  double lf;
  switch (kind_) {
    case NoiseKind::Gaussian: {
      double u = z / param_;
      lf = -0.5 * u * u - 0.5 * kLog2Pi - std::log(param_);
      break;
    }
    case NoiseKind::Logistic:
      // f/F = (1-F)/scale.
      return std::exp(log_sf(z)) / param_;
    case NoiseKind::Laplace:
      if (z < 0.0) return 1.0 / param_;
      lf = -z / param_ - std::log(2.0 * param_);
      break;
    default:
      return 0.0;
  }
  return std::exp(lf - log_cdf(z));
}

double NoiseModel::hazard_high(double z) const { return hazard_low(-z); }

double NoiseModel::virtual_phi(double x) const {
  double f = pdf(x);
  if (!(f > 0.0)) {
    throw SupportError("virtual bid map queried where the density vanishes");
  }
  if (kind_ == NoiseKind::Uniform) {
    // On the support F(x)/f(x) = x + halfwidth.
    return 2.0 * x + param_;
  }
  double mills = std::exp(log_cdf(x) - (std::log(f)));
  return x + mills;
}

namespace {

// phi continued through regions where the density underflows: far in the
// right tail F/f explodes (+inf); far in the left tail F/f -> 0, so phi is x
// up to a vanishing correction. Keeps bracketing decisions correct without
// raising SupportError at absurd query points.
double phi_extended(const NoiseModel& m, double x) {
  if (m.pdf(x) > 0.0) return m.virtual_phi(x);
  return x > 0.0 ? std::numeric_limits<double>::infinity() : x;
}

}  // namespace

std::pair<double, double> NoiseModel::phi_range() const {
  if (kind_ == NoiseKind::Uniform) {
    return {-param_, 3.0 * param_};
  }
  return {-kInf, kInf};
}

double NoiseModel::virtual_phi_inverse(double y, double tol) const {
  if (!(tol > 0.0)) throw ConfigError("virtual_phi_inverse: tol must be positive");
  double lo, hi;
  if (kind_ == NoiseKind::Uniform) {
    auto [ymin, ymax] = phi_range();
    if (y <= ymin) return -param_;
    if (y >= ymax) return param_;
    lo = -param_;
    hi = param_;
  } else {
    // phi(x) >= x, so y itself is an upper bracket; expand downward.
    hi = y;
    double step = 1.0;
    lo = y - step;
    int doublings = 0;
    while (phi_extended(*this, lo) > y) {
      step *= 2.0;
      lo = y - step;
      if (++doublings > 64) {
        throw ConvergenceError("virtual_phi_inverse: bracket expansion exceeded 64 doublings");
      }
    }
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    mid = 0.5 * (lo + hi);
    double val = phi_extended(*this, mid);
    if (std::fabs(val - y) <= tol) return mid;
    if (val < y) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(mid))) {
      break;
    }
  }
  if (std::fabs(phi_extended(*this, mid) - y) <= std::max(tol, 1e-9)) return mid;
  throw ConvergenceError("virtual_phi_inverse: bisection failed to meet tolerance");
}

double NoiseModel::sample(CounterRng& rng) const {
  switch (kind_) {
    case NoiseKind::Gaussian:
      return param_ * rng.next_gaussian();
    case NoiseKind::Logistic: {
      double u = rng.next_open();
      if (u >= 1.0) u = 1.0 - 0x1.0p-53;
      return param_ * std::log(u / (1.0 - u));
    }
    case NoiseKind::Laplace: {
      double u = rng.next_open();
      return u < 0.5 ? param_ * std::log(2.0 * u)
                     : -param_ * std::log(2.0 * (1.0 - u));
    }
    case NoiseKind::Uniform:
      return param_ * (2.0 * rng.next_double() - 1.0);
  }
  return 0.0;
}

NoiseConstants compute_noise_constants(const NoiseModel& model, double grid_step) {
  if (!model.has_window()) {
    throw ConfigError("noise constants require a model with a working window");
  }
  if (!(grid_step > 0.0)) throw ConfigError("grid_step must be positive");
  double W = model.window();
  double lo = -W;
  double hi = 1.0 + W;
  NoiseConstants c;
  c.B1 = kInf;
  c.ell_W = kInf;
  long n = static_cast<long>(std::ceil((hi - lo) / grid_step));
  for (long i = 0; i <= n; ++i) {
    double x = std::min(lo + static_cast<double>(i) * grid_step, hi);
    double f = model.pdf(x);
    double fp = std::fabs(model.pdf_derivative(x));
    double lam = model.hazard_low(x);    //  d/dx log F
    double haz = model.hazard_high(x);   // -d/dx log(1-F)
    double r = model.log_pdf_derivative(x);
    double neg_ddlogF = lam * (lam - r);
    double neg_ddlogS = haz * (haz + r);
    c.B1 = std::min(c.B1, f);
    c.B2 = std::max(c.B2, f);
    c.B3 = std::max(c.B3, fp);
    c.h_W = std::max({c.h_W, lam, haz});
    c.ell_W = std::min({c.ell_W, neg_ddlogF, neg_ddlogS});
  }
  return c;
}

}  // namespace bidsim
