#include "bidsim/logconcave.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace bidsim {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Integral of exp over one linear segment of length h with endpoint
// log-values psi1, psi2.
double segment_integral(double h, double psi1, double psi2) {
  if (h <= 0.0) return 0.0;
  double D = psi2 - psi1;
  if (std::fabs(D) < 1e-3) {
    return h * std::exp(psi1) * (1.0 + D * (0.5 + D * (1.0 / 6.0 + D / 24.0)));
  }
  double m = std::max(psi1, psi2);
  return h * std::exp(m) * (-std::expm1(-std::fabs(D))) / std::fabs(D);
}

// d/dpsi1 and d/dpsi2 of segment_integral.
void segment_integral_grad(double h, double psi1, double psi2,
                           double* d1, double* d2) {
  double D = psi2 - psi1;
  if (std::fabs(D) < 1e-3) {
    double e1 = std::exp(psi1);
    *d1 = h * e1 * (0.5 + D * (1.0 / 6.0 + D / 24.0));
    *d2 = h * e1 * (0.5 + D * (1.0 / 3.0 + D / 8.0));
    return;
  }
  double e1 = std::exp(psi1);
  double e2 = std::exp(psi2);
  *d1 = h * (e2 - e1 * (1.0 + D)) / (D * D);
  *d2 = h * (e2 * (D - 1.0) + e1) / (D * D);
}

// Second derivatives of segment_integral: (d11, d12, d22).
void segment_integral_hess(double h, double psi1, double psi2,
                           double* d11, double* d12, double* d22) {
  double D = psi2 - psi1;
  double e1 = std::exp(psi1);
  if (std::fabs(D) < 1e-3) {
    // E1 - 2 E1' + E1'', E1' - E1'', E1'' expanded around D = 0.
    double E1 = 1.0 + D * (0.5 + D / 6.0);
    double E1p = 0.5 + D * (1.0 / 3.0 + D / 8.0);
    double E1pp = 1.0 / 3.0 + D * (0.25 + D / 10.0);
    *d11 = h * e1 * (E1 - 2.0 * E1p + E1pp);
    *d12 = h * e1 * (E1p - E1pp);
    *d22 = h * e1 * E1pp;
    return;
  }
  double e2 = std::exp(psi2);
  double D2 = D * D;
  double D3 = D2 * D;
  double E1 = (e2 - e1) / D;
  double E1p = (e2 * (D - 1.0) + e1) / D2;
  double E1pp = (e2 * (D2 - 2.0 * D + 2.0) - 2.0 * e1) / D3;
  *d11 = h * (E1 - 2.0 * E1p + E1pp);
  *d12 = h * (E1p - E1pp);
  *d22 = h * E1pp;
}

double total_integral(const std::vector<double>& knots, const std::vector<double>& psi) {
  double I = 0.0;
  for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
    I += segment_integral(knots[j + 1] - knots[j], psi[j], psi[j + 1]);
  }
  return I;
}

// Exact maximum-likelihood solver for the capped concave piecewise-linear
// log-density: an active-set method over the kink positions. Each reduced
// problem (values at the active knots, linear in between) is smooth and
// concave with tridiagonal curvature, solved by damped Newton; kinks are
// added where the one-sided optimality scan finds an improving concave bend
// and dropped when a reduced solution turns a kink convex.
class ActiveSetSolver {
 public:
  ActiveSetSolver(const std::vector<double>& knots, const std::vector<double>& w,
                  double cap, double tol, int max_iters)
      : u_(knots), w_(w), cap_(cap), tol_(tol), max_iters_(max_iters), m_(knots.size()) {}

  // Returns the optimizer as (positions, values) at the final active knots.
  std::pair<std::vector<double>, std::vector<double>> solve(
      const std::vector<int>& initial_active) {
    active_ = initial_active;
    phi_.assign(active_.size(), 0.0);
    // Start from the interpolated moment-matched values supplied via seed_psi.
    for (std::size_t a = 0; a < active_.size(); ++a) phi_[a] = seed_[active_[a]];
    double kkt_tol = std::max(1e-12, tol_ * 1e-3);
    double prev_obj = -std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < max_iters_; ++outer) {
      newton_on_active();
      if (drop_convex_kink()) continue;
      double obj = reduced_objective();
      build_full_psi();
      int add = kkt_scan(kkt_tol);
      bool stuck = add >= 0 && outer > 0 &&
                   obj <= prev_obj + 1e-15 * (1.0 + std::fabs(obj));
      if (add < 0 || stuck) {
        std::vector<double> pos(active_.size());
        for (std::size_t a = 0; a < active_.size(); ++a) pos[a] = u_[active_[a]];
        return {std::move(pos), phi_};
      }
      prev_obj = obj;
      insert_active(add);
    }
    throw ConvergenceError("log-concave fit: active-set budget exhausted");
  }

  void set_seed(std::vector<double> seed) { seed_ = std::move(seed); }

 private:
  double reduced_objective() const {
    double value = 0.0;
    for (std::size_t a = 0; a < active_.size(); ++a) value += wr_[a] * phi_[a];
    double I = 0.0;
    for (std::size_t a = 0; a + 1 < active_.size(); ++a) {
      I += segment_integral(u_[active_[a + 1]] - u_[active_[a]], phi_[a], phi_[a + 1]);
    }
    return value - I;
  }

  // Weight of each active knot under linear interpolation of the data term.
  void rebuild_reduced_weights() {
    wr_.assign(active_.size(), 0.0);
    for (std::size_t a = 0; a + 1 < active_.size(); ++a) {
      int l = active_[a];
      int r = active_[a + 1];
      double H = u_[r] - u_[l];
      for (int j = l + 1; j < r; ++j) {
        double t = (u_[j] - u_[l]) / H;
        wr_[a] += w_[j] * (1.0 - t);
        wr_[a + 1] += w_[j] * t;
      }
    }
    wr_.front() += w_[active_.front()];
    wr_.back() += w_[active_.back()];
    for (std::size_t a = 1; a + 1 < active_.size(); ++a) wr_[a] += w_[active_[a]];
  }

  void newton_on_active() {
    rebuild_reduced_weights();
    std::size_t r = active_.size();
    std::vector<double> g(r), lo(r), di(r), up(r), delta(r), trial(r);
    double obj = reduced_objective();
    for (int it = 0; it < 120; ++it) {
      // gradient and tridiagonal Hessian of the integral term
      std::fill(g.begin(), g.end(), 0.0);
      std::fill(lo.begin(), lo.end(), 0.0);
      std::fill(di.begin(), di.end(), 0.0);
      std::fill(up.begin(), up.end(), 0.0);
      for (std::size_t a = 0; a + 1 < r; ++a) {
        double H = u_[active_[a + 1]] - u_[active_[a]];
        double d1, d2, d11, d12, d22;
        segment_integral_grad(H, phi_[a], phi_[a + 1], &d1, &d2);
        segment_integral_hess(H, phi_[a], phi_[a + 1], &d11, &d12, &d22);
        g[a] -= d1;
        g[a + 1] -= d2;
        di[a] += d11;
        di[a + 1] += d22;
        up[a] += d12;
        lo[a + 1] += d12;
      }
      for (std::size_t a = 0; a < r; ++a) g[a] += wr_[a];
      double gnorm = 0.0;
      for (double v : g) gnorm = std::max(gnorm, std::fabs(v));
      if (gnorm <= 1e-13) break;
      // Thomas solve (H + ridge) delta = g
      double ridge = 1e-13;
      std::vector<double> cp(r), dp(r);
      double denom = di[0] + ridge;
      cp[0] = up[0] / denom;
      dp[0] = g[0] / denom;
      for (std::size_t a = 1; a < r; ++a) {
        denom = di[a] + ridge - lo[a] * cp[a - 1];
        cp[a] = (a + 1 < r ? up[a] : 0.0) / denom;
        dp[a] = (g[a] - lo[a] * dp[a - 1]) / denom;
      }
      delta[r - 1] = dp[r - 1];
      for (std::size_t a = r - 1; a-- > 0;) delta[a] = dp[a] - cp[a] * delta[a + 1];

      double gd = 0.0;
      for (std::size_t a = 0; a < r; ++a) gd += g[a] * delta[a];
      if (gd <= 0.0) break;  // numerical loss of ascent direction
      double t = 1.0;
      bool ok = false;
      double cand_obj = 0.0;
      while (t >= 1e-14) {
        for (std::size_t a = 0; a < r; ++a) {
          trial[a] = std::min(phi_[a] + t * delta[a], cap_);
        }
        std::swap(trial, phi_);
        cand_obj = reduced_objective();
        std::swap(trial, phi_);
        if (cand_obj >= obj + 1e-4 * t * gd) {
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) break;
      for (std::size_t a = 0; a < r; ++a) {
        phi_[a] = std::min(phi_[a] + t * delta[a], cap_);
      }
      double improvement = cand_obj - obj;
      obj = cand_obj;
      if (improvement <= 1e-15 * (1.0 + std::fabs(obj))) break;
    }
  }

  // Returns true when an interior active knot carries a convex bend and was
  // removed (the reduced solution must then be recomputed).
  bool drop_convex_kink() {
    if (active_.size() < 3) return false;
    double worst = -1e-12;
    std::size_t worst_a = 0;
    for (std::size_t a = 1; a + 1 < active_.size(); ++a) {
      double sl = (phi_[a] - phi_[a - 1]) / (u_[active_[a]] - u_[active_[a - 1]]);
      double sr = (phi_[a + 1] - phi_[a]) / (u_[active_[a + 1]] - u_[active_[a]]);
      double bend = sl - sr;  // >= 0 for a concave kink
      if (bend < worst) {
        worst = bend;
        worst_a = a;
      }
    }
    if (worst_a == 0) return false;
    active_.erase(active_.begin() + worst_a);
    phi_.erase(phi_.begin() + worst_a);
    return true;
  }

  void build_full_psi() {
    psi_.assign(m_, 0.0);
    for (std::size_t a = 0; a + 1 < active_.size(); ++a) {
      int l = active_[a];
      int r = active_[a + 1];
      double H = u_[r] - u_[l];
      for (int j = l; j <= r; ++j) {
        double t = (u_[j] - u_[l]) / H;
        psi_[j] = phi_[a] * (1.0 - t) + phi_[a + 1] * t;
      }
    }
  }

  // One-sided optimality over concave bend directions: for each non-active
  // knot j the feasible hat perturbation raises psi_j; an inner product of
  // the full gradient with that hat above tolerance marks an improving kink.
  // Returns the best index, or -1 when optimal.
  int kkt_scan(double kkt_tol) {
    grad_full_.assign(m_, 0.0);
    for (std::size_t j = 0; j + 1 < m_; ++j) {
      double d1, d2;
      segment_integral_grad(u_[j + 1] - u_[j], psi_[j], psi_[j + 1], &d1, &d2);
      grad_full_[j] -= d1;
      grad_full_[j + 1] -= d2;
    }
    for (std::size_t j = 0; j < m_; ++j) grad_full_[j] += w_[j];

    int best = -1;
    double best_val = kkt_tol;
    for (std::size_t a = 0; a + 1 < active_.size(); ++a) {
      int l = active_[a];
      int r = active_[a + 1];
      if (r - l < 2) continue;
      // prefix sums of G*(u-u_l) and suffix sums of G*(u_r-u)
      double left_acc = 0.0;
      std::vector<double> right_acc(r - l, 0.0);
      double acc = 0.0;
      for (int j = r - 1; j > l; --j) {
        acc += grad_full_[j] * (u_[r] - u_[j]);
        right_acc[j - l - 1] = acc;
      }
      for (int j = l + 1; j < r; ++j) {
        left_acc += grad_full_[j] * (u_[j] - u_[l]);
        double val = left_acc / (u_[j] - u_[l]);
        if (j + 1 < r) val += right_acc[j - l] / (u_[r] - u_[j]);
        if (val > best_val && psi_[j] < cap_ - 1e-12) {
          best_val = val;
          best = j;
        }
      }
    }
    return best;
  }

  void insert_active(int j) {
    auto it = std::lower_bound(active_.begin(), active_.end(), j);
    std::size_t pos = static_cast<std::size_t>(it - active_.begin());
    active_.insert(it, j);
    phi_.insert(phi_.begin() + pos, psi_[j]);
  }

  const std::vector<double>& u_;
  const std::vector<double>& w_;
  double cap_;
  double tol_;
  int max_iters_;
  std::size_t m_;
  std::vector<int> active_;
  std::vector<double> phi_;
  std::vector<double> wr_;
  std::vector<double> psi_;
  std::vector<double> seed_;
  std::vector<double> grad_full_;
};

}  // namespace

LogConcaveFit::LogConcaveFit(std::vector<double> knots, std::vector<double> psi,
                             double cap)
    : knots_(std::move(knots)), psi_(std::move(psi)), cap_(cap) {
  if (knots_.size() != psi_.size() || knots_.size() < 2) {
    throw ConfigError("log-concave fit needs matching knot/psi arrays of size >= 2");
  }
  for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
    if (!(knots_[j] < knots_[j + 1])) {
      throw ConfigError("log-concave fit knots must be strictly increasing");
    }
  }
  rebuild();
}

void LogConcaveFit::rebuild() {
  prefix_.assign(knots_.size(), 0.0);
  for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
    prefix_[j + 1] =
        prefix_[j] + segment_integral(knots_[j + 1] - knots_[j], psi_[j], psi_[j + 1]);
  }
  normalization_ = prefix_.back();
  if (!(normalization_ > 0.0) || !std::isfinite(normalization_)) {
    throw NumericalError("log-concave fit has degenerate total mass");
  }
}

double LogConcaveFit::cdf(double z) const {
  if (z <= knots_.front()) return 0.0;
  if (z >= knots_.back()) return 1.0;
  std::size_t hi = static_cast<std::size_t>(
      std::upper_bound(knots_.begin(), knots_.end(), z) - knots_.begin());
  std::size_t j = hi - 1;
  double gap = knots_[j + 1] - knots_[j];
  double slope = (psi_[j + 1] - psi_[j]) / gap;
  double part = segment_integral(z - knots_[j], psi_[j], psi_[j] + slope * (z - knots_[j]));
  return std::clamp((prefix_[j] + part) / normalization_, 0.0, 1.0);
}

double LogConcaveFit::log_unnormalized_density(double z) const {
  if (z < knots_.front() || z > knots_.back()) return kNegInf;
  if (z == knots_.back()) return psi_.back();
  std::size_t hi = static_cast<std::size_t>(
      std::upper_bound(knots_.begin(), knots_.end(), z) - knots_.begin());
  std::size_t j = (hi == 0) ? 0 : hi - 1;
  double gap = knots_[j + 1] - knots_[j];
  double w = (z - knots_[j]) / gap;
  return psi_[j] * (1.0 - w) + psi_[j + 1] * w;
}

double LogConcaveFit::density(double z) const {
  double lp = log_unnormalized_density(z);
  return lp == kNegInf ? 0.0 : std::exp(lp) / normalization_;
}

std::string LogConcaveFit::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << knots_.size() << ' ' << cap_ << '\n';
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    out << knots_[j] << ' ' << psi_[j] << '\n';
  }
  return out.str();
}

LogConcaveFit LogConcaveFit::from_text(const std::string& text) {
  std::istringstream in(text);
  std::size_t m = 0;
  double cap = 0.0;
  if (!(in >> m >> cap)) throw ConfigError("malformed log-concave fit record");
  std::vector<double> knots(m), psi(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (!(in >> knots[j] >> psi[j])) {
      throw ConfigError("malformed log-concave fit record");
    }
  }
  return LogConcaveFit(std::move(knots), std::move(psi), cap);
}

EmpiricalCdf::EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
  if (sorted_.empty()) throw InsufficientDataError("empirical cdf needs samples");
  std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCdf::operator()(double z) const {
  auto it = std::upper_bound(sorted_.begin(), sorted_.end(), z);
  return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double logconcave_objective(const std::vector<double>& knots,
                            const std::vector<double>& weights,
                            const std::vector<double>& psi) {
  if (knots.size() != weights.size() || knots.size() != psi.size()) {
    throw ConfigError("objective needs matching knots/weights/psi");
  }
  double value = 0.0;
  for (std::size_t j = 0; j < psi.size(); ++j) value += weights[j] * psi[j];
  return value - total_integral(knots, psi);
}

LogConcaveFit fit_logconcave(const std::vector<double>& samples,
                             const LogConcaveFitOptions& options,
                             const LogConcaveFit* warm_start) {
  if (samples.size() < 3) {
    throw DegenerateError("log-concave fit needs at least 3 samples");
  }
  std::vector<double> sorted(samples);
  std::sort(sorted.begin(), sorted.end());
  if (!std::isfinite(sorted.front()) || !std::isfinite(sorted.back())) {
    throw NumericalError("log-concave fit given non-finite samples");
  }
  std::vector<double> knots;
  std::vector<double> counts;
  for (double v : sorted) {
    if (knots.empty() || v != knots.back()) {
      knots.push_back(v);
      counts.push_back(1.0);
    } else {
      counts.back() += 1.0;
    }
  }
  if (knots.size() == 1) throw DegenerateError("all samples identical");
  if (knots.size() < 3) throw DegenerateError("log-concave fit needs >= 3 distinct samples");

  std::size_t m = knots.size();
  double n = static_cast<double>(samples.size());
  std::vector<double> w(m);
  for (std::size_t j = 0; j < m; ++j) w[j] = counts[j] / n;

  double cap = std::min(options.cap, 700.0);

  // Seed values: warm-start interpolation when available, else a
  // moment-matched normal log-density.
  std::vector<double> seed(m);
  std::vector<int> initial_active;
  if (warm_start && warm_start->knots().size() >= 2) {
    const auto& wk = warm_start->knots();
    const auto& wp = warm_start->psi_values();
    double slope_lo = (wp[1] - wp[0]) / (wk[1] - wk[0]);
    std::size_t last = wk.size() - 1;
    double slope_hi = (wp[last] - wp[last - 1]) / (wk[last] - wk[last - 1]);
    for (std::size_t j = 0; j < m; ++j) {
      double z = knots[j];
      if (z <= wk.front()) {
        seed[j] = wp.front() + slope_lo * (z - wk.front());
      } else if (z >= wk.back()) {
        seed[j] = wp.back() + slope_hi * (z - wk.back());
      } else {
        seed[j] = warm_start->log_unnormalized_density(z);
      }
      seed[j] = std::min(seed[j], cap);
    }
  } else {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += w[j] * knots[j];
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      var += w[j] * (knots[j] - mean) * (knots[j] - mean);
    }
    var = std::max(var, 1e-12);
    double lognorm = -0.5 * std::log(2.0 * M_PI * var);
    for (std::size_t j = 0; j < m; ++j) {
      double v = lognorm - 0.5 * (knots[j] - mean) * (knots[j] - mean) / var;
      seed[j] = std::min(v, cap);
    }
  }
  initial_active = {0, static_cast<int>(m) - 1};

  ActiveSetSolver solver(knots, w, cap, options.tol, options.max_iters);
  solver.set_seed(std::move(seed));
  auto [pos, psi] = solver.solve(initial_active);

  // Normalizing shift toward unit mass, limited by the cap headroom.
  double I = total_integral(pos, psi);
  double hi = *std::max_element(psi.begin(), psi.end());
  double c = (I < 1e-300) ? cap - hi : -std::log(I);
  if (c > 0.0) c = std::min(c, cap - hi);
  for (double& v : psi) v += c;

  // Prune interior active knots whose bend is indistinguishable from rounding
  // noise: the fit's knots are the genuine bend points plus the endpoints.
  std::vector<double> cknots{pos.front()};
  std::vector<double> cpsi{psi.front()};
  for (std::size_t a = 1; a + 1 < pos.size(); ++a) {
    double sl = (psi[a] - cpsi.back()) / (pos[a] - cknots.back());
    double sr = (psi[a + 1] - psi[a]) / (pos[a + 1] - pos[a]);
    if (sl - sr > 1e-9 * (1.0 + std::fabs(sl) + std::fabs(sr))) {
      cknots.push_back(pos[a]);
      cpsi.push_back(psi[a]);
    }
  }
  cknots.push_back(pos.back());
  cpsi.push_back(psi.back());

  return LogConcaveFit(std::move(cknots), std::move(cpsi), cap);
}

double knot_sandwich_check(const LogConcaveFit& fit, const EmpiricalCdf& ecdf) {
  double inv_n = 1.0 / static_cast<double>(ecdf.size());
  double worst = 0.0;
  for (double u : fit.knots()) {
    double e = ecdf(u);
    double f = fit.cdf(u);
    worst = std::max({worst, e - inv_n - f, f - e});
  }
  return worst;
}

}  // namespace bidsim
