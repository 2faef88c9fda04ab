#include "knormlab/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log(exp(a) - exp(b)) for a >= b.
double log_sub(double a, double b) {
  if (b == -kInf) return a;
  if (a == b) return -kInf;
  return a + std::log1p(-std::exp(b - a));
}

double log_erfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  // asymptotic expansion; relative error < 1e-10 for x >= 25
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(kPi) +
         std::log1p(-0.5 / x2 + 0.75 / (x2 * x2));
}

// log|binom(alpha, i)| for real alpha, with the sign of the coefficient.
double log_binom_signed(double alpha, std::int64_t i, int* sign) {
  *sign = 1;
  double lg = 0.0;
  for (std::int64_t k = 1; k <= i; ++k) {
    double v = (alpha - static_cast<double>(k) + 1.0) / static_cast<double>(k);
    if (v == 0.0) {
      *sign = 0;
      return -kInf;
    }
    if (v < 0.0) {
      *sign = -*sign;
      v = -v;
    }
    lg += std::log(v);
  }
  return lg;
}

// log A_alpha for integer alpha >= 2:
// A = sum_{i=0..alpha} C(alpha,i) (1-q)^(alpha-i) q^i exp((i^2-i)/(2 sigma^2))
double log_a_int(double q, double sigma, std::int64_t alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double acc = -kInf;
  for (std::int64_t i = 0; i <= alpha; ++i) {
    int sign = 0;
    const double lc = log_binom_signed(static_cast<double>(alpha), i, &sign);
    const double term = lc + static_cast<double>(i) * log_q +
                        static_cast<double>(alpha - i) * log_1mq +
                        static_cast<double>(i * i - i) / (2.0 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

// Fractional alpha: two-sided series over the split of the Gaussian mixture
// at z0 (Mironov et al.'s sampled-Gaussian-mechanism analysis). The tail
// decays only polynomially (~ i^{-alpha-1}) so the -30 cutoff can take
// thousands of terms; the binomial factor is tracked incrementally to keep
// each term O(1).
double log_a_frac(double q, double sigma, double alpha) {
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double s2 = 2.0 * sigma * sigma;
  double log_a0 = -kInf, log_a1 = -kInf;
  double lc = 0.0;  // log |binom(alpha, i)|
  int sign = 1;
  for (std::int64_t i = 0;; ++i) {
    if (i > 0) {
      double v = (alpha - static_cast<double>(i) + 1.0) / static_cast<double>(i);
      if (v == 0.0) break;  // integer alpha reached exactly; series ends
      if (v < 0.0) {
        sign = -sign;
        v = -v;
      }
      lc += std::log(v);
    }
    const double fi = static_cast<double>(i);
    const double j = alpha - fi;
    const double log_t0 = lc + fi * log_q + j * log_1mq;
    const double log_t1 = lc + j * log_q + fi * log_1mq;
    const double log_e0 =
        std::log(0.5) + log_erfc((fi - z0) / (std::sqrt(2.0) * sigma));
    const double log_e1 =
        std::log(0.5) + log_erfc((z0 - j) / (std::sqrt(2.0) * sigma));
    const double log_s0 = log_t0 + (fi * fi - fi) / s2 + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / s2 + log_e1;
    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0 && fi > alpha) break;
    if (i > 1000000)
      throw ContractError("subsampled-Gaussian RDP series did not converge");
  }
  return log_add(log_a0, log_a1);
}

void validate_mechanism(double q, double sigma) {
  if (!(q > 0.0) || q > 1.0)
    throw ContractError("sampling rate q must be in (0,1], got " +
                        std::to_string(q));
  if (sigma < 0.0)
    throw ContractError("noise multiplier must be >= 0, got " +
                        std::to_string(sigma));
}

}  // namespace

std::vector<double> default_rdp_orders() {
  std::vector<double> orders = {1.25, 1.5, 1.75};
  for (int a = 2; a <= 64; ++a) orders.push_back(static_cast<double>(a));
  // high orders keep the log(1/delta)/(alpha-1) conversion term from
  // flooring epsilon in the large-sigma regime
  for (double a : {128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0})
    orders.push_back(a);
  return orders;
}

double sgm_rdp(double q, double sigma, double alpha) {
  validate_mechanism(q, sigma);
  if (alpha <= 1.0)
    throw ContractError("RDP order must be > 1, got " + std::to_string(alpha));
  if (sigma == 0.0) return kInf;
  if (q == 1.0) return alpha / (2.0 * sigma * sigma);
  const bool integral = std::floor(alpha) == alpha;
  const double log_a = integral
                           ? log_a_int(q, sigma, static_cast<std::int64_t>(alpha))
                           : log_a_frac(q, sigma, alpha);
  return log_a / (alpha - 1.0);
}

double rdp_epsilon(double q, double sigma, std::int64_t steps, double delta,
                   const std::vector<double>& orders) {
  validate_mechanism(q, sigma);
  if (!(delta > 0.0) || delta >= 1.0)
    throw ContractError("delta must be in (0,1), got " + std::to_string(delta));
  if (steps < 0) throw ContractError("step count must be >= 0");
  if (orders.empty()) throw ContractError("empty RDP order grid");
  if (steps == 0) return 0.0;
  if (sigma == 0.0) return kInf;
  const double log_inv_delta = std::log(1.0 / delta);
  double best = kInf;
  for (double alpha : orders) {
    // the fractional series is only convergent for q < 1/2; integer orders
    // always apply
    if (std::floor(alpha) != alpha && q > 0.5 && q < 1.0) continue;
    const double rdp = static_cast<double>(steps) * sgm_rdp(q, sigma, alpha);
    const double eps = rdp + log_inv_delta / (alpha - 1.0);
    best = std::min(best, eps);
  }
  return best;
}

double calibrate_sigma(double target_epsilon, double delta, double q,
                       std::int64_t steps, const std::vector<double>& orders) {
  if (!(target_epsilon > 0.0))
    throw ContractError("target epsilon must be > 0");
  validate_mechanism(q, 1.0);
  if (steps <= 0) throw ContractError("step count must be >= 1");
  constexpr double kCeiling = 1e6;

  auto eps_of = [&](double sigma) {
    return rdp_epsilon(q, sigma, steps, delta, orders);
  };

  double lo = 1e-6;
  if (eps_of(lo) <= target_epsilon) return lo;  // target met by any noise
  double hi = 1.0;
  while (eps_of(hi) > target_epsilon) {
    hi *= 2.0;
    if (hi > kCeiling)
      throw ConfigError("sigma calibration exceeded search ceiling 1e6; "
                        "target epsilon " + std::to_string(target_epsilon) +
                        " is unreachable for these settings");
  }
  lo = std::max(lo, hi / 2.0);
  // shrink until epsilon(hi) sits within 1% below the target (and the
  // interval itself is tight to relative 1e-3)
  for (int iter = 0; iter < 200; ++iter) {
    if (eps_of(hi) >= 0.99 * target_epsilon && (hi - lo) <= 1e-3 * hi) break;
    const double mid = 0.5 * (lo + hi);
    if (eps_of(mid) <= target_epsilon)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

RdpAccountant::RdpAccountant(double q, double sigma, double delta,
                             std::vector<double> orders)
    : q_(q), sigma_(sigma), delta_(delta), orders_(std::move(orders)) {
  validate_mechanism(q_, sigma_);
  if (!(delta_ > 0.0) || delta_ >= 1.0)
    throw ContractError("delta must be in (0,1)");
  step_rdp_.reserve(orders_.size());
  for (double alpha : orders_) {
    if (std::floor(alpha) != alpha && q_ > 0.5 && q_ < 1.0) {
      step_rdp_.push_back(kInf);
      continue;
    }
    step_rdp_.push_back(sigma_ == 0.0 ? kInf : sgm_rdp(q_, sigma_, alpha));
  }
}

double RdpAccountant::epsilon_at(std::int64_t steps) const {
  if (steps <= 0) return 0.0;
  if (sigma_ == 0.0) return kInf;
  const double log_inv_delta = std::log(1.0 / delta_);
  double best = kInf;
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    if (step_rdp_[i] == kInf) continue;
    best = std::min(best, static_cast<double>(steps) * step_rdp_[i] +
                              log_inv_delta / (orders_[i] - 1.0));
  }
  return best;
}

}  // namespace knormlab
