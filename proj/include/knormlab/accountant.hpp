#pragma once

#include <cstdint>
#include <vector>

namespace knormlab {

// Default Renyi order grid: dense fractional low orders plus integers up
// to 64. Covers the (q, sigma) regimes of the shipped configurations.
std::vector<double> default_rdp_orders();

// Renyi divergence of one step of the Poisson-subsampled Gaussian
// mechanism (sensitivity 1, noise sigma, sampling rate q) at order alpha.
// q == 1 is the plain Gaussian mechanism, alpha / (2 sigma^2).
double sgm_rdp(double q, double sigma, double alpha);

// Composes `steps` mechanism invocations linearly in RDP and converts to
// (epsilon, delta): epsilon = min_alpha [steps * rdp(alpha) +
// log(1/delta) / (alpha - 1)]. sigma == 0 yields +infinity.
double rdp_epsilon(double q, double sigma, std::int64_t steps, double delta,
                   const std::vector<double>& orders = default_rdp_orders());

// Binary search for the smallest sigma whose epsilon lands in
// [0.99 * target, target]. Throws ConfigError if sigma would exceed 1e6.
double calibrate_sigma(double target_epsilon, double delta, double q,
                       std::int64_t steps,
                       const std::vector<double>& orders = default_rdp_orders());

// Tracks privacy spent across DP-SGD steps for a fixed (q, sigma, delta).
// Per-step RDP is computed once; epsilon_at is then cheap.
class RdpAccountant {
 public:
  RdpAccountant(double q, double sigma, double delta,
                std::vector<double> orders = default_rdp_orders());

  double epsilon_at(std::int64_t steps) const;
  double epsilon() const { return epsilon_at(steps_); }
  void advance(std::int64_t steps = 1) { steps_ += steps; }
  std::int64_t steps() const { return steps_; }
  double sigma() const { return sigma_; }
  double sampling_rate() const { return q_; }
  double delta() const { return delta_; }

 private:
  double q_, sigma_, delta_;
  std::vector<double> orders_;
  std::vector<double> step_rdp_;  // per-order RDP of a single step
  std::int64_t steps_ = 0;
};

}  // namespace knormlab
