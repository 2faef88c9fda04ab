#pragma once

#include <cstdint>
#include <vector>

#include "knormlab/accountant.hpp"
#include "knormlab/data.hpp"
#include "knormlab/model.hpp"
#include "knormlab/rng.hpp"

namespace knormlab {

// The DP-SGD contract: target budget, clipping norm, noise multiplier,
// sampling rate and planned step count.
struct PrivacySpec {
  double epsilon = 0.0;  // <= 0 disables the budget check (degenerate runs)
  double delta = 1e-5;
  double clip = 1.0;  // L2 bound C; +inf disables clipping
  double sigma = 0.0;
  double sampling_rate = 0.0;  // q = B/N
  std::int64_t steps = 0;      // planned T
};

// K gradient views per sample, averaged before clipping. K == 1 with the
// identity transform is plain DP-SGD.
struct AugmentationPolicy {
  std::vector<AugTransform> transforms = {AugTransform::kIdentity};
  std::int64_t crop_pad = 4;
  std::int64_t multiplicity() const {
    return static_cast<std::int64_t>(transforms.size());
  }
};

struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<std::int64_t> labels;
  std::vector<std::uint64_t> sample_ids;  // dataset ids, keys rng streams

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Tensor image(std::int64_t i) const;  // {C,H,W}
};

Batch batch_from(const Dataset& d, const std::vector<std::int64_t>& indices);

// One flattened gradient vector per sample, plus the per-sample loss
// (averaged over augmentation views).
struct PerSampleGrads {
  std::vector<std::vector<double>> grads;
  std::vector<double> losses;

  std::int64_t dim() const {
    return grads.empty() ? 0 : static_cast<std::int64_t>(grads.front().size());
  }
  double mean_loss() const;
};

// Per-sample gradients via independent tapes (one per sample view); the
// K view gradients of a sample are averaged BEFORE clipping. Rejects
// batch-dependent layers.
PerSampleGrads per_sample_gradients(const ModelGraph& model, const Batch& batch,
                                    const AugmentationPolicy& policy,
                                    const CounterRng& rng, std::uint64_t step,
                                    int threads = 1);

// g <- g * min(1, C / ||g||); never rescales upward.
void clip_per_sample(PerSampleGrads& grads, double clip);

// (sum_i g_i + N(0, sigma^2 C^2 I)) / batch_size. sigma == 0 degenerates to
// the plain mean of the clipped gradients.
std::vector<double> noisy_aggregate(const PerSampleGrads& grads, double clip,
                                    double sigma, std::int64_t batch_size,
                                    const CounterRng& rng, std::uint64_t step);

struct DpStepStats {
  double mean_loss = 0.0;
  double epsilon_spent = 0.0;
};

// One DP-SGD step: per-sample gradients -> clip -> noisy aggregate ->
// W <- W - lr * g. Throws BudgetExhaustedError if the step would exceed
// spec.epsilon (checked only when sigma > 0 and a positive budget is set).
DpStepStats dp_sgd_step(ModelGraph& model, const Batch& batch,
                        const PrivacySpec& spec, double lr,
                        const AugmentationPolicy& policy, const CounterRng& rng,
                        RdpAccountant& accountant, int threads = 1);

}  // namespace knormlab
