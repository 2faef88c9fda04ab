#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "knormlab/rng.hpp"
#include "knormlab/tape.hpp"
#include "knormlab/tensor.hpp"

namespace knormlab {

// KernelNorm hyperparameters. Defaults follow the normalization contract:
// statistics are taken over the dropped-out unit with kept elements
// unscaled and the divisor fixed at the unit size; padded zeros count as
// unit elements. Both switches below flip those readings and are exposed
// through the config (norm.rescale_kept, norm.exclude_padding).
struct KernelNormOpts {
  double dropout_p = 0.0;
  double eps = 1e-5;
  bool rescale_kept = false;
  bool exclude_padding = false;
};

// Randomness context for a normalization op. sample_ids maps batch row ->
// dataset sample id so masks do not depend on batch composition; empty
// means row index. training == false forces p = 0.
struct NormCtx {
  const CounterRng* rng = nullptr;
  std::uint64_t layer_id = 0;
  std::uint64_t step = 0;
  std::vector<std::uint64_t> sample_ids;
  bool training = false;

  std::uint64_t sample_id(std::int64_t row) const {
    return sample_ids.empty() ? static_cast<std::uint64_t>(row)
                              : sample_ids[static_cast<std::size_t>(row)];
  }
};

// Dropout/validity weights for every unit of an im2col patch matrix.
// Fills stat_w [N,U,L], out_mask (empty unless padding is excluded) and the
// per-unit divisors.
void build_unit_masks(const ConvGeom& geom, const KernelNormOpts& opts,
                      const NormCtx& ctx, Tensor* stat_w, Tensor* out_mask,
                      std::vector<double>* divisors);

// --- tape builders (differentiable) ---

Var conv2d_op(Tape& tape, Var x, Var weight, Var bias, std::int64_t sh,
              std::int64_t sw, std::int64_t ph, std::int64_t pw);
Var knconv_op(Tape& tape, Var x, Var weight, Var bias, std::int64_t sh,
              std::int64_t sw, std::int64_t ph, std::int64_t pw,
              const KernelNormOpts& opts, const NormCtx& ctx);
Var kernelnorm_layer_op(Tape& tape, Var x, std::int64_t kh, std::int64_t kw,
                        std::int64_t sh, std::int64_t sw,
                        const KernelNormOpts& opts, const NormCtx& ctx);
Var group_norm_op(Tape& tape, Var x, std::int64_t group, Var gamma, Var beta,
                  double eps);
Var layer_norm_op(Tape& tape, Var x, Var gamma, Var beta, double eps);

// --- tensor-level forms (evaluation, oracles, bindings) ---

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias,
              std::pair<std::int64_t, std::int64_t> stride,
              std::pair<std::int64_t, std::int64_t> padding);

// Normalizes one (c,kh,kw) unit: statistics over the dropped-out copy,
// output standardizes the original elements.
Tensor kernel_normalize_unit(const Tensor& unit, double p,
                             const CounterRng& rng, double eps,
                             const NormCtx& ctx = {}, bool rescale_kept = false);

Tensor knconv(const Tensor& x, const Tensor& weight, const Tensor* bias,
              std::pair<std::int64_t, std::int64_t> stride,
              std::pair<std::int64_t, std::int64_t> padding,
              const KernelNormOpts& opts, const NormCtx& ctx);

Tensor kernelnorm_layer(const Tensor& x,
                        std::pair<std::int64_t, std::int64_t> kernel,
                        std::pair<std::int64_t, std::int64_t> stride,
                        const KernelNormOpts& opts, const NormCtx& ctx);

Tensor layer_normalize(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps);
Tensor group_normalize(const Tensor& x, std::int64_t group,
                       const Tensor& gamma, const Tensor& beta, double eps);
Tensor no_norm(const Tensor& x);

// Elementwise dropout: zeroes with probability p, no rescaling. Returns
// the masked tensor and the 0/1 keep mask. p must be in [0,1).
std::pair<Tensor, Tensor> dropout(const Tensor& x, double p,
                                  const CounterRng& rng,
                                  std::uint64_t layer_id = 0,
                                  std::uint64_t step = 0,
                                  std::uint64_t sample_id = 0);

}  // namespace knormlab
