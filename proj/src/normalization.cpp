#include "knormlab/normalization.hpp"

#include <cmath>

#include "knormlab/errors.hpp"

namespace knormlab {

void build_unit_masks(const ConvGeom& geom, const KernelNormOpts& opts,
                      const NormCtx& ctx, Tensor* stat_w, Tensor* out_mask,
                      std::vector<double>* divisors) {
  const std::int64_t n = geom.n, u = geom.unit_size(), l = geom.num_windows();
  const double p = ctx.training ? opts.dropout_p : 0.0;
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout probability must be in [0,1), got " +
                        std::to_string(p));
  if (p > 0.0 && ctx.rng == nullptr)
    throw ContractError("dropout requires an rng");
  const double keep_w = (opts.rescale_kept && p > 0.0) ? 1.0 / (1.0 - p) : 1.0;

  *stat_w = Tensor({n, u, l});
  const bool exclude = opts.exclude_padding && (geom.ph > 0 || geom.pw > 0);
  if (exclude) *out_mask = Tensor({n, u, l});
  divisors->assign(static_cast<std::size_t>(n * l),
                   static_cast<double>(u));

  for (std::int64_t nn = 0; nn < n; ++nn) {
    const std::uint64_t sid = ctx.sample_id(nn);
    for (std::int64_t c = 0; c < geom.c; ++c)
      for (std::int64_t i = 0; i < geom.kh; ++i)
        for (std::int64_t j = 0; j < geom.kw; ++j) {
          const std::int64_t uu = (c * geom.kh + i) * geom.kw + j;
          for (std::int64_t oh = 0; oh < geom.ho; ++oh)
            for (std::int64_t ow = 0; ow < geom.wo; ++ow) {
              const std::int64_t ll = oh * geom.wo + ow;
              const std::int64_t idx = (nn * u + uu) * l + ll;
              bool valid = true;
              if (exclude) {
                const std::int64_t hh = oh * geom.sh + i - geom.ph;
                const std::int64_t ww = ow * geom.sw + j - geom.pw;
                valid = hh >= 0 && hh < geom.h && ww >= 0 && ww < geom.w;
                (*out_mask)[idx] = valid ? 1.0 : 0.0;
              }
              bool kept = true;
              if (p > 0.0)
                kept = ctx.rng->uniform(
                           RngStream::kDropout, ctx.layer_id, ctx.step, sid,
                           static_cast<std::uint64_t>(uu * l + ll)) >= p;
              (*stat_w)[idx] = (kept && valid) ? keep_w : 0.0;
            }
        }
    if (exclude) {
      for (std::int64_t ll = 0; ll < l; ++ll) {
        double cnt = 0.0;
        for (std::int64_t uu = 0; uu < u; ++uu)
          cnt += (*out_mask)[(nn * u + uu) * l + ll];
        // fully-padded window (degenerate geometry): keep the divisor sane
        (*divisors)[static_cast<std::size_t>(nn * l + ll)] =
            cnt > 0.0 ? cnt : 1.0;
      }
    }
  }
}

Var conv2d_op(Tape& tape, Var x, Var weight, Var bias, std::int64_t sh,
              std::int64_t sw, std::int64_t ph, std::int64_t pw) {
  const Tensor& tw = tape.value(weight);
  if (tw.rank() != 4) throw ContractError("conv2d weight must be [F,C,kh,kw]");
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 4) throw ContractError("conv2d input must be [N,C,H,W]");
  if (tx.dim(1) != tw.dim(1))
    throw ContractError("conv2d: input channels " + std::to_string(tx.dim(1)) +
                        " vs weight channels " + std::to_string(tw.dim(1)) +
                        " (axis 1)");
  const ConvGeom g = make_conv_geom(tx.shape(), tw.dim(2), tw.dim(3), sh, sw, ph, pw);
  const std::int64_t f = tw.dim(0);
  Var cols = tape.im2col(x, g);
  Var wmat = tape.reshape(weight, {f, g.unit_size()});
  Var out = tape.contract_patches(wmat, cols);
  out = tape.reshape(out, {g.n, f, g.ho, g.wo});
  if (bias.valid()) out = tape.add_channel_bias(out, bias);
  return out;
}

Var knconv_op(Tape& tape, Var x, Var weight, Var bias, std::int64_t sh,
              std::int64_t sw, std::int64_t ph, std::int64_t pw,
              const KernelNormOpts& opts, const NormCtx& ctx) {
  const Tensor& tw = tape.value(weight);
  if (tw.rank() != 4) throw ContractError("knconv weight must be [F,C,kh,kw]");
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 4) throw ContractError("knconv input must be [N,C,H,W]");
  if (tx.dim(1) != tw.dim(1))
    throw ContractError("knconv: input channels " + std::to_string(tx.dim(1)) +
                        " vs weight channels " + std::to_string(tw.dim(1)) +
                        " (axis 1)");
  const ConvGeom g = make_conv_geom(tx.shape(), tw.dim(2), tw.dim(3), sh, sw, ph, pw);
  const std::int64_t f = tw.dim(0);
  Var cols = tape.im2col(x, g);
  Tensor stat_w, out_mask;
  std::vector<double> divisors;
  build_unit_masks(g, opts, ctx, &stat_w, &out_mask, &divisors);
  Var ncols = tape.normalize_units(cols, stat_w, out_mask, divisors, opts.eps);
  Var wmat = tape.reshape(weight, {f, g.unit_size()});
  Var out = tape.contract_patches(wmat, ncols);
  out = tape.reshape(out, {g.n, f, g.ho, g.wo});
  if (bias.valid()) out = tape.add_channel_bias(out, bias);
  return out;
}

Var kernelnorm_layer_op(Tape& tape, Var x, std::int64_t kh, std::int64_t kw,
                        std::int64_t sh, std::int64_t sw,
                        const KernelNormOpts& opts, const NormCtx& ctx) {
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 4) throw ContractError("kernelnorm input must be [N,C,H,W]");
  const ConvGeom g = make_conv_geom(tx.shape(), kh, kw, sh, sw, 0, 0);
  Var cols = tape.im2col(x, g);
  Tensor stat_w, out_mask;
  std::vector<double> divisors;
  build_unit_masks(g, opts, ctx, &stat_w, &out_mask, &divisors);
  Var ncols = tape.normalize_units(cols, stat_w, out_mask, divisors, opts.eps);
  return tape.window_grid(ncols, g);
}

Var group_norm_op(Tape& tape, Var x, std::int64_t group, Var gamma, Var beta,
                  double eps) {
  return tape.group_norm(x, group, gamma, beta, eps);
}

Var layer_norm_op(Tape& tape, Var x, Var gamma, Var beta, double eps) {
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 4) throw ContractError("layer_norm input must be [N,C,H,W]");
  return tape.group_norm(x, tx.dim(1), gamma, beta, eps);
}

// --- tensor-level wrappers: run a throwaway tape and return the value ---

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias,
              std::pair<std::int64_t, std::int64_t> stride,
              std::pair<std::int64_t, std::int64_t> padding) {
  Tape t;
  Var vx = t.leaf(x);
  Var vw = t.leaf(weight);
  Var vb = bias ? t.leaf(*bias) : Var{};
  return t.value(conv2d_op(t, vx, vw, vb, stride.first, stride.second,
                           padding.first, padding.second));
}

Tensor kernel_normalize_unit(const Tensor& unit, double p,
                             const CounterRng& rng, double eps,
                             const NormCtx& ctx, bool rescale_kept) {
  if (unit.rank() != 3)
    throw ContractError("kernel_normalize_unit expects a (c,kh,kw) unit");
  if (unit.numel() == 0) throw ContractError("empty normalization unit");
  Tape t;
  Var u = t.leaf(unit);
  // one window covering the whole unit
  Var cols = t.reshape(u, {1, unit.numel(), 1});
  KernelNormOpts opts;
  opts.dropout_p = p;
  opts.eps = eps;
  opts.rescale_kept = rescale_kept;
  ConvGeom g = make_conv_geom({1, unit.dim(0), unit.dim(1), unit.dim(2)},
                              unit.dim(1), unit.dim(2), 1, 1, 0, 0);
  NormCtx c = ctx;
  c.rng = &rng;
  c.training = p > 0.0;
  Tensor stat_w, out_mask;
  std::vector<double> divisors;
  build_unit_masks(g, opts, c, &stat_w, &out_mask, &divisors);
  Var ncols = t.normalize_units(cols, stat_w, out_mask, divisors, eps);
  return t.value(t.reshape(ncols, unit.shape()));
}

Tensor knconv(const Tensor& x, const Tensor& weight, const Tensor* bias,
              std::pair<std::int64_t, std::int64_t> stride,
              std::pair<std::int64_t, std::int64_t> padding,
              const KernelNormOpts& opts, const NormCtx& ctx) {
  Tape t;
  Var vx = t.leaf(x);
  Var vw = t.leaf(weight);
  Var vb = bias ? t.leaf(*bias) : Var{};
  return t.value(knconv_op(t, vx, vw, vb, stride.first, stride.second,
                           padding.first, padding.second, opts, ctx));
}

Tensor kernelnorm_layer(const Tensor& x,
                        std::pair<std::int64_t, std::int64_t> kernel,
                        std::pair<std::int64_t, std::int64_t> stride,
                        const KernelNormOpts& opts, const NormCtx& ctx) {
  Tape t;
  Var vx = t.leaf(x);
  return t.value(kernelnorm_layer_op(t, vx, kernel.first, kernel.second,
                                     stride.first, stride.second, opts, ctx));
}

Tensor layer_normalize(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  Tape t;
  Var vx = t.leaf(x);
  return t.value(layer_norm_op(t, vx, t.leaf(gamma), t.leaf(beta), eps));
}

Tensor group_normalize(const Tensor& x, std::int64_t group,
                       const Tensor& gamma, const Tensor& beta, double eps) {
  Tape t;
  Var vx = t.leaf(x);
  return t.value(group_norm_op(t, vx, group, t.leaf(gamma), t.leaf(beta), eps));
}

Tensor no_norm(const Tensor& x) { return x; }

std::pair<Tensor, Tensor> dropout(const Tensor& x, double p,
                                  const CounterRng& rng,
                                  std::uint64_t layer_id, std::uint64_t step,
                                  std::uint64_t sample_id) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout probability must be in [0,1), got " +
                        std::to_string(p));
  Tensor mask = Tensor::full(x.shape(), 1.0);
  if (p > 0.0)
    for (std::int64_t i = 0; i < mask.numel(); ++i)
      mask[i] = rng.uniform(RngStream::kDropout, layer_id, step, sample_id,
                            static_cast<std::uint64_t>(i)) >= p
                    ? 1.0
                    : 0.0;
  Tensor out = x;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return {std::move(out), std::move(mask)};
}

}  // namespace knormlab
