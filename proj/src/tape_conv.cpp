#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "knormlab/errors.hpp"
#include "knormlab/tape.hpp"

namespace knormlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

}  // namespace

ConvGeom make_conv_geom(const Shape& input, std::int64_t kh, std::int64_t kw,
                        std::int64_t sh, std::int64_t sw, std::int64_t ph,
                        std::int64_t pw) {
  if (input.size() != 4)
    throw ContractError("expected 4-D NCHW input, got " +
                        shape_to_string(input));
  ConvGeom g;
  g.n = input[0];
  g.c = input[1];
  g.h = input[2];
  g.w = input[3];
  g.kh = kh;
  g.kw = kw;
  g.sh = sh;
  g.sw = sw;
  g.ph = ph;
  g.pw = pw;
  if (kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0 || ph < 0 || pw < 0)
    throw ContractError("invalid window geometry");
  if (kh > g.h + 2 * ph)
    throw ContractError("kernel height " + std::to_string(kh) +
                        " exceeds padded input height " +
                        std::to_string(g.h + 2 * ph) + " (axis 2)");
  if (kw > g.w + 2 * pw)
    throw ContractError("kernel width " + std::to_string(kw) +
                        " exceeds padded input width " +
                        std::to_string(g.w + 2 * pw) + " (axis 3)");
  g.ho = (g.h + 2 * ph - kh) / sh + 1;
  g.wo = (g.w + 2 * pw - kw) / sw + 1;
  return g;
}

Var Tape::im2col(Var x, const ConvGeom& g) {
  const Tensor& tx = value(x);
  if (tx.rank() != 4 || tx.dim(0) != g.n || tx.dim(1) != g.c ||
      tx.dim(2) != g.h || tx.dim(3) != g.w)
    throw ContractError("im2col: input " + shape_to_string(tx.shape()) +
                        " does not match geometry");
  const std::int64_t u = g.unit_size(), l = g.num_windows();
  Tensor out({g.n, u, l});
  for (std::int64_t nn = 0; nn < g.n; ++nn)
    for (std::int64_t c = 0; c < g.c; ++c)
      for (std::int64_t i = 0; i < g.kh; ++i)
        for (std::int64_t j = 0; j < g.kw; ++j) {
          const std::int64_t uu = (c * g.kh + i) * g.kw + j;
          double* dst = out.data() + (nn * u + uu) * l;
          for (std::int64_t oh = 0; oh < g.ho; ++oh) {
            const std::int64_t hh = oh * g.sh + i - g.ph;
            for (std::int64_t ow = 0; ow < g.wo; ++ow) {
              const std::int64_t ww = ow * g.sw + j - g.pw;
              dst[oh * g.wo + ow] =
                  (hh >= 0 && hh < g.h && ww >= 0 && ww < g.w)
                      ? tx.at4(nn, c, hh, ww)
                      : 0.0;
            }
          }
        }
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o, g](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& gr = t.adjoints_[o.id];
    Tensor& gx = t.grad_buffer(x.id);
    const std::int64_t u = g.unit_size(), l = g.num_windows();
    for (std::int64_t nn = 0; nn < g.n; ++nn)
      for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t i = 0; i < g.kh; ++i)
          for (std::int64_t j = 0; j < g.kw; ++j) {
            const std::int64_t uu = (c * g.kh + i) * g.kw + j;
            const double* src = gr.data() + (nn * u + uu) * l;
            for (std::int64_t oh = 0; oh < g.ho; ++oh) {
              const std::int64_t hh = oh * g.sh + i - g.ph;
              if (hh < 0 || hh >= g.h) continue;
              for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                const std::int64_t ww = ow * g.sw + j - g.pw;
                if (ww < 0 || ww >= g.w) continue;
                gx.at4(nn, c, hh, ww) += src[oh * g.wo + ow];
              }
            }
          }
  };
  return o;
}

Var Tape::contract_patches(Var w, Var cols) {
  const Tensor& tw = value(w);
  const Tensor& tc = value(cols);
  if (tw.rank() != 2 || tc.rank() != 3)
    throw ContractError("contract_patches expects w[F,U], cols[N,U,L]");
  if (tw.dim(1) != tc.dim(1))
    throw ContractError("contract_patches: unit size mismatch, weight has " +
                        std::to_string(tw.dim(1)) + " but patches have " +
                        std::to_string(tc.dim(1)) + " (axis 1)");
  const std::int64_t f = tw.dim(0), u = tw.dim(1), n = tc.dim(0), l = tc.dim(2);
  Tensor out({n, f, l});
  for (std::int64_t nn = 0; nn < n; ++nn)
    MapRM(out.data() + nn * f * l, f, l).noalias() =
        CMapRM(tw.data(), f, u) * CMapRM(tc.data() + nn * u * l, u, l);
  const bool req = node(w).requires_grad || node(cols).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [w, cols, o, f, u, n, l](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    if (t.node(w).requires_grad) {
      Tensor& gw = t.grad_buffer(w.id);
      MapRM gwm(gw.data(), f, u);
      for (std::int64_t nn = 0; nn < n; ++nn)
        gwm.noalias() += CMapRM(g.data() + nn * f * l, f, l) *
                         CMapRM(t.value(cols).data() + nn * u * l, u, l).transpose();
    }
    if (t.node(cols).requires_grad) {
      Tensor& gc = t.grad_buffer(cols.id);
      for (std::int64_t nn = 0; nn < n; ++nn)
        MapRM(gc.data() + nn * u * l, u, l).noalias() +=
            CMapRM(t.value(w).data(), f, u).transpose() *
            CMapRM(g.data() + nn * f * l, f, l);
    }
  };
  return o;
}

Var Tape::add_channel_bias(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  if (tx.rank() != 4)
    throw ContractError("add_channel_bias expects 4-D input");
  if (tb.numel() != tx.dim(1))
    throw ContractError("bias length " + std::to_string(tb.numel()) +
                        " vs channel count " + std::to_string(tx.dim(1)) +
                        " (axis 1)");
  const std::int64_t n = tx.dim(0), c = tx.dim(1), hw = tx.dim(2) * tx.dim(3);
  Tensor out = tx;
  for (std::int64_t nn = 0; nn < n; ++nn)
    for (std::int64_t cc = 0; cc < c; ++cc) {
      double* p = out.data() + (nn * c + cc) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += tb[cc];
    }
  const bool req = node(x).requires_grad || node(bias).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [x, bias, o, n, c, hw](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    if (t.node(x).requires_grad) {
      Tensor& gx = t.grad_buffer(x.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (t.node(bias).requires_grad) {
      Tensor& gb = t.grad_buffer(bias.id);
      for (std::int64_t nn = 0; nn < n; ++nn)
        for (std::int64_t cc = 0; cc < c; ++cc) {
          const double* p = g.data() + (nn * c + cc) * hw;
          double s = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) s += p[i];
          gb[cc] += s;
        }
    }
  };
  return o;
}

Var Tape::max_pool2d(Var x, std::int64_t k) {
  const Tensor& tx = value(x);
  if (tx.rank() != 4) throw ContractError("max_pool2d expects 4-D input");
  if (k <= 0) throw ContractError("max_pool2d: window must be positive");
  const std::int64_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  if (h < k)
    throw ContractError("max_pool2d: window " + std::to_string(k) +
                        " exceeds input height " + std::to_string(h) +
                        " (axis 2)");
  if (w < k)
    throw ContractError("max_pool2d: window " + std::to_string(k) +
                        " exceeds input width " + std::to_string(w) +
                        " (axis 3)");
  const std::int64_t ho = h / k, wo = w / k;
  Tensor out({n, c, ho, wo});
  // argmax scan is first-maximum in row-major order, so ties are stable.
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(n * c * ho * wo));
  std::int64_t idx = 0;
  for (std::int64_t nn = 0; nn < n; ++nn)
    for (std::int64_t cc = 0; cc < c; ++cc)
      for (std::int64_t oh = 0; oh < ho; ++oh)
        for (std::int64_t ow = 0; ow < wo; ++ow, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t besti = -1;
          for (std::int64_t i = 0; i < k; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t hh = oh * k + i, ww = ow * k + j;
              const double v = tx.at4(nn, cc, hh, ww);
              if (v > best) {
                best = v;
                besti = ((nn * c + cc) * h + hh) * w + ww;
              }
            }
          out.at4(nn, cc, oh, ow) = best;
          (*arg)[static_cast<std::size_t>(idx)] = besti;
        }
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o, arg](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      gx[(*arg)[static_cast<std::size_t>(i)]] += g[i];
  };
  return o;
}

Var Tape::adaptive_avg_pool2d(Var x, std::int64_t oh, std::int64_t ow) {
  const Tensor& tx = value(x);
  if (tx.rank() != 4) throw ContractError("adaptive_avg_pool2d expects 4-D input");
  const std::int64_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  if (oh <= 0 || ow <= 0 || oh > h || ow > w)
    throw ContractError("adaptive_avg_pool2d: output " + std::to_string(oh) +
                        "x" + std::to_string(ow) + " invalid for input " +
                        std::to_string(h) + "x" + std::to_string(w));
  Tensor out({n, c, oh, ow});
  for (std::int64_t nn = 0; nn < n; ++nn)
    for (std::int64_t cc = 0; cc < c; ++cc)
      for (std::int64_t i = 0; i < oh; ++i) {
        const std::int64_t hs = (i * h) / oh, he = ((i + 1) * h + oh - 1) / oh;
        for (std::int64_t j = 0; j < ow; ++j) {
          const std::int64_t ws = (j * w) / ow, we = ((j + 1) * w + ow - 1) / ow;
          double s = 0.0;
          for (std::int64_t hh = hs; hh < he; ++hh)
            for (std::int64_t ww = ws; ww < we; ++ww) s += tx.at4(nn, cc, hh, ww);
          out.at4(nn, cc, i, j) =
              s / static_cast<double>((he - hs) * (we - ws));
        }
      }
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o, oh, ow, h, w, n, c](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t nn = 0; nn < n; ++nn)
      for (std::int64_t cc = 0; cc < c; ++cc)
        for (std::int64_t i = 0; i < oh; ++i) {
          const std::int64_t hs = (i * h) / oh, he = ((i + 1) * h + oh - 1) / oh;
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t ws = (j * w) / ow, we = ((j + 1) * w + ow - 1) / ow;
            const double gv = g.at4(nn, cc, i, j) /
                              static_cast<double>((he - hs) * (we - ws));
            for (std::int64_t hh = hs; hh < he; ++hh)
              for (std::int64_t ww = ws; ww < we; ++ww)
                gx.at4(nn, cc, hh, ww) += gv;
          }
        }
  };
  return o;
}

Var Tape::window_grid(Var cols, const ConvGeom& g) {
  const Tensor& tc = value(cols);
  const std::int64_t u = g.unit_size(), l = g.num_windows();
  if (tc.rank() != 3 || tc.dim(0) != g.n || tc.dim(1) != u || tc.dim(2) != l)
    throw ContractError("window_grid: cols " + shape_to_string(tc.shape()) +
                        " do not match geometry");
  Tensor out({g.n, g.c, g.kh * g.ho, g.kw * g.wo});
  for (std::int64_t nn = 0; nn < g.n; ++nn)
    for (std::int64_t c = 0; c < g.c; ++c)
      for (std::int64_t r = 0; r < g.kh; ++r)
        for (std::int64_t q = 0; q < g.kw; ++q) {
          const std::int64_t uu = (c * g.kh + r) * g.kw + q;
          const double* src = tc.data() + (nn * u + uu) * l;
          for (std::int64_t i = 0; i < g.ho; ++i)
            for (std::int64_t j = 0; j < g.wo; ++j)
              out.at4(nn, c, i * g.kh + r, j * g.kw + q) = src[i * g.wo + j];
        }
  Var o = push(std::move(out), node(cols).requires_grad, nullptr);
  nodes_[o.id].back = [cols, o, g](Tape& t) {
    if (!t.node(cols).requires_grad) return;
    const Tensor& gr = t.adjoints_[o.id];
    Tensor& gc = t.grad_buffer(cols.id);
    const std::int64_t u = g.unit_size(), l = g.num_windows();
    for (std::int64_t nn = 0; nn < g.n; ++nn)
      for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t r = 0; r < g.kh; ++r)
          for (std::int64_t q = 0; q < g.kw; ++q) {
            const std::int64_t uu = (c * g.kh + r) * g.kw + q;
            double* dst = gc.data() + (nn * u + uu) * l;
            for (std::int64_t i = 0; i < g.ho; ++i)
              for (std::int64_t j = 0; j < g.wo; ++j)
                dst[i * g.wo + j] += gr.at4(nn, c, i * g.kh + r, j * g.kw + q);
          }
  };
  return o;
}

Var Tape::normalize_units(Var cols, const Tensor& stat_w,
                          const Tensor& out_mask,
                          const std::vector<double>& divisors, double eps) {
  const Tensor& tc = value(cols);
  if (tc.rank() != 3)
    throw ContractError("normalize_units expects cols[N,U,L]");
  if (!tc.same_shape(stat_w))
    throw ContractError("normalize_units: stat weights shape " +
                        shape_to_string(stat_w.shape()) + " vs cols " +
                        shape_to_string(tc.shape()));
  const bool masked_out = out_mask.numel() > 0;
  if (masked_out && !tc.same_shape(out_mask))
    throw ContractError("normalize_units: out mask shape mismatch");
  const std::int64_t n = tc.dim(0), u = tc.dim(1), l = tc.dim(2);
  if (static_cast<std::int64_t>(divisors.size()) != n * l)
    throw ContractError("normalize_units: expected one divisor per unit");
  if (eps < 0.0) throw ContractError("normalize_units: eps must be >= 0");

  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * l));
  auto inv_s = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * l));
  Tensor out(tc.shape());
  for (std::int64_t nn = 0; nn < n; ++nn)
    for (std::int64_t ll = 0; ll < l; ++ll) {
      const double m = divisors[static_cast<std::size_t>(nn * l + ll)];
      double su = 0.0;
      for (std::int64_t i = 0; i < u; ++i) {
        const std::int64_t idx = (nn * u + i) * l + ll;
        su += stat_w[idx] * tc[idx];
      }
      const double mean = su / m;
      double sv = 0.0;
      for (std::int64_t i = 0; i < u; ++i) {
        const std::int64_t idx = (nn * u + i) * l + ll;
        const double sigma_i = masked_out ? out_mask[idx] : 1.0;
        const double d = stat_w[idx] * tc[idx] - mean;
        sv += sigma_i * d * d;
      }
      const double var = sv / m;
      const double is = 1.0 / std::sqrt(var + eps);
      (*mu)[static_cast<std::size_t>(nn * l + ll)] = mean;
      (*inv_s)[static_cast<std::size_t>(nn * l + ll)] = is;
      for (std::int64_t i = 0; i < u; ++i) {
        const std::int64_t idx = (nn * u + i) * l + ll;
        const double sigma_i = masked_out ? out_mask[idx] : 1.0;
        out[idx] = sigma_i * (tc[idx] - mean) * is;
      }
    }
  Var o = push(std::move(out), node(cols).requires_grad, nullptr);
  nodes_[o.id].back = [cols, o, stat_w, out_mask, divisors, mu, inv_s, n, u,
                       l, masked_out](Tape& t) {
    if (!t.node(cols).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    const Tensor& x = t.value(cols);
    Tensor& gx = t.grad_buffer(cols.id);
    for (std::int64_t nn = 0; nn < n; ++nn)
      for (std::int64_t ll = 0; ll < l; ++ll) {
        const double m = divisors[static_cast<std::size_t>(nn * l + ll)];
        const double mean = (*mu)[static_cast<std::size_t>(nn * l + ll)];
        const double is = (*inv_s)[static_cast<std::size_t>(nn * l + ll)];
        double gsum = 0.0, hsum = 0.0;
        for (std::int64_t i = 0; i < u; ++i) {
          const std::int64_t idx = (nn * u + i) * l + ll;
          const double sigma_i = masked_out ? out_mask[idx] : 1.0;
          const double gt = g[idx] * sigma_i;
          gsum += gt;
          hsum += gt * (x[idx] - mean);
        }
        for (std::int64_t j = 0; j < u; ++j) {
          const std::int64_t idx = (nn * u + j) * l + ll;
          const double sigma_j = masked_out ? out_mask[idx] : 1.0;
          const double wj = stat_w[idx];
          const double uj = wj * x[idx];
          gx[idx] += is * (g[idx] * sigma_j -
                           (wj / m) * (gsum + (uj - mean) * hsum * is * is));
        }
      }
  };
  return o;
}

Var Tape::group_norm(Var x, std::int64_t group, Var gamma, Var beta,
                     double eps) {
  const Tensor& tx = value(x);
  if (tx.rank() != 4) throw ContractError("group_norm expects 4-D input");
  const std::int64_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  if (group <= 0 || c % group != 0)
    throw ConfigError("group size " + std::to_string(group) +
                      " must divide channel count " + std::to_string(c));
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  if (tg.numel() != c || tb.numel() != c)
    throw ContractError("group_norm: affine parameters must have length " +
                        std::to_string(c));
  const std::int64_t ngroups = c / group;
  const std::int64_t block = group * h * w;
  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * ngroups));
  auto inv_s = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * ngroups));
  Tensor out(tx.shape());
  for (std::int64_t nn = 0; nn < n; ++nn)
    for (std::int64_t gi = 0; gi < ngroups; ++gi) {
      const double* src = tx.data() + (nn * c + gi * group) * h * w;
      double s = 0.0;
      for (std::int64_t i = 0; i < block; ++i) s += src[i];
      const double mean = s / static_cast<double>(block);
      double sv = 0.0;
      for (std::int64_t i = 0; i < block; ++i) {
        const double d = src[i] - mean;
        sv += d * d;
      }
      // population variance, divisor = group * H * W
      const double var = sv / static_cast<double>(block);
      const double is = 1.0 / std::sqrt(var + eps);
      (*mu)[static_cast<std::size_t>(nn * ngroups + gi)] = mean;
      (*inv_s)[static_cast<std::size_t>(nn * ngroups + gi)] = is;
      double* dst = out.data() + (nn * c + gi * group) * h * w;
      for (std::int64_t ci = 0; ci < group; ++ci) {
        const double ga = tg[gi * group + ci], be = tb[gi * group + ci];
        for (std::int64_t i = 0; i < h * w; ++i) {
          const double xh = (src[ci * h * w + i] - mean) * is;
          dst[ci * h * w + i] = ga * xh + be;
        }
      }
    }
  bool req = node(x).requires_grad || node(gamma).requires_grad ||
             node(beta).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [x, gamma, beta, o, mu, inv_s, n, c, h, w, group,
                       ngroups, block](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    const Tensor& vx = t.value(x);
    const Tensor& vg = t.value(gamma);
    const bool need_x = t.node(x).requires_grad;
    const bool need_g = t.node(gamma).requires_grad;
    const bool need_b = t.node(beta).requires_grad;
    for (std::int64_t nn = 0; nn < n; ++nn)
      for (std::int64_t gi = 0; gi < ngroups; ++gi) {
        const std::int64_t base = (nn * c + gi * group) * h * w;
        const double mean = (*mu)[static_cast<std::size_t>(nn * ngroups + gi)];
        const double is = (*inv_s)[static_cast<std::size_t>(nn * ngroups + gi)];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::int64_t ci = 0; ci < group; ++ci) {
          const double ga = vg[gi * group + ci];
          for (std::int64_t i = 0; i < h * w; ++i) {
            const std::int64_t idx = base + ci * h * w + i;
            const double xh = (vx[idx] - mean) * is;
            const double dxh = g[idx] * ga;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
        }
        const double inv_m = 1.0 / static_cast<double>(block);
        for (std::int64_t ci = 0; ci < group; ++ci) {
          const std::int64_t cc = gi * group + ci;
          const double ga = vg[cc];
          double dgam = 0.0, dbet = 0.0;
          for (std::int64_t i = 0; i < h * w; ++i) {
            const std::int64_t idx = base + ci * h * w + i;
            const double xh = (vx[idx] - mean) * is;
            if (need_x) {
              const double dxh = g[idx] * ga;
              t.grad_buffer(x.id)[idx] +=
                  is * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh);
            }
            dgam += g[idx] * xh;
            dbet += g[idx];
          }
          if (need_g) t.grad_buffer(gamma.id)[cc] += dgam;
          if (need_b) t.grad_buffer(beta.id)[cc] += dbet;
        }
      }
  };
  return o;
}

}  // namespace knormlab
