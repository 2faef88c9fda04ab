#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "knormlab/errors.hpp"
#include "knormlab/normalization.hpp"
#include "knormlab/tape.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace knormlab;
using oracle::max_abs_diff;
using oracle::random_tensor;
using testutil::primitive_fd_error;

namespace {

CounterRng g_rng(2024);

// mean / population variance of one (c,kh,kw) block of a 4-D tensor
std::pair<double, double> block_stats(const Tensor& t, std::int64_t n,
                                      std::int64_t h0, std::int64_t w0,
                                      std::int64_t kh, std::int64_t kw) {
  double mu = 0.0;
  std::int64_t cnt = 0;
  for (std::int64_t c = 0; c < t.dim(1); ++c)
    for (std::int64_t h = h0; h < h0 + kh; ++h)
      for (std::int64_t w = w0; w < w0 + kw; ++w) {
        mu += t.at4(n, c, h, w);
        ++cnt;
      }
  mu /= static_cast<double>(cnt);
  double var = 0.0;
  for (std::int64_t c = 0; c < t.dim(1); ++c)
    for (std::int64_t h = h0; h < h0 + kh; ++h)
      for (std::int64_t w = w0; w < w0 + kw; ++w) {
        const double d = t.at4(n, c, h, w) - mu;
        var += d * d;
      }
  return {mu, var / static_cast<double>(cnt)};
}

}  // namespace

TEST_CASE("kernel_normalize_unit: constant unit maps to zeros") {
  Tensor u = Tensor::full({2, 3, 3}, 4.2);
  Tensor out = kernel_normalize_unit(u, 0.0, g_rng, 1e-5);
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i]) < 1e-9);
}

TEST_CASE("kernel_normalize_unit: standardization identity at p=0") {
  Tensor u = random_tensor({3, 2, 2}, 31);
  Tensor out = kernel_normalize_unit(u, 0.0, g_rng, 0.0);
  double mu = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) mu += out[i];
  mu /= static_cast<double>(out.numel());
  double var = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i)
    var += (out[i] - mu) * (out[i] - mu);
  var /= static_cast<double>(out.numel());
  CHECK(std::abs(mu) < 1e-10);
  CHECK(std::abs(var - 1.0) < 1e-10);
}

TEST_CASE("kernel_normalize_unit: p=0.5 matches the scalar-loop oracle") {
  Tensor u = random_tensor({3, 3, 3}, 33);
  NormCtx ctx;
  ctx.layer_id = 4;
  ctx.step = 9;
  const double eps = 1e-5;
  Tensor got = kernel_normalize_unit(u, 0.5, g_rng, eps, ctx);

  // regenerate the dropout weights with the shared mask builder, then apply
  // the normalization equations with explicit scalar sums
  ConvGeom g = make_conv_geom({1, 3, 3, 3}, 3, 3, 1, 1, 0, 0);
  KernelNormOpts opts;
  opts.dropout_p = 0.5;
  opts.eps = eps;
  NormCtx mask_ctx = ctx;
  mask_ctx.rng = &g_rng;
  mask_ctx.training = true;
  Tensor stat_w, out_mask;
  std::vector<double> div;
  build_unit_masks(g, opts, mask_ctx, &stat_w, &out_mask, &div);
  std::vector<double> unit(u.data(), u.data() + u.numel());
  std::vector<double> wts(stat_w.data(), stat_w.data() + stat_w.numel());
  const std::vector<double> want =
      oracle::normalize_unit_scalar(unit, wts, 27.0, eps);
  // the dropped copy must actually drop something at p=0.5 on 27 elements
  double kept = 0.0;
  for (double w : wts) kept += w;
  CHECK(kept < 27.0);
  CHECK(kept > 0.0);
  for (std::int64_t i = 0; i < u.numel(); ++i)
    CHECK(std::abs(got[i] - want[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("kernel_normalize_unit: kept-element rescaling flag") {
  Tensor u = random_tensor({2, 2, 2}, 35);
  NormCtx ctx;
  ctx.layer_id = 1;
  Tensor plain = kernel_normalize_unit(u, 0.5, g_rng, 1e-5, ctx, false);
  Tensor scaled = kernel_normalize_unit(u, 0.5, g_rng, 1e-5, ctx, true);
  // same masks, different statistics weighting
  CHECK(max_abs_diff(plain, scaled) > 0.0);

  ConvGeom g = make_conv_geom({1, 2, 2, 2}, 2, 2, 1, 1, 0, 0);
  KernelNormOpts opts;
  opts.dropout_p = 0.5;
  opts.rescale_kept = true;
  NormCtx mask_ctx = ctx;
  mask_ctx.rng = &g_rng;
  mask_ctx.training = true;
  Tensor stat_w, out_mask;
  std::vector<double> div;
  build_unit_masks(g, opts, mask_ctx, &stat_w, &out_mask, &div);
  for (std::int64_t i = 0; i < stat_w.numel(); ++i)
    CHECK((stat_w[i] == 0.0 || stat_w[i] == doctest::Approx(2.0)));
  std::vector<double> unit(u.data(), u.data() + u.numel());
  std::vector<double> wts(stat_w.data(), stat_w.data() + stat_w.numel());
  const std::vector<double> want =
      oracle::normalize_unit_scalar(unit, wts, 8.0, 1e-5);
  for (std::int64_t i = 0; i < u.numel(); ++i)
    CHECK(std::abs(scaled[i] - want[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("knconv: constant patches produce the broadcast bias") {
  // every 3x3 patch of a constant image is constant -> normalized to zero
  Tensor x = Tensor::full({2, 3, 5, 5}, 0.37);
  Tensor w = random_tensor({4, 3, 3, 3}, 40);
  Tensor b = random_tensor({4}, 41);
  KernelNormOpts opts;
  opts.eps = 1e-5;
  NormCtx ctx;  // eval: p = 0
  Tensor out = knconv(x, w, &b, {1, 1}, {0, 0}, opts, ctx);
  for (std::int64_t n = 0; n < out.dim(0); ++n)
    for (std::int64_t f = 0; f < out.dim(1); ++f)
      for (std::int64_t h = 0; h < out.dim(2); ++h)
        for (std::int64_t ww = 0; ww < out.dim(3); ++ww)
          CHECK(out.at4(n, f, h, ww) == doctest::Approx(b[f]).epsilon(1e-12));
}

TEST_CASE("knconv: single-element unit standardizes to zero") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 3.3);
  Tensor w = Tensor::full({1, 1, 1, 1}, 2.0);
  KernelNormOpts opts;
  NormCtx ctx;
  Tensor out = knconv(x, w, nullptr, {1, 1}, {0, 0}, opts, ctx);
  CHECK(out.numel() == 1);
  CHECK(std::abs(out[0]) < 1e-9);
}

TEST_CASE("knconv matches the two-stage oracle") {
  Tensor x = random_tensor({2, 3, 8, 8}, 50);
  Tensor w = random_tensor({4, 3, 3, 3}, 51);
  Tensor b = random_tensor({4}, 52);
  KernelNormOpts opts;
  opts.eps = 1e-5;

  SUBCASE("p = 0") {
    NormCtx ctx;
    Tensor got = knconv(x, w, &b, {1, 1}, {1, 1}, opts, ctx);
    ConvGeom g = make_conv_geom(x.shape(), 3, 3, 1, 1, 1, 1);
    Tensor stat_w = Tensor::full({g.n, g.unit_size(), g.num_windows()}, 1.0);
    Tensor want = oracle::knconv_two_stage(x, w, &b, 1, 1, 1, 1, stat_w, opts.eps);
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
  SUBCASE("p = 0.5, fixed seed") {
    opts.dropout_p = 0.5;
    NormCtx ctx;
    ctx.rng = &g_rng;
    ctx.layer_id = 2;
    ctx.step = 5;
    ctx.training = true;
    Tensor got = knconv(x, w, &b, {1, 1}, {1, 1}, opts, ctx);
    ConvGeom g = make_conv_geom(x.shape(), 3, 3, 1, 1, 1, 1);
    Tensor stat_w, out_mask;
    std::vector<double> div;
    build_unit_masks(g, opts, ctx, &stat_w, &out_mask, &div);
    Tensor want = oracle::knconv_two_stage(x, w, &b, 1, 1, 1, 1, stat_w, opts.eps);
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("knconv: padded zeros excluded from statistics when flagged") {
  Tensor x = random_tensor({1, 2, 3, 3}, 55);
  Tensor w = random_tensor({2, 2, 3, 3}, 56);
  KernelNormOpts opts;
  opts.eps = 1e-5;
  opts.exclude_padding = true;
  NormCtx ctx;
  Tensor got = knconv(x, w, nullptr, {1, 1}, {1, 1}, opts, ctx);
  // hand oracle: stats over in-bounds positions only, divisor = their count,
  // padded positions contribute zero to the contraction
  const std::int64_t kh = 3, kw = 3, c = 2;
  for (std::int64_t f = 0; f < 2; ++f)
    for (std::int64_t oh = 0; oh < 3; ++oh)
      for (std::int64_t ow = 0; ow < 3; ++ow) {
        double mu = 0.0;
        std::int64_t cnt = 0;
        for (std::int64_t cc = 0; cc < c; ++cc)
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              const std::int64_t hh = oh + i - 1, ww = ow + j - 1;
              if (hh < 0 || hh >= 3 || ww < 0 || ww >= 3) continue;
              mu += x.at4(0, cc, hh, ww);
              ++cnt;
            }
        mu /= static_cast<double>(cnt);
        double var = 0.0;
        for (std::int64_t cc = 0; cc < c; ++cc)
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              const std::int64_t hh = oh + i - 1, ww = ow + j - 1;
              if (hh < 0 || hh >= 3 || ww < 0 || ww >= 3) continue;
              const double d = x.at4(0, cc, hh, ww) - mu;
              var += d * d;
            }
        var /= static_cast<double>(cnt);
        double acc = 0.0;
        for (std::int64_t cc = 0; cc < c; ++cc)
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              const std::int64_t hh = oh + i - 1, ww = ow + j - 1;
              if (hh < 0 || hh >= 3 || ww < 0 || ww >= 3) continue;
              acc += w.at4(f, cc, i, j) * (x.at4(0, cc, hh, ww) - mu) /
                     std::sqrt(var + opts.eps);
            }
        CHECK(got.at4(0, f, oh, ow) == doctest::Approx(acc).epsilon(1e-10));
      }
}

TEST_CASE("kernelnorm_layer: whole-input kernel is per-sample standardization") {
  Tensor x = random_tensor({2, 3, 4, 5}, 60);
  KernelNormOpts opts;
  opts.eps = 0.0;
  NormCtx ctx;
  Tensor out = kernelnorm_layer(x, {4, 5}, {3, 3}, opts, ctx);
  CHECK(out.shape() == x.shape());
  for (std::int64_t n = 0; n < 2; ++n) {
    auto [mu, var] = block_stats(out, n, 0, 0, 4, 5);
    CHECK(std::abs(mu) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-10);
  }
}

TEST_CASE("kernelnorm_layer: non-overlapping 2x2 blocks standardized") {
  Tensor x = random_tensor({1, 1, 4, 4}, 61);
  KernelNormOpts opts;
  opts.eps = 0.0;
  NormCtx ctx;
  Tensor out = kernelnorm_layer(x, {2, 2}, {2, 2}, opts, ctx);
  CHECK(out.shape() == Shape{1, 1, 4, 4});
  for (std::int64_t bi = 0; bi < 2; ++bi)
    for (std::int64_t bj = 0; bj < 2; ++bj) {
      auto [mu, var] = block_stats(out, 0, 2 * bi, 2 * bj, 2, 2);
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-10);
    }
}

TEST_CASE("kernelnorm_layer: overlapping windows match the window-loop oracle") {
  Tensor x = random_tensor({1, 2, 3, 3}, 62);
  KernelNormOpts opts;
  opts.eps = 1e-5;
  NormCtx ctx;
  Tensor got = kernelnorm_layer(x, {2, 2}, {1, 1}, opts, ctx);
  // Lh = (3-2)/1 + 1 = 2 windows per axis, grid rows kh*Lh = 4
  CHECK(got.shape() == Shape{1, 2, 4, 4});
  ConvGeom g = make_conv_geom(x.shape(), 2, 2, 1, 1, 0, 0);
  Tensor stat_w = Tensor::full({g.n, g.unit_size(), g.num_windows()}, 1.0);
  Tensor want = oracle::kernelnorm_layer_loop(x, 2, 2, 1, 1, stat_w, opts.eps);
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("kernelnorm_layer: kernel larger than input is a dimension error") {
  Tensor x = random_tensor({1, 1, 3, 3}, 63);
  KernelNormOpts opts;
  NormCtx ctx;
  CHECK_THROWS_WITH_AS(kernelnorm_layer(x, {4, 2}, {1, 1}, opts, ctx),
                       doctest::Contains("axis 2"), ContractError);
}

TEST_CASE("layer_normalize") {
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  SUBCASE("constant sample maps to zeros") {
    Tensor x = Tensor::full({2, 4, 3, 3}, 7.0);
    Tensor out = layer_normalize(x, gamma, beta, 1e-5);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("per-sample standardization at eps=0") {
    Tensor x = random_tensor({2, 4, 3, 3}, 70);
    Tensor out = layer_normalize(x, gamma, beta, 0.0);
    for (std::int64_t n = 0; n < 2; ++n) {
      auto [mu, var] = block_stats(out, n, 0, 0, 3, 3);
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-10);
    }
  }
  SUBCASE("random affine matches the scalar-loop oracle") {
    Tensor x = random_tensor({2, 4, 3, 3}, 71);
    Tensor ga = random_tensor({4}, 72);
    Tensor be = random_tensor({4}, 73);
    Tensor got = layer_normalize(x, ga, be, 1e-5);
    Tensor want = oracle::group_norm_loop(x, 4, ga, be, 1e-5);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("group_normalize") {
  SUBCASE("g = C is layer normalization") {
    Tensor x = random_tensor({2, 6, 3, 3}, 80);
    Tensor ga = random_tensor({6}, 81);
    Tensor be = random_tensor({6}, 82);
    Tensor a = group_normalize(x, 6, ga, be, 1e-5);
    Tensor b = layer_normalize(x, ga, be, 1e-5);
    CHECK(max_abs_diff(a, b) == 0.0);
  }
  SUBCASE("g = 1 gives instance-norm semantics") {
    Tensor x = random_tensor({2, 3, 4, 4}, 83);
    Tensor ga = random_tensor({3}, 84);
    Tensor be = random_tensor({3}, 85);
    Tensor got = group_normalize(x, 1, ga, be, 1e-5);
    Tensor want = oracle::group_norm_loop(x, 1, ga, be, 1e-5);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
  SUBCASE("constant input maps to zeros") {
    Tensor x = Tensor::full({1, 4, 2, 2}, -3.0);
    Tensor out = group_normalize(x, 2, Tensor::full({4}, 1.0),
                                 Tensor::zeros({4}), 1e-5);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("indivisible group size is a configuration error") {
    Tensor x = random_tensor({1, 6, 2, 2}, 86);
    CHECK_THROWS_AS(group_normalize(x, 4, Tensor::full({6}, 1.0),
                                    Tensor::zeros({6}), 1e-5),
                    ConfigError);
  }
}

TEST_CASE("no_norm is the identity and composes to plain convolution") {
  Tensor x = random_tensor({2, 3, 5, 5}, 90);
  CHECK(max_abs_diff(no_norm(x), x) == 0.0);
  Tensor w = random_tensor({2, 3, 3, 3}, 91);
  Tensor a = conv2d(no_norm(x), w, nullptr, {1, 1}, {1, 1});
  Tensor b = conv2d(x, w, nullptr, {1, 1}, {1, 1});
  CHECK(max_abs_diff(a, b) == 0.0);
  // gradient of the identity is the identity
  Tape tape;
  Var v = tape.leaf(x, true);
  tape.backward(tape.sum(v));
  Tensor g = tape.adjoint(v);
  for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("batch independence: one-at-a-time equals full batch") {
  const std::int64_t n = 4;
  Tensor x = random_tensor({n, 4, 6, 6}, 100);
  NormCtx ctx;
  ctx.sample_ids = {10, 11, 12, 13};
  KernelNormOpts opts;
  opts.eps = 1e-5;
  Tensor ga = random_tensor({4}, 101);
  Tensor be = random_tensor({4}, 102);
  Tensor w = random_tensor({3, 4, 3, 3}, 103);

  auto one_row = [&](const Tensor& full, std::int64_t row) {
    Tensor t({1, full.dim(1), full.dim(2), full.dim(3)});
    const std::int64_t chw = full.numel() / full.dim(0);
    std::copy(full.data() + row * chw, full.data() + (row + 1) * chw, t.data());
    return t;
  };
  auto check_layer = [&](auto&& apply) {
    Tensor full = apply(x, ctx);
    for (std::int64_t r = 0; r < n; ++r) {
      NormCtx rctx = ctx;
      rctx.sample_ids = {ctx.sample_ids[static_cast<std::size_t>(r)]};
      Tensor single = apply(one_row(x, r), rctx);
      const std::int64_t chw = full.numel() / n;
      double worst = 0.0;
      for (std::int64_t i = 0; i < chw; ++i)
        worst = std::max(worst, std::abs(single[i] - full[r * chw + i]));
      CHECK(worst <= 1e-12);
    }
  };

  check_layer([&](const Tensor& t, const NormCtx& c) {
    return knconv(t, w, nullptr, {1, 1}, {1, 1}, opts, c);
  });
  check_layer([&](const Tensor& t, const NormCtx& c) {
    return kernelnorm_layer(t, {2, 2}, {2, 2}, opts, c);
  });
  check_layer([&](const Tensor& t, const NormCtx& c) {
    (void)c;
    return layer_normalize(t, ga, be, 1e-5);
  });
  check_layer([&](const Tensor& t, const NormCtx& c) {
    (void)c;
    return group_normalize(t, 2, ga, be, 1e-5);
  });
  check_layer([&](const Tensor& t, const NormCtx& c) {
    (void)c;
    return no_norm(t);
  });
  // and with dropout active, masks keyed by sample id keep it batch-independent
  KernelNormOpts dopts = opts;
  dopts.dropout_p = 0.5;
  NormCtx dctx = ctx;
  dctx.rng = &g_rng;
  dctx.training = true;
  Tensor full = knconv(x, w, nullptr, {1, 1}, {1, 1}, dopts, dctx);
  for (std::int64_t r = 0; r < n; ++r) {
    NormCtx rctx = dctx;
    rctx.sample_ids = {ctx.sample_ids[static_cast<std::size_t>(r)]};
    Tensor single = knconv(one_row(x, r), w, nullptr, {1, 1}, {1, 1}, dopts, rctx);
    const std::int64_t chw = full.numel() / n;
    double worst = 0.0;
    for (std::int64_t i = 0; i < chw; ++i)
      worst = std::max(worst, std::abs(single[i] - full[r * chw + i]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("affine input invariance of the kernel unit") {
  CounterRng rng(7);
  for (int t = 0; t < 20; ++t) {
    Tensor u = random_tensor({2, 3, 3}, 200 + t);
    const double a = 0.1 + 5.0 * rng.uniform(RngStream::kGeneric, 0, t, 0, 0);
    const double b = 10.0 * (rng.uniform(RngStream::kGeneric, 0, t, 0, 1) - 0.5);
    Tensor v(u.shape());
    for (std::int64_t i = 0; i < u.numel(); ++i) v[i] = a * u[i] + b;
    Tensor nu = kernel_normalize_unit(u, 0.0, g_rng, 0.0);
    Tensor nv = kernel_normalize_unit(v, 0.0, g_rng, 0.0);
    CHECK(max_abs_diff(nu, nv) <= 1e-9);
  }
}

TEST_CASE("shape law: kernelnorm output is (N, C, kh*Lh, kw*Lw)") {
  CounterRng rng(8);
  for (int t = 0; t < 50; ++t) {
    auto pick = [&](std::uint64_t i, std::int64_t lo, std::int64_t hi) {
      return lo + static_cast<std::int64_t>(
                      rng.bits(RngStream::kGeneric, 2, t, 0, i) %
                      static_cast<std::uint64_t>(hi - lo + 1));
    };
    const std::int64_t n = pick(0, 1, 2), c = pick(1, 1, 3);
    const std::int64_t h = pick(2, 2, 8), w = pick(3, 2, 8);
    const std::int64_t kh = pick(4, 1, h), kw = pick(5, 1, w);
    const std::int64_t sh = pick(6, 1, 2), sw = pick(7, 1, 2);
    Tensor x = random_tensor({n, c, h, w}, 300 + t);
    KernelNormOpts opts;
    NormCtx ctx;
    Tensor out = kernelnorm_layer(x, {kh, kw}, {sh, sw}, opts, ctx);
    const std::int64_t lh = (h - kh) / sh + 1, lw = (w - kw) / sw + 1;
    REQUIRE(out.shape() == Shape{n, c, kh * lh, kw * lw});
  }
}

TEST_CASE("normalization layers pass finite differences with frozen masks") {
  KernelNormOpts opts;
  opts.eps = 1e-5;
  opts.dropout_p = 0.5;
  NormCtx ctx;
  ctx.rng = &g_rng;
  ctx.layer_id = 3;
  ctx.training = true;

  SUBCASE("knconv") {
    CHECK(primitive_fd_error([&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mish(knconv_op(t, v[0], v[1], v[2], 1, 1, 1, 1,
                                          opts, ctx)));
          }, {random_tensor({1, 2, 5, 5}, 400), random_tensor({3, 2, 3, 3}, 401),
              random_tensor({3}, 402)}) < 1e-4);
  }
  SUBCASE("kernelnorm layer") {
    Tensor wts = random_tensor({1, 2, 4, 4}, 404);
    CHECK(primitive_fd_error([&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mul_const(
                kernelnorm_layer_op(t, v[0], 2, 2, 1, 1, opts, ctx), wts));
          }, {random_tensor({1, 2, 3, 3}, 403)}) < 1e-4);
  }
  SUBCASE("layer / group norm") {
    CHECK(primitive_fd_error([&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mish(layer_norm_op(t, v[0], v[1], v[2], 1e-5)));
          }, {random_tensor({2, 3, 4, 4}, 405), random_tensor({3}, 406),
              random_tensor({3}, 407)}) < 1e-4);
    CHECK(primitive_fd_error([&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mish(group_norm_op(t, v[0], 2, v[1], v[2], 1e-5)));
          }, {random_tensor({2, 4, 3, 3}, 408), random_tensor({4}, 409),
              random_tensor({4}, 410)}) < 1e-4);
  }
}

TEST_CASE("kernel norm exposes zero learnable parameters, affine norms 2C") {
  BuildOpts opts;
  opts.num_classes = 4;
  opts.input_shape = {3, 16, 16};
  opts.widths = {8, 8, 8};
  opts.group_size = 4;
  for (NormKind kind : {NormKind::kKernel, NormKind::kNone}) {
    opts.norm = kind;
    CHECK(norm_param_count(build_resnet8(opts)) == 0);
  }
  opts.norm = NormKind::kLayer;
  const std::int64_t expect = 2 * (8 + 8 + 8 + 8 + 8 + 8 + 8 + 8 + 8);
  CHECK(norm_param_count(build_resnet8(opts)) == expect);
  opts.norm = NormKind::kGroup;
  CHECK(norm_param_count(build_resnet8(opts)) == expect);
}
