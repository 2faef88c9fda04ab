#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "knormlab/tensor.hpp"

namespace knormlab {

// Handle to a node on a GradTape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Validated geometry shared by conv2d, KNConv and kernelnorm_layer.
struct ConvGeom {
  std::int64_t n = 0, c = 0, h = 0, w = 0;   // input NCHW
  std::int64_t kh = 0, kw = 0;               // window
  std::int64_t sh = 1, sw = 1, ph = 0, pw = 0;
  std::int64_t ho = 0, wo = 0;               // output spatial

  std::int64_t unit_size() const { return c * kh * kw; }
  std::int64_t num_windows() const { return ho * wo; }
};

// Throws ContractError naming the offending axis when the window does not
// fit the (padded) input.
ConvGeom make_conv_geom(const Shape& input, std::int64_t kh, std::int64_t kw,
                        std::int64_t sh, std::int64_t sw, std::int64_t ph,
                        std::int64_t pw);

// Reverse-mode tape. Ops append nodes; backward() replays adjoints in exact
// reverse construction order. Single-owner, single-threaded; one backward
// pass per tape. Multiple independent tapes may run concurrently.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::kDouble)
      : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }

  // Leaves. requires_grad marks parameters whose adjoints are wanted.
  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const;
  // Adjoint of v after backward(). Zero tensor if the loss never reached v.
  Tensor adjoint(Var v) const;

  // --- elementwise / linear algebra ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var mul_const(Var a, const Tensor& m);  // constant mask, no grad through m
  Var matmul(Var a, Var b);               // [m,k] x [k,n]
  Var linear(Var x, Var weight, Var bias);  // x[N,in], W[out,in], b[out] or invalid
  Var relu(Var x);
  Var mish(Var x);
  Var reshape(Var x, Shape shape);
  Var sum(Var x);  // scalar

  // --- convolution machinery ---
  // Patch extraction: output [N, C*kh*kw, Ho*Wo]; zero padding.
  Var im2col(Var x, const ConvGeom& g);
  // Per-sample contraction: w[F,U] x cols[N,U,L] -> [N,F,L].
  Var contract_patches(Var w, Var cols);
  Var add_channel_bias(Var x, Var bias);  // x[N,F,H,W] + bias[F]
  Var max_pool2d(Var x, std::int64_t k);  // stride k, tail discarded
  Var adaptive_avg_pool2d(Var x, std::int64_t oh, std::int64_t ow);
  // Lays im2col windows out as a spatial grid: cols[N,C*kh*kw,Lh*Lw] ->
  // [N, C, kh*Lh, kw*Lw]; window (i,j) occupies rows [i*kh,(i+1)*kh),
  // cols [j*kw,(j+1)*kw).
  Var window_grid(Var cols, const ConvGeom& g);

  // --- normalization ---
  // Standardizes each unit (column) of cols[N,U,L] with statistics taken
  // over stat_w * x (dropout weights; constants during backward) and the
  // given per-unit divisor. out_mask zeroes excluded positions (empty =
  // all ones). divisors has N*L entries.
  Var normalize_units(Var cols, const Tensor& stat_w, const Tensor& out_mask,
                      const std::vector<double>& divisors, double eps);
  // GroupNorm/LayerNorm: per-(sample,group) standardization over
  // (group,H,W) blocks, population variance, then per-channel affine.
  // group must divide C; gamma/beta are [C]. LayerNorm is group == C.
  Var group_norm(Var x, std::int64_t group, Var gamma, Var beta, double eps);

  // --- loss ---
  // Mean over the batch of softmax cross-entropy; returns a scalar.
  Var softmax_cross_entropy(Var logits, const std::vector<std::int64_t>& labels);

  // Reverse sweep from a scalar loss. A tape is consumed by at most one
  // backward pass.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
  Tensor& grad_buffer(std::int32_t id);  // allocates zeros on first touch
  bool has_grad(std::int32_t id) const { return adjoints_[static_cast<std::size_t>(id)].numel() > 0; }
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;  // empty tensor = not yet touched
  bool consumed_ = false;

  Precision precision_;

  friend struct TapeOps;
};

}  // namespace knormlab
