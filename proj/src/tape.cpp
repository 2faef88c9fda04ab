#include "knormlab/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

double stable_softplus(double x) {
  // exp(x) saturates tanh well before overflow; 20 keeps single precision safe.
  if (x > 20.0) return x;
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
  if (precision_ == Precision::kSingle && value.precision() != Precision::kSingle)
    value = value.to(Precision::kSingle);
  nodes_.push_back(Node{std::move(value), requires_grad, std::move(back)});
  adjoints_.emplace_back();
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ContractError("invalid tape variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::adjoint(Var v) const {
  const Node& nd = node(v);
  const Tensor& a = adjoints_[static_cast<std::size_t>(v.id)];
  if (a.numel() == 0) return Tensor::zeros(nd.value.shape());
  return a;
}

Tensor& Tape::grad_buffer(std::int32_t id) {
  Tensor& a = adjoints_[static_cast<std::size_t>(id)];
  if (a.numel() == 0) a = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
  return a;
}

void Tape::backward(Var loss) {
  if (consumed_) throw ContractError("tape already consumed by a backward pass");
  const Tensor& lv = value(loss);
  if (!lv.is_scalar())
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(lv.shape()));
  consumed_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::int32_t i = loss.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<std::size_t>(i)];
    if (!nd.requires_grad || !nd.back || !has_grad(i)) continue;
    nd.back(*this);
  }
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw ContractError("add: shape mismatch " + shape_to_string(ta.shape()) +
                        " vs " + shape_to_string(tb.shape()));
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  const bool req = node(a).requires_grad || node(b).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    if (t.node(a).requires_grad) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.node(b).requires_grad) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw ContractError("sub: shape mismatch " + shape_to_string(ta.shape()) +
                        " vs " + shape_to_string(tb.shape()));
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
  const bool req = node(a).requires_grad || node(b).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    if (t.node(a).requires_grad) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.node(b).requires_grad) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw ContractError("mul: shape mismatch " + shape_to_string(ta.shape()) +
                        " vs " + shape_to_string(tb.shape()));
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  const bool req = node(a).requires_grad || node(b).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [a, b, o](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.node(a).requires_grad) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.node(b).requires_grad) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  Var o = push(std::move(out), node(a).requires_grad, nullptr);
  nodes_[o.id].back = [a, s, o](Tape& t) {
    if (!t.node(a).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    Tensor& ga = t.grad_buffer(a.id);
    for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
  };
  return o;
}

Var Tape::mul_const(Var a, const Tensor& m) {
  const Tensor& ta = value(a);
  if (!ta.same_shape(m))
    throw ContractError("mul_const: shape mismatch " +
                        shape_to_string(ta.shape()) + " vs " +
                        shape_to_string(m.shape()));
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= m[i];
  Var o = push(std::move(out), node(a).requires_grad, nullptr);
  nodes_[o.id].back = [a, m, o](Tape& t) {
    if (!t.node(a).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    Tensor& ga = t.grad_buffer(a.id);
    for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * m[i];
  };
  return o;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2)
    throw ContractError("matmul expects 2-D operands");
  if (ta.dim(1) != tb.dim(0))
    throw ContractError("matmul: inner dimensions disagree, axis 1 of lhs is " +
                        std::to_string(ta.dim(1)) + " but axis 0 of rhs is " +
                        std::to_string(tb.dim(0)));
  const std::int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  MapRM(out.data(), m, n).noalias() =
      CMapRM(ta.data(), m, k) * CMapRM(tb.data(), k, n);
  const bool req = node(a).requires_grad || node(b).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [a, b, o, m, k, n](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    CMapRM gm(g.data(), m, n);
    if (t.node(a).requires_grad) {
      Tensor& ga = t.grad_buffer(a.id);
      MapRM(ga.data(), m, k).noalias() +=
          gm * CMapRM(t.value(b).data(), k, n).transpose();
    }
    if (t.node(b).requires_grad) {
      Tensor& gb = t.grad_buffer(b.id);
      MapRM(gb.data(), k, n).noalias() +=
          CMapRM(t.value(a).data(), m, k).transpose() * gm;
    }
  };
  return o;
}

Var Tape::linear(Var x, Var weight, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(weight);
  if (tx.rank() != 2 || tw.rank() != 2)
    throw ContractError("linear expects 2-D input and weight");
  if (tx.dim(1) != tw.dim(1))
    throw ContractError("linear: input features " + std::to_string(tx.dim(1)) +
                        " vs weight in-features " + std::to_string(tw.dim(1)));
  const std::int64_t n = tx.dim(0), in = tx.dim(1), out_f = tw.dim(0);
  Tensor out({n, out_f});
  MapRM(out.data(), n, out_f).noalias() =
      CMapRM(tx.data(), n, in) * CMapRM(tw.data(), out_f, in).transpose();
  if (bias.valid()) {
    const Tensor& tb = value(bias);
    if (tb.numel() != out_f)
      throw ContractError("linear: bias length " + std::to_string(tb.numel()) +
                          " vs out features " + std::to_string(out_f));
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c0 = 0; c0 < out_f; ++c0) out.at2(r, c0) += tb[c0];
  }
  bool req = node(x).requires_grad || node(weight).requires_grad;
  if (bias.valid()) req = req || node(bias).requires_grad;
  Var o = push(std::move(out), req, nullptr);
  nodes_[o.id].back = [x, weight, bias, o, n, in, out_f](Tape& t) {
    const Tensor& g = t.adjoints_[o.id];
    CMapRM gm(g.data(), n, out_f);
    if (t.node(x).requires_grad) {
      Tensor& gx = t.grad_buffer(x.id);
      MapRM(gx.data(), n, in).noalias() +=
          gm * CMapRM(t.value(weight).data(), out_f, in);
    }
    if (t.node(weight).requires_grad) {
      Tensor& gw = t.grad_buffer(weight.id);
      MapRM(gw.data(), out_f, in).noalias() +=
          gm.transpose() * CMapRM(t.value(x).data(), n, in);
    }
    if (bias.valid() && t.node(bias).requires_grad) {
      Tensor& gb = t.grad_buffer(bias.id);
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c0 = 0; c0 < out_f; ++c0) gb[c0] += g.at2(r, c0);
    }
  };
  return o;
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    const Tensor& vx = t.value(x);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (vx[i] > 0.0) gx[i] += g[i];
  };
  return o;
}

Var Tape::mish(Var x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  for (std::int64_t i = 0; i < tx.numel(); ++i)
    out[i] = tx[i] * std::tanh(stable_softplus(tx[i]));
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    const Tensor& vx = t.value(x);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double th = std::tanh(stable_softplus(vx[i]));
      const double d = th + vx[i] * (1.0 - th * th) * stable_sigmoid(vx[i]);
      gx[i] += g[i] * d;
    }
  };
  return o;
}

Var Tape::reshape(Var x, Shape shape) {
  const Tensor& tx = value(x);
  if (shape_numel(shape) != tx.numel())
    throw ContractError("reshape: cannot view " + shape_to_string(tx.shape()) +
                        " as " + shape_to_string(shape));
  Tensor out(std::move(shape),
             std::vector<double>(tx.data(), tx.data() + tx.numel()),
             tx.precision());
  Var o = push(std::move(out), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const Tensor& g = t.adjoints_[o.id];
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  };
  return o;
}

Var Tape::sum(Var x) {
  const Tensor& tx = value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < tx.numel(); ++i) s += tx[i];
  Var o = push(Tensor::scalar(s), node(x).requires_grad, nullptr);
  nodes_[o.id].back = [x, o](Tape& t) {
    if (!t.node(x).requires_grad) return;
    const double g = t.adjoints_[o.id][0];
    Tensor& gx = t.grad_buffer(x.id);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  };
  return o;
}

Var Tape::softmax_cross_entropy(Var logits,
                                const std::vector<std::int64_t>& labels) {
  const Tensor& tl = value(logits);
  if (tl.rank() != 2)
    throw ContractError("softmax_cross_entropy expects [N,K] logits");
  const std::int64_t n = tl.dim(0), k = tl.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(n));
  for (std::int64_t r = 0; r < n; ++r)
    if (labels[r] < 0 || labels[r] >= k)
      throw ContractError("label " + std::to_string(labels[r]) +
                          " out of range [0," + std::to_string(k) + ")");
  // probs cached for the backward pass.
  auto probs = std::make_shared<Tensor>(Shape{n, k});
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    double mx = tl.at2(r, 0);
    for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, tl.at2(r, c));
    double se = 0.0;
    for (std::int64_t c = 0; c < k; ++c) se += std::exp(tl.at2(r, c) - mx);
    const double lse = mx + std::log(se);
    for (std::int64_t c = 0; c < k; ++c)
      probs->at2(r, c) = std::exp(tl.at2(r, c) - lse);
    loss += lse - tl.at2(r, labels[r]);
  }
  loss /= static_cast<double>(n);
  Var o = push(Tensor::scalar(loss), node(logits).requires_grad, nullptr);
  nodes_[o.id].back = [logits, o, probs, labels, n, k](Tape& t) {
    if (!t.node(logits).requires_grad) return;
    const double g = t.adjoints_[o.id][0];
    Tensor& gl = t.grad_buffer(logits.id);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < k; ++c) {
        double d = probs->at2(r, c);
        if (c == labels[r]) d -= 1.0;
        gl.at2(r, c) += g * d * inv_n;
      }
  };
  return o;
}

}  // namespace knormlab
