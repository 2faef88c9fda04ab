#include "knormlab/model.hpp"

#include <functional>
#include <nlohmann/json.hpp>

#include "knormlab/errors.hpp"

namespace knormlab {

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "kernel") return NormKind::kKernel;
  if (s == "layer") return NormKind::kLayer;
  if (s == "group") return NormKind::kGroup;
  if (s == "none") return NormKind::kNone;
  throw ConfigError("unknown norm kind '" + s + "'");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::kKernel: return "kernel";
    case NormKind::kLayer: return "layer";
    case NormKind::kGroup: return "group";
    case NormKind::kNone: return "none";
  }
  return "?";
}

ActKind act_kind_from_string(const std::string& s) {
  if (s == "mish") return ActKind::kMish;
  if (s == "relu") return ActKind::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(ActKind a) {
  return a == ActKind::kMish ? "mish" : "relu";
}

std::string to_string(Layer::Kind k) {
  switch (k) {
    case Layer::Kind::kConv: return "conv";
    case Layer::Kind::kKNConv: return "knconv";
    case Layer::Kind::kKernelNorm: return "kernelnorm";
    case Layer::Kind::kLayerNorm: return "layernorm";
    case Layer::Kind::kGroupNorm: return "groupnorm";
    case Layer::Kind::kActivation: return "activation";
    case Layer::Kind::kMaxPool: return "maxpool";
    case Layer::Kind::kAdaptiveAvgPool: return "adaptive_avg_pool";
    case Layer::Kind::kFlatten: return "flatten";
    case Layer::Kind::kLinear: return "linear";
    case Layer::Kind::kResidual: return "residual";
    case Layer::Kind::kBatchNorm: return "batchnorm";
  }
  return "?";
}

std::int64_t ModelGraph::num_params() const {
  std::int64_t n = 0;
  for (const Parameter& p : params) n += p.value.numel();
  return n;
}

std::vector<double> ModelGraph::flatten_params() const {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(num_params()));
  for (const Parameter& p : params)
    flat.insert(flat.end(), p.value.data(), p.value.data() + p.value.numel());
  return flat;
}

void ModelGraph::load_flat_params(const std::vector<double>& flat) {
  if (static_cast<std::int64_t>(flat.size()) != num_params())
    throw ContractError("flat parameter vector length " +
                        std::to_string(flat.size()) + " vs model size " +
                        std::to_string(num_params()));
  std::size_t off = 0;
  for (Parameter& p : params) {
    for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value[i] = flat[off++];
    p.value.enforce_precision();
  }
}

void ModelGraph::apply_update(const std::vector<double>& grad, double lr) {
  if (static_cast<std::int64_t>(grad.size()) != num_params())
    throw ContractError("gradient length " + std::to_string(grad.size()) +
                        " vs model size " + std::to_string(num_params()));
  std::size_t off = 0;
  for (Parameter& p : params) {
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      p.value[i] -= lr * grad[off++];
    p.value.enforce_precision();
  }
}

namespace {

Var run_layers(const std::vector<Layer>& layers, Tape& tape, Var x,
               const std::vector<Var>& pv, const ForwardCtx& ctx,
               const ModelGraph& g);

Var run_layer(const Layer& ly, Tape& tape, Var x, const std::vector<Var>& pv,
              const ForwardCtx& ctx, const ModelGraph& g) {
  auto param = [&](int slot) { return slot >= 0 ? pv[static_cast<std::size_t>(slot)] : Var{}; };
  switch (ly.kind) {
    case Layer::Kind::kConv:
      return conv2d_op(tape, x, param(ly.weight), param(ly.bias), ly.sh, ly.sw,
                       ly.ph, ly.pw);
    case Layer::Kind::kKNConv: {
      KernelNormOpts opts{ly.dropout_p, g.norm_eps, g.rescale_kept,
                          g.exclude_padding};
      NormCtx nc{ctx.rng, static_cast<std::uint64_t>(ly.id), ctx.step,
                 ctx.sample_ids, ctx.training};
      return knconv_op(tape, x, param(ly.weight), param(ly.bias), ly.sh, ly.sw,
                       ly.ph, ly.pw, opts, nc);
    }
    case Layer::Kind::kKernelNorm: {
      KernelNormOpts opts{ly.dropout_p, g.norm_eps, g.rescale_kept, false};
      NormCtx nc{ctx.rng, static_cast<std::uint64_t>(ly.id), ctx.step,
                 ctx.sample_ids, ctx.training};
      return kernelnorm_layer_op(tape, x, ly.kh, ly.kw, ly.sh, ly.sw, opts, nc);
    }
    case Layer::Kind::kLayerNorm:
      return layer_norm_op(tape, x, param(ly.gamma), param(ly.beta), g.norm_eps);
    case Layer::Kind::kGroupNorm:
      return group_norm_op(tape, x, ly.group, param(ly.gamma), param(ly.beta),
                           g.norm_eps);
    case Layer::Kind::kActivation:
      return ly.act == ActKind::kMish ? tape.mish(x) : tape.relu(x);
    case Layer::Kind::kMaxPool:
      return tape.max_pool2d(x, ly.pool_k);
    case Layer::Kind::kAdaptiveAvgPool:
      return tape.adaptive_avg_pool2d(x, ly.out_h, ly.out_w);
    case Layer::Kind::kFlatten: {
      const Tensor& v = tape.value(x);
      std::int64_t rest = 1;
      for (std::size_t i = 1; i < v.rank(); ++i) rest *= v.dim(i);
      return tape.reshape(x, {v.dim(0), rest});
    }
    case Layer::Kind::kLinear:
      return tape.linear(x, param(ly.weight), param(ly.bias));
    case Layer::Kind::kResidual: {
      Var main = run_layers(ly.body, tape, x, pv, ctx, g);
      Var sc = ly.shortcut.empty()
                   ? x
                   : run_layers(ly.shortcut, tape, x, pv, ctx, g);
      return tape.add(main, sc);
    }
    case Layer::Kind::kBatchNorm:
      throw ContractError("batchnorm layers are not supported");
  }
  throw ContractError("unknown layer kind");
}

Var run_layers(const std::vector<Layer>& layers, Tape& tape, Var x,
               const std::vector<Var>& pv, const ForwardCtx& ctx,
               const ModelGraph& g) {
  for (const Layer& ly : layers) x = run_layer(ly, tape, x, pv, ctx, g);
  return x;
}

void walk(const std::vector<Layer>& layers,
          const std::function<void(const Layer&)>& fn) {
  for (const Layer& ly : layers) {
    fn(ly);
    walk(ly.body, fn);
    walk(ly.shortcut, fn);
  }
}

}  // namespace

TapedForward ModelGraph::forward(Tape& tape, const Tensor& input,
                                 const ForwardCtx& ctx) const {
  TapedForward out;
  out.param_vars.reserve(params.size());
  for (const Parameter& p : params)
    out.param_vars.push_back(tape.leaf(p.value, /*requires_grad=*/true));
  Var x = tape.leaf(input);
  out.logits = run_layers(layers, tape, x, out.param_vars, ctx, *this);
  return out;
}

TapedLoss ModelGraph::forward_loss(Tape& tape, const Tensor& input,
                                   const std::vector<std::int64_t>& labels,
                                   const ForwardCtx& ctx) const {
  TapedForward f = forward(tape, input, ctx);
  TapedLoss out;
  out.logits = f.logits;
  out.param_vars = std::move(f.param_vars);
  out.loss = tape.softmax_cross_entropy(out.logits, labels);
  return out;
}

Tensor ModelGraph::forward_eval(const Tensor& input) const {
  Tape tape(precision);
  ForwardCtx ctx;
  ctx.training = false;
  TapedForward f = forward(tape, input, ctx);
  return tape.value(f.logits);
}

std::vector<double> ModelGraph::flat_gradient(
    const Tape& tape, const std::vector<Var>& param_vars) const {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(num_params()));
  for (Var v : param_vars) {
    Tensor g = tape.adjoint(v);
    flat.insert(flat.end(), g.data(), g.data() + g.numel());
  }
  return flat;
}

std::vector<Tensor> backward_params(Tape& tape, Var loss,
                                    const std::vector<Var>& param_vars) {
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(param_vars.size());
  for (Var v : param_vars) grads.push_back(tape.adjoint(v));
  return grads;
}

void assert_dp_compatible(const ModelGraph& model) {
  walk(model.layers, [](const Layer& ly) {
    if (ly.kind == Layer::Kind::kBatchNorm)
      throw ContractError(
          "layer '" + ly.name +
          "' is batch-dependent: per-sample gradients are ill-defined, so it "
          "cannot be used with DP-SGD");
  });
}

std::int64_t count_layers(const ModelGraph& model, Layer::Kind kind) {
  std::int64_t n = 0;
  walk(model.layers, [&](const Layer& ly) {
    if (ly.kind == kind) ++n;
  });
  return n;
}

std::int64_t conv_layer_count(const ModelGraph& model) {
  return count_layers(model, Layer::Kind::kConv) +
         count_layers(model, Layer::Kind::kKNConv);
}

std::int64_t norm_param_count(const ModelGraph& model) {
  std::int64_t n = 0;
  walk(model.layers, [&](const Layer& ly) {
    if (ly.kind == Layer::Kind::kLayerNorm ||
        ly.kind == Layer::Kind::kGroupNorm) {
      if (ly.gamma >= 0) n += model.params[static_cast<std::size_t>(ly.gamma)].value.numel();
      if (ly.beta >= 0) n += model.params[static_cast<std::size_t>(ly.beta)].value.numel();
    }
  });
  return n;
}

namespace {

// Shape walk over {C,H,W}; mirrors the forward ops.
Shape infer_shape(const Layer& ly, const Shape& in, const ModelGraph& g);

Shape infer_shapes(const std::vector<Layer>& layers, Shape s,
                   const ModelGraph& g) {
  for (const Layer& ly : layers) s = infer_shape(ly, s, g);
  return s;
}

Shape infer_shape(const Layer& ly, const Shape& in, const ModelGraph& g) {
  switch (ly.kind) {
    case Layer::Kind::kConv:
    case Layer::Kind::kKNConv: {
      ConvGeom geom = make_conv_geom({1, in[0], in[1], in[2]}, ly.kh, ly.kw,
                                     ly.sh, ly.sw, ly.ph, ly.pw);
      return {ly.out_ch, geom.ho, geom.wo};
    }
    case Layer::Kind::kKernelNorm: {
      ConvGeom geom = make_conv_geom({1, in[0], in[1], in[2]}, ly.kh, ly.kw,
                                     ly.sh, ly.sw, 0, 0);
      return {in[0], ly.kh * geom.ho, ly.kw * geom.wo};
    }
    case Layer::Kind::kLayerNorm:
    case Layer::Kind::kGroupNorm:
    case Layer::Kind::kActivation:
    case Layer::Kind::kBatchNorm:
      return in;
    case Layer::Kind::kMaxPool:
      return {in[0], in[1] / ly.pool_k, in[2] / ly.pool_k};
    case Layer::Kind::kAdaptiveAvgPool:
      return {in[0], ly.out_h, ly.out_w};
    case Layer::Kind::kFlatten:
      return {in[0] * in[1] * in[2]};
    case Layer::Kind::kLinear:
      return {ly.out_features};
    case Layer::Kind::kResidual:
      return infer_shapes(ly.body, in, g);
  }
  throw ContractError("unknown layer kind");
}

nlohmann::json layer_json(const Layer& ly, Shape& shape, const ModelGraph& g) {
  nlohmann::json j;
  j["name"] = ly.name;
  j["kind"] = to_string(ly.kind);
  std::int64_t np = 0;
  for (int slot : {ly.weight, ly.bias, ly.gamma, ly.beta})
    if (slot >= 0) np += g.params[static_cast<std::size_t>(slot)].value.numel();
  switch (ly.kind) {
    case Layer::Kind::kConv:
    case Layer::Kind::kKNConv:
      j["channels"] = {ly.in_ch, ly.out_ch};
      j["kernel"] = {ly.kh, ly.kw};
      j["stride"] = {ly.sh, ly.sw};
      j["padding"] = {ly.ph, ly.pw};
      if (ly.kind == Layer::Kind::kKNConv) j["dropout_p"] = ly.dropout_p;
      break;
    case Layer::Kind::kKernelNorm:
      j["kernel"] = {ly.kh, ly.kw};
      j["stride"] = {ly.sh, ly.sw};
      j["dropout_p"] = ly.dropout_p;
      break;
    case Layer::Kind::kGroupNorm:
      j["group_size"] = ly.group;
      break;
    case Layer::Kind::kActivation:
      j["function"] = to_string(ly.act);
      break;
    case Layer::Kind::kMaxPool:
      j["kernel"] = {ly.pool_k, ly.pool_k};
      break;
    case Layer::Kind::kAdaptiveAvgPool:
      j["output"] = {ly.out_h, ly.out_w};
      break;
    case Layer::Kind::kLinear:
      j["features"] = {ly.in_features, ly.out_features};
      break;
    default:
      break;
  }
  if (ly.kind == Layer::Kind::kResidual) {
    Shape inner = shape;
    nlohmann::json body = nlohmann::json::array();
    for (const Layer& b : ly.body) {
      body.push_back(layer_json(b, inner, g));
      np += body.back()["params"].get<std::int64_t>();
    }
    j["body"] = body;
    if (!ly.shortcut.empty()) {
      Shape sc = shape;
      nlohmann::json scj = nlohmann::json::array();
      for (const Layer& b : ly.shortcut) {
        scj.push_back(layer_json(b, sc, g));
        np += scj.back()["params"].get<std::int64_t>();
      }
      j["shortcut"] = scj;
    }
  }
  shape = infer_shape(ly, shape, g);
  j["output_shape"] = shape;
  j["params"] = np;
  return j;
}

}  // namespace

std::string describe_json(const ModelGraph& model) {
  nlohmann::json j;
  j["name"] = model.name;
  j["norm_kind"] = to_string(model.norm_kind);
  j["activation"] = to_string(model.activation);
  j["num_classes"] = model.num_classes;
  j["input_shape"] = model.input_shape;
  j["widths"] = model.widths;
  j["group_size"] = model.group_size;
  Shape shape = model.input_shape;
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& ly : model.layers) layers.push_back(layer_json(ly, shape, model));
  j["layers"] = layers;
  j["total_params"] = model.num_params();
  j["conv_layers"] = conv_layer_count(model);
  j["linear_layers"] = count_layers(model, Layer::Kind::kLinear);
  j["norm_params"] = norm_param_count(model);
  return j.dump(2);
}

}  // namespace knormlab
