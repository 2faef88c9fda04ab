#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knormlab/normalization.hpp"
#include "knormlab/rng.hpp"
#include "knormlab/tape.hpp"
#include "knormlab/tensor.hpp"

namespace knormlab {

enum class NormKind { kKernel, kLayer, kGroup, kNone };
enum class ActKind { kMish, kRelu };

NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);
ActKind act_kind_from_string(const std::string& s);
std::string to_string(ActKind a);

struct Parameter {
  std::string name;
  Tensor value;
};

// One node of the declarative layer sequence. Residual blocks nest their
// main path in `body` and an optional projection path in `shortcut`.
struct Layer {
  enum class Kind {
    kConv,
    kKNConv,
    kKernelNorm,
    kLayerNorm,
    kGroupNorm,
    kActivation,
    kMaxPool,
    kAdaptiveAvgPool,
    kFlatten,
    kLinear,
    kResidual,
    // Batch-dependent; never constructed by any builder. Exists so the DP
    // compatibility check has a concrete kind to reject.
    kBatchNorm,
  };

  Kind kind;
  std::string name;
  int id = 0;  // unique per graph; rng stream coordinate

  std::int64_t in_ch = 0, out_ch = 0;
  std::int64_t kh = 0, kw = 0, sh = 1, sw = 1, ph = 0, pw = 0;
  std::int64_t group = 0;
  double dropout_p = 0.0;
  ActKind act = ActKind::kMish;
  std::int64_t pool_k = 0;
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t in_features = 0, out_features = 0;

  int weight = -1, bias = -1, gamma = -1, beta = -1;
  std::vector<Layer> body, shortcut;
};

std::string to_string(Layer::Kind k);

// Per-forward randomness/mode. sample_ids maps batch rows to dataset ids so
// dropout masks are independent of batch composition.
struct ForwardCtx {
  const CounterRng* rng = nullptr;
  std::uint64_t step = 0;
  std::vector<std::uint64_t> sample_ids;
  bool training = false;
};

struct TapedForward {
  Var logits;
  std::vector<Var> param_vars;  // parallel to ModelGraph::params
};

struct TapedLoss {
  Var loss;
  Var logits;
  std::vector<Var> param_vars;
};

// Declarative model: ordered layers plus a parameter registry. A built
// graph is immutable in structure; parameters are plain tensors that
// training loops update in place.
struct ModelGraph {
  std::string name;
  NormKind norm_kind = NormKind::kNone;
  ActKind activation = ActKind::kMish;
  std::int64_t num_classes = 0;
  Shape input_shape;  // {C,H,W}
  std::vector<std::int64_t> widths;
  double norm_eps = 1e-5;
  bool rescale_kept = false;
  bool exclude_padding = false;
  std::int64_t group_size = 32;
  Precision precision = Precision::kDouble;

  std::vector<Layer> layers;
  std::vector<Parameter> params;

  std::int64_t num_params() const;
  std::vector<double> flatten_params() const;
  void load_flat_params(const std::vector<double>& flat);
  // W <- W - lr * grad, elementwise over the flattened registry.
  void apply_update(const std::vector<double>& grad, double lr);

  TapedForward forward(Tape& tape, const Tensor& input,
                       const ForwardCtx& ctx) const;
  TapedLoss forward_loss(Tape& tape, const Tensor& input,
                         const std::vector<std::int64_t>& labels,
                         const ForwardCtx& ctx) const;
  // Evaluation-mode forward (dropout off), no gradients needed.
  Tensor forward_eval(const Tensor& input) const;

  // Flattened dLoss/dParams in registry order after tape.backward().
  std::vector<double> flat_gradient(const Tape& tape,
                                    const std::vector<Var>& param_vars) const;
};

// Per-parameter gradients in registry order; zero tensors for parameters
// the loss never reached.
std::vector<Tensor> backward_params(Tape& tape, Var loss,
                                    const std::vector<Var>& param_vars);

// Throws ContractError if any layer is batch-dependent (DP requires
// per-sample gradients, which such layers make ill-defined).
void assert_dp_compatible(const ModelGraph& model);

struct BuildOpts {
  NormKind norm = NormKind::kKernel;
  ActKind act = ActKind::kMish;
  std::int64_t num_classes = 10;
  Shape input_shape = {3, 32, 32};
  std::vector<std::int64_t> widths;  // empty -> architecture default
  double knconv_dropout = 0.1;
  double kernelnorm_dropout = 0.5;
  std::int64_t group_size = 32;
  double norm_eps = 1e-5;
  bool rescale_kept = false;
  bool exclude_padding = false;
  enum class Resolution { kLow, kMedium };
  Resolution resolution = Resolution::kLow;
  Precision precision = Precision::kDouble;
  std::uint64_t init_seed = 0;
};

// Default channel schedules, documented in the README.
std::vector<std::int64_t> default_knresnet13_widths();  // 4 stage widths
std::vector<std::int64_t> default_vgg6_widths();        // 5 conv widths
std::vector<std::int64_t> default_resnet8_widths();     // 3 stage widths

ModelGraph build_knresnet13(const BuildOpts& opts);
ModelGraph build_vgg6(const BuildOpts& opts);
ModelGraph build_resnet8(const BuildOpts& opts);
// Dispatch by name: knresnet13 | vgg6 | resnet8.
ModelGraph build_model(const std::string& name, const BuildOpts& opts);

// Introspection used by tests and the describe subcommand.
std::int64_t count_layers(const ModelGraph& model, Layer::Kind kind);
std::int64_t conv_layer_count(const ModelGraph& model);   // Conv + KNConv
std::int64_t norm_param_count(const ModelGraph& model);   // gamma/beta elements
std::string describe_json(const ModelGraph& model);       // pretty JSON

}  // namespace knormlab
