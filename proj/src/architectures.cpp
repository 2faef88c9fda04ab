#include <cmath>
#include <string>
#include <vector>

#include "knormlab/errors.hpp"
#include "knormlab/model.hpp"

namespace knormlab {

std::vector<std::int64_t> default_knresnet13_widths() { return {64, 128, 256, 256}; }
std::vector<std::int64_t> default_vgg6_widths() { return {64, 128, 256, 256, 512}; }
std::vector<std::int64_t> default_resnet8_widths() { return {64, 128, 256}; }

namespace {

// Accumulates layers, assigns ids and initializes parameters (Kaiming
// uniform for weights, torch-style bound for biases, gamma=1/beta=0).
struct Builder {
  ModelGraph g;
  BuildOpts opts;
  CounterRng rng;
  int next_id = 0;

  explicit Builder(const BuildOpts& o) : opts(o), rng(o.init_seed) {
    g.norm_kind = o.norm;
    g.activation = o.act;
    g.num_classes = o.num_classes;
    g.input_shape = o.input_shape;
    g.norm_eps = o.norm_eps;
    g.rescale_kept = o.rescale_kept;
    g.exclude_padding = o.exclude_padding;
    g.group_size = o.group_size;
    g.precision = o.precision;
    if (o.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (o.input_shape.size() != 3)
      throw ConfigError("input shape must be {C,H,W}");
  }

  int take_id() { return next_id++; }

  int add_param(const std::string& name, Tensor t) {
    t.enforce_precision();
    g.params.push_back({name, std::move(t)});
    return static_cast<int>(g.params.size() - 1);
  }

  Tensor uniform_init(Shape shape, double bound, int layer_id, int slot) {
    Tensor t(std::move(shape), opts.precision);
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t[i] = (2.0 * rng.uniform(RngStream::kInit,
                                static_cast<std::uint64_t>(layer_id),
                                static_cast<std::uint64_t>(slot), 0,
                                static_cast<std::uint64_t>(i)) -
              1.0) *
             bound;
    t.enforce_precision();
    return t;
  }

  Layer conv(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
             std::int64_t k, std::int64_t s, std::int64_t p) {
    Layer ly;
    ly.kind = g.norm_kind == NormKind::kKernel ? Layer::Kind::kKNConv
                                               : Layer::Kind::kConv;
    ly.name = name;
    ly.id = take_id();
    ly.in_ch = in_ch;
    ly.out_ch = out_ch;
    ly.kh = ly.kw = k;
    ly.sh = ly.sw = s;
    ly.ph = ly.pw = p;
    if (ly.kind == Layer::Kind::kKNConv) ly.dropout_p = opts.knconv_dropout;
    const double fan_in = static_cast<double>(in_ch * k * k);
    ly.weight = add_param(name + ".weight",
                          uniform_init({out_ch, in_ch, k, k},
                                       std::sqrt(6.0 / fan_in), ly.id, 0));
    ly.bias = add_param(name + ".bias",
                        uniform_init({out_ch}, 1.0 / std::sqrt(fan_in), ly.id, 1));
    return ly;
  }

  Layer norm(const std::string& name, std::int64_t channels) {
    Layer ly;
    ly.name = name;
    ly.id = take_id();
    if (g.norm_kind == NormKind::kLayer) {
      ly.kind = Layer::Kind::kLayerNorm;
    } else {
      ly.kind = Layer::Kind::kGroupNorm;
      ly.group = opts.group_size;
      if (channels % opts.group_size != 0)
        throw ConfigError("channel count " + std::to_string(channels) +
                          " is not divisible by group size " +
                          std::to_string(opts.group_size));
    }
    ly.gamma = add_param(name + ".gamma", Tensor::full({channels}, 1.0, opts.precision));
    ly.beta = add_param(name + ".beta", Tensor::zeros({channels}, opts.precision));
    return ly;
  }

  bool affine_norm() const {
    return g.norm_kind == NormKind::kLayer || g.norm_kind == NormKind::kGroup;
  }

  Layer act(const std::string& name) {
    Layer ly;
    ly.kind = Layer::Kind::kActivation;
    ly.name = name;
    ly.id = take_id();
    ly.act = opts.act;
    return ly;
  }

  Layer max_pool(const std::string& name, std::int64_t k) {
    Layer ly;
    ly.kind = Layer::Kind::kMaxPool;
    ly.name = name;
    ly.id = take_id();
    ly.pool_k = k;
    return ly;
  }

  Layer adaptive_pool(const std::string& name, std::int64_t oh, std::int64_t ow) {
    Layer ly;
    ly.kind = Layer::Kind::kAdaptiveAvgPool;
    ly.name = name;
    ly.id = take_id();
    ly.out_h = oh;
    ly.out_w = ow;
    return ly;
  }

  Layer kernel_norm(const std::string& name, std::int64_t kh, std::int64_t kw,
                    std::int64_t sh, std::int64_t sw, double p) {
    Layer ly;
    ly.kind = Layer::Kind::kKernelNorm;
    ly.name = name;
    ly.id = take_id();
    ly.kh = kh;
    ly.kw = kw;
    ly.sh = sh;
    ly.sw = sw;
    ly.dropout_p = p;
    return ly;
  }

  Layer flatten(const std::string& name) {
    Layer ly;
    ly.kind = Layer::Kind::kFlatten;
    ly.name = name;
    ly.id = take_id();
    return ly;
  }

  Layer linear(const std::string& name, std::int64_t in_f, std::int64_t out_f) {
    Layer ly;
    ly.kind = Layer::Kind::kLinear;
    ly.name = name;
    ly.id = take_id();
    ly.in_features = in_f;
    ly.out_features = out_f;
    const double fan_in = static_cast<double>(in_f);
    ly.weight = add_param(name + ".weight",
                          uniform_init({out_f, in_f}, std::sqrt(6.0 / fan_in), ly.id, 0));
    ly.bias = add_param(name + ".bias",
                        uniform_init({out_f}, 1.0 / std::sqrt(fan_in), ly.id, 1));
    return ly;
  }

  // conv (+ norm for layer/group kinds)
  void conv_block(std::vector<Layer>& dst, const std::string& name,
                  std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
                  std::int64_t s, std::int64_t p) {
    dst.push_back(conv(name, in_ch, out_ch, k, s, p));
    if (affine_norm()) dst.push_back(norm(name + ".norm", out_ch));
  }

  // residual: [conv (norm) act conv (norm)] + shortcut; post-sum activation
  // is appended by the caller.
  Layer residual(const std::string& name, std::int64_t in_ch,
                 std::int64_t out_ch, std::int64_t stride) {
    Layer ly;
    ly.kind = Layer::Kind::kResidual;
    ly.name = name;
    ly.id = take_id();
    ly.in_ch = in_ch;
    ly.out_ch = out_ch;
    conv_block(ly.body, name + ".conv1", in_ch, out_ch, 3, stride, 1);
    ly.body.push_back(act(name + ".act1"));
    conv_block(ly.body, name + ".conv2", out_ch, out_ch, 3, 1, 1);
    if (in_ch != out_ch || stride != 1)
      conv_block(ly.shortcut, name + ".shortcut", in_ch, out_ch, 1, stride, 0);
    return ly;
  }
};

std::vector<std::int64_t> pick_widths(const BuildOpts& opts,
                                      std::vector<std::int64_t> defaults,
                                      const char* arch) {
  if (opts.widths.empty()) return defaults;
  if (opts.widths.size() != defaults.size())
    throw ConfigError(std::string(arch) + " expects " +
                      std::to_string(defaults.size()) + " stage widths, got " +
                      std::to_string(opts.widths.size()));
  for (std::int64_t w : opts.widths)
    if (w <= 0) throw ConfigError("stage widths must be positive");
  return opts.widths;
}

}  // namespace

ModelGraph build_knresnet13(const BuildOpts& opts) {
  const std::vector<std::int64_t> c =
      pick_widths(opts, default_knresnet13_widths(), "knresnet13");
  Builder b(opts);
  b.g.name = "knresnet13";
  b.g.widths = c;
  auto& L = b.g.layers;

  std::int64_t h = opts.input_shape[1], w = opts.input_shape[2];
  if (opts.resolution == BuildOpts::Resolution::kMedium) {
    // 7x7 stride-2 stem with 2x2 max-pooling for medium-resolution inputs.
    b.conv_block(L, "stem", opts.input_shape[0], c[0], 7, 2, 3);
    L.push_back(b.act("stem.act"));
    L.push_back(b.max_pool("stem.pool", 2));
    h = ((h + 6 - 7) / 2 + 1) / 2;
    w = ((w + 6 - 7) / 2 + 1) / 2;
  } else {
    b.conv_block(L, "stem", opts.input_shape[0], c[0], 3, 1, 1);
    L.push_back(b.act("stem.act"));
  }

  // [residual + transitional] x 3, then a final residual: 12 convs total.
  for (int stage = 0; stage < 3; ++stage) {
    const std::string rn = "stage" + std::to_string(stage + 1);
    L.push_back(b.residual(rn + ".res", c[stage], c[stage], 1));
    L.push_back(b.act(rn + ".res.act"));
    b.conv_block(L, rn + ".trans", c[stage], c[stage + 1], 3, 1, 1);
    L.push_back(b.act(rn + ".trans.act"));
    L.push_back(b.max_pool(rn + ".trans.pool", 2));
    h /= 2;
    w /= 2;
  }
  L.push_back(b.residual("stage4.res", c[3], c[3], 1));
  L.push_back(b.act("stage4.res.act"));

  if (h < 1 || w < 1)
    throw ConfigError("input resolution too small for knresnet13");
  if (opts.norm == NormKind::kKernel) {
    L.push_back(b.kernel_norm("head.kernelnorm", std::min<std::int64_t>(2, h),
                              std::min<std::int64_t>(2, w), 1, 1,
                              opts.kernelnorm_dropout));
    L.push_back(b.act("head.act"));
  }
  L.push_back(b.adaptive_pool("head.pool", std::min<std::int64_t>(2, h),
                              std::min<std::int64_t>(2, w)));
  const std::int64_t feat =
      c[3] * std::min<std::int64_t>(2, h) * std::min<std::int64_t>(2, w);
  L.push_back(b.flatten("head.flatten"));
  L.push_back(b.linear("head.fc", feat, opts.num_classes));
  return std::move(b.g);
}

ModelGraph build_vgg6(const BuildOpts& opts) {
  const std::vector<std::int64_t> v =
      pick_widths(opts, default_vgg6_widths(), "vgg6");
  Builder b(opts);
  b.g.name = "vgg6";
  b.g.widths = v;
  auto& L = b.g.layers;

  std::int64_t in_ch = opts.input_shape[0];
  std::int64_t h = opts.input_shape[1], w = opts.input_shape[2];
  const bool pool_after[5] = {true, true, false, true, false};
  for (int i = 0; i < 5; ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    b.conv_block(L, name, in_ch, v[static_cast<std::size_t>(i)], 3, 1, 1);
    L.push_back(b.act(name + ".act"));
    if (pool_after[i]) {
      L.push_back(b.max_pool(name + ".pool", 2));
      h /= 2;
      w /= 2;
    }
    in_ch = v[static_cast<std::size_t>(i)];
  }
  if (h < 1 || w < 1) throw ConfigError("input resolution too small for vgg6");
  const std::int64_t oh = std::min<std::int64_t>(2, h), ow = std::min<std::int64_t>(2, w);
  L.push_back(b.adaptive_pool("head.pool", oh, ow));
  L.push_back(b.flatten("head.flatten"));
  L.push_back(b.linear("head.fc", v[4] * oh * ow, opts.num_classes));
  return std::move(b.g);
}

ModelGraph build_resnet8(const BuildOpts& opts) {
  const std::vector<std::int64_t> r =
      pick_widths(opts, default_resnet8_widths(), "resnet8");
  Builder b(opts);
  b.g.name = "resnet8";
  b.g.widths = r;
  auto& L = b.g.layers;

  b.conv_block(L, "stem", opts.input_shape[0], r[0], 3, 1, 1);
  L.push_back(b.act("stem.act"));
  L.push_back(b.residual("stage1.res", r[0], r[0], 1));
  L.push_back(b.act("stage1.act"));
  L.push_back(b.residual("stage2.res", r[0], r[1], 2));
  L.push_back(b.act("stage2.act"));
  L.push_back(b.residual("stage3.res", r[1], r[2], 2));
  L.push_back(b.act("stage3.act"));

  std::int64_t h = opts.input_shape[1], w = opts.input_shape[2];
  h = (h + 1) / 2;
  h = (h + 1) / 2;  // two stride-2 stages
  w = (w + 1) / 2;
  w = (w + 1) / 2;
  if (h < 1 || w < 1)
    throw ConfigError("input resolution too small for resnet8");
  if (opts.norm == NormKind::kKernel) {
    // KernelNorm inserted before the final average pooling.
    L.push_back(b.kernel_norm("head.kernelnorm", std::min<std::int64_t>(2, h),
                              std::min<std::int64_t>(2, w), 1, 1,
                              opts.kernelnorm_dropout));
    L.push_back(b.act("head.act"));
  }
  const std::int64_t oh = std::min<std::int64_t>(2, h), ow = std::min<std::int64_t>(2, w);
  L.push_back(b.adaptive_pool("head.pool", oh, ow));
  L.push_back(b.flatten("head.flatten"));
  L.push_back(b.linear("head.fc", r[2] * oh * ow, opts.num_classes));
  return std::move(b.g);
}

ModelGraph build_model(const std::string& name, const BuildOpts& opts) {
  if (name == "knresnet13") return build_knresnet13(opts);
  if (name == "vgg6") return build_vgg6(opts);
  if (name == "resnet8") return build_resnet8(opts);
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace knormlab
