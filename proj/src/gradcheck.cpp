#include "knormlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {

// coordinate -> (parameter index, offset) in registry order
struct Coord {
  std::size_t param;
  std::int64_t offset;
  std::int64_t flat;
};

}  // namespace

GradCheckResult finite_difference_check(ModelGraph& model, const Tensor& input,
                                        const std::vector<std::int64_t>& labels,
                                        double h, std::int64_t max_coords,
                                        std::uint64_t coord_seed, bool training,
                                        std::uint64_t mask_seed) {
  if (model.precision != Precision::kDouble)
    throw ContractError("finite_difference_check requires a double-precision model");

  CounterRng mask_rng(mask_seed);
  ForwardCtx ctx;
  ctx.rng = &mask_rng;
  ctx.training = training;
  ctx.step = 0;

  auto loss_at = [&]() -> double {
    Tape tape(model.precision);
    TapedLoss tl = model.forward_loss(tape, input, labels, ctx);
    return tape.value(tl.loss).scalar_value();
  };

  GradCheckResult res;

  // analytic gradient at the current parameters
  std::vector<double> analytic;
  {
    Tape tape(model.precision);
    TapedLoss tl = model.forward_loss(tape, input, labels, ctx);
    const double loss = tape.value(tl.loss).scalar_value();
    if (!std::isfinite(loss)) {
      res.loss_finite = false;
      res.worst_location = "loss";
      res.max_rel_error = std::numeric_limits<double>::infinity();
      return res;
    }
    tape.backward(tl.loss);
    analytic = model.flat_gradient(tape, tl.param_vars);
  }

  const std::int64_t total = model.num_params();
  std::vector<std::int64_t> picks;
  if (total <= max_coords) {
    picks.resize(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) picks[static_cast<std::size_t>(i)] = i;
  } else {
    // seeded partial Fisher-Yates over [0, total)
    CounterRng pick_rng(coord_seed);
    std::vector<std::int64_t> pool(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < max_coords; ++i) {
      const std::uint64_t r =
          pick_rng.bits(RngStream::kGeneric, 0, 0, 0, static_cast<std::uint64_t>(i));
      const std::int64_t j =
          i + static_cast<std::int64_t>(r % static_cast<std::uint64_t>(total - i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    picks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(max_coords));
  }

  // flat index -> (param, offset)
  std::vector<std::int64_t> starts(model.params.size() + 1, 0);
  for (std::size_t i = 0; i < model.params.size(); ++i)
    starts[i + 1] = starts[i] + model.params[i].value.numel();

  for (std::int64_t flat : picks) {
    std::size_t pi = 0;
    while (starts[pi + 1] <= flat) ++pi;
    const std::int64_t off = flat - starts[pi];
    double& coord = model.params[pi].value[off];
    const double saved = coord;

    coord = saved + h;
    const double lp = loss_at();
    coord = saved - h;
    const double lm = loss_at();
    coord = saved;

    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      res.loss_finite = false;
      res.worst_location = model.params[pi].name + "[" + std::to_string(off) + "]";
      res.max_rel_error = std::numeric_limits<double>::infinity();
      return res;
    }
    const double fd = (lp - lm) / (2.0 * h);
    const double an = analytic[static_cast<std::size_t>(flat)];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    const double rel = std::abs(fd - an) / denom;
    ++res.coords_checked;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_location = model.params[pi].name + "[" + std::to_string(off) + "]";
    }
  }
  return res;
}

}  // namespace knormlab
