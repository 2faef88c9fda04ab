#include "knormlab/dp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "knormlab/errors.hpp"
#include "knormlab/parallel.hpp"

namespace knormlab {

int default_thread_count() {
  if (const char* env = std::getenv("KNORMLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        const std::int64_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

Tensor Batch::image(std::int64_t i) const {
  const std::int64_t chw = images.dim(1) * images.dim(2) * images.dim(3);
  Tensor t({images.dim(1), images.dim(2), images.dim(3)});
  std::copy(images.data() + i * chw, images.data() + (i + 1) * chw, t.data());
  return t;
}

Batch batch_from(const Dataset& d, const std::vector<std::int64_t>& indices) {
  Batch b;
  b.images = d.gather(indices);
  b.labels.reserve(indices.size());
  b.sample_ids.reserve(indices.size());
  for (std::int64_t i : indices) {
    b.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
    b.sample_ids.push_back(static_cast<std::uint64_t>(i));
  }
  return b;
}

double PerSampleGrads::mean_loss() const {
  if (losses.empty()) return 0.0;
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

PerSampleGrads per_sample_gradients(const ModelGraph& model, const Batch& batch,
                                    const AugmentationPolicy& policy,
                                    const CounterRng& rng, std::uint64_t step,
                                    int threads) {
  assert_dp_compatible(model);
  if (policy.multiplicity() < 1)
    throw ContractError("augmentation policy must contain >= 1 transform");
  const std::int64_t b = batch.size();
  const std::int64_t k = policy.multiplicity();
  PerSampleGrads out;
  out.grads.assign(static_cast<std::size_t>(b), {});
  out.losses.assign(static_cast<std::size_t>(b), 0.0);

  parallel_for(b, threads, [&](std::int64_t i) {
    const std::uint64_t sid = batch.sample_ids[static_cast<std::size_t>(i)];
    const Tensor img = batch.image(i);
    std::vector<double> acc(static_cast<std::size_t>(model.num_params()), 0.0);
    double loss_acc = 0.0;
    for (std::int64_t view = 0; view < k; ++view) {
      const Tensor aug = augment(
          img, policy.transforms[static_cast<std::size_t>(view)],
          policy.crop_pad, rng, step, sid, static_cast<std::uint64_t>(view));
      Tensor single({1, aug.dim(0), aug.dim(1), aug.dim(2)},
                    std::vector<double>(aug.data(), aug.data() + aug.numel()),
                    aug.precision());
      Tape tape(model.precision);
      ForwardCtx ctx;
      ctx.rng = &rng;
      ctx.step = step;
      ctx.sample_ids = {sid};
      ctx.training = true;
      TapedLoss tl = model.forward_loss(
          tape, single, {batch.labels[static_cast<std::size_t>(i)]}, ctx);
      loss_acc += tape.value(tl.loss).scalar_value();
      tape.backward(tl.loss);
      const std::vector<double> g = model.flat_gradient(tape, tl.param_vars);
      for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
    }
    const double inv_k = 1.0 / static_cast<double>(k);
    for (double& v : acc) v *= inv_k;
    out.grads[static_cast<std::size_t>(i)] = std::move(acc);
    out.losses[static_cast<std::size_t>(i)] = loss_acc * inv_k;
  });
  return out;
}

void clip_per_sample(PerSampleGrads& grads, double clip) {
  if (!(clip > 0.0))
    throw ContractError("clipping norm must be positive, got " +
                        std::to_string(clip));
  if (std::isinf(clip)) return;  // clipping disabled
  for (auto& g : grads.grads) {
    const double norm = l2_norm(g);
    if (norm > clip) {
      const double s = clip / norm;
      for (double& v : g) v *= s;
    }
  }
}

std::vector<double> noisy_aggregate(const PerSampleGrads& grads, double clip,
                                    double sigma, std::int64_t batch_size,
                                    const CounterRng& rng, std::uint64_t step) {
  if (sigma < 0.0) throw ContractError("noise multiplier must be >= 0");
  if (sigma > 0.0 && !(clip > 0.0 && std::isfinite(clip)))
    throw ContractError("noise requires a finite positive clipping norm");
  if (batch_size <= 0) throw ContractError("batch size must be positive");
  if (grads.grads.empty()) throw ContractError("no per-sample gradients");
  std::vector<double> agg(grads.grads.front().size(), 0.0);
  for (const auto& g : grads.grads) {
    if (g.size() != agg.size())
      throw ContractError("per-sample gradient length mismatch");
    for (std::size_t j = 0; j < g.size(); ++j) agg[j] += g[j];
  }
  if (sigma > 0.0) {
    const double scale = sigma * clip;
    for (std::size_t j = 0; j < agg.size(); ++j)
      agg[j] += scale * rng.gaussian(RngStream::kDpNoise, 0, step, 0,
                                     static_cast<std::uint64_t>(j));
  }
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  for (double& v : agg) v *= inv_b;
  return agg;
}

DpStepStats dp_sgd_step(ModelGraph& model, const Batch& batch,
                        const PrivacySpec& spec, double lr,
                        const AugmentationPolicy& policy, const CounterRng& rng,
                        RdpAccountant& accountant, int threads) {
  // Budget applies only to genuinely noised runs; sigma == 0 is the
  // degenerate plain-SGD configuration used by equivalence tests.
  if (spec.sigma > 0.0 && spec.epsilon > 0.0) {
    const double eps_next = accountant.epsilon_at(accountant.steps() + 1);
    if (eps_next > spec.epsilon * (1.0 + 1e-9))
      throw BudgetExhaustedError(
          "privacy budget exhausted: next step would spend epsilon=" +
          std::to_string(eps_next) + " > " + std::to_string(spec.epsilon));
  }
  const std::uint64_t step = static_cast<std::uint64_t>(accountant.steps());
  PerSampleGrads psg =
      per_sample_gradients(model, batch, policy, rng, step, threads);
  clip_per_sample(psg, spec.clip);
  const std::vector<double> g =
      noisy_aggregate(psg, spec.clip, spec.sigma, batch.size(), rng, step);
  model.apply_update(g, lr);
  accountant.advance();
  DpStepStats st;
  st.mean_loss = psg.mean_loss();
  st.epsilon_spent = spec.sigma > 0.0 ? accountant.epsilon() : 0.0;
  return st;
}

}  // namespace knormlab
