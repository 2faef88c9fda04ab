#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knormlab/config.hpp"
#include "knormlab/data.hpp"
#include "knormlab/dp.hpp"
#include "knormlab/metrics.hpp"
#include "knormlab/model.hpp"
#include "knormlab/schedule.hpp"

namespace knormlab {

// Deterministic epoch shuffle of an index set, keyed by (epoch, salt).
std::vector<std::int64_t> epoch_shuffle(const std::vector<std::int64_t>& indices,
                                        const CounterRng& rng,
                                        std::uint64_t epoch, std::uint64_t salt);

struct EpochStats {
  double loss_sum = 0.0;  // sum of batch-mean losses weighted by batch size
  std::int64_t correct = 0;
  std::int64_t seen = 0;

  double mean_loss() const { return seen ? loss_sum / static_cast<double>(seen) : 0.0; }
  double accuracy() const {
    return seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  }
};

// One epoch of zero-momentum mini-batch SGD over `indices`. The step
// counter advances once per batch and keys dropout masks, so runs resume
// deterministically across epochs/rounds.
EpochStats sgd_epoch(ModelGraph& model, const Dataset& data,
                     const std::vector<std::int64_t>& indices, double lr,
                     std::int64_t batch_size, const CounterRng& rng,
                     std::uint64_t epoch, std::uint64_t salt,
                     std::int64_t* step);

// DP-SGD epoch; advances the accountant once per batch. Propagates
// BudgetExhaustedError from dp_sgd_step.
EpochStats dp_sgd_epoch(ModelGraph& model, const Dataset& data,
                        const std::vector<std::int64_t>& indices,
                        const PrivacySpec& spec, double lr,
                        const AugmentationPolicy& policy, const CounterRng& rng,
                        RdpAccountant& accountant, std::int64_t batch_size,
                        std::uint64_t epoch, std::uint64_t salt, int threads);

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalStats evaluate(const ModelGraph& model, const Dataset& data,
                   std::int64_t batch_size);

// --- checkpoints: params.bin (little-endian float64, registry order) plus
// manifest.json (model spec, parameter names/shapes, norm kind, seed) ---
void save_checkpoint(const ModelGraph& model, const std::string& dir,
                     std::uint64_t seed);
ModelGraph load_checkpoint(const std::string& dir);

struct RunResult {
  std::vector<MetricsRecord> metrics;
  std::string metrics_path;
  std::string checkpoint_dir;
};

// Dispatches to the central / dp / fl / dpfl loop per the config, writes
// metrics.csv and a checkpoint under the output directory.
RunResult train(const ExperimentConfig& config);

}  // namespace knormlab
