#pragma once

#include <cstdint>
#include <vector>

#include "knormlab/data.hpp"
#include "knormlab/dp.hpp"
#include "knormlab/metrics.hpp"
#include "knormlab/model.hpp"
#include "knormlab/rng.hpp"

namespace knormlab {

struct ClientPartition {
  std::int64_t client_id = 0;
  std::vector<std::int64_t> indices;  // into the host dataset

  std::int64_t size() const { return static_cast<std::int64_t>(indices.size()); }
};

// Non-IID label-shard partition: every client receives exactly
// classes_per_client shards of distinct classes, dealt from a seeded class
// permutation; shard sizes differ by at most one sample per class. Index
// sets are disjoint and cover the dataset.
std::vector<ClientPartition> partition_label_shard(
    const std::vector<std::int64_t>& labels, std::int64_t n_clients,
    std::int64_t classes_per_client, std::uint64_t seed,
    std::int64_t num_classes = 0 /* 0 = infer as max label + 1 */);

// W_g = sum_j N_j W_j / sum_j N_j, exact weighted mean.
std::vector<double> fedavg_aggregate(
    const std::vector<std::vector<double>>& local_params,
    const std::vector<std::int64_t>& sizes);

struct FederationConfig {
  std::int64_t n_clients = 1;
  std::int64_t selected_per_round = 0;  // 0 = all clients every round
  std::int64_t classes_per_client = 0;  // 0 = every class for every client
  std::int64_t local_epochs = 1;
  std::int64_t rounds = 0;
  bool dp = false;
  bool parallel_clients = false;
};

struct FlTrainConfig {
  double lr = 0.1;
  std::int64_t batch_size = 64;
  std::int64_t eval_batch = 256;
  PrivacySpec dp;          // dp mode; sigma 0 means calibrate per client
  AugmentationPolicy aug;  // dp mode
  int threads = 1;
  bool real_wall_clock = true;
};

struct GlobalState {
  std::int64_t round = 0;
  std::vector<double> params;
  // per-client ledgers (dp mode)
  std::vector<double> epsilon_spent;
  std::vector<std::uint8_t> active;
  std::vector<std::int64_t> steps_taken;
};

struct FlSession {
  GlobalState state;
  std::vector<PrivacySpec> client_specs;   // dp mode, one per client
  std::vector<RdpAccountant> accountants;  // dp mode, one per client
};

FlSession make_session(const ModelGraph& model,
                       const std::vector<ClientPartition>& partitions,
                       const FederationConfig& fed, const FlTrainConfig& train);

// One communication round: select clients, run local training from the
// current global parameters, aggregate weighted by shard sizes. Returns the
// selected client ids. `model` is a workspace whose parameters are
// overwritten.
std::vector<std::int64_t> run_round(FlSession& session, ModelGraph& model,
                                    const Dataset& train,
                                    const std::vector<ClientPartition>& partitions,
                                    const FederationConfig& fed,
                                    const FlTrainConfig& cfg,
                                    const CounterRng& rng);

struct FederationResult {
  std::vector<MetricsRecord> metrics;
  std::vector<double> final_params;
  std::vector<double> client_epsilon;
};

// Loops run_round `fed.rounds` times, evaluating the global model on the
// test split after every round.
FederationResult run_federation(ModelGraph& model, const Dataset& train,
                                const Dataset& test,
                                const std::vector<ClientPartition>& partitions,
                                const FederationConfig& fed,
                                const FlTrainConfig& cfg, const CounterRng& rng);

}  // namespace knormlab
