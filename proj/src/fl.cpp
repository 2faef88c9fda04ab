#include "knormlab/fl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include "knormlab/errors.hpp"
#include "knormlab/parallel.hpp"
#include "knormlab/train.hpp"

namespace knormlab {

std::vector<ClientPartition> partition_label_shard(
    const std::vector<std::int64_t>& labels, std::int64_t n_clients,
    std::int64_t classes_per_client, std::uint64_t seed,
    std::int64_t num_classes) {
  if (labels.empty()) throw ConfigError("cannot partition an empty dataset");
  if (n_clients < 1) throw ConfigError("need at least one client");
  if (num_classes <= 0) {
    for (std::int64_t l : labels) num_classes = std::max(num_classes, l + 1);
  }
  if (classes_per_client < 1 || classes_per_client > num_classes)
    throw ConfigError("classes_per_client must be in [1, num_classes]");
  if (n_clients * classes_per_client < num_classes)
    throw ConfigError(
        "infeasible partition: " + std::to_string(n_clients) + " clients x " +
        std::to_string(classes_per_client) +
        " classes/client cannot cover all " + std::to_string(num_classes) +
        " classes");

  CounterRng rng(seed);
  // seeded permutation of the classes
  std::vector<std::int64_t> perm(static_cast<std::size_t>(num_classes));
  for (std::int64_t c = 0; c < num_classes; ++c) perm[static_cast<std::size_t>(c)] = c;
  for (std::int64_t i = 0; i + 1 < num_classes; ++i) {
    const std::uint64_t r =
        rng.bits(RngStream::kPartition, 0, 0, 0, static_cast<std::uint64_t>(i));
    const std::int64_t j =
        i + static_cast<std::int64_t>(r % static_cast<std::uint64_t>(num_classes - i));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }

  // slots dealt round-robin over the permuted classes; client j owns slots
  // [j*cpc, (j+1)*cpc) whose classes are distinct because cpc <= num_classes
  const std::int64_t total_slots = n_clients * classes_per_client;
  std::vector<std::int64_t> shards_per_class(static_cast<std::size_t>(num_classes), 0);
  for (std::int64_t s = 0; s < total_slots; ++s)
    ++shards_per_class[static_cast<std::size_t>(perm[static_cast<std::size_t>(s % num_classes)])];

  // per-class sample pools, seeded shuffle, split into near-equal shards
  std::vector<std::vector<std::int64_t>> pools(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ConfigError("label " + std::to_string(labels[i]) +
                        " outside [0," + std::to_string(num_classes) + ")");
    pools[static_cast<std::size_t>(labels[i])].push_back(static_cast<std::int64_t>(i));
  }
  for (std::int64_t c = 0; c < num_classes; ++c) {
    auto& pool = pools[static_cast<std::size_t>(c)];
    const std::int64_t n = static_cast<std::int64_t>(pool.size());
    for (std::int64_t i = 0; i + 1 < n; ++i) {
      const std::uint64_t r = rng.bits(RngStream::kPartition, 1,
                                       static_cast<std::uint64_t>(c), 0,
                                       static_cast<std::uint64_t>(i));
      const std::int64_t j =
          i + static_cast<std::int64_t>(r % static_cast<std::uint64_t>(n - i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
  }

  // chunk boundaries per class: first (n mod k) shards get one extra sample
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> chunks(
      static_cast<std::size_t>(num_classes));
  for (std::int64_t c = 0; c < num_classes; ++c) {
    const std::int64_t k = shards_per_class[static_cast<std::size_t>(c)];
    if (k == 0) continue;
    const std::int64_t n = static_cast<std::int64_t>(pools[static_cast<std::size_t>(c)].size());
    const std::int64_t base = n / k, extra = n % k;
    std::int64_t off = 0;
    for (std::int64_t s = 0; s < k; ++s) {
      const std::int64_t len = base + (s < extra ? 1 : 0);
      chunks[static_cast<std::size_t>(c)].push_back({off, off + len});
      off += len;
    }
  }

  std::vector<ClientPartition> out(static_cast<std::size_t>(n_clients));
  std::vector<std::int64_t> cursor(static_cast<std::size_t>(num_classes), 0);
  for (std::int64_t s = 0; s < total_slots; ++s) {
    const std::int64_t client = s / classes_per_client;
    const std::int64_t cls = perm[static_cast<std::size_t>(s % num_classes)];
    auto& cp = out[static_cast<std::size_t>(client)];
    cp.client_id = client;
    const auto [b, e] =
        chunks[static_cast<std::size_t>(cls)][static_cast<std::size_t>(
            cursor[static_cast<std::size_t>(cls)]++)];
    for (std::int64_t i = b; i < e; ++i)
      cp.indices.push_back(pools[static_cast<std::size_t>(cls)][static_cast<std::size_t>(i)]);
  }
  for (auto& cp : out) {
    std::sort(cp.indices.begin(), cp.indices.end());
    if (cp.indices.empty())
      throw ConfigError("client " + std::to_string(cp.client_id) +
                        " received an empty shard; reduce the client count");
  }
  return out;
}

std::vector<double> fedavg_aggregate(
    const std::vector<std::vector<double>>& local_params,
    const std::vector<std::int64_t>& sizes) {
  if (local_params.empty())
    throw ContractError("fedavg_aggregate of zero clients");
  if (local_params.size() != sizes.size())
    throw ContractError("fedavg_aggregate: " +
                        std::to_string(local_params.size()) + " vectors vs " +
                        std::to_string(sizes.size()) + " sizes");
  const std::size_t dim = local_params.front().size();
  double total = 0.0;
  std::size_t anchor = 0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] <= 0)
      throw ContractError("client sample counts must be positive");
    total += static_cast<double>(sizes[j]);
    if (sizes[j] > sizes[anchor]) anchor = j;
  }
  for (const auto& v : local_params)
    if (v.size() != dim)
      throw ContractError("fedavg_aggregate: parameter vector length mismatch");
  // deviation form around the heaviest client: identical inputs aggregate
  // to themselves exactly
  std::vector<double> agg = local_params[anchor];
  for (std::size_t j = 0; j < local_params.size(); ++j) {
    if (j == anchor) continue;
    const double w = static_cast<double>(sizes[j]) / total;
    for (std::size_t i = 0; i < dim; ++i)
      agg[i] += w * (local_params[j][i] - local_params[anchor][i]);
  }
  return agg;
}

FlSession make_session(const ModelGraph& model,
                       const std::vector<ClientPartition>& partitions,
                       const FederationConfig& fed, const FlTrainConfig& train) {
  FlSession s;
  s.state.params = model.flatten_params();
  const std::size_t n = partitions.size();
  s.state.epsilon_spent.assign(n, 0.0);
  s.state.active.assign(n, 1);
  s.state.steps_taken.assign(n, 0);
  if (fed.dp) {
    for (const ClientPartition& cp : partitions) {
      PrivacySpec spec = train.dp;
      const std::int64_t nj = cp.size();
      spec.sampling_rate = std::min(
          1.0, static_cast<double>(train.batch_size) / static_cast<double>(nj));
      const std::int64_t steps_per_epoch =
          (nj + train.batch_size - 1) / train.batch_size;
      spec.steps = fed.rounds * fed.local_epochs * steps_per_epoch;
      if (spec.sigma <= 0.0)
        spec.sigma = calibrate_sigma(spec.epsilon, spec.delta,
                                     spec.sampling_rate, spec.steps);
      s.client_specs.push_back(spec);
      s.accountants.emplace_back(spec.sampling_rate, spec.sigma, spec.delta);
    }
  }
  return s;
}

namespace {

std::vector<std::int64_t> select_clients(const FederationConfig& fed,
                                         std::int64_t round,
                                         const CounterRng& rng) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(fed.n_clients));
  for (std::int64_t j = 0; j < fed.n_clients; ++j) ids[static_cast<std::size_t>(j)] = j;
  if (fed.selected_per_round <= 0 || fed.selected_per_round >= fed.n_clients)
    return ids;
  // uniform without replacement: partial Fisher-Yates keyed by round
  for (std::int64_t i = 0; i < fed.selected_per_round; ++i) {
    const std::uint64_t r =
        rng.bits(RngStream::kClientSelect, static_cast<std::uint64_t>(round), 0,
                 0, static_cast<std::uint64_t>(i));
    const std::int64_t j =
        i + static_cast<std::int64_t>(r % static_cast<std::uint64_t>(fed.n_clients - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(fed.selected_per_round));
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct ClientResult {
  bool contributed = false;
  std::vector<double> params;
  std::int64_t size = 0;
  double epsilon = 0.0;
  bool exhausted = false;
  std::int64_t steps_taken = 0;
};

}  // namespace

std::vector<std::int64_t> run_round(FlSession& session, ModelGraph& model,
                                    const Dataset& train,
                                    const std::vector<ClientPartition>& partitions,
                                    const FederationConfig& fed,
                                    const FlTrainConfig& cfg,
                                    const CounterRng& rng) {
  const std::vector<std::int64_t> selected =
      select_clients(fed, session.state.round, rng);
  std::vector<ClientResult> results(selected.size());

  auto run_client = [&](std::int64_t slot) {
    const std::int64_t j = selected[static_cast<std::size_t>(slot)];
    const ClientPartition& cp = partitions[static_cast<std::size_t>(j)];
    ClientResult& res = results[static_cast<std::size_t>(slot)];
    if (cp.size() == 0) {
      std::cerr << "warning: client " << j << " has an empty shard, skipped\n";
      return;
    }
    if (fed.dp && !session.state.active[static_cast<std::size_t>(j)]) return;

    ModelGraph local = model;  // structure copy; parameters overwritten
    local.load_flat_params(session.state.params);
    std::int64_t step = session.state.steps_taken[static_cast<std::size_t>(j)];
    res.steps_taken = step;
    bool exhausted = false;
    for (std::int64_t l = 0; l < fed.local_epochs && !exhausted; ++l) {
      const std::uint64_t epoch = static_cast<std::uint64_t>(
          session.state.round * fed.local_epochs + l);
      if (fed.dp) {
        RdpAccountant& acct = session.accountants[static_cast<std::size_t>(j)];
        const PrivacySpec& spec = session.client_specs[static_cast<std::size_t>(j)];
        const std::vector<std::int64_t> order =
            epoch_shuffle(cp.indices, rng, epoch, static_cast<std::uint64_t>(j));
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
          const std::size_t end = std::min(
              order.size(), start + static_cast<std::size_t>(cfg.batch_size));
          const std::vector<std::int64_t> idx(
              order.begin() + static_cast<std::ptrdiff_t>(start),
              order.begin() + static_cast<std::ptrdiff_t>(end));
          Batch batch = batch_from(train, idx);
          try {
            dp_sgd_step(local, batch, spec, cfg.lr, cfg.aug, rng, acct,
                        cfg.threads);
          } catch (const BudgetExhaustedError&) {
            exhausted = true;
            break;
          }
        }
        res.epsilon = acct.epsilon();
      } else {
        sgd_epoch(local, train, cp.indices, cfg.lr, cfg.batch_size, rng, epoch,
                  static_cast<std::uint64_t>(j), &step);
      }
    }
    res.exhausted = exhausted;
    res.steps_taken = fed.dp
                          ? session.accountants[static_cast<std::size_t>(j)].steps()
                          : step;
    res.params = local.flatten_params();
    res.size = cp.size();
    res.contributed = true;
  };

  if (fed.parallel_clients) {
    parallel_for(static_cast<std::int64_t>(selected.size()), cfg.threads,
                 run_client);
  } else {
    for (std::int64_t s = 0; s < static_cast<std::int64_t>(selected.size()); ++s)
      run_client(s);
  }

  std::vector<std::vector<double>> locals;
  std::vector<std::int64_t> sizes;
  for (std::size_t s = 0; s < selected.size(); ++s) {
    ClientResult& res = results[s];
    const std::int64_t j = selected[s];
    if (!res.contributed) continue;
    locals.push_back(std::move(res.params));
    sizes.push_back(res.size);
    session.state.steps_taken[static_cast<std::size_t>(j)] = res.steps_taken;
    if (fed.dp) {
      session.state.epsilon_spent[static_cast<std::size_t>(j)] = res.epsilon;
      if (res.exhausted) {
        session.state.active[static_cast<std::size_t>(j)] = 0;
        std::cerr << "client " << j
                  << ": privacy budget exhausted, halting participation\n";
      }
    }
  }
  if (!locals.empty())
    session.state.params = fedavg_aggregate(locals, sizes);
  ++session.state.round;
  return selected;
}

FederationResult run_federation(ModelGraph& model, const Dataset& train,
                                const Dataset& test,
                                const std::vector<ClientPartition>& partitions,
                                const FederationConfig& fed,
                                const FlTrainConfig& cfg, const CounterRng& rng) {
  if (static_cast<std::int64_t>(partitions.size()) != fed.n_clients)
    throw ContractError("partition count " + std::to_string(partitions.size()) +
                        " vs configured clients " +
                        std::to_string(fed.n_clients));
  FlSession session = make_session(model, partitions, fed, cfg);
  FederationResult out;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t round = 0; round < fed.rounds; ++round) {
    run_round(session, model, train, partitions, fed, cfg, rng);
    model.load_flat_params(session.state.params);
    const EvalStats ev = evaluate(model, test, cfg.eval_batch);
    MetricsRecord row;
    row.step = round;
    row.split = "test";
    row.loss = ev.loss;
    row.accuracy = ev.accuracy;
    if (fed.dp) {
      double worst = 0.0;
      for (double e : session.state.epsilon_spent) worst = std::max(worst, e);
      row.epsilon_spent = worst;
    }
    row.wall_seconds =
        cfg.real_wall_clock
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count()
            : 0.0;
    out.metrics.push_back(row);
  }
  out.final_params = session.state.params;
  out.client_epsilon = session.state.epsilon_spent;
  return out;
}

}  // namespace knormlab
