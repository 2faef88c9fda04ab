#include "knormlab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "knormlab/errors.hpp"
#include "knormlab/fl.hpp"
#include "knormlab/parallel.hpp"

namespace knormlab {

double lr_at(std::int64_t epoch, double base_lr,
             const std::vector<std::int64_t>& milestones) {
  double lr = base_lr;
  for (std::int64_t m : milestones)
    if (epoch >= m) lr /= 2.0;
  return lr;
}

std::vector<std::int64_t> default_milestones(std::int64_t total_epochs) {
  return {std::max<std::int64_t>(0, total_epochs - 30),
          std::max<std::int64_t>(0, total_epochs - 10)};
}

std::vector<std::int64_t> epoch_shuffle(const std::vector<std::int64_t>& indices,
                                        const CounterRng& rng,
                                        std::uint64_t epoch, std::uint64_t salt) {
  std::vector<std::int64_t> out = indices;
  const std::int64_t n = static_cast<std::int64_t>(out.size());
  for (std::int64_t i = 0; i + 1 < n; ++i) {
    const std::uint64_t r = rng.bits(RngStream::kShuffle, epoch, salt, 0,
                                     static_cast<std::uint64_t>(i));
    const std::int64_t j =
        i + static_cast<std::int64_t>(r % static_cast<std::uint64_t>(n - i));
    std::swap(out[static_cast<std::size_t>(i)], out[static_cast<std::size_t>(j)]);
  }
  return out;
}

namespace {

std::int64_t count_correct(const Tensor& logits,
                           const std::vector<std::int64_t>& labels) {
  std::int64_t correct = 0;
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  for (std::int64_t r = 0; r < n; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < k; ++c)
      if (logits.at2(r, c) > logits.at2(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return correct;
}

}  // namespace

EpochStats sgd_epoch(ModelGraph& model, const Dataset& data,
                     const std::vector<std::int64_t>& indices, double lr,
                     std::int64_t batch_size, const CounterRng& rng,
                     std::uint64_t epoch, std::uint64_t salt,
                     std::int64_t* step) {
  const std::vector<std::int64_t> order = epoch_shuffle(indices, rng, epoch, salt);
  EpochStats stats;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<std::int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = batch_from(data, idx);
    Tape tape(model.precision);
    ForwardCtx ctx;
    ctx.rng = &rng;
    ctx.step = static_cast<std::uint64_t>(*step);
    ctx.sample_ids = batch.sample_ids;
    ctx.training = true;
    TapedLoss tl = model.forward_loss(tape, batch.images, batch.labels, ctx);
    const double loss = tape.value(tl.loss).scalar_value();
    stats.loss_sum += loss * static_cast<double>(batch.size());
    stats.correct += count_correct(tape.value(tl.logits), batch.labels);
    stats.seen += batch.size();
    tape.backward(tl.loss);
    model.apply_update(model.flat_gradient(tape, tl.param_vars), lr);
    ++(*step);
  }
  return stats;
}

EpochStats dp_sgd_epoch(ModelGraph& model, const Dataset& data,
                        const std::vector<std::int64_t>& indices,
                        const PrivacySpec& spec, double lr,
                        const AugmentationPolicy& policy, const CounterRng& rng,
                        RdpAccountant& accountant, std::int64_t batch_size,
                        std::uint64_t epoch, std::uint64_t salt, int threads) {
  const std::vector<std::int64_t> order = epoch_shuffle(indices, rng, epoch, salt);
  EpochStats stats;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<std::int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = batch_from(data, idx);
    const DpStepStats st =
        dp_sgd_step(model, batch, spec, lr, policy, rng, accountant, threads);
    stats.loss_sum += st.mean_loss * static_cast<double>(batch.size());
    stats.seen += batch.size();
  }
  // training accuracy for DP epochs comes from an evaluation pass by the
  // caller; per-sample tapes do not keep batch logits around
  return stats;
}

EvalStats evaluate(const ModelGraph& model, const Dataset& data,
                   std::int64_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate on empty dataset");
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    const std::int64_t end = std::min(data.size(), start + batch_size);
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < end; ++i) idx.push_back(i);
    Batch batch = batch_from(data, idx);
    const Tensor logits = model.forward_eval(batch.images);
    correct += count_correct(logits, batch.labels);
    // batch-mean cross entropy, accumulated per sample
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    for (std::int64_t r = 0; r < n; ++r) {
      double mx = logits.at2(r, 0);
      for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, logits.at2(r, c));
      double se = 0.0;
      for (std::int64_t c = 0; c < k; ++c) se += std::exp(logits.at2(r, c) - mx);
      loss_sum += mx + std::log(se) -
                  logits.at2(r, batch.labels[static_cast<std::size_t>(r)]);
    }
  }
  EvalStats out;
  out.loss = loss_sum / static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

void save_checkpoint(const ModelGraph& model, const std::string& dir,
                     std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["model"] = {
      {"name", model.name},
      {"norm_kind", to_string(model.norm_kind)},
      {"activation", to_string(model.activation)},
      {"num_classes", model.num_classes},
      {"input_shape", model.input_shape},
      {"widths", model.widths},
      {"group_size", model.group_size},
      {"norm_eps", model.norm_eps},
      {"rescale_kept", model.rescale_kept},
      {"exclude_padding", model.exclude_padding},
      {"precision",
       model.precision == Precision::kDouble ? "double" : "single"},
  };
  manifest["seed"] = seed;
  manifest["param_file"] = "params.bin";
  nlohmann::json plist = nlohmann::json::array();
  for (const Parameter& p : model.params)
    plist.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  manifest["params"] = plist;
  {
    std::ofstream f(dir + "/manifest.json", std::ios::binary);
    if (!f) throw ConfigError("cannot write " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
  }
  {
    std::ofstream f(dir + "/params.bin", std::ios::binary);
    if (!f) throw ConfigError("cannot write " + dir + "/params.bin");
    for (const Parameter& p : model.params)
      f.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
  }
}

ModelGraph load_checkpoint(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw ConfigError("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  mf >> manifest;
  const auto& jm = manifest.at("model");
  BuildOpts opts;
  opts.norm = norm_kind_from_string(jm.at("norm_kind").get<std::string>());
  opts.act = act_kind_from_string(jm.at("activation").get<std::string>());
  opts.num_classes = jm.at("num_classes").get<std::int64_t>();
  opts.input_shape = jm.at("input_shape").get<Shape>();
  opts.widths = jm.at("widths").get<std::vector<std::int64_t>>();
  opts.group_size = jm.at("group_size").get<std::int64_t>();
  opts.norm_eps = jm.at("norm_eps").get<double>();
  opts.rescale_kept = jm.at("rescale_kept").get<bool>();
  opts.exclude_padding = jm.at("exclude_padding").get<bool>();
  opts.precision = jm.at("precision").get<std::string>() == "single"
                       ? Precision::kSingle
                       : Precision::kDouble;
  opts.init_seed = manifest.at("seed").get<std::uint64_t>();
  ModelGraph model = build_model(jm.at("name").get<std::string>(), opts);

  std::ifstream pf(dir + "/" + manifest.at("param_file").get<std::string>(),
                   std::ios::binary);
  if (!pf) throw ConfigError("cannot open checkpoint parameters in " + dir);
  std::vector<double> flat(static_cast<std::size_t>(model.num_params()));
  pf.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (pf.gcount() !=
      static_cast<std::streamsize>(flat.size() * sizeof(double)))
    throw ConfigError("checkpoint parameter file in " + dir +
                      " is shorter than the manifest requires");
  model.load_flat_params(flat);
  return model;
}

namespace {

struct LoadedData {
  Dataset train, test;
};

LoadedData load_data(const ExperimentConfig& cfg,
                     std::vector<std::string>* log) {
  LoadedData d;
  if (cfg.data_source == "synthetic") {
    d.train = make_synthetic(cfg.synth_classes, cfg.synth_train,
                             cfg.synth_shape, cfg.seed, cfg.synth_margin);
    d.test = make_synthetic(cfg.synth_classes, cfg.synth_test, cfg.synth_shape,
                            cfg.seed, cfg.synth_margin,
                            static_cast<std::uint64_t>(cfg.synth_train));
    d.test.split = "test";
  } else {
    auto [train, test] = load_cifar10_binary(cfg.data_dir);
    d.train = std::move(train);
    d.test = std::move(test);
    if (cfg.subset_per_class > 0)
      d.train = class_balanced_subset(d.train, cfg.subset_per_class, cfg.seed);
    if (cfg.test_subset_per_class > 0)
      d.test =
          class_balanced_subset(d.test, cfg.test_subset_per_class, cfg.seed + 1);
  }
  if (cfg.preprocess_mode == PreprocessMode::kStandardize) {
    const ChannelStats stats = channel_stats(d.train);  // train split only
    d.train = preprocess(d.train, PreprocessMode::kStandardize, &stats);
    d.test = preprocess(d.test, PreprocessMode::kStandardize, &stats);
  } else {
    d.train = preprocess(d.train, PreprocessMode::kScaleOnly);
    d.test = preprocess(d.test, PreprocessMode::kScaleOnly);
  }
  if (log)
    log->push_back("data: train=" + std::to_string(d.train.size()) +
                   " test=" + std::to_string(d.test.size()));
  return d;
}

class WallClock {
 public:
  explicit WallClock(bool real) : real_(real), start_(now()) {}
  double seconds() const {
    if (!real_) return 0.0;
    return std::chrono::duration<double>(now() - start_).count();
  }

 private:
  static std::chrono::steady_clock::time_point now() {
    return std::chrono::steady_clock::now();
  }
  bool real_;
  std::chrono::steady_clock::time_point start_;
};

RunResult run_central(const ExperimentConfig& cfg, ModelGraph& model,
                      const LoadedData& data, int threads) {
  (void)threads;
  RunResult res;
  CounterRng rng(cfg.seed);
  std::vector<std::int64_t> indices(static_cast<std::size_t>(data.train.size()));
  for (std::int64_t i = 0; i < data.train.size(); ++i)
    indices[static_cast<std::size_t>(i)] = i;
  WallClock clock(cfg.real_wall_clock);
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.lr, cfg.milestones);
    const EpochStats st = sgd_epoch(model, data.train, indices, lr,
                                    cfg.batch_size, rng, static_cast<std::uint64_t>(epoch),
                                    /*salt=*/0, &step);
    MetricsRecord train_row;
    train_row.step = epoch;
    train_row.split = "train";
    train_row.loss = st.mean_loss();
    train_row.accuracy = st.accuracy();
    train_row.wall_seconds = clock.seconds();
    train_row.seed = cfg.seed;
    res.metrics.push_back(train_row);
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const EvalStats ev = evaluate(model, data.test, cfg.batch_size);
      MetricsRecord row;
      row.step = epoch;
      row.split = "test";
      row.loss = ev.loss;
      row.accuracy = ev.accuracy;
      row.wall_seconds = clock.seconds();
      row.seed = cfg.seed;
      res.metrics.push_back(row);
    }
  }
  return res;
}

RunResult run_dp(const ExperimentConfig& cfg, ModelGraph& model,
                 const LoadedData& data, int threads,
                 std::vector<std::string>* log) {
  assert_dp_compatible(model);
  RunResult res;
  CounterRng rng(cfg.seed);
  const std::int64_t n = data.train.size();
  PrivacySpec spec = cfg.dp;
  spec.sampling_rate = std::min(1.0, static_cast<double>(cfg.batch_size) /
                                         static_cast<double>(n));
  const std::int64_t steps_per_epoch =
      (n + cfg.batch_size - 1) / cfg.batch_size;
  spec.steps = steps_per_epoch * cfg.epochs;
  if (spec.delta >= 1.0 / static_cast<double>(n) && log)
    log->push_back("warning: delta=" + std::to_string(spec.delta) +
                   " is not below 1/N=" +
                   std::to_string(1.0 / static_cast<double>(n)));
  if (spec.sigma <= 0.0) {
    spec.sigma = calibrate_sigma(spec.epsilon, spec.delta, spec.sampling_rate,
                                 spec.steps);
    if (log)
      log->push_back("calibrated sigma=" + std::to_string(spec.sigma) +
                     " for epsilon=" + std::to_string(spec.epsilon));
  }
  RdpAccountant accountant(spec.sampling_rate, spec.sigma, spec.delta);
  std::vector<std::int64_t> indices(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
  WallClock clock(cfg.real_wall_clock);
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.lr, cfg.milestones);
    const EpochStats st =
        dp_sgd_epoch(model, data.train, indices, spec, lr, cfg.augmentation,
                     rng, accountant, cfg.batch_size,
                     static_cast<std::uint64_t>(epoch), /*salt=*/0, threads);
    const double eps_spent = accountant.epsilon();
    MetricsRecord train_row;
    train_row.step = epoch;
    train_row.split = "train";
    train_row.loss = st.mean_loss();
    const EvalStats train_ev = evaluate(model, data.train, cfg.batch_size);
    train_row.accuracy = train_ev.accuracy;
    train_row.epsilon_spent = eps_spent;
    train_row.wall_seconds = clock.seconds();
    train_row.seed = cfg.seed;
    res.metrics.push_back(train_row);
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const EvalStats ev = evaluate(model, data.test, cfg.batch_size);
      MetricsRecord row;
      row.step = epoch;
      row.split = "test";
      row.loss = ev.loss;
      row.accuracy = ev.accuracy;
      row.epsilon_spent = eps_spent;
      row.wall_seconds = clock.seconds();
      row.seed = cfg.seed;
      res.metrics.push_back(row);
    }
  }
  return res;
}

RunResult run_fl(const ExperimentConfig& cfg, ModelGraph& model,
                 const LoadedData& data, int threads) {
  FederationConfig fed = cfg.fed;
  std::vector<ClientPartition> partitions;
  if (fed.classes_per_client > 0) {
    partitions = partition_label_shard(data.train.labels, fed.n_clients,
                                       fed.classes_per_client, cfg.seed,
                                       data.train.num_classes);
  } else {
    // IID round-robin split
    partitions.resize(static_cast<std::size_t>(fed.n_clients));
    for (std::int64_t j = 0; j < fed.n_clients; ++j)
      partitions[static_cast<std::size_t>(j)].client_id = j;
    for (std::int64_t i = 0; i < data.train.size(); ++i)
      partitions[static_cast<std::size_t>(i % fed.n_clients)].indices.push_back(i);
  }
  FlTrainConfig fcfg;
  fcfg.lr = cfg.lr;
  fcfg.batch_size = cfg.batch_size;
  fcfg.eval_batch = cfg.batch_size;
  fcfg.dp = cfg.dp;
  fcfg.aug = cfg.augmentation;
  fcfg.threads = threads;
  fcfg.real_wall_clock = cfg.real_wall_clock;
  fed.local_epochs = cfg.fed.local_epochs;
  CounterRng rng(cfg.seed);
  FederationResult fr = run_federation(model, data.train, data.test,
                                       partitions, fed, fcfg, rng);
  for (MetricsRecord& r : fr.metrics) r.seed = cfg.seed;
  model.load_flat_params(fr.final_params);
  RunResult res;
  res.metrics = std::move(fr.metrics);
  return res;
}

}  // namespace

RunResult train(const ExperimentConfig& cfg) {
  std::vector<std::string> log;
  const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();
  LoadedData data = load_data(cfg, &log);
  ModelGraph model = build_model(cfg.model_name, cfg.build);

  RunResult res;
  switch (cfg.mode) {
    case RunMode::kCentral:
      res = run_central(cfg, model, data, threads);
      break;
    case RunMode::kDp:
      res = run_dp(cfg, model, data, threads, &log);
      break;
    case RunMode::kFl:
    case RunMode::kDpFl:
      res = run_fl(cfg, model, data, threads);
      break;
  }

  std::filesystem::create_directories(cfg.out_dir);
  res.metrics_path = cfg.out_dir + "/metrics.csv";
  write_metrics_csv(res.metrics_path, res.metrics);
  res.checkpoint_dir = cfg.out_dir + "/checkpoint";
  save_checkpoint(model, res.checkpoint_dir, cfg.seed);
  std::ofstream lf(cfg.out_dir + "/run.log", std::ios::binary);
  for (const std::string& line : log) lf << line << "\n";
  return res;
}

}  // namespace knormlab
