#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "knormlab/dp.hpp"
#include "knormlab/fl.hpp"
#include "knormlab/model.hpp"

namespace knormlab {

// Flat `key = value` configuration with dotted sections, '#' comments and
// repeatable CLI overrides. Keys read through the typed getters are
// tracked so unknown keys can be reported.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // "key=value" as passed to --override
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback);
  std::string require_str(const std::string& key);
  std::int64_t get_i64(const std::string& key, std::int64_t fallback);
  double get_f64(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<std::int64_t> get_i64_list(const std::string& key,
                                         std::vector<std::int64_t> fallback);
  std::vector<std::string> get_str_list(const std::string& key,
                                        std::vector<std::string> fallback);

  // Keys present in the file but never read by any getter.
  std::vector<std::string> unread_keys() const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> read_;
  std::string origin_;
};

enum class RunMode { kCentral, kDp, kFl, kDpFl };
RunMode run_mode_from_string(const std::string& s);
std::string to_string(RunMode m);

// Fully-resolved experiment description; every seed and path is explicit.
struct ExperimentConfig {
  RunMode mode = RunMode::kCentral;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  int threads = 0;  // 0 = KNORMLAB_THREADS / hardware
  std::int64_t eval_every = 1;
  bool real_wall_clock = true;
  std::string run_label;

  // model
  std::string model_name = "knresnet13";
  BuildOpts build;

  // data
  std::string data_source = "synthetic";  // synthetic | cifar10
  std::string data_dir;
  std::int64_t subset_per_class = 0;       // train subset (0 = all)
  std::int64_t test_subset_per_class = 0;  // test subset (0 = all)
  std::int64_t synth_classes = 2;
  std::int64_t synth_train = 512;
  std::int64_t synth_test = 128;
  Shape synth_shape = {3, 16, 16};
  double synth_margin = 6.0;
  PreprocessMode preprocess_mode = PreprocessMode::kScaleOnly;
  bool preprocess_overridden = false;

  // optimizer (momentum is zero by construction)
  double lr = 0.1;
  std::int64_t batch_size = 64;
  std::int64_t epochs = 1;
  std::vector<std::int64_t> milestones;  // empty = fixed lr

  // dp
  PrivacySpec dp;
  AugmentationPolicy augmentation;

  // federated
  FederationConfig fed;
};

// Parses and validates; throws ConfigError for unknown keys or infeasible
// settings. Warnings (preprocessing override, delta), if any, are appended
// to `warnings`.
ExperimentConfig experiment_from_config(Config& cfg,
                                        std::vector<std::string>* warnings = nullptr);

}  // namespace knormlab
