#include "knormlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "knormlab/errors.hpp"
#include "knormlab/schedule.hpp"

namespace knormlab {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  const std::string last = trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    c.kv_[key] = value;
  }
  return c;
}

Config Config::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_str(const std::string& key, const std::string& fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end())
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::int64_t Config::get_i64(const std::string& key, std::int64_t fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (...) {
    throw ConfigError("key '" + key + "': expected integer, got '" +
                      it->second + "'");
  }
}

double Config::get_f64(const std::string& key, double fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "inf") return std::numeric_limits<double>::infinity();
  try {
    return std::stod(it->second);
  } catch (...) {
    throw ConfigError("key '" + key + "': expected number, got '" +
                      it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" +
                    it->second + "'");
}

std::vector<std::int64_t> Config::get_i64_list(const std::string& key,
                                               std::vector<std::int64_t> fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<std::int64_t> out;
  for (const std::string& tok : split_list(it->second)) {
    try {
      out.push_back(std::stoll(tok));
    } catch (...) {
      throw ConfigError("key '" + key + "': expected integer list, got '" +
                        it->second + "'");
    }
  }
  return out;
}

std::vector<std::string> Config::get_str_list(const std::string& key,
                                              std::vector<std::string> fallback) {
  read_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return split_list(it->second);
}

std::vector<std::string> Config::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "central") return RunMode::kCentral;
  if (s == "dp") return RunMode::kDp;
  if (s == "fl") return RunMode::kFl;
  if (s == "dpfl") return RunMode::kDpFl;
  throw ConfigError("unknown run mode '" + s + "'");
}

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kCentral: return "central";
    case RunMode::kDp: return "dp";
    case RunMode::kFl: return "fl";
    case RunMode::kDpFl: return "dpfl";
  }
  return "?";
}

ExperimentConfig experiment_from_config(Config& cfg,
                                        std::vector<std::string>* warnings) {
  ExperimentConfig e;
  e.mode = run_mode_from_string(cfg.get_str("run.mode", "central"));
  e.seed = static_cast<std::uint64_t>(cfg.get_i64("run.seed", 1));
  e.out_dir = cfg.get_str("run.out", "runs/out");
  e.threads = static_cast<int>(cfg.get_i64("run.threads", 0));
  e.eval_every = cfg.get_i64("run.eval_every", 1);
  e.real_wall_clock = cfg.get_str("run.wall_clock", "real") == "real";
  e.run_label = cfg.get_str("run.label", "");

  e.model_name = cfg.get_str("model.name", "knresnet13");
  e.build.norm = norm_kind_from_string(cfg.get_str("model.norm", "kernel"));
  e.build.act = act_kind_from_string(cfg.get_str("model.activation", "mish"));
  e.build.num_classes = cfg.get_i64("model.num_classes", 10);
  e.build.widths = cfg.get_i64_list("model.widths", {});
  e.build.group_size = cfg.get_i64("model.group_size", 32);
  e.build.knconv_dropout = cfg.get_f64("model.knconv_dropout", 0.1);
  e.build.kernelnorm_dropout = cfg.get_f64("model.kernelnorm_dropout", 0.5);
  e.build.norm_eps = cfg.get_f64("model.norm_eps", 1e-5);
  e.build.rescale_kept = cfg.get_bool("model.rescale_kept", false);
  e.build.exclude_padding = cfg.get_bool("model.exclude_padding", false);
  e.build.resolution = cfg.get_str("model.resolution", "low") == "medium"
                           ? BuildOpts::Resolution::kMedium
                           : BuildOpts::Resolution::kLow;
  e.build.precision = cfg.get_str("model.precision", "double") == "single"
                          ? Precision::kSingle
                          : Precision::kDouble;
  e.build.init_seed = e.seed;

  e.data_source = cfg.get_str("data.source", "synthetic");
  e.data_dir = cfg.get_str("data.dir", "");
  e.subset_per_class = cfg.get_i64("data.subset_per_class", 0);
  e.test_subset_per_class = cfg.get_i64("data.test_subset_per_class", 0);
  e.synth_classes = cfg.get_i64("data.synthetic.classes", 2);
  e.synth_train = cfg.get_i64("data.synthetic.train", 512);
  e.synth_test = cfg.get_i64("data.synthetic.test", 128);
  e.synth_shape = cfg.get_i64_list("data.synthetic.shape", {3, 16, 16});
  e.synth_margin = cfg.get_f64("data.synthetic.margin", 6.0);
  if (e.data_source == "synthetic") {
    if (e.synth_shape.size() != 3)
      throw ConfigError("data.synthetic.shape must be C,H,W");
    e.build.input_shape = e.synth_shape;
    e.build.num_classes = e.synth_classes;
  } else if (e.data_source == "cifar10") {
    if (e.data_dir.empty())
      throw ConfigError("data.dir is required for cifar10");
    e.build.input_shape = {3, 32, 32};
    e.build.num_classes = 10;
  } else {
    throw ConfigError("unknown data.source '" + e.data_source + "'");
  }

  // Preprocessing follows the norm kind unless explicitly overridden:
  // scale_only for KernelNorm models, standardize otherwise.
  const std::string pre = cfg.get_str("data.preprocess", "auto");
  const PreprocessMode bound = e.build.norm == NormKind::kKernel
                                   ? PreprocessMode::kScaleOnly
                                   : PreprocessMode::kStandardize;
  if (pre == "auto") {
    e.preprocess_mode = bound;
  } else {
    e.preprocess_mode = preprocess_mode_from_string(pre);
    e.preprocess_overridden = e.preprocess_mode != bound;
    if (e.preprocess_overridden && warnings)
      warnings->push_back("data.preprocess=" + pre +
                          " overrides the default binding for norm kind '" +
                          to_string(e.build.norm) + "'");
  }

  e.lr = cfg.get_f64("optim.lr", 0.1);
  e.batch_size = cfg.get_i64("optim.batch_size", 64);
  e.epochs = cfg.get_i64("optim.epochs", 1);
  const std::string ms = cfg.get_str("optim.milestones", "auto");
  if (ms == "auto") {
    // FL modes train at a fixed learning rate
    if (e.mode == RunMode::kCentral || e.mode == RunMode::kDp)
      e.milestones = default_milestones(e.epochs);
  } else if (ms == "none") {
    e.milestones.clear();
  } else {
    e.milestones = cfg.get_i64_list("optim.milestones", {});
  }

  e.dp.epsilon = cfg.get_f64("dp.epsilon", 6.0);
  e.dp.delta = cfg.get_f64("dp.delta", 1e-5);
  e.dp.clip = cfg.get_f64("dp.clip", 1.0);
  e.dp.sigma = cfg.get_f64("dp.sigma", 0.0);
  e.augmentation.transforms.clear();
  for (const std::string& t :
       cfg.get_str_list("dp.augmult", {"identity"}))
    e.augmentation.transforms.push_back(aug_transform_from_string(t));
  e.augmentation.crop_pad = cfg.get_i64("dp.crop_pad", 4);

  e.fed.n_clients = cfg.get_i64("fl.clients", 10);
  e.fed.selected_per_round = cfg.get_i64("fl.selected", 0);
  e.fed.classes_per_client = cfg.get_i64("fl.classes_per_client", 0);
  e.fed.local_epochs = cfg.get_i64("fl.local_epochs", 1);
  e.fed.rounds = cfg.get_i64("fl.rounds", 0);
  e.fed.parallel_clients = cfg.get_bool("fl.parallel_clients", false);
  e.fed.dp = e.mode == RunMode::kDpFl;
  if (e.fed.selected_per_round > e.fed.n_clients)
    throw ConfigError("fl.selected exceeds fl.clients");
  if (e.fed.local_epochs < 1) throw ConfigError("fl.local_epochs must be >= 1");

  const std::vector<std::string> unread = cfg.unread_keys();
  if (!unread.empty()) {
    std::string msg = "unknown config key(s):";
    for (const std::string& k : unread) msg += " " + k;
    throw ConfigError(msg);
  }
  return e;
}

}  // namespace knormlab
