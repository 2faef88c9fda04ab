// knormlab command-line driver: training runs, federated simulations,
// privacy accounting, gradient checks, model inspection, metrics summaries
// and SVG plots.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "knormlab/accountant.hpp"
#include "knormlab/config.hpp"
#include "knormlab/errors.hpp"
#include "knormlab/gradcheck.hpp"
#include "knormlab/metrics.hpp"
#include "knormlab/model.hpp"
#include "knormlab/plot.hpp"
#include "knormlab/train.hpp"

namespace kn = knormlab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts* c) {
  cmd->add_option("--config", c->config_path, "experiment config file")
      ->required();
  cmd->add_option("--override", c->overrides,
                  "key=value config override (repeatable)");
  cmd->add_option("--seed", c->seed, "override run.seed");
  cmd->add_option("--out", c->out_dir, "override run.out");
}

kn::ExperimentConfig resolve(const CommonOpts& c, const char* forced_mode) {
  kn::Config cfg = kn::Config::load_file(c.config_path);
  for (const std::string& ov : c.overrides) cfg.apply_override(ov);
  if (c.seed >= 0) cfg.set("run.seed", std::to_string(c.seed));
  if (!c.out_dir.empty()) cfg.set("run.out", c.out_dir);
  if (forced_mode) cfg.set("run.mode", forced_mode);
  std::vector<std::string> warnings;
  kn::ExperimentConfig e = kn::experiment_from_config(cfg, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  return e;
}

int run_training(const kn::ExperimentConfig& e) {
  kn::RunResult res = kn::train(e);
  std::cout << "metrics: " << res.metrics_path << "\n";
  std::cout << "checkpoint: " << res.checkpoint_dir << "\n";
  if (!res.metrics.empty())
    std::cout << "representative_accuracy="
              << kn::representative_accuracy(res.metrics, to_string(e.mode))
              << "\n";
  return kn::kExitOk;
}

int run_gradcheck(const std::string& model_name, const std::string& norm,
                  std::vector<std::int64_t> widths, std::int64_t coords,
                  std::uint64_t seed, double tol) {
  kn::BuildOpts o;
  o.norm = kn::norm_kind_from_string(norm);
  o.widths = std::move(widths);
  o.input_shape = {3, 16, 16};
  o.num_classes = 4;
  o.group_size = 4;
  o.init_seed = seed;
  kn::ModelGraph model = kn::build_model(model_name, o);
  kn::Tensor input({2, 3, 16, 16});
  kn::CounterRng rng(seed + 1);
  for (std::int64_t i = 0; i < input.numel(); ++i)
    input[i] = rng.uniform(kn::RngStream::kGeneric, 0, 0, 0,
                           static_cast<std::uint64_t>(i));
  kn::GradCheckResult r = kn::finite_difference_check(
      model, input, {0, 3}, 1e-5, coords, seed, /*training=*/true, seed);
  std::printf("%s norm=%s coords=%lld max_rel_err=%.3g worst=%s\n",
              model_name.c_str(), norm.c_str(),
              static_cast<long long>(r.coords_checked), r.max_rel_error,
              r.worst_location.c_str());
  if (!r.loss_finite) {
    std::cerr << "non-finite loss at " << r.worst_location << "\n";
    return kn::kExitContractError;
  }
  return r.max_rel_error < tol ? kn::kExitOk : kn::kExitContractError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel-normalized networks: training, DP and FL simulation"};
  app.require_subcommand(1);

  CommonOpts train_opts, fl_opts, dpfl_opts;
  CLI::App* cmd_train = app.add_subcommand(
      "train", "centralized or DP training per the config's run.mode");
  add_common(cmd_train, &train_opts);

  CLI::App* cmd_fl =
      app.add_subcommand("fl-sim", "federated averaging simulation");
  add_common(cmd_fl, &fl_opts);

  CLI::App* cmd_dpfl = app.add_subcommand(
      "dpfl-sim", "federated simulation with per-client DP-SGD");
  add_common(cmd_dpfl, &dpfl_opts);

  // accountant
  double acc_q = 0.0, acc_delta = 1e-5;
  std::vector<double> acc_sigma, acc_epsilon;
  std::int64_t acc_steps = 1;
  CLI::App* cmd_acc = app.add_subcommand(
      "accountant",
      "prints epsilon for (q, sigma, steps, delta), or the calibrated sigma "
      "for (epsilon, delta, q, steps); one value per line");
  cmd_acc->add_option("--q", acc_q, "sampling rate B/N")->required();
  cmd_acc->add_option("--steps", acc_steps, "composed step count")->required();
  cmd_acc->add_option("--delta", acc_delta, "delta");
  cmd_acc->add_option("--sigma", acc_sigma, "noise multiplier(s) -> epsilon");
  cmd_acc->add_option("--epsilon", acc_epsilon,
                      "target epsilon(s) -> calibrated sigma");

  // gradcheck
  std::string gc_model = "all", gc_norm = "kernel";
  std::vector<std::int64_t> gc_widths;
  std::int64_t gc_coords = 200;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-3;
  CLI::App* cmd_gc = app.add_subcommand(
      "gradcheck", "finite-difference check of model gradients");
  cmd_gc->add_option("--model", gc_model, "knresnet13|vgg6|resnet8|all");
  cmd_gc->add_option("--norm", gc_norm, "kernel|layer|group|none");
  cmd_gc->add_option("--widths", gc_widths, "stage widths");
  cmd_gc->add_option("--coords", gc_coords, "sampled coordinates");
  cmd_gc->add_option("--seed", gc_seed, "seed");
  cmd_gc->add_option("--tol", gc_tol, "max relative error tolerance");

  // describe
  std::string d_model = "knresnet13", d_norm = "kernel";
  std::vector<std::int64_t> d_widths;
  std::vector<std::int64_t> d_input = {3, 32, 32};
  std::int64_t d_classes = 10;
  CLI::App* cmd_desc =
      app.add_subcommand("describe", "print a model summary as JSON");
  cmd_desc->add_option("--model", d_model, "knresnet13|vgg6|resnet8");
  cmd_desc->add_option("--norm", d_norm, "kernel|layer|group|none");
  cmd_desc->add_option("--widths", d_widths, "stage widths");
  cmd_desc->add_option("--input", d_input, "input shape C H W");
  cmd_desc->add_option("--classes", d_classes, "number of classes");

  // summarize
  std::string s_csv, s_mode = "central";
  CLI::App* cmd_sum = app.add_subcommand(
      "summarize", "representative accuracy of a metrics CSV");
  cmd_sum->add_option("--csv", s_csv, "metrics csv")->required();
  cmd_sum->add_option("--mode", s_mode, "central|dp|fl|dpfl");

  // plot
  std::vector<std::string> p_csvs;
  std::string p_out = "plot.svg";
  CLI::App* cmd_plot =
      app.add_subcommand("plot", "accuracy-vs-round curves as SVG");
  cmd_plot->add_option("--csv", p_csvs, "metrics csv (repeatable)")->required();
  cmd_plot->add_option("--out", p_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kn::kExitOk : kn::kExitConfigError;
  }

  try {
    if (cmd_train->parsed()) return run_training(resolve(train_opts, nullptr));
    if (cmd_fl->parsed()) return run_training(resolve(fl_opts, "fl"));
    if (cmd_dpfl->parsed()) return run_training(resolve(dpfl_opts, "dpfl"));

    if (cmd_acc->parsed()) {
      if (acc_sigma.empty() == acc_epsilon.empty())
        throw kn::ConfigError("pass exactly one of --sigma or --epsilon");
      for (double s : acc_sigma) {
        const double eps = kn::rdp_epsilon(acc_q, s, acc_steps, acc_delta);
        if (std::isinf(eps))
          std::printf("inf\n");
        else
          std::printf("%.9g\n", eps);
      }
      for (double e : acc_epsilon)
        std::printf("%.9g\n", kn::calibrate_sigma(e, acc_delta, acc_q, acc_steps));
      return kn::kExitOk;
    }

    if (cmd_gc->parsed()) {
      int rc = kn::kExitOk;
      if (gc_model == "all") {
        for (const char* name : {"knresnet13", "vgg6", "resnet8"}) {
          std::vector<std::int64_t> w =
              std::string(name) == "knresnet13"
                  ? std::vector<std::int64_t>{4, 4, 6, 6}
              : std::string(name) == "vgg6"
                  ? std::vector<std::int64_t>{4, 4, 6, 6, 8}
                  : std::vector<std::int64_t>{4, 4, 6};
          rc |= run_gradcheck(name, gc_norm, w, gc_coords, gc_seed, gc_tol);
        }
      } else {
        rc = run_gradcheck(gc_model, gc_norm, gc_widths, gc_coords, gc_seed,
                           gc_tol);
      }
      return rc;
    }

    if (cmd_desc->parsed()) {
      kn::BuildOpts o;
      o.norm = kn::norm_kind_from_string(d_norm);
      o.widths = d_widths;
      if (d_input.size() != 3)
        throw kn::ConfigError("--input expects C H W");
      o.input_shape = {d_input[0], d_input[1], d_input[2]};
      o.num_classes = d_classes;
      std::cout << kn::describe_json(kn::build_model(d_model, o)) << "\n";
      return kn::kExitOk;
    }

    if (cmd_sum->parsed()) {
      const auto rows = kn::read_metrics_csv(s_csv);
      std::printf("representative_accuracy=%.6f\n",
                  kn::representative_accuracy(rows, s_mode));
      return kn::kExitOk;
    }

    if (cmd_plot->parsed()) {
      kn::emit_plots(p_csvs, p_out);
      std::cout << "wrote " << p_out << "\n";
      return kn::kExitOk;
    }
  } catch (const kn::BudgetExhaustedError& e) {
    std::cerr << "privacy budget exhausted: " << e.what() << "\n";
    return kn::kExitBudgetExhausted;
  } catch (const kn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kn::kExitConfigError;
  } catch (const kn::ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kn::kExitContractError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kn::kExitContractError;
  }
  return kn::kExitOk;
}
