#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <doctest.h>
#include <filesystem>
#include <fstream>

#include "knormlab/config.hpp"
#include "knormlab/data.hpp"
#include "knormlab/errors.hpp"
#include "knormlab/metrics.hpp"
#include "knormlab/plot.hpp"
#include "knormlab/schedule.hpp"
#include "knormlab/train.hpp"
#include "oracles.hpp"

using namespace knormlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("knormlab_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_cifar_file(const fs::path& p, std::int64_t records,
                      unsigned char label_base) {
  std::ofstream f(p, std::ios::binary);
  std::vector<unsigned char> rec(3073);
  for (std::int64_t r = 0; r < records; ++r) {
    rec[0] = static_cast<unsigned char>((label_base + r) % 10);
    for (std::size_t i = 1; i < rec.size(); ++i)
      rec[i] = static_cast<unsigned char>((r * 31 + i * 7) % 256);
    f.write(reinterpret_cast<const char*>(rec.data()),
            static_cast<std::streamsize>(rec.size()));
  }
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cifar10 loader decodes the standard binary layout") {
  TempDir dir("cifar");
  for (int b = 1; b <= 5; ++b)
    write_cifar_file(dir.path / ("data_batch_" + std::to_string(b) + ".bin"),
                     10000, static_cast<unsigned char>(b));
  write_cifar_file(dir.path / "test_batch.bin", 10000, 0);
  auto [train, test] = load_cifar10_binary(dir.str());
  CHECK(train.size() == 50000);
  CHECK(test.size() == 10000);
  CHECK(train.images.shape() == Shape{50000, 3, 32, 32});
  CHECK(test.images.shape() == Shape{10000, 3, 32, 32});
  // spot-check the pixel mapping of the first record of batch 1
  CHECK(train.labels[0] == 1 % 10);
  CHECK(train.images[0] == doctest::Approx((0 * 31 + 1 * 7) % 256 / 255.0));
}

TEST_CASE("cifar10 loader: hand-constructed 3073-byte record") {
  std::vector<unsigned char> bytes(3073);
  bytes[0] = 7;  // label
  for (std::size_t i = 1; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>((i * 13) % 256);
  Dataset d;
  d.split = "train";
  d.num_classes = 10;
  d.images = Tensor({1, 3, 32, 32});
  decode_cifar10_records(bytes, "unit.bin", &d);
  REQUIRE(d.size() == 1);
  CHECK(d.labels[0] == 7);
  for (std::int64_t i = 0; i < 3072; ++i)
    REQUIRE(d.images[i] ==
            static_cast<double>((static_cast<std::size_t>(i + 1) * 13) % 256) /
                255.0);
}

TEST_CASE("cifar10 loader errors") {
  TempDir dir("cifar_bad");
  SUBCASE("truncated file names the file and expected length") {
    for (int b = 1; b <= 5; ++b)
      write_cifar_file(dir.path / ("data_batch_" + std::to_string(b) + ".bin"),
                       b == 3 ? 9999 : 10000, 0);
    write_cifar_file(dir.path / "test_batch.bin", 10000, 0);
    CHECK_THROWS_WITH_AS(load_cifar10_binary(dir.str()),
                         doctest::Contains("data_batch_3.bin"), ConfigError);
    try {
      load_cifar10_binary(dir.str());
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("30730000") != std::string::npos);
    }
  }
  SUBCASE("label byte out of range reports the byte offset") {
    std::vector<unsigned char> bytes(2 * 3073, 0);
    bytes[3073] = 11;  // second record's label
    Dataset d;
    d.images = Tensor({2, 3, 32, 32});
    CHECK_THROWS_WITH_AS(decode_cifar10_records(bytes, "x.bin", &d),
                         doctest::Contains("3073"), ConfigError);
  }
}

TEST_CASE("synthetic dataset") {
  SUBCASE("zero samples give an empty dataset") {
    Dataset d = make_synthetic(3, 0, {3, 8, 8}, 1);
    CHECK(d.size() == 0);
  }
  SUBCASE("same seed reproduces tensors exactly") {
    Dataset a = make_synthetic(3, 16, {3, 8, 8}, 42);
    Dataset b = make_synthetic(3, 16, {3, 8, 8}, 42);
    CHECK(oracle::max_abs_diff(a.images, b.images) == 0.0);
    CHECK(a.labels == b.labels);
    Dataset c = make_synthetic(3, 16, {3, 8, 8}, 43);
    CHECK(oracle::max_abs_diff(a.images, c.images) > 0.0);
  }
  SUBCASE("nearest-centroid classifier separates large-margin blobs") {
    Dataset train = make_synthetic(4, 200, {3, 8, 8}, 7, 8.0);
    Dataset test = make_synthetic(4, 200, {3, 8, 8}, 7, 8.0, 200);
    const std::int64_t dim = 3 * 8 * 8;
    std::vector<std::vector<double>> centroid(4, std::vector<double>(dim, 0.0));
    std::vector<double> count(4, 0.0);
    for (std::int64_t s = 0; s < train.size(); ++s) {
      const auto cls = static_cast<std::size_t>(train.labels[static_cast<std::size_t>(s)]);
      for (std::int64_t i = 0; i < dim; ++i)
        centroid[cls][static_cast<std::size_t>(i)] += train.images[s * dim + i];
      count[cls] += 1.0;
    }
    for (std::size_t c = 0; c < 4; ++c)
      for (double& v : centroid[c]) v /= count[c];
    std::int64_t correct = 0;
    for (std::int64_t s = 0; s < test.size(); ++s) {
      double best = 1e300;
      std::size_t arg = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        double d2 = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) {
          const double d = test.images[s * dim + i] - centroid[c][static_cast<std::size_t>(i)];
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          arg = c;
        }
      }
      if (static_cast<std::int64_t>(arg) == test.labels[static_cast<std::size_t>(s)]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) >= 0.99);
  }
}

TEST_CASE("preprocess") {
  Dataset d = make_synthetic(2, 64, {3, 6, 6}, 11);
  SUBCASE("scale_only is idempotent") {
    Dataset once = preprocess(d, PreprocessMode::kScaleOnly);
    Dataset twice = preprocess(once, PreprocessMode::kScaleOnly);
    CHECK(oracle::max_abs_diff(once.images, twice.images) == 0.0);
  }
  SUBCASE("standardize with train statistics") {
    const ChannelStats st = channel_stats(d);
    Dataset z = preprocess(d, PreprocessMode::kStandardize, &st);
    const ChannelStats after = channel_stats(z);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(after.mean[c]) < 1e-6);
      CHECK(std::abs(after.stddev[c] - 1.0) < 1e-4);
    }
    // inverse transform recovers the input
    Dataset back = z;
    const std::int64_t per = 6 * 6;
    for (std::int64_t s = 0; s < back.size(); ++s)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < per; ++i) {
          double& v = back.images[(s * 3 + c) * per + i];
          v = v * st.stddev[static_cast<std::size_t>(c)] +
              st.mean[static_cast<std::size_t>(c)];
        }
    CHECK(oracle::max_abs_diff(back.images, d.images) <= 1e-6);
  }
  SUBCASE("zero stddev is an error") {
    Dataset flat = d;
    for (std::int64_t i = 0; i < flat.images.numel(); ++i) flat.images[i] = 0.5;
    const ChannelStats st = channel_stats(flat);
    CHECK_THROWS_AS(preprocess(flat, PreprocessMode::kStandardize, &st),
                    ConfigError);
  }
}

TEST_CASE("augmentation") {
  Tensor img = oracle::random_tensor({3, 8, 8}, 21);
  CounterRng rng(3);
  SUBCASE("double flip is the identity") {
    CHECK(oracle::max_abs_diff(hflip(hflip(img)), img) == 0.0);
  }
  SUBCASE("centered crop is the identity") {
    CHECK(oracle::max_abs_diff(crop_at(img, 4, 4, 4), img) == 0.0);
  }
  SUBCASE("corner crop matches the hand-built shifted tensor") {
    // offset (0,0): source pixel (h-pad, w-pad), zeros where out of range
    Tensor got = crop_at(img, 2, 0, 0);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t h = 0; h < 8; ++h)
        for (std::int64_t w = 0; w < 8; ++w) {
          const double want =
              (h >= 2 && w >= 2) ? img[(c * 8 + (h - 2)) * 8 + (w - 2)] : 0.0;
          REQUIRE(got[(c * 8 + h) * 8 + w] == want);
        }
  }
  SUBCASE("seeded crop offsets are reproducible") {
    Tensor a = augment(img, AugTransform::kRandomCrop, 4, rng, 5, 9, 2);
    Tensor b = augment(img, AugTransform::kRandomCrop, 4, rng, 5, 9, 2);
    CHECK(oracle::max_abs_diff(a, b) == 0.0);
  }
}

TEST_CASE("learning-rate schedule") {
  const auto ms = default_milestones(70);
  CHECK(ms == std::vector<std::int64_t>{40, 60});
  CHECK(lr_at(10, 0.8, ms) == 0.8);
  CHECK(lr_at(45, 0.8, ms) == doctest::Approx(0.4));
  CHECK(lr_at(65, 0.8, ms) == doctest::Approx(0.2));
  CHECK(lr_at(1000, 0.8, {}) == 0.8);  // fixed-rate FL setting
  CHECK(default_milestones(20) == std::vector<std::int64_t>{0, 10});
}

TEST_CASE("metrics csv schema and round trip") {
  std::vector<MetricsRecord> rows(2);
  rows[0].step = 0;
  rows[0].split = "train";
  rows[0].loss = 1.25;
  rows[0].accuracy = 0.5;
  rows[0].wall_seconds = 0.0;
  rows[0].seed = 42;
  rows[1].step = 0;
  rows[1].split = "test";
  rows[1].loss = 1.5;
  rows[1].accuracy = 0.25;
  rows[1].epsilon_spent = 2.5;
  rows[1].seed = 42;
  const std::string csv = metrics_to_csv(rows);
  CHECK(csv.rfind("step,split,loss,accuracy,epsilon_spent,wall_seconds,seed\n",
                  0) == 0);
  TempDir dir("metrics");
  const std::string path = (dir.path / "m.csv").string();
  write_metrics_csv(path, rows);
  const auto back = read_metrics_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].loss == 1.25);
  CHECK(std::isnan(back[0].epsilon_spent));
  CHECK(back[1].epsilon_spent == 2.5);

  // schema mismatch names the offending column
  std::ofstream bad(dir.path / "bad.csv");
  bad << "step,split,loss,acc,epsilon_spent,wall_seconds,seed\n";
  bad.close();
  CHECK_THROWS_WITH_AS(read_metrics_csv((dir.path / "bad.csv").string()),
                       doctest::Contains("accuracy"), ConfigError);
}

TEST_CASE("representative accuracy per mode") {
  std::vector<MetricsRecord> rows;
  for (int r = 0; r < 20; ++r) {
    MetricsRecord m;
    m.step = r;
    m.split = "test";
    m.accuracy = 0.01 * r;
    rows.push_back(m);
  }
  CHECK(representative_accuracy(rows, "dp") == doctest::Approx(0.19));
  CHECK(representative_accuracy(rows, "central") == doctest::Approx(0.19));
  // mean of the last 10 rounds
  CHECK(representative_accuracy(rows, "fl") == doctest::Approx(0.145));
  // mean of the last 3 rounds
  CHECK(representative_accuracy(rows, "dpfl") == doctest::Approx(0.18));
  CHECK_THROWS_AS(representative_accuracy(rows, "bogus"), ConfigError);
}

TEST_CASE("config parsing, overrides, unknown keys") {
  Config cfg = Config::parse(
      "# comment\n"
      "run.mode = central\n"
      "model.name = resnet8\n"
      "model.widths = 4, 4, 8\n"
      "optim.lr = 0.5\n");
  cfg.apply_override("optim.lr=0.25");
  CHECK(cfg.get_f64("optim.lr", 0.0) == 0.25);
  CHECK(cfg.get_i64_list("model.widths", {}) ==
        std::vector<std::int64_t>{4, 4, 8});
  CHECK_THROWS_AS(Config::parse("not a key value line\n"), ConfigError);

  Config bad = Config::parse("run.mode = central\nrun.typo_key = 3\n");
  CHECK_THROWS_WITH_AS(experiment_from_config(bad),
                       doctest::Contains("typo_key"), ConfigError);
}

TEST_CASE("preprocessing binds to the norm kind with a logged warning") {
  Config cfg = Config::parse(
      "run.mode = central\nmodel.name = vgg6\nmodel.norm = kernel\n");
  std::vector<std::string> warnings;
  ExperimentConfig e = experiment_from_config(cfg, &warnings);
  CHECK(e.preprocess_mode == PreprocessMode::kScaleOnly);
  CHECK(warnings.empty());

  Config cfg2 = Config::parse(
      "run.mode = central\nmodel.name = vgg6\nmodel.norm = kernel\n"
      "data.preprocess = standardize\n");
  std::vector<std::string> warnings2;
  ExperimentConfig e2 = experiment_from_config(cfg2, &warnings2);
  CHECK(e2.preprocess_mode == PreprocessMode::kStandardize);
  REQUIRE(warnings2.size() == 1);
  CHECK(warnings2[0].find("overrides") != std::string::npos);

  Config cfg3 = Config::parse(
      "run.mode = central\nmodel.name = vgg6\nmodel.norm = group\n");
  ExperimentConfig e3 = experiment_from_config(cfg3);
  CHECK(e3.preprocess_mode == PreprocessMode::kStandardize);
}

namespace {

Config smoke_config(const std::string& out, const std::string& mode = "central") {
  return Config::parse(
      "run.mode = " + mode + "\n" +
      "run.seed = 3\n"
      "run.out = " + out + "\n" +
      "run.wall_clock = zero\n"
      "model.name = resnet8\n"
      "model.norm = kernel\n"
      "model.widths = 4,4,6\n"
      "data.source = synthetic\n"
      "data.synthetic.classes = 2\n"
      "data.synthetic.train = 32\n"
      "data.synthetic.test = 16\n"
      "data.synthetic.shape = 2,8,8\n"
      "optim.lr = 0.05\n"
      "optim.batch_size = 8\n"
      "optim.epochs = 3\n"
      "optim.milestones = none\n"
      "fl.clients = 2\nfl.classes_per_client = 1\nfl.rounds = 2\n");
}

}  // namespace

TEST_CASE("train: zero epochs checkpoints the initialization") {
  TempDir dir("train0");
  Config cfg = smoke_config(dir.str() + "/run");
  cfg.set("optim.epochs", "0");
  ExperimentConfig e = experiment_from_config(cfg);
  RunResult res = train(e);
  CHECK(res.metrics.empty());
  ModelGraph restored = load_checkpoint(res.checkpoint_dir);
  ModelGraph fresh = build_model(e.model_name, e.build);
  CHECK(restored.flatten_params() == fresh.flatten_params());
}

TEST_CASE("train: identical config and seed give byte-identical outputs") {
  TempDir dir("train_det");
  Config a = smoke_config(dir.str() + "/a");
  Config b = smoke_config(dir.str() + "/b");
  RunResult ra = train(experiment_from_config(a));
  RunResult rb = train(experiment_from_config(b));
  CHECK(slurp(ra.metrics_path) == slurp(rb.metrics_path));
  CHECK(slurp(ra.checkpoint_dir + "/params.bin") ==
        slurp(rb.checkpoint_dir + "/params.bin"));
  CHECK(!slurp(ra.metrics_path).empty());
}

TEST_CASE("train: checkpoint round-trips to identical logits") {
  TempDir dir("train_ckpt");
  Config cfg = smoke_config(dir.str() + "/run");
  ExperimentConfig e = experiment_from_config(cfg);
  RunResult res = train(e);
  ModelGraph restored = load_checkpoint(res.checkpoint_dir);
  Dataset probe = make_synthetic(2, 4, {2, 8, 8}, 99);
  Tensor logits = restored.forward_eval(probe.images);

  // retrace the run in-process to compare logits against the live model
  Dataset tr = make_synthetic(2, 32, {2, 8, 8}, 3);
  ModelGraph live = build_model(e.model_name, e.build);
  CounterRng rng(3);
  std::vector<std::int64_t> idx(32);
  for (std::int64_t i = 0; i < 32; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::int64_t step = 0;
  for (std::int64_t ep = 0; ep < 3; ++ep)
    sgd_epoch(live, tr, idx, 0.05, 8, rng, static_cast<std::uint64_t>(ep), 0,
              &step);
  Tensor live_logits = live.forward_eval(probe.images);
  CHECK(oracle::max_abs_diff(logits, live_logits) <= 1e-12);
}

TEST_CASE("train: fl and dpfl modes produce metrics with the round stream") {
  TempDir dir("train_fl");
  Config cfg = smoke_config(dir.str() + "/run", "fl");
  RunResult res = train(experiment_from_config(cfg));
  REQUIRE(res.metrics.size() == 2);
  CHECK(res.metrics[0].split == "test");
  CHECK(std::isnan(res.metrics[0].epsilon_spent));

  Config dcfg = smoke_config(dir.str() + "/dp", "dpfl");
  dcfg.set("dp.epsilon", "8.0");
  dcfg.set("dp.clip", "1.0");
  RunResult dres = train(experiment_from_config(dcfg));
  REQUIRE(dres.metrics.size() == 2);
  CHECK(dres.metrics.back().epsilon_spent > 0.0);
  CHECK(dres.metrics.back().epsilon_spent <= 8.0 + 1e-9);
}

TEST_CASE("plot: empty, single-point and two-series mapping") {
  TempDir dir("plot");
  const PlotGeometry g;

  // empty csv -> axes only, deterministic bytes
  write_metrics_csv((dir.path / "empty.csv").string(), {});
  const std::string svg_a = render_plot_svg({(dir.path / "empty.csv").string()});
  const std::string svg_b = render_plot_svg({(dir.path / "empty.csv").string()});
  CHECK(svg_a == svg_b);
  CHECK(svg_a.find("<polyline") == std::string::npos);
  CHECK(svg_a.find("accuracy") != std::string::npos);

  // one point -> a single marker, no polyline
  MetricsRecord one;
  one.step = 4;
  one.split = "test";
  one.accuracy = 0.5;
  write_metrics_csv((dir.path / "one.csv").string(), {one});
  const std::string svg1 = render_plot_svg({(dir.path / "one.csv").string()});
  CHECK(svg1.find("<polyline") == std::string::npos);
  CHECK(svg1.find("<circle") != std::string::npos);

  // two known series: verify the affine data->pixel mapping by hand
  std::vector<MetricsRecord> s1(3), s2(2);
  for (int i = 0; i < 3; ++i) {
    s1[static_cast<std::size_t>(i)].step = i * 5;
    s1[static_cast<std::size_t>(i)].split = "test";
    s1[static_cast<std::size_t>(i)].accuracy = 0.25 * (i + 1);
  }
  for (int i = 0; i < 2; ++i) {
    s2[static_cast<std::size_t>(i)].step = i * 10;
    s2[static_cast<std::size_t>(i)].split = "test";
    s2[static_cast<std::size_t>(i)].accuracy = 0.5;
  }
  write_metrics_csv((dir.path / "s1.csv").string(), s1);
  write_metrics_csv((dir.path / "s2.csv").string(), s2);
  const std::string svg = render_plot_svg(
      {(dir.path / "s1.csv").string(), (dir.path / "s2.csv").string()});
  const double max_step = 10.0;
  auto px = [&](double step) {
    return g.left + (g.right - g.left) * (step / max_step);
  };
  auto py = [&](double acc) { return g.bottom - (g.bottom - g.top) * acc; };
  char want[128];
  std::snprintf(want, sizeof(want), "%.2f,%.2f %.2f,%.2f %.2f,%.2f", px(0),
                py(0.25), px(5), py(0.5), px(10), py(0.75));
  CHECK(svg.find(want) != std::string::npos);
  std::snprintf(want, sizeof(want), "%.2f,%.2f %.2f,%.2f", px(0), py(0.5),
                px(10), py(0.5));
  CHECK(svg.find(want) != std::string::npos);
  CHECK(svg.find("s1</text>") != std::string::npos);  // legend labels
  CHECK(svg.find("s2</text>") != std::string::npos);
}
