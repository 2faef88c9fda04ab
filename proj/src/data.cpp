#include "knormlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {
constexpr std::int64_t kCifarRecord = 3073;
constexpr std::int64_t kCifarPerFile = 10000;
}  // namespace

Shape Dataset::sample_shape() const {
  if (size() == 0) throw ContractError("empty dataset has no sample shape");
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Tensor Dataset::image(std::int64_t i) const {
  const std::int64_t chw = images.dim(1) * images.dim(2) * images.dim(3);
  Tensor t({images.dim(1), images.dim(2), images.dim(3)});
  const double* src = images.data() + i * chw;
  std::copy(src, src + chw, t.data());
  return t;
}

Tensor Dataset::gather(const std::vector<std::int64_t>& idx) const {
  if (idx.empty()) throw ContractError("gather of zero samples");
  const std::int64_t chw = images.dim(1) * images.dim(2) * images.dim(3);
  Tensor t({static_cast<std::int64_t>(idx.size()), images.dim(1),
            images.dim(2), images.dim(3)});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const double* src = images.data() + idx[b] * chw;
    std::copy(src, src + chw, t.data() + static_cast<std::int64_t>(b) * chw);
  }
  return t;
}

void decode_cifar10_records(const std::vector<unsigned char>& bytes,
                            const std::string& filename, Dataset* out) {
  if (bytes.size() % kCifarRecord != 0)
    throw ConfigError("file " + filename + " has " +
                      std::to_string(bytes.size()) +
                      " bytes, not a multiple of the 3073-byte record size");
  const std::int64_t n = static_cast<std::int64_t>(bytes.size()) / kCifarRecord;
  const std::int64_t base = out->size();
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t off = r * kCifarRecord;
    const unsigned char label = bytes[static_cast<std::size_t>(off)];
    if (label >= 10)
      throw ConfigError("file " + filename + ": label byte " +
                        std::to_string(static_cast<int>(label)) +
                        " out of range at byte offset " + std::to_string(off));
    out->labels.push_back(label);
    // pixel planes: 1024 red, 1024 green, 1024 blue, row-major
    double* dst = out->images.data() + (base + r) * 3 * 32 * 32;
    for (std::int64_t i = 0; i < 3072; ++i)
      dst[i] = static_cast<double>(
                   bytes[static_cast<std::size_t>(off + 1 + i)]) /
               255.0;
  }
}

namespace {

std::vector<unsigned char> read_file(const std::string& path,
                                     std::int64_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw ConfigError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (static_cast<std::int64_t>(bytes.size()) != expected)
    throw ConfigError("file " + path + " has " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected) +
                      " (10000 records of 3073 bytes)");
  return bytes;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& directory) {
  Dataset train, test;
  train.split = "train";
  test.split = "test";
  train.num_classes = test.num_classes = 10;
  train.provenance = test.provenance = PixelProvenance::kScaled;
  train.images = Tensor({5 * kCifarPerFile, 3, 32, 32});
  test.images = Tensor({kCifarPerFile, 3, 32, 32});
  for (int b = 1; b <= 5; ++b) {
    const std::string path =
        directory + "/data_batch_" + std::to_string(b) + ".bin";
    decode_cifar10_records(read_file(path, kCifarRecord * kCifarPerFile), path,
                           &train);
  }
  {
    const std::string path = directory + "/test_batch.bin";
    decode_cifar10_records(read_file(path, kCifarRecord * kCifarPerFile), path,
                           &test);
  }
  return {std::move(train), std::move(test)};
}

Dataset class_balanced_subset(const Dataset& d, std::int64_t n_per_class,
                              std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<std::vector<std::int64_t>> by_class(
      static_cast<std::size_t>(d.num_classes));
  for (std::int64_t i = 0; i < d.size(); ++i)
    by_class[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  std::vector<std::int64_t> picked;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& pool = by_class[c];
    if (static_cast<std::int64_t>(pool.size()) < n_per_class)
      throw ConfigError("class " + std::to_string(c) + " has only " +
                        std::to_string(pool.size()) + " samples, need " +
                        std::to_string(n_per_class));
    for (std::int64_t i = 0; i < n_per_class; ++i) {
      const std::uint64_t r = rng.bits(RngStream::kGeneric, c, 0, 0,
                                       static_cast<std::uint64_t>(i));
      const std::int64_t j =
          i + static_cast<std::int64_t>(
                  r % static_cast<std::uint64_t>(pool.size() - static_cast<std::size_t>(i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      picked.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  std::sort(picked.begin(), picked.end());
  Dataset out;
  out.split = d.split;
  out.provenance = d.provenance;
  out.num_classes = d.num_classes;
  out.images = d.gather(picked);
  for (std::int64_t i : picked) out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset make_synthetic(std::int64_t num_classes, std::int64_t n, Shape chw,
                       std::uint64_t seed, double margin,
                       std::uint64_t first_sample_id) {
  if (num_classes < 2) throw ConfigError("synthetic data needs >= 2 classes");
  if (chw.size() != 3) throw ConfigError("synthetic shape must be {C,H,W}");
  Dataset out;
  out.split = "train";
  out.provenance = PixelProvenance::kScaled;
  out.num_classes = num_classes;
  if (n == 0) return out;  // empty dataset
  const std::int64_t dim = shape_numel(chw);
  CounterRng rng(seed);
  // class centroids
  std::vector<std::vector<double>> centroids(static_cast<std::size_t>(num_classes));
  for (std::int64_t c = 0; c < num_classes; ++c) {
    centroids[static_cast<std::size_t>(c)].resize(static_cast<std::size_t>(dim));
    for (std::int64_t i = 0; i < dim; ++i)
      centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] =
          rng.gaussian(RngStream::kSynthetic, static_cast<std::uint64_t>(c), 0,
                       0, static_cast<std::uint64_t>(i));
  }
  out.images = Tensor({n, chw[0], chw[1], chw[2]});
  const double denom = std::sqrt(1.0 + margin * margin);
  for (std::int64_t s = 0; s < n; ++s) {
    const std::int64_t cls = s % num_classes;
    out.labels.push_back(cls);
    double* dst = out.images.data() + s * dim;
    for (std::int64_t i = 0; i < dim; ++i) {
      const double noise =
          rng.gaussian(RngStream::kSynthetic, static_cast<std::uint64_t>(cls),
                       1, first_sample_id + static_cast<std::uint64_t>(s),
                       static_cast<std::uint64_t>(i));
      const double raw =
          (margin * centroids[static_cast<std::size_t>(cls)][static_cast<std::size_t>(i)] +
           noise) /
          denom;
      dst[i] = 0.5 + 0.5 * std::tanh(0.5 * raw);  // keeps pixels in (0,1)
    }
  }
  return out;
}

PreprocessMode preprocess_mode_from_string(const std::string& s) {
  if (s == "scale_only") return PreprocessMode::kScaleOnly;
  if (s == "standardize") return PreprocessMode::kStandardize;
  throw ConfigError("unknown preprocess mode '" + s + "'");
}

ChannelStats channel_stats(const Dataset& d) {
  if (d.size() == 0) throw ContractError("channel_stats of empty dataset");
  const std::int64_t c = d.images.dim(1);
  const std::int64_t per = d.images.dim(2) * d.images.dim(3);
  ChannelStats st;
  st.mean.assign(static_cast<std::size_t>(c), 0.0);
  st.stddev.assign(static_cast<std::size_t>(c), 0.0);
  const std::int64_t n = d.size();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* p = d.images.data() + (s * c + ch) * per;
      for (std::int64_t i = 0; i < per; ++i) st.mean[static_cast<std::size_t>(ch)] += p[i];
    }
  for (std::int64_t ch = 0; ch < c; ++ch)
    st.mean[static_cast<std::size_t>(ch)] /= static_cast<double>(n * per);
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* p = d.images.data() + (s * c + ch) * per;
      for (std::int64_t i = 0; i < per; ++i) {
        const double dlt = p[i] - st.mean[static_cast<std::size_t>(ch)];
        st.stddev[static_cast<std::size_t>(ch)] += dlt * dlt;
      }
    }
  for (std::int64_t ch = 0; ch < c; ++ch)
    st.stddev[static_cast<std::size_t>(ch)] =
        std::sqrt(st.stddev[static_cast<std::size_t>(ch)] / static_cast<double>(n * per));
  return st;
}

Dataset preprocess(const Dataset& d, PreprocessMode mode,
                   const ChannelStats* stats) {
  Dataset out = d;
  if (mode == PreprocessMode::kScaleOnly) return out;  // already [0,1]
  if (stats == nullptr)
    throw ContractError("standardize requires channel statistics");
  const std::int64_t c = d.images.dim(1);
  if (static_cast<std::int64_t>(stats->mean.size()) != c ||
      static_cast<std::int64_t>(stats->stddev.size()) != c)
    throw ContractError("channel statistics length mismatch");
  for (double sd : stats->stddev)
    if (sd == 0.0)
      throw ConfigError("standardize: channel standard deviation is zero");
  const std::int64_t per = d.images.dim(2) * d.images.dim(3);
  for (std::int64_t s = 0; s < d.size(); ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double* p = out.images.data() + (s * c + ch) * per;
      for (std::int64_t i = 0; i < per; ++i)
        p[i] = (p[i] - stats->mean[static_cast<std::size_t>(ch)]) /
               stats->stddev[static_cast<std::size_t>(ch)];
    }
  out.provenance = PixelProvenance::kStandardized;
  return out;
}

AugTransform aug_transform_from_string(const std::string& s) {
  if (s == "identity") return AugTransform::kIdentity;
  if (s == "horizontal_flip") return AugTransform::kHorizontalFlip;
  if (s == "random_crop") return AugTransform::kRandomCrop;
  throw ConfigError("unknown augmentation transform '" + s + "'");
}

Tensor hflip(const Tensor& img) {
  if (img.rank() != 3) throw ContractError("hflip expects a {C,H,W} image");
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (std::int64_t cc = 0; cc < c; ++cc)
    for (std::int64_t hh = 0; hh < h; ++hh)
      for (std::int64_t ww = 0; ww < w; ++ww)
        out[(cc * h + hh) * w + ww] = img[(cc * h + hh) * w + (w - 1 - ww)];
  return out;
}

Tensor crop_at(const Tensor& img, std::int64_t pad, std::int64_t oh_off,
               std::int64_t ow_off) {
  if (img.rank() != 3) throw ContractError("crop_at expects a {C,H,W} image");
  if (pad < 0 || oh_off < 0 || ow_off < 0 || oh_off > 2 * pad ||
      ow_off > 2 * pad)
    throw ContractError("crop offsets must lie in [0, 2*pad]");
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (std::int64_t cc = 0; cc < c; ++cc)
    for (std::int64_t hh = 0; hh < h; ++hh)
      for (std::int64_t ww = 0; ww < w; ++ww) {
        const std::int64_t sh = hh + oh_off - pad, sw = ww + ow_off - pad;
        out[(cc * h + hh) * w + ww] =
            (sh >= 0 && sh < h && sw >= 0 && sw < w)
                ? img[(cc * h + sh) * w + sw]
                : 0.0;
      }
  return out;
}

Tensor augment(const Tensor& img, AugTransform t, std::int64_t crop_pad,
               const CounterRng& rng, std::uint64_t step,
               std::uint64_t sample_id, std::uint64_t view) {
  switch (t) {
    case AugTransform::kIdentity:
      return img;
    case AugTransform::kHorizontalFlip:
      return hflip(img);  // flip probability 1.0
    case AugTransform::kRandomCrop: {
      const std::uint64_t span = static_cast<std::uint64_t>(2 * crop_pad + 1);
      const std::int64_t oh = static_cast<std::int64_t>(
          rng.bits(RngStream::kAugment, view, step, sample_id, 0) % span);
      const std::int64_t ow = static_cast<std::int64_t>(
          rng.bits(RngStream::kAugment, view, step, sample_id, 1) % span);
      return crop_at(img, crop_pad, oh, ow);
    }
  }
  throw ContractError("unknown augmentation transform");
}

}  // namespace knormlab
