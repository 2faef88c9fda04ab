#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knormlab/rng.hpp"
#include "knormlab/tensor.hpp"

namespace knormlab {

enum class PixelProvenance { kRaw, kScaled, kStandardized };

struct Dataset {
  Tensor images;  // [N,C,H,W]; default-constructed when the set is empty
  std::vector<std::int64_t> labels;
  std::string split;  // "train" | "test"
  PixelProvenance provenance = PixelProvenance::kScaled;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Shape sample_shape() const;                 // {C,H,W}
  Tensor image(std::int64_t i) const;         // one sample, {C,H,W}
  Tensor gather(const std::vector<std::int64_t>& idx) const;  // [B,C,H,W]
};

// Standard CIFAR-10 binary batches: 3073-byte records (label byte followed
// by 3072 pixel bytes, planar RGB), 10000 records per file, five train
// files plus one test file. Pixels are scaled to [0,1] at load.
std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& directory);

// Decodes records from one in-memory file; exposed for the record-level
// tests. byte_base offsets error messages for multi-file loads.
void decode_cifar10_records(const std::vector<unsigned char>& bytes,
                            const std::string& filename, Dataset* out);

// Returns a class-balanced, seeded subset of `d` (n_per_class each).
Dataset class_balanced_subset(const Dataset& d, std::int64_t n_per_class,
                              std::uint64_t seed);

// Gaussian class-conditional blobs rendered as images; linearly separable
// at large margin and deterministic per seed. Class centroids depend only
// on the seed, so disjoint splits of the same distribution come from the
// same seed with different first_sample_id offsets.
Dataset make_synthetic(std::int64_t num_classes, std::int64_t n, Shape chw,
                       std::uint64_t seed, double margin = 6.0,
                       std::uint64_t first_sample_id = 0);

enum class PreprocessMode { kScaleOnly, kStandardize };
PreprocessMode preprocess_mode_from_string(const std::string& s);

struct ChannelStats {
  std::vector<double> mean, stddev;
};

// Per-channel statistics; compute these from the train split only.
ChannelStats channel_stats(const Dataset& d);

Dataset preprocess(const Dataset& d, PreprocessMode mode,
                   const ChannelStats* stats = nullptr);

// --- augmentation ---

enum class AugTransform { kIdentity, kHorizontalFlip, kRandomCrop };
AugTransform aug_transform_from_string(const std::string& s);

Tensor hflip(const Tensor& img);  // {C,H,W}, reverses the width axis
// Zero-pads by `pad` on all sides, then extracts the H x W window whose
// top-left corner is (oh_off, ow_off) in the padded image.
Tensor crop_at(const Tensor& img, std::int64_t pad, std::int64_t oh_off,
               std::int64_t ow_off);

// Applies one transform; crop offsets are drawn from the counter rng keyed
// by (view, step, sample) so augmented views are reproducible.
Tensor augment(const Tensor& img, AugTransform t, std::int64_t crop_pad,
               const CounterRng& rng, std::uint64_t step,
               std::uint64_t sample_id, std::uint64_t view);

}  // namespace knormlab
