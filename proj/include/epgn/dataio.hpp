#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "epgn/tensor.hpp"

namespace epgn {

struct Dataset {
  Tensor features;    // N x D
  Tensor attributes;  // M x K class semantics
  std::vector<std::size_t> labels;
  std::vector<std::size_t> seen_classes;
  std::vector<std::size_t> unseen_classes;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_seen_idx;
  std::vector<std::size_t> test_unseen_idx;
  std::vector<std::string> class_names;

  std::size_t num_instances() const { return labels.size(); }
  std::size_t feature_dim() const { return features.cols(); }
  std::size_t num_classes() const { return attributes.rows(); }
  std::size_t semantic_dim() const { return attributes.cols(); }
};

// Throws a typed Error describing the first violated invariant.
void validate(const Dataset& ds);

// Directory layout:
//   features.bin    "EPGF", u32 N, u32 D, N*D f32 row-major
//   attributes.bin  "EPGA", u32 M, u32 K, M*K f32 row-major
//   labels.txt      N lines, 0-based class ids
//   split.txt       [seen] [unseen] class ids, [test_seen] [test_unseen]
//                   instance indices; an optional [train] section overrides
//                   the default (seen-class instances not in test_seen)
//   classes.txt     optional, M class names
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

// FNV-1a over the serialized directory contents, as 16 hex digits.
std::string dataset_digest(const Dataset& ds);

enum class NormalizationScope { Train, All, None };

// Per-dimension min-max scaling into [0, 1]. Statistics come from the
// training instances (or all instances); other rows are transformed with
// them and clamped. Constant dimensions map to 0.
Dataset normalize_features(const Dataset& ds, NormalizationScope scope = NormalizationScope::Train);

struct SynthConfig {
  std::size_t classes = 15;
  std::size_t per_class = 100;
  std::size_t feature_dim = 16;
  std::size_t semantic_dim = 8;
  double noise = 0.05;
  std::size_t unseen = 5;
  std::uint64_t seed = 7;
};

void validate(const SynthConfig& cfg);

// Linear-Gaussian ZSL benchmark: class semantics a_c ~ U[0,1]^K, class means
// W a_c with W_ij ~ N(0, 1/K), instances mean + N(0, noise^2 I), features
// min-max scaled into [0, 1]. The last `unseen` class ids are held out; each
// seen class puts its first 80% of instances in train and the rest in
// test_seen. Values are rounded to float so the on-disk form is exact.
Dataset make_synthetic(const SynthConfig& cfg);

}  // namespace epgn
