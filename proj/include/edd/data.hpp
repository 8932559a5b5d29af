#pragma once

#include <edd/gumbel.hpp>
#include <edd/tensor.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace edd {

/// Parameters of the synthetic grating dataset.
struct DatasetSpec {
  int num_classes = 4;
  int samples_per_class = 256;
  int height = 16;
  int width = 16;
  int channels = 3;
  std::uint64_t seed = 7;
  /// Standard deviation of the per-pixel Gaussian noise.
  double noise = 0.5;

  void validate() const;
  /// Canonical text used for the cache key.
  std::string canonical() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Images [S, C, H, W] and labels in [0, num_classes).
struct Dataset {
  DatasetSpec spec;
  Tensor<double> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

struct Batch {
  Tensor<double> images;
  std::vector<int> labels;
};

/// Class-conditional oriented gratings with random phase, per-class colour
/// gains and additive noise. Sample s has label s mod num_classes.
Dataset generate_dataset(const DatasetSpec& spec);

struct Split {
  std::vector<int> train, val, test;
};

/// Stratified split into three disjoint, sorted index sets.
Split split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

Batch make_batch(const Dataset& data, const std::vector<int>& indices);

/// Shuffled mini-batches covering `indices`; the last batch may be short.
std::vector<std::vector<int>> shuffled_batches(std::vector<int> indices, int batch_size, Rng& rng);

/// Cache key of a spec.
std::string spec_hash(const DatasetSpec& spec);

void save_dataset(const std::filesystem::path& file, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& file);

/// Loads `<dir>/dataset-<hash>.bin` if present, otherwise generates and
/// writes it. An empty `dir` disables caching.
Dataset cached_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

}  // namespace edd
