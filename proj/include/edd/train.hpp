#pragma once

#include <edd/data.hpp>
#include <edd/supernet.hpp>

#include <cstdint>
#include <vector>

namespace edd {

/// Budget for training one fixed path.
struct TrainSettings {
  int epochs = 3;
  int batch_size = 32;
  double lr = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  /// Gradient-norm clip; zero disables it.
  double grad_clip = 5.0;

  void validate() const;
  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

/// SGD on the weights along `path`; search logits are left untouched.
/// Returns the mean training loss of the last epoch.
double train_path(Supernet& net, const Path& path, const Dataset& data,
                  const std::vector<int>& indices, const TrainSettings& settings);

/// Mean cross-entropy and top-1 accuracy of `path` on `indices`.
EvalResult evaluate_path(const Supernet& net, const Path& path, const Dataset& data,
                         const std::vector<int>& indices, int batch_size = 128);

}  // namespace edd
