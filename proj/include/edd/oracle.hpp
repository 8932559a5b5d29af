#pragma once

#include <edd/search.hpp>

#include <cstdint>
#include <vector>

namespace edd {

/// Enumeration would exceed the configured cap.
class EnumerationCapExceeded : public Error {
 public:
  EnumerationCapExceeded(long long required, long long cap);
  long long required;
  long long cap;
};

/// Number of discrete (op, bit-width) paths: (M Q)^N, or M^N Q with shared
/// precision. Saturates at LLONG_MAX.
long long config_count(const SpaceConfig& space);

/// Every path in lexicographic order (block 0 most significant; within a
/// block, op-major then level).
std::vector<Path> enumerate_configs(const SpaceConfig& space, long long cap = 4096);

/// Cost terms of a discrete path under a given parallel-factor layout,
/// computed directly from layer geometry and the calibration tables.
struct ExactCost {
  double perf_loss = 0;
  /// Resource term of the objective. With IP sharing, the op used by c
  /// blocks contributes tanh(c)/c times the sum of its users' DSPs.
  double res = 0;
  std::vector<double> block_latency;
};

ExactCost exact_cost(const SpaceConfig& space, const DeviceModel& device,
                     const CostHyperparams& hyper, double perf_norm, const Path& path,
                     const std::vector<double>& pf_layout);

/// acc * perf + beta C^((RES - RES_ub) / scale); no penalty on fixed-resource devices.
double exact_objective(double acc_loss, const ExactCost& cost, const CostHyperparams& hyper,
                       const DeviceModel& device);

struct OracleEntry {
  int index = 0;  // position in enumerate_configs
  Path path;
  std::vector<int> pf;  // per block after retuning; zeros for GPU
  double acc_loss = 0;
  double perf_loss = 0;
  double res = 0;     // objective resource term
  double res_hw = 0;  // hardware resource of the retuned design
  double loss = 0;

  friend bool operator==(const OracleEntry&, const OracleEntry&) = default;
};

struct OracleRanking {
  std::vector<OracleEntry> entries;  // ascending by loss, ties by index
  std::vector<int> excluded;         // configs whose training diverged or was infeasible
  double perf_norm = 0;

  /// 1-based rank of `path`, or 0 when it is not ranked.
  int rank_of(const Path& path) const;

  friend bool operator==(const OracleRanking&, const OracleRanking&) = default;
};

/// Shared accuracy protocol: every config trains from the same seed for the
/// same budget on `split.train` and is scored by cross-entropy on `split.val`.
OracleEntry evaluate_config_exact(const SpaceConfig& space, const DeviceModel& device,
                                  const SearchConfig& search, const TrainSettings& protocol,
                                  const Dataset& data, const Split& split, const Path& path,
                                  double perf_norm);

/// Evaluates every enumerated config on `threads` workers and sorts by loss.
OracleRanking rank_configs(const SpaceConfig& space, const DeviceModel& device,
                           const SearchConfig& search, const TrainSettings& protocol,
                           const Dataset& data, const Split& split, long long cap = 4096,
                           int threads = 1);

}  // namespace edd
