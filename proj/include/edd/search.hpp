#pragma once

#include <edd/costmodel.hpp>
#include <edd/data.hpp>
#include <edd/optim.hpp>
#include <edd/supernet.hpp>
#include <edd/train.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace edd {

/// No parallel-factor assignment meets the resource bound.
class Infeasible : public Error {
 public:
  using Error::Error;
};

struct SearchConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr_weights = 0.02;
  double momentum = 0.9;
  double lr_arch = 0.05;
  double lr_pf = 0.05;
  double tau_start = 5.0;
  double tau_end = 0.5;
  /// Upper clamp for parallel factors; zero selects log2(RES_ub).
  double pf_max = 0.0;
  std::uint64_t seed = 1;
  CostHyperparams hyper;
  int retune_steps = 200;
  double retune_lr = 0.05;
  /// Gradient-norm clip for the weight step; zero disables it.
  double grad_clip = 5.0;

  void validate() const;
  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

/// Exponential anneal from tau_start (first epoch) to tau_end (last).
double tau_at(const SearchConfig& config, int epoch);

double pf_cap(const SearchConfig& config, const DeviceModel& device);

/// The space as searched on `device`: the GPU model forces shared precision
/// and needs a complete latency table.
SpaceConfig effective_space(SpaceConfig space, const DeviceModel& device);

struct DesignBlock {
  int op = 0;
  int bits = 0;
  int pf = 0;  // always 0 for the GPU model
  double latency = 0;
  double resource = 0;

  friend bool operator==(const DesignBlock&, const DesignBlock&) = default;
};

/// The discrete result. Metrics are recomputed from the blocks, never taken
/// from the relaxation.
struct DerivedDesign {
  DeviceKind device = DeviceKind::fpga_recursive;
  std::vector<DesignBlock> blocks;
  double latency = 0;     // sum of block latencies
  double bottleneck = 0;  // slowest block; 1/bottleneck is the pipeline throughput
  double perf_loss = 0;
  /// Hardware resource: shared IPs are sized for the widest user.
  double res = 0;

  Path path(const SpaceConfig& space) const;
  friend bool operator==(const DerivedDesign&, const DerivedDesign&) = default;
};

/// Fills per-block latency/resource and the aggregate metrics of `design`
/// from its ops, bit-widths and parallel factors.
void evaluate_design(DerivedDesign& design, const SpaceConfig& space, const DeviceModel& device,
                     double alpha, double perf_norm);

DerivedDesign make_design(const SpaceConfig& space, const DeviceModel& device, const Path& path,
                          const std::vector<int>& pf, double alpha, double perf_norm);

/// Parallel factors as laid out for the relaxed cost model (pf_shape);
/// entries not referenced by the design are zero.
std::vector<double> pf_layout(const SpaceConfig& space, const DeviceModel& device,
                              const DerivedDesign& design);

/// Re-optimizes the parallel factors of a fixed architecture: Adam on
/// perf_loss + penalty, rounding, greedy repair down to RES <= RES_ub, then
/// greedy increments while they stay feasible and lower the objective.
/// Throws Infeasible when even pf = 0 exceeds the bound.
DerivedDesign retune_impl(const DerivedDesign& design, const SpaceConfig& space,
                          const DeviceModel& device, const SearchConfig& config,
                          double perf_norm);

/// Snapshot of one architecture step, handed to an optional observer.
struct StepInfo {
  int epoch = 0;
  double tau = 0;
  double train_acc = 0;
  double val_acc = 0;
  double perf_loss = 0;
  double res = 0;
  double loss = 0;
  std::vector<double> block_perf;  // normalized block perfs
};

using StepObserver = std::function<void(const StepInfo&)>;

/// Supernet, parallel factors and optimizer states of one search run.
class SearchState {
 public:
  SearchState(const SpaceConfig& space, const DeviceModel& device, const SearchConfig& config);
  SearchState(const SearchState&) = delete;
  SearchState& operator=(const SearchState&) = delete;

  /// Weight step on `train`, then an architecture step on `val`.
  StepInfo bilevel_step(const Batch& train, const Batch& val, double tau);

  /// Architecture step only (weights frozen).
  StepInfo arch_step(const Batch& val, double tau);

  /// Weight step only (architecture frozen). Returns the training loss.
  double weight_step(const Batch& train, double tau);

  /// Relaxed objective at noise-free soft weights; the accuracy factor is
  /// passed in.
  double relaxed_objective(double acc_loss, double tau);

  Supernet& net() { return net_; }
  const Supernet& net() const { return net_; }
  Parameter<double>& pf() { return pf_; }
  const Parameter<double>& pf() const { return pf_; }
  Rng& rng() { return rng_; }
  double perf_norm() const { return perf_norm_; }
  const SpaceConfig& space() const { return space_; }
  const DeviceModel& device() const { return device_; }
  const SearchConfig& config() const { return config_; }

 private:
  SpaceConfig space_;
  DeviceModel device_;
  SearchConfig config_;
  Supernet net_;
  Parameter<double> pf_;
  Rng rng_;
  double perf_norm_;
  double pf_max_;
  SgdMomentum wopt_;
  Adam aopt_;
};

/// Per-block argmax of theta, then of phi for the chosen op; parallel
/// factors rounded to the nearest integer. Ties go to the lower index.
DerivedDesign derive_architecture(const SearchState& state);

struct EpochStats {
  int epoch = 0;
  double tau = 0;
  double train_acc = 0;
  double val_acc = 0;
  double perf_loss = 0;
  double res = 0;
  double loss = 0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct SearchReport {
  std::string status = "ok";  // ok | numeric_abort | infeasible
  std::string message;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  std::optional<DerivedDesign> design;
  /// Final search variables, flattened.
  std::vector<double> theta, phi, pf;
  double perf_norm = 0;

  friend bool operator==(const SearchReport&, const SearchReport&) = default;
};

/// initialize, epochs x bilevel_step with annealed tau, derive, retune.
/// Numeric and infeasibility failures are reported through `status`.
SearchReport run_search(const SpaceConfig& space, const DeviceModel& device,
                        const SearchConfig& config, const Dataset& data, const Split& split,
                        const StepObserver& observer = {});

}  // namespace edd
