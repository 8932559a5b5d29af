#pragma once

#include <edd/ops.hpp>
#include <edd/space.hpp>

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace edd {

enum class DeviceKind { fpga_recursive, fpga_pipelined, gpu_table };
enum class PerfAggregation { sum, lse };
enum class ResourceMode { shared, unshared, fixed };

std::string to_string(DeviceKind kind);
DeviceKind parse_device_kind(std::string_view name);

/// Lookup of (op index, bits) absent from a GPU latency table.
class MissingEntry : public Error {
 public:
  MissingEntry(int op, int bits);
  int op;
  int bits;
};

/// Configuration that cannot be realized (wrong parameter layout, bad table).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Normalized measured latency per (op-menu index, bit-width).
///
/// Text form: one `op,bits,latency` row per line; `#` starts a comment.
class GpuLatencyTable {
 public:
  void set(int op, int bits, double latency);
  double at(int op, int bits) const;
  bool contains(int op, int bits) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  /// Complete grid over ops x levels, positive, strictly increasing in bits.
  void validate(int num_ops, const QuantLevels& levels) const;

  static GpuLatencyTable parse(std::string_view text);
  static GpuLatencyTable load(const std::string& path);
  std::string serialize() const;

  friend bool operator==(const GpuLatencyTable&, const GpuLatencyTable&) = default;

 private:
  std::map<std::pair<int, int>, double> entries_;
};

struct DeviceModel {
  DeviceKind kind = DeviceKind::fpga_recursive;
  /// DSP budget; unused for gpu_table.
  double res_ub = 900;
  GpuLatencyTable gpu_table;

  PerfAggregation aggregation() const {
    return kind == DeviceKind::fpga_pipelined ? PerfAggregation::lse : PerfAggregation::sum;
  }
  ResourceMode resource_mode() const {
    switch (kind) {
      case DeviceKind::fpga_recursive:
        return ResourceMode::shared;
      case DeviceKind::fpga_pipelined:
        return ResourceMode::unshared;
      case DeviceKind::gpu_table:
        break;
    }
    return ResourceMode::fixed;
  }
  bool is_fpga() const { return kind != DeviceKind::gpu_table; }

  static DeviceModel fpga_recursive(double res_ub) { return {DeviceKind::fpga_recursive, res_ub, {}}; }
  static DeviceModel fpga_pipelined(double res_ub) { return {DeviceKind::fpga_pipelined, res_ub, {}}; }
  static DeviceModel gpu(GpuLatencyTable table) { return {DeviceKind::gpu_table, 0, std::move(table)}; }
};

struct CostHyperparams {
  double alpha = 1.0;
  double beta = 1.0;
  double base = M_E;
  /// Denominator of the penalty exponent (RES - RES_ub) / res_scale.
  /// Zero selects RES_ub.
  double res_scale = 0.0;

  void validate() const;
  friend bool operator==(const CostHyperparams&, const CostHyperparams&) = default;
  double scale_for(const DeviceModel& device) const {
    return res_scale > 0 ? res_scale : device.res_ub;
  }
};

/// Latency calibration: phi_cal(q) = q.
inline double phi_cal(int bits) { return static_cast<double>(bits); }

/// DSP calibration: 1 for 9..16 bits, 1/2 for 5..8 bits, 0 at 4 bits and below.
/// Wider words take one DSP per multiplication.
inline double psi(int bits) {
  if (bits <= 4) return 0.0;
  if (bits <= 8) return 0.5;
  return 1.0;
}

// ---------------------------------------------------------------------------
// Per-op latency and resource at a fixed bit-width

inline double layer_latency_q(const LayerGeometry& layer, double pf, int bits) {
  return phi_cal(bits) * std::exp2(-pf) * layer.work();
}

inline double op_latency_q(const OpSpec& op, double pf, int bits) {
  double total = 0;
  for (const auto& l : op_layers(op)) total += layer_latency_q(l, pf, bits);
  return total;
}

inline double op_resource_q(double pf, int bits) { return psi(bits) * std::exp2(pf); }

template <typename S>
Var<S> layer_latency_q(const LayerGeometry& layer, Var<S> pf, int bits) {
  return static_cast<S>(phi_cal(bits) * layer.work()) * exp2(-pf);
}

template <typename S>
Var<S> op_latency_q(const OpSpec& op, Var<S> pf, int bits) {
  return static_cast<S>(phi_cal(bits) * op_work(op)) * exp2(-pf);
}

template <typename S>
Var<S> op_resource_q(Var<S> pf, int bits) {
  return static_cast<S>(psi(bits)) * exp2(pf);
}

// ---------------------------------------------------------------------------
// Expectation over quantization (op level) and over ops (block level)

template <typename S>
struct CostPair {
  Var<S> perf;
  Var<S> res;
};

/// Perf(op) = sum_q w_q Perf^q(op), Res(op) = sum_q w_q Res^q(op).
template <typename S>
CostPair<S> expected_op_cost(Var<S> phi_weights, Var<S> perf_per_q, Var<S> res_per_q) {
  return {dot(phi_weights, perf_per_q), dot(phi_weights, res_per_q)};
}

/// Perf_i = sum_m w_m Perf(op_i^m), Res_i likewise.
template <typename S>
CostPair<S> block_cost(Var<S> theta_weights, const std::vector<CostPair<S>>& op_costs) {
  if (static_cast<Index>(op_costs.size()) != theta_weights.size()) {
    throw ShapeError("block_cost: " + std::to_string(op_costs.size()) + " op costs for " +
                     std::to_string(theta_weights.size()) + " weights");
  }
  std::vector<Var<S>> perfs, ress;
  for (const auto& c : op_costs) {
    perfs.push_back(c.perf);
    ress.push_back(c.res);
  }
  return {dot(theta_weights, concat(perfs)), dot(theta_weights, concat(ress))};
}

/// alpha * sum_i p_i / norm (sum) or alpha * LSE(p / norm) (lse).
template <typename S>
Var<S> perf_loss(Var<S> block_perfs, PerfAggregation mode, double alpha, double perf_norm = 1.0) {
  if (block_perfs.size() == 0) throw ShapeError("perf_loss: no blocks");
  Var<S> p = block_perfs / static_cast<S>(perf_norm);
  Var<S> agg = mode == PerfAggregation::sum ? sum(p) : log_sum_exp(p);
  return agg * static_cast<S>(alpha);
}

/// Resource with IP sharing across blocks. For each op m with block usage
/// s_m = sum_i w_{i,m}, the IP is counted once as
/// tanh(s_m) * (usage-weighted mean of Res(op_i^m)), written as
/// tanhc(s_m) * sum_i w_{i,m} Res(op_i^m) to stay finite at s_m = 0.
template <typename S>
Var<S> shared_resource(const std::vector<Var<S>>& theta_weights,
                       const std::vector<std::vector<Var<S>>>& op_res) {
  const std::size_t n = theta_weights.size();
  if (n == 0 || op_res.size() != n) throw ShapeError("shared_resource: block count mismatch");
  const Index m_count = theta_weights.front().size();
  std::vector<Var<S>> per_op;
  for (Index m = 0; m < m_count; ++m) {
    std::vector<Var<S>> usage, weighted;
    for (std::size_t i = 0; i < n; ++i) {
      Var<S> w = element(theta_weights[i], m);
      usage.push_back(w);
      weighted.push_back(w * op_res[i].at(static_cast<std::size_t>(m)));
    }
    per_op.push_back(tanhc(sum(concat(usage))) * sum(concat(weighted)));
  }
  return sum(concat(per_op));
}

/// L = acc * perf + beta * C^((RES - RES_ub) / res_scale); the penalty is
/// dropped for fixed-resource devices.
template <typename S>
Var<S> total_loss(Var<S> acc_loss, Var<S> perf, Var<S> res, const CostHyperparams& hyper,
                  const DeviceModel& device) {
  Var<S> fused = acc_loss * perf;
  if (device.resource_mode() == ResourceMode::fixed) return fused;
  const S scale = static_cast<S>(hyper.scale_for(device));
  Var<S> exponent = (res - static_cast<S>(device.res_ub)) * (static_cast<S>(std::log(hyper.base)) / scale);
  return fused + exp(exponent) * static_cast<S>(hyper.beta);
}

inline double resource_penalty(double res, const CostHyperparams& hyper, const DeviceModel& device) {
  if (device.resource_mode() == ResourceMode::fixed) return 0.0;
  return hyper.beta * std::pow(hyper.base, (res - device.res_ub) / hyper.scale_for(device));
}

// ---------------------------------------------------------------------------
// Whole-network relaxed cost

/// Relaxed sampling weights: theta[i] has M entries, phi[i][m] has Q entries.
template <typename S>
struct RelaxedWeights {
  std::vector<Var<S>> theta;
  std::vector<std::vector<Var<S>>> phi;
};

template <typename S>
struct RelaxedCost {
  Var<S> perf_loss;
  Var<S> res;
  Var<S> block_perf;  // length N, unnormalized
  std::vector<std::vector<CostPair<S>>> op_costs;  // [i][m]
};

/// Expected latency of op m at every level: q * 2^-pf * work (FPGA) or the
/// table entry (GPU).
template <typename S>
Var<S> perf_per_q(Tape<S>& tape, const SpaceConfig& space, const DeviceModel& device, int block,
                  int op, Var<S> pf) {
  const int q_count = space.num_quant();
  if (!device.is_fpga()) {
    Tensor<S> lat(Shape{q_count});
    for (int q = 0; q < q_count; ++q) lat[q] = static_cast<S>(device.gpu_table.at(op, space.quant[q]));
    return tape.constant(std::move(lat));
  }
  std::vector<Var<S>> parts;
  const OpSpec spec = op_spec(space, block, op);
  for (int q = 0; q < q_count; ++q) parts.push_back(reshape(op_latency_q(spec, pf, space.quant[q]), Shape{1}));
  return concat(parts);
}

template <typename S>
Var<S> res_per_q(Tape<S>& tape, const SpaceConfig& space, const DeviceModel& device, Var<S> pf) {
  const int q_count = space.num_quant();
  if (!device.is_fpga()) return tape.constant(Tensor<S>::zeros(Shape{q_count}));
  std::vector<Var<S>> parts;
  for (int q = 0; q < q_count; ++q) parts.push_back(reshape(op_resource_q(pf, space.quant[q]), Shape{1}));
  return concat(parts);
}

/// Parallel-factor layout required by the device: [M] shared IPs for the
/// recursive accelerator, [N, M] for the pipelined one, none for GPU.
inline Shape pf_shape(const SpaceConfig& space, const DeviceModel& device) {
  switch (device.kind) {
    case DeviceKind::fpga_recursive:
      return {space.num_ops()};
    case DeviceKind::fpga_pipelined:
      return {space.num_blocks(), space.num_ops()};
    case DeviceKind::gpu_table:
      break;
  }
  return {0};
}

/// Composes per-op costs, op and block expectations, perf loss and total
/// resource. `pf` may be null for the GPU model, which ignores it.
template <typename S>
RelaxedCost<S> relaxed_cost(Tape<S>& tape, const SpaceConfig& space, const DeviceModel& device,
                            const RelaxedWeights<S>& w, const Var<S>* pf, double alpha,
                            double perf_norm) {
  const int n = space.num_blocks(), m_count = space.num_ops();
  if (static_cast<int>(w.theta.size()) != n || static_cast<int>(w.phi.size()) != n) {
    throw ShapeError("relaxed_cost: weights cover " + std::to_string(w.theta.size()) +
                     " blocks, space has " + std::to_string(n));
  }
  if (device.is_fpga()) {
    if (pf == nullptr) throw ConfigError("relaxed_cost: FPGA model needs parallel factors");
    const Shape want = pf_shape(space, device);
    if (pf->shape() != want) {
      throw ConfigError("relaxed_cost: " + to_string(device.kind) + " expects parallel factors " +
                        to_string(want) + ", got " + to_string(pf->shape()));
    }
  }
  auto pf_of = [&](int i, int m) {
    return device.kind == DeviceKind::fpga_recursive ? element(*pf, m)
                                                     : element(*pf, i * m_count + m);
  };

  RelaxedCost<S> out;
  std::vector<Var<S>> block_perfs, block_res;
  std::vector<std::vector<Var<S>>> op_res(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<CostPair<S>> costs;
    for (int m = 0; m < m_count; ++m) {
      Var<S> pf_im = device.is_fpga() ? pf_of(i, m) : tape.constant(S(0));
      const Var<S>& phi_w = w.phi[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(m));
      costs.push_back(expected_op_cost(phi_w, perf_per_q(tape, space, device, i, m, pf_im),
                                       res_per_q(tape, space, device, pf_im)));
      op_res[static_cast<std::size_t>(i)].push_back(costs.back().res);
    }
    CostPair<S> b = block_cost(w.theta[static_cast<std::size_t>(i)], costs);
    block_perfs.push_back(reshape(b.perf, Shape{1}));
    block_res.push_back(reshape(b.res, Shape{1}));
    out.op_costs.push_back(std::move(costs));
  }
  out.block_perf = concat(block_perfs);
  out.perf_loss = perf_loss(out.block_perf, device.aggregation(), alpha, perf_norm);
  switch (device.resource_mode()) {
    case ResourceMode::unshared:
      out.res = sum(concat(block_res));
      break;
    case ResourceMode::shared:
      out.res = shared_resource(w.theta, op_res);
      break;
    case ResourceMode::fixed:
      out.res = tape.constant(S(0));
      break;
  }
  return out;
}

/// Initial parallel factor: log2(RES_ub / M) per shared IP (recursive) or
/// log2(RES_ub / (M N)) per (block, op) IP (pipelined).
double initial_parallel_factor(const SpaceConfig& space, const DeviceModel& device);

/// Normalization for block latencies: the largest block perf at uniform
/// sampling weights and the initial parallel factor.
double initial_perf_norm(const SpaceConfig& space, const DeviceModel& device);

}  // namespace edd
