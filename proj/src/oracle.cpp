#include <edd/oracle.hpp>

#include <algorithm>
#include <atomic>
#include <climits>
#include <cmath>
#include <exception>
#include <map>
#include <optional>
#include <thread>

namespace edd {

EnumerationCapExceeded::EnumerationCapExceeded(long long required, long long cap)
    : Error("space has " + std::to_string(required) + " configurations, enumeration cap is " +
            std::to_string(cap) + "; shrink the space or raise the cap to at least " +
            std::to_string(required)),
      required(required),
      cap(cap) {}

namespace {

long long sat_mul(long long a, long long b) {
  if (a != 0 && b > LLONG_MAX / a) return LLONG_MAX;
  return a * b;
}

/// Multiply-accumulate count of an MBConv op: expand 1x1, depthwise kxk,
/// project 1x1, each followed by one elementwise affine+ReLU layer.
double mbconv_work(const OpSpec& op) {
  const double hi = op.height, wi = op.width;
  const double ho = op.out_height(), wo = op.out_width();
  const double cin = op.c_in, cmid = static_cast<double>(op.c_in) * op.expansion, cout = op.c_out;
  const double k2 = static_cast<double>(op.kernel) * op.kernel;
  return hi * wi * cin * cmid + hi * wi * cmid + k2 * ho * wo * cmid + ho * wo * cmid +
         ho * wo * cmid * cout + ho * wo * cout;
}

double dsp_per_multiplier(int bits) {
  if (bits >= 9) return 1.0;
  if (bits >= 5) return 0.5;
  return 0.0;
}

}  // namespace

long long config_count(const SpaceConfig& space) {
  const long long m = space.num_ops(), q = space.num_quant();
  const long long per_block = space.shared_precision ? m : m * q;
  long long n = space.shared_precision ? q : 1;
  for (int i = 0; i < space.num_blocks(); ++i) n = sat_mul(n, per_block);
  return n;
}

std::vector<Path> enumerate_configs(const SpaceConfig& space, long long cap) {
  space.validate();
  const long long total = config_count(space);
  if (total > cap) throw EnumerationCapExceeded(total, cap);
  const int n = space.num_blocks(), m = space.num_ops(), q = space.num_quant();
  std::vector<Path> out;
  out.reserve(static_cast<std::size_t>(total));
  if (space.shared_precision) {
    const long long op_tuples = total / q;
    for (long long t = 0; t < op_tuples; ++t) {
      for (int level = 0; level < q; ++level) {
        Path p(static_cast<std::size_t>(n));
        long long rest = t;
        for (int i = n - 1; i >= 0; --i) {
          p[static_cast<std::size_t>(i)] = {static_cast<int>(rest % m), level};
          rest /= m;
        }
        out.push_back(std::move(p));
      }
    }
    return out;
  }
  const long long base = static_cast<long long>(m) * q;
  for (long long t = 0; t < total; ++t) {
    Path p(static_cast<std::size_t>(n));
    long long rest = t;
    for (int i = n - 1; i >= 0; --i) {
      const int digit = static_cast<int>(rest % base);
      p[static_cast<std::size_t>(i)] = {digit / q, digit % q};
      rest /= base;
    }
    out.push_back(std::move(p));
  }
  return out;
}

ExactCost exact_cost(const SpaceConfig& space, const DeviceModel& device,
                     const CostHyperparams& hyper, double perf_norm, const Path& path,
                     const std::vector<double>& pf_layout) {
  validate_path(space, path);
  const int m_count = space.num_ops();
  const std::size_t want = device.kind == DeviceKind::fpga_recursive   ? static_cast<std::size_t>(m_count)
                           : device.kind == DeviceKind::fpga_pipelined ? static_cast<std::size_t>(m_count * space.num_blocks())
                                                                       : 0;
  if (pf_layout.size() != want) {
    throw ConfigError("exact_cost: expected " + std::to_string(want) + " parallel factors, got " +
                      std::to_string(pf_layout.size()));
  }
  ExactCost c;
  std::map<int, std::pair<int, double>> ip;  // op -> (users, summed DSPs)
  for (std::size_t i = 0; i < path.size(); ++i) {
    const int op = path[i].op, bits = space.quant[path[i].quant];
    if (!device.is_fpga()) {
      c.block_latency.push_back(device.gpu_table.at(op, bits));
      continue;
    }
    const double pf = device.kind == DeviceKind::fpga_recursive
                          ? pf_layout[static_cast<std::size_t>(op)]
                          : pf_layout[i * static_cast<std::size_t>(m_count) + static_cast<std::size_t>(op)];
    const double parallel = std::pow(2.0, pf);
    c.block_latency.push_back(bits * mbconv_work(op_spec(space, static_cast<int>(i), op)) / parallel);
    const double dsp = dsp_per_multiplier(bits) * parallel;
    if (device.kind == DeviceKind::fpga_pipelined) {
      c.res += dsp;
    } else {
      auto& slot = ip[op];
      ++slot.first;
      slot.second += dsp;
    }
  }
  for (const auto& [op, users] : ip) {
    const double count = users.first;
    c.res += std::tanh(count) / count * users.second;
  }

  std::vector<double> scaled;
  for (double l : c.block_latency) scaled.push_back(l / perf_norm);
  double agg = 0;
  if (device.aggregation() == PerfAggregation::sum) {
    for (double v : scaled) agg += v;
  } else {
    const double top = *std::max_element(scaled.begin(), scaled.end());
    double s = 0;
    for (double v : scaled) s += std::exp(v - top);
    agg = top + std::log(s);
  }
  c.perf_loss = hyper.alpha * agg;
  return c;
}

double exact_objective(double acc_loss, const ExactCost& cost, const CostHyperparams& hyper,
                       const DeviceModel& device) {
  double l = acc_loss * cost.perf_loss;
  if (device.is_fpga()) {
    const double scale = hyper.res_scale > 0 ? hyper.res_scale : device.res_ub;
    l += hyper.beta * std::pow(hyper.base, (cost.res - device.res_ub) / scale);
  }
  return l;
}

int OracleRanking::rank_of(const Path& path) const {
  for (std::size_t r = 0; r < entries.size(); ++r) {
    if (entries[r].path == path) return static_cast<int>(r) + 1;
  }
  return 0;
}

OracleEntry evaluate_config_exact(const SpaceConfig& space_in, const DeviceModel& device,
                                  const SearchConfig& search, const TrainSettings& protocol,
                                  const Dataset& data, const Split& split, const Path& path,
                                  double perf_norm) {
  const SpaceConfig space = effective_space(space_in, device);
  Supernet net(space, protocol.seed);
  train_path(net, path, data, split.train, protocol);
  const EvalResult ev = evaluate_path(net, path, data, split.val);
  if (!std::isfinite(ev.loss)) throw NumericError("validation loss is not finite");

  std::vector<int> pf0(path.size(), 0);
  if (device.is_fpga()) {
    const int start = static_cast<int>(std::lround(initial_parallel_factor(space, device)));
    std::fill(pf0.begin(), pf0.end(), start);
  }
  const DerivedDesign design =
      retune_impl(make_design(space, device, path, pf0, search.hyper.alpha, perf_norm), space,
                  device, search, perf_norm);

  OracleEntry e;
  e.path = path;
  for (const auto& b : design.blocks) e.pf.push_back(b.pf);
  const ExactCost cost =
      exact_cost(space, device, search.hyper, perf_norm, path, pf_layout(space, device, design));
  e.acc_loss = ev.loss;
  e.perf_loss = cost.perf_loss;
  e.res = cost.res;
  e.res_hw = design.res;
  e.loss = exact_objective(ev.loss, cost, search.hyper, device);
  return e;
}

OracleRanking rank_configs(const SpaceConfig& space_in, const DeviceModel& device,
                           const SearchConfig& search, const TrainSettings& protocol,
                           const Dataset& data, const Split& split, long long cap, int threads) {
  const SpaceConfig space = effective_space(space_in, device);
  const std::vector<Path> configs = enumerate_configs(space, cap);
  OracleRanking ranking;
  ranking.perf_norm = initial_perf_norm(space, device);

  std::vector<std::optional<OracleEntry>> results(configs.size());
  std::vector<std::exception_ptr> fatal(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < configs.size(); k = next++) {
      try {
        results[k] = evaluate_config_exact(space, device, search, protocol, data, split,
                                           configs[k], ranking.perf_norm);
        results[k]->index = static_cast<int>(k);
      } catch (const NumericError&) {
      } catch (const Infeasible&) {
      } catch (...) {
        fatal[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::max(1, threads); ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& f : fatal) {
    if (f) std::rethrow_exception(f);
  }

  for (std::size_t k = 0; k < configs.size(); ++k) {
    if (results[k]) {
      ranking.entries.push_back(*results[k]);
    } else {
      ranking.excluded.push_back(static_cast<int>(k));
    }
  }
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const OracleEntry& a, const OracleEntry& b) { return a.loss < b.loss; });
  return ranking;
}

}  // namespace edd
