#include <edd/costmodel.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace edd {

std::string to_string(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::fpga_recursive:
      return "fpga_recursive";
    case DeviceKind::fpga_pipelined:
      return "fpga_pipelined";
    case DeviceKind::gpu_table:
      break;
  }
  return "gpu_table";
}

DeviceKind parse_device_kind(std::string_view name) {
  if (name == "fpga_recursive") return DeviceKind::fpga_recursive;
  if (name == "fpga_pipelined") return DeviceKind::fpga_pipelined;
  if (name == "gpu_table") return DeviceKind::gpu_table;
  throw ConfigError("unknown device kind '" + std::string(name) +
                    "' (expected fpga_recursive, fpga_pipelined or gpu_table)");
}

MissingEntry::MissingEntry(int op_, int bits_)
    : Error("gpu latency table: no entry for op " + std::to_string(op_) + " at " +
            std::to_string(bits_) + " bits"),
      op(op_),
      bits(bits_) {}

void GpuLatencyTable::set(int op, int bits, double latency) { entries_[{op, bits}] = latency; }

double GpuLatencyTable::at(int op, int bits) const {
  auto it = entries_.find({op, bits});
  if (it == entries_.end()) throw MissingEntry(op, bits);
  return it->second;
}

bool GpuLatencyTable::contains(int op, int bits) const { return entries_.count({op, bits}) > 0; }

void GpuLatencyTable::validate(int num_ops, const QuantLevels& levels) const {
  for (int m = 0; m < num_ops; ++m) {
    double prev = 0;
    for (int q = 0; q < levels.count(); ++q) {
      const double lat = at(m, levels[q]);
      if (!(lat > 0) || !std::isfinite(lat)) {
        throw ConfigError("gpu latency table: entry (" + std::to_string(m) + ", " +
                          std::to_string(levels[q]) + ") must be positive and finite");
      }
      if (q > 0 && !(lat > prev)) {
        throw ConfigError("gpu latency table: op " + std::to_string(m) +
                          " latency must increase with bit-width (" +
                          std::to_string(levels[q - 1]) + " -> " + std::to_string(levels[q]) +
                          " bits)");
      }
      prev = lat;
    }
  }
  for (const auto& [key, value] : entries_) {
    if (key.first < 0 || key.first >= num_ops || levels.index_of(key.second) < 0) {
      throw ConfigError("gpu latency table: entry (" + std::to_string(key.first) + ", " +
                        std::to_string(key.second) + ") outside the search space");
    }
  }
}

GpuLatencyTable GpuLatencyTable::parse(std::string_view text) {
  GpuLatencyTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string f_op, f_bits, f_lat;
    if (!std::getline(row, f_op, ',') || !std::getline(row, f_bits, ',') ||
        !std::getline(row, f_lat)) {
      throw ConfigError("gpu latency table line " + std::to_string(line_no) +
                        ": expected op,bits,latency");
    }
    if (f_op.find("op") != std::string::npos) continue;  // header
    try {
      const int op = std::stoi(f_op);
      const int bits = std::stoi(f_bits);
      const double lat = std::stod(f_lat);
      if (table.contains(op, bits)) {
        throw ConfigError("gpu latency table line " + std::to_string(line_no) +
                          ": duplicate entry");
      }
      table.set(op, bits, lat);
    } catch (const std::logic_error&) {
      throw ConfigError("gpu latency table line " + std::to_string(line_no) +
                        ": malformed number");
    }
  }
  return table;
}

GpuLatencyTable GpuLatencyTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open gpu latency table '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string GpuLatencyTable::serialize() const {
  std::ostringstream os;
  os << "op,bits,latency\n";
  char num[32];
  for (const auto& [key, value] : entries_) {
    std::snprintf(num, sizeof num, "%.17g", value);
    os << key.first << ',' << key.second << ',' << num << '\n';
  }
  return os.str();
}

void CostHyperparams::validate() const {
  if (!(alpha > 0)) throw ConfigError("alpha must be positive");
  if (!(beta >= 0)) throw ConfigError("beta must be non-negative");
  if (!(base > 1)) throw ConfigError("penalty base C must exceed 1");
  if (res_scale < 0) throw ConfigError("res_scale must be non-negative");
}

double initial_parallel_factor(const SpaceConfig& space, const DeviceModel& device) {
  double units = 0;
  switch (device.kind) {
    case DeviceKind::fpga_recursive:
      units = space.num_ops();
      break;
    case DeviceKind::fpga_pipelined:
      units = static_cast<double>(space.num_ops()) * space.num_blocks();
      break;
    case DeviceKind::gpu_table:
      return 0.0;
  }
  if (!(device.res_ub > units)) {
    throw ConfigError("RES_ub " + std::to_string(device.res_ub) + " must exceed " +
                      std::to_string(static_cast<long>(units)) +
                      " IP instances for a positive initial parallel factor");
  }
  return std::log2(device.res_ub / units);
}

double initial_perf_norm(const SpaceConfig& space, const DeviceModel& device) {
  Tape<double> tape;
  const int n = space.num_blocks(), m = space.num_ops(), q = space.num_quant();
  RelaxedWeights<double> w;
  for (int i = 0; i < n; ++i) {
    w.theta.push_back(tape.constant(Tensor<double>::constant(Shape{m}, 1.0 / m)));
    std::vector<Var<double>> row;
    for (int j = 0; j < m; ++j) {
      row.push_back(tape.constant(Tensor<double>::constant(Shape{q}, 1.0 / q)));
    }
    w.phi.push_back(std::move(row));
  }
  Var<double> pf;
  if (device.is_fpga()) {
    pf = tape.constant(
        Tensor<double>::constant(pf_shape(space, device), initial_parallel_factor(space, device)));
  }
  RelaxedCost<double> cost =
      relaxed_cost(tape, space, device, w, device.is_fpga() ? &pf : nullptr, 1.0, 1.0);
  return cost.block_perf.value().values().maxCoeff();
}

}  // namespace edd
