#include <edd/hash.hpp>
#include <edd/io.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace edd {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw Error("error writing " + path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

/// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* raw(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void get(const char* key, int& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        fail(key, "integer out of range");
      }
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, long long& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<long long>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      std::vector<int> r;
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected an array of integers");
        r.push_back(e.get<int>());
      }
      out = std::move(r);
    }
  }
  void get(const char* key, std::array<double, 3>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array() || v->size() != 3) fail(key, "expected an array of three numbers");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number()) fail(key, "expected an array of three numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_.empty() ? key : path_ + "." + key);
  }

  /// Rejects keys that no getter consumed.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + dotted(k) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config: " + dotted(key) + ": " + what);
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : "'" + path_ + "'"; }
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainSettings& t) {
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.lr);
  s.get("momentum", t.momentum);
  s.get("seed", t.seed);
  s.get("grad_clip", t.grad_clip);
  s.finish();
}

GpuLatencyTable table_from_json(Section& s, const char* key) {
  const json& rows = *s.raw(key);
  GpuLatencyTable t;
  for (const auto& r : rows) {
    if (!r.is_array() || r.size() != 3 || !r[0].is_number_integer() ||
        !r[1].is_number_integer() || !r[2].is_number()) {
      s.fail(key, "rows must be [op, bits, latency]");
    }
    const int op = r[0].get<int>(), bits = r[1].get<int>();
    if (t.contains(op, bits)) s.fail(key, "duplicate row for op " + std::to_string(op));
    t.set(op, bits, r[2].get<double>());
  }
  return t;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");

  if (top.has("search")) {
    Section s = top.child("search");
    SearchConfig& x = c.search;
    s.get("epochs", x.epochs);
    s.get("batch_size", x.batch_size);
    s.get("lr_weights", x.lr_weights);
    s.get("momentum", x.momentum);
    s.get("lr_arch", x.lr_arch);
    s.get("lr_pf", x.lr_pf);
    s.get("tau_start", x.tau_start);
    s.get("tau_end", x.tau_end);
    s.get("pf_max", x.pf_max);
    s.get("seed", x.seed);
    s.get("alpha", x.hyper.alpha);
    s.get("beta", x.hyper.beta);
    s.get("penalty_base", x.hyper.base);
    s.get("res_scale", x.hyper.res_scale);
    s.get("retune_steps", x.retune_steps);
    s.get("retune_lr", x.retune_lr);
    s.get("grad_clip", x.grad_clip);
    s.finish();
  }
  if (top.has("space")) {
    Section s = top.child("space");
    SpaceConfig& x = c.space;
    s.get("input_height", x.input_height);
    s.get("input_width", x.input_width);
    s.get("input_channels", x.input_channels);
    s.get("stem_channels", x.stem_channels);
    s.get("num_classes", x.num_classes);
    s.get("channels", x.channels);
    s.get("strides", x.strides);
    if (s.has("ops") && (s.has("kernels") || s.has("expansions"))) {
      s.fail("ops", "give either ops or kernels/expansions, not both");
    }
    if (s.has("kernels") || s.has("expansions")) {
      std::vector<int> k{3, 5}, e{2, 4};
      s.get("kernels", k);
      s.get("expansions", e);
      x.ops = op_menu(k, e);
    }
    if (const json* ops = s.raw("ops")) {
      x.ops.clear();
      for (const auto& o : *ops) {
        if (!o.is_array() || o.size() != 2 || !o[0].is_number_integer() || !o[1].is_number_integer()) {
          s.fail("ops", "entries must be [kernel, expansion]");
        }
        x.ops.push_back({o[0].get<int>(), o[1].get<int>()});
      }
    }
    s.get("quant_bits", x.quant.bits);
    s.get("shared_precision", x.shared_precision);
    s.finish();
  }
  if (top.has("device")) {
    Section s = top.child("device");
    std::string kind = to_string(c.device.kind);
    s.get("kind", kind);
    c.device.kind = parse_device_kind(kind);
    s.get("res_ub", c.device.res_ub);
    if (s.has("gpu_table")) {
      const json& t = root.at("device").at("gpu_table");
      if (t.is_string()) {
        s.get("gpu_table", c.gpu_table_path);
        std::filesystem::path p(c.gpu_table_path);
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        c.device.gpu_table = GpuLatencyTable::load(p.string());
      } else if (t.is_array()) {
        c.device.gpu_table = table_from_json(s, "gpu_table");
      } else {
        s.fail("gpu_table", "expected a file path or an array of [op, bits, latency] rows");
      }
    }
    s.finish();
  }
  if (top.has("data")) {
    Section s = top.child("data");
    s.get("samples_per_class", c.data.samples_per_class);
    s.get("noise", c.data.noise);
    s.get("seed", c.data.seed);
    s.get("split", c.split);
    s.get("split_seed", c.split_seed);
    s.finish();
  }
  if (top.has("oracle")) {
    Section s = top.child("oracle");
    s.get("cap", c.enumeration_cap);
    s.get("threads", c.threads);
    s.get("epochs", c.oracle.epochs);
    s.get("batch_size", c.oracle.batch_size);
    s.get("lr", c.oracle.lr);
    s.get("momentum", c.oracle.momentum);
    s.get("seed", c.oracle.seed);
    s.get("grad_clip", c.oracle.grad_clip);
    s.finish();
  }
  if (top.has("retrain")) read_train(top.child("retrain"), c.retrain);
  if (top.has("output")) {
    Section s = top.child("output");
    s.get("directory", c.output_dir);
    s.get("cache_dir", c.cache_dir);
    s.finish();
  }
  top.finish();

  c.data.num_classes = c.space.num_classes;
  c.data.height = c.space.input_height;
  c.data.width = c.space.input_width;
  c.data.channels = c.space.input_channels;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    space.validate();
    data.validate();
    oracle.validate();
    retrain.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  search.validate();
  if (data.num_classes != space.num_classes || data.height != space.input_height ||
      data.width != space.input_width || data.channels != space.input_channels) {
    throw ConfigError("config: dataset geometry does not match space input");
  }
  if (device.is_fpga()) {
    if (!(device.res_ub > 0) || !std::isfinite(device.res_ub)) {
      throw ConfigError("config: device.res_ub must be positive");
    }
  } else {
    if (device.gpu_table.empty()) {
      throw ConfigError("config: device.kind gpu_table needs device.gpu_table (path or rows)");
    }
    try {
      device.gpu_table.validate(space.num_ops(), space.quant);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: device.gpu_table: ") + e.what());
    }
  }
  double total = 0;
  for (double f : split) {
    if (!(f > 0)) throw ConfigError("config: data.split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("config: data.split must sum to 1");
  if (enumeration_cap < 1) throw ConfigError("config: oracle.cap must be positive");
  if (threads < 1) throw ConfigError("config: oracle.threads must be positive");
}

RunConfig load_config(const std::string& path) {
  const std::filesystem::path p(path);
  return parse_config(read_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

// ---------------------------------------------------------------------------
// Template

namespace {

class TemplateWriter {
 public:
  void open(const std::string& name, const std::string& comment) {
    os_ << (first_section_ ? "" : ",\n") << "\n  // " << comment << "\n  \"" << name << "\": {";
    first_section_ = false;
    first_key_ = true;
  }
  void close() { os_ << "\n  }"; }
  void key(const std::string& name, const std::string& value, const std::string& comment) {
    os_ << (first_key_ ? "" : ",") << "\n    // " << comment << "\n    \"" << name << "\": " << value;
    first_key_ = false;
  }
  std::string str() const { return "{" + os_.str() + "\n}\n"; }

 private:
  std::ostringstream os_;
  bool first_section_ = true;
  bool first_key_ = true;
};

std::string num(double v) { return json(v).dump(); }
std::string num(long long v) { return std::to_string(v); }
std::string list(const std::vector<int>& v) { return json(v).dump(); }

}  // namespace

std::string config_template() {
  const RunConfig d;
  TemplateWriter w;
  w.open("search", "Bilevel search. Weights use SGD with momentum, search variables use Adam.");
  w.key("epochs", num(static_cast<long long>(d.search.epochs)), "passes over the train/val halves");
  w.key("batch_size", num(static_cast<long long>(d.search.batch_size)), "mini-batch size for both phases");
  w.key("lr_weights", num(d.search.lr_weights), "SGD step for network weights");
  w.key("momentum", num(d.search.momentum), "SGD momentum");
  w.key("lr_arch", num(d.search.lr_arch), "Adam step for operation and bit-width logits");
  w.key("lr_pf", num(d.search.lr_pf), "Adam step for parallel factors");
  w.key("tau_start", num(d.search.tau_start), "Gumbel-Softmax temperature at the first epoch");
  w.key("tau_end", num(d.search.tau_end), "temperature at the last epoch (exponential anneal)");
  w.key("pf_max", num(d.search.pf_max), "parallel-factor clamp; 0 means log2(res_ub)");
  w.key("seed", num(static_cast<long long>(d.search.seed)), "run seed (overridden by --seed)");
  w.key("alpha", num(d.search.hyper.alpha), "scale of the performance loss");
  w.key("beta", num(d.search.hyper.beta), "weight of the resource penalty");
  w.key("penalty_base", num(d.search.hyper.base), "base C of the penalty beta * C^((RES - res_ub) / res_scale)");
  w.key("res_scale", num(d.search.hyper.res_scale), "penalty exponent denominator; 0 means res_ub");
  w.key("retune_steps", num(static_cast<long long>(d.search.retune_steps)), "Adam steps when re-tuning parallel factors");
  w.key("retune_lr", num(d.search.retune_lr), "Adam step for re-tuning");
  w.key("grad_clip", num(d.search.grad_clip), "weight-gradient norm clip; 0 disables");
  w.close();

  w.open("space", "Supernet geometry and candidate menus.");
  w.key("input_height", num(static_cast<long long>(d.space.input_height)), "image height");
  w.key("input_width", num(static_cast<long long>(d.space.input_width)), "image width");
  w.key("input_channels", num(static_cast<long long>(d.space.input_channels)), "image channels");
  w.key("stem_channels", num(static_cast<long long>(d.space.stem_channels)), "output channels of the 3x3 stem");
  w.key("num_classes", num(static_cast<long long>(d.space.num_classes)), "classifier outputs (also the dataset class count)");
  w.key("channels", list(d.space.channels), "output channels per block; its length is the block count");
  w.key("strides", list(d.space.strides), "depthwise stride per block (1 or 2)");
  w.key("kernels", list({3, 5}), "depthwise kernel sizes; the op menu is kernels x expansions");
  w.key("expansions", list({2, 4}), "channel expansion ratios (alternatively give \"ops\": [[k, e], ...])");
  w.key("quant_bits", list(d.space.quant.bits), "weight bit-widths, strictly increasing");
  w.key("shared_precision", "false", "one bit-width for the whole network (forced on for gpu_table)");
  w.close();

  w.open("device", "Cost model.");
  w.key("kind", "\"" + to_string(d.device.kind) + "\"", "fpga_recursive, fpga_pipelined or gpu_table");
  w.key("res_ub", num(d.device.res_ub), "DSP budget of the FPGA models");
  w.key("gpu_table", "[]", "gpu_table only: CSV path (op,bits,latency) or inline [op, bits, latency] rows");
  w.close();

  w.open("data", "Synthetic grating dataset; image size and classes follow the space section.");
  w.key("samples_per_class", num(static_cast<long long>(d.data.samples_per_class)), "samples generated per class");
  w.key("noise", num(d.data.noise), "standard deviation of per-pixel noise");
  w.key("seed", num(static_cast<long long>(d.data.seed)), "generator seed");
  w.key("split", json(d.split).dump(), "train / val / test fractions, stratified per class");
  w.key("split_seed", num(static_cast<long long>(d.split_seed)), "shuffle seed of the split");
  w.close();

  w.open("oracle", "Brute-force enumeration; every config trains with the same budget and seed.");
  w.key("cap", num(d.enumeration_cap), "refuse spaces with more configurations than this");
  w.key("threads", num(static_cast<long long>(d.threads)), "worker threads");
  w.key("epochs", num(static_cast<long long>(d.oracle.epochs)), "training epochs per config");
  w.key("batch_size", num(static_cast<long long>(d.oracle.batch_size)), "mini-batch size");
  w.key("lr", num(d.oracle.lr), "SGD step");
  w.key("momentum", num(d.oracle.momentum), "SGD momentum");
  w.key("seed", num(static_cast<long long>(d.oracle.seed)), "initialization and shuffling seed");
  w.key("grad_clip", num(d.oracle.grad_clip), "gradient-norm clip; 0 disables");
  w.close();

  w.open("retrain", "Training a derived design from scratch (eval command).");
  w.key("epochs", num(static_cast<long long>(d.retrain.epochs)), "training epochs");
  w.key("batch_size", num(static_cast<long long>(d.retrain.batch_size)), "mini-batch size");
  w.key("lr", num(d.retrain.lr), "SGD step");
  w.key("momentum", num(d.retrain.momentum), "SGD momentum");
  w.key("seed", num(static_cast<long long>(d.retrain.seed)), "initialization and shuffling seed");
  w.key("grad_clip", num(d.retrain.grad_clip), "gradient-norm clip; 0 disables");
  w.close();

  w.open("output", "Where results go. EDD_OUTPUT_DIR overrides the directory.");
  w.key("directory", json(d.output_dir).dump(), "output directory");
  w.key("cache_dir", json(d.cache_dir).dump(), "dataset cache directory; empty disables caching");
  w.close();
  return "// edd run configuration (JSON with comments)\n" + w.str();
}

// ---------------------------------------------------------------------------
// Echo and hash

namespace {

json train_json(const TrainSettings& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr},
          {"momentum", t.momentum}, {"seed", t.seed}, {"grad_clip", t.grad_clip}};
}

}  // namespace

json config_echo(const RunConfig& c) {
  json ops = json::array();
  for (const auto& o : c.space.ops) ops.push_back({o.kernel, o.expansion});
  json device = {{"kind", to_string(c.device.kind)}, {"res_ub", c.device.res_ub}};
  if (!c.device.is_fpga()) {
    json rows = json::array();
    for (int m = 0; m < c.space.num_ops(); ++m) {
      for (int b : c.space.quant.bits) rows.push_back({m, b, c.device.gpu_table.at(m, b)});
    }
    device["gpu_table"] = rows;
  }
  const SearchConfig& s = c.search;
  json oracle = train_json(c.oracle);
  oracle["cap"] = c.enumeration_cap;
  oracle["threads"] = c.threads;
  return {
      {"search",
       {{"epochs", s.epochs},
        {"batch_size", s.batch_size},
        {"lr_weights", s.lr_weights},
        {"momentum", s.momentum},
        {"lr_arch", s.lr_arch},
        {"lr_pf", s.lr_pf},
        {"tau_start", s.tau_start},
        {"tau_end", s.tau_end},
        {"pf_max", s.pf_max},
        {"seed", s.seed},
        {"alpha", s.hyper.alpha},
        {"beta", s.hyper.beta},
        {"penalty_base", s.hyper.base},
        {"res_scale", s.hyper.res_scale},
        {"retune_steps", s.retune_steps},
        {"retune_lr", s.retune_lr},
        {"grad_clip", s.grad_clip}}},
      {"space",
       {{"input_height", c.space.input_height},
        {"input_width", c.space.input_width},
        {"input_channels", c.space.input_channels},
        {"stem_channels", c.space.stem_channels},
        {"num_classes", c.space.num_classes},
        {"channels", c.space.channels},
        {"strides", c.space.strides},
        {"ops", ops},
        {"quant_bits", c.space.quant.bits},
        {"shared_precision", c.space.shared_precision}}},
      {"device", device},
      {"data",
       {{"samples_per_class", c.data.samples_per_class},
        {"noise", c.data.noise},
        {"seed", c.data.seed},
        {"split", c.split},
        {"split_seed", c.split_seed}}},
      {"oracle", oracle},
      {"retrain", train_json(c.retrain)},
  };
}

std::string config_hash(const RunConfig& config) {
  json echo = config_echo(config);
  echo["search"].erase("seed");
  echo["oracle"].erase("threads");
  return content_hash(echo.dump());
}

// ---------------------------------------------------------------------------
// Designs and reports

namespace {

double number(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

json numbers(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

std::vector<double> numbers_from(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(number(x));
  return v;
}

}  // namespace

json to_json(const DerivedDesign& d, const SpaceConfig& space) {
  const bool fpga = d.device != DeviceKind::gpu_table;
  json blocks = json::array();
  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    const DesignBlock& b = d.blocks[i];
    const OpSpec op = op_spec(space, static_cast<int>(i), b.op);
    json jb = {{"block", i},
               {"op", b.op},
               {"kernel", op.kernel},
               {"expansion", op.expansion},
               {"stride", op.stride},
               {"in_channels", op.c_in},
               {"out_channels", op.c_out},
               {"bits", b.bits},
               {"latency", b.latency},
               {"resource", b.resource}};
    if (fpga) jb["pf"] = b.pf;
    blocks.push_back(jb);
  }
  json j = {{"device", to_string(d.device)}, {"blocks", blocks},      {"latency", d.latency},
            {"bottleneck", d.bottleneck},    {"perf_loss", d.perf_loss}, {"res", d.res}};
  if (d.device == DeviceKind::fpga_pipelined && d.bottleneck > 0) j["throughput"] = 1.0 / d.bottleneck;
  if (!fpga && !d.blocks.empty()) j["bits"] = d.blocks.front().bits;
  return j;
}

DerivedDesign design_from_json(const json& j) {
  try {
    DerivedDesign d;
    d.device = parse_device_kind(j.at("device").get<std::string>());
    for (const auto& jb : j.at("blocks")) {
      DesignBlock b;
      b.op = jb.at("op").get<int>();
      b.bits = jb.at("bits").get<int>();
      b.pf = jb.contains("pf") ? jb.at("pf").get<int>() : 0;
      b.latency = number(jb.at("latency"));
      b.resource = number(jb.at("resource"));
      d.blocks.push_back(b);
    }
    d.latency = number(j.at("latency"));
    d.bottleneck = number(j.at("bottleneck"));
    d.perf_loss = number(j.at("perf_loss"));
    d.res = number(j.at("res"));
    return d;
  } catch (const json::exception& e) {
    throw Error(std::string("design file: ") + e.what());
  }
}

json to_json(const SearchReport& r, const RunConfig& config) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"tau", e.tau},
                      {"train_acc_loss", e.train_acc},
                      {"val_acc_loss", e.val_acc},
                      {"perf_loss", e.perf_loss},
                      {"res", e.res},
                      {"loss", e.loss}});
  }
  return {{"status", r.status},
          {"message", r.message},
          {"seed", r.seed},
          {"config_hash", config_hash(config)},
          {"config", config_echo(config)},
          {"perf_norm", r.perf_norm},
          {"epochs", epochs},
          {"design", r.design ? to_json(*r.design, effective_space(config.space, config.device)) : json()},
          {"search_variables", {{"theta", numbers(r.theta)}, {"phi", numbers(r.phi)}, {"pf", numbers(r.pf)}}}};
}

SearchReport report_from_json(const json& j) {
  try {
    SearchReport r;
    r.status = j.at("status").get<std::string>();
    r.message = j.at("message").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.perf_norm = number(j.at("perf_norm"));
    for (const auto& e : j.at("epochs")) {
      EpochStats s;
      s.epoch = e.at("epoch").get<int>();
      s.tau = number(e.at("tau"));
      s.train_acc = number(e.at("train_acc_loss"));
      s.val_acc = number(e.at("val_acc_loss"));
      s.perf_loss = number(e.at("perf_loss"));
      s.res = number(e.at("res"));
      s.loss = number(e.at("loss"));
      r.epochs.push_back(s);
    }
    if (!j.at("design").is_null()) r.design = design_from_json(j.at("design"));
    const json& v = j.at("search_variables");
    r.theta = numbers_from(v.at("theta"));
    r.phi = numbers_from(v.at("phi"));
    r.pf = numbers_from(v.at("pf"));
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("report file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tables

std::string curves_csv(const SearchReport& r, const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n";
  out += "epoch,tau,train_acc_loss,val_acc_loss,perf_loss,res,loss\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.tau) + "," + format_double(e.train_acc) +
           "," + format_double(e.val_acc) + "," + format_double(e.perf_loss) + "," +
           format_double(e.res) + "," + format_double(e.loss) + "\n";
  }
  return out;
}

namespace {

template <typename F>
std::string joined(std::size_t n, F f) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? ";" : "") + f(i);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

std::string ranking_csv(const OracleRanking& r, const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n";
  out += "# perf_norm=" + format_double(r.perf_norm) + "\n";
  out += "# excluded=" + joined(r.excluded.size(), [&](std::size_t i) { return std::to_string(r.excluded[i]); }) + "\n";
  out += "rank,index,ops,quant,pf,acc_loss,perf_loss,res,res_hw,loss\n";
  for (std::size_t k = 0; k < r.entries.size(); ++k) {
    const OracleEntry& e = r.entries[k];
    out += std::to_string(k + 1) + "," + std::to_string(e.index) + "," +
           joined(e.path.size(), [&](std::size_t i) { return std::to_string(e.path[i].op); }) + "," +
           joined(e.path.size(), [&](std::size_t i) { return std::to_string(e.path[i].quant); }) + "," +
           joined(e.pf.size(), [&](std::size_t i) { return std::to_string(e.pf[i]); }) + "," +
           format_double(e.acc_loss) + "," + format_double(e.perf_loss) + "," + format_double(e.res) +
           "," + format_double(e.res_hw) + "," + format_double(e.loss) + "\n";
  }
  return out;
}

std::pair<OracleRanking, std::string> parse_ranking_csv(std::string_view text) {
  OracleRanking r;
  std::string hash;
  std::istringstream is{std::string(text)};
  std::string line;
  bool header = false;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error("ranking file line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      hash = line.substr(14);
    } else if (line.rfind("# perf_norm=", 0) == 0) {
      r.perf_norm = std::strtod(line.c_str() + 12, nullptr);
    } else if (line.rfind("# excluded=", 0) == 0) {
      r.excluded = split_ints(line.substr(11));
    } else if (line[0] == '#') {
      continue;
    } else if (!header) {
      if (line != "rank,index,ops,quant,pf,acc_loss,perf_loss,res,res_hw,loss") fail("unexpected header");
      header = true;
    } else {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() != 10) fail("expected 10 fields");
      try {
        OracleEntry e;
        if (std::stoi(f[0]) != static_cast<int>(r.entries.size()) + 1) fail("ranks out of order");
        e.index = std::stoi(f[1]);
        const auto ops = split_ints(f[2]), quant = split_ints(f[3]);
        if (ops.size() != quant.size()) fail("ops and quant lengths differ");
        for (std::size_t i = 0; i < ops.size(); ++i) e.path.push_back({ops[i], quant[i]});
        e.pf = split_ints(f[4]);
        e.acc_loss = std::stod(f[5]);
        e.perf_loss = std::stod(f[6]);
        e.res = std::stod(f[7]);
        e.res_hw = std::stod(f[8]);
        e.loss = std::stod(f[9]);
        r.entries.push_back(std::move(e));
      } catch (const std::logic_error&) {
        fail("malformed number");
      }
    }
  }
  if (hash.empty()) throw Error("ranking file: missing config_hash line");
  if (!header) throw Error("ranking file: missing header");
  return {std::move(r), hash};
}

}  // namespace edd
