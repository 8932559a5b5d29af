#include <edd/search.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>

namespace edd {

void SearchConfig::validate() const {
  if (epochs < 1) throw ConfigError("search.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("search.batch_size must be positive");
  if (!(lr_weights > 0)) throw ConfigError("search.lr_weights must be positive");
  if (!(lr_arch > 0)) throw ConfigError("search.lr_arch must be positive");
  if (!(lr_pf > 0)) throw ConfigError("search.lr_pf must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("search.momentum must lie in [0, 1)");
  if (!(tau_end > 0) || !(tau_start >= tau_end)) {
    throw ConfigError("search: need tau_start >= tau_end > 0");
  }
  if (!(pf_max >= 0)) throw ConfigError("search.pf_max must be non-negative");
  if (retune_steps < 0) throw ConfigError("search.retune_steps must be non-negative");
  if (!(retune_lr > 0)) throw ConfigError("search.retune_lr must be positive");
  if (!(grad_clip >= 0)) throw ConfigError("search.grad_clip must be non-negative");
  hyper.validate();
}

double tau_at(const SearchConfig& config, int epoch) {
  if (config.epochs <= 1) return config.tau_start;
  const double t = static_cast<double>(epoch) / (config.epochs - 1);
  return config.tau_start * std::pow(config.tau_end / config.tau_start, t);
}

double pf_cap(const SearchConfig& config, const DeviceModel& device) {
  if (!device.is_fpga()) return 0.0;
  return config.pf_max > 0 ? config.pf_max : std::log2(device.res_ub);
}

// ---------------------------------------------------------------------------
// Discrete designs

Path DerivedDesign::path(const SpaceConfig& space) const {
  Path p;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const int q = space.quant.index_of(blocks[i].bits);
    if (q < 0) {
      throw Error("block " + std::to_string(i) + ": bit-width " + std::to_string(blocks[i].bits) +
                  " is not a configured quantization level");
    }
    p.push_back({blocks[i].op, q});
  }
  validate_path(space, p);
  return p;
}

namespace {

double aggregate(const std::vector<double>& v, PerfAggregation mode) {
  if (mode == PerfAggregation::sum) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

void evaluate_design(DerivedDesign& design, const SpaceConfig& space, const DeviceModel& device,
                     double alpha, double perf_norm) {
  if (static_cast<int>(design.blocks.size()) != space.num_blocks()) {
    throw Error("design has " + std::to_string(design.blocks.size()) + " blocks, space has " +
                std::to_string(space.num_blocks()));
  }
  design.device = device.kind;
  std::vector<double> normed;
  std::vector<double> ip_res(static_cast<std::size_t>(space.num_ops()), 0.0);
  std::vector<int> ip_pf(static_cast<std::size_t>(space.num_ops()), -1);
  design.latency = design.bottleneck = design.res = 0;
  for (std::size_t i = 0; i < design.blocks.size(); ++i) {
    DesignBlock& b = design.blocks[i];
    if (b.op < 0 || b.op >= space.num_ops()) {
      throw Error("block " + std::to_string(i) + ": op " + std::to_string(b.op) + " out of range");
    }
    if (space.quant.index_of(b.bits) < 0) {
      throw Error("block " + std::to_string(i) + ": bit-width " + std::to_string(b.bits) +
                  " is not a configured quantization level");
    }
    if (b.pf < 0) throw Error("block " + std::to_string(i) + ": negative parallel factor");
    if (device.is_fpga()) {
      const OpSpec spec = op_spec(space, static_cast<int>(i), b.op);
      b.latency = op_latency_q(spec, b.pf, b.bits);
      b.resource = op_resource_q(b.pf, b.bits);
    } else {
      if (b.pf != 0) throw Error("block " + std::to_string(i) + ": GPU designs carry no parallel factor");
      b.latency = device.gpu_table.at(b.op, b.bits);
      b.resource = 0;
    }
    design.latency += b.latency;
    design.bottleneck = std::max(design.bottleneck, b.latency);
    normed.push_back(b.latency / perf_norm);
    switch (device.resource_mode()) {
      case ResourceMode::shared: {
        int& pf = ip_pf[static_cast<std::size_t>(b.op)];
        if (pf >= 0 && pf != b.pf) {
          throw Error("block " + std::to_string(i) + ": op " + std::to_string(b.op) +
                      " shares an IP but has a different parallel factor");
        }
        pf = b.pf;
        double& r = ip_res[static_cast<std::size_t>(b.op)];
        r = std::max(r, b.resource);
        break;
      }
      case ResourceMode::unshared:
        design.res += b.resource;
        break;
      case ResourceMode::fixed:
        break;
    }
  }
  if (device.resource_mode() == ResourceMode::shared) {
    for (double r : ip_res) design.res += r;
  }
  design.perf_loss = alpha * aggregate(normed, device.aggregation());
}

DerivedDesign make_design(const SpaceConfig& space, const DeviceModel& device, const Path& path,
                          const std::vector<int>& pf, double alpha, double perf_norm) {
  validate_path(space, path);
  if (pf.size() != path.size()) throw Error("make_design: one parallel factor per block");
  DerivedDesign d;
  for (std::size_t i = 0; i < path.size(); ++i) {
    d.blocks.push_back({path[i].op, space.quant[path[i].quant], pf[i], 0, 0});
  }
  evaluate_design(d, space, device, alpha, perf_norm);
  return d;
}

std::vector<double> pf_layout(const SpaceConfig& space, const DeviceModel& device,
                              const DerivedDesign& design) {
  std::vector<double> out(static_cast<std::size_t>(numel(pf_shape(space, device))), 0.0);
  for (std::size_t i = 0; i < design.blocks.size(); ++i) {
    const auto& b = design.blocks[i];
    if (device.kind == DeviceKind::fpga_recursive) {
      out.at(static_cast<std::size_t>(b.op)) = b.pf;
    } else if (device.kind == DeviceKind::fpga_pipelined) {
      out.at(i * static_cast<std::size_t>(space.num_ops()) + static_cast<std::size_t>(b.op)) = b.pf;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Implementation re-tuning

namespace {

/// Parallel-factor units of a fixed architecture: one per used IP
/// (recursive) or one per block (pipelined).
struct RetuneProblem {
  std::vector<int> unit_of_block;
  std::vector<double> psi;   // per unit, widest user
  std::vector<double> work;  // per block, q * op_work / perf_norm
  PerfAggregation mode = PerfAggregation::sum;
  double alpha = 1;
  double cap = 0;
  CostHyperparams hyper;
  DeviceModel device;

  std::size_t units() const { return psi.size(); }

  double perf(const std::vector<double>& pf) const {
    std::vector<double> v;
    for (std::size_t i = 0; i < work.size(); ++i) {
      v.push_back(work[i] * std::exp2(-pf[static_cast<std::size_t>(unit_of_block[i])]));
    }
    return alpha * aggregate(v, mode);
  }
  double res(const std::vector<double>& pf) const {
    double r = 0;
    for (std::size_t u = 0; u < units(); ++u) r += psi[u] * std::exp2(pf[u]);
    return r;
  }
  double objective(const std::vector<double>& pf) const {
    return perf(pf) + resource_penalty(res(pf), hyper, device);
  }
};

std::vector<double> as_real(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

DerivedDesign retune_impl(const DerivedDesign& design, const SpaceConfig& space,
                          const DeviceModel& device, const SearchConfig& config,
                          double perf_norm) {
  if (!device.is_fpga()) {
    DerivedDesign out = design;
    evaluate_design(out, space, device, config.hyper.alpha, perf_norm);
    return out;
  }
  RetuneProblem p;
  p.mode = device.aggregation();
  p.alpha = config.hyper.alpha;
  p.cap = pf_cap(config, device);
  p.hyper = config.hyper;
  p.device = device;

  std::vector<double> start;
  if (device.kind == DeviceKind::fpga_recursive) {
    std::set<int> used;
    for (const auto& b : design.blocks) used.insert(b.op);
    std::vector<int> ops(used.begin(), used.end());
    for (int op : ops) {
      double widest = 0;
      int pf = 0;
      for (const auto& b : design.blocks) {
        if (b.op == op) {
          widest = std::max(widest, psi(b.bits));
          pf = b.pf;
        }
      }
      p.psi.push_back(widest);
      start.push_back(pf);
    }
    for (const auto& b : design.blocks) {
      p.unit_of_block.push_back(
          static_cast<int>(std::lower_bound(ops.begin(), ops.end(), b.op) - ops.begin()));
    }
  } else {
    for (std::size_t i = 0; i < design.blocks.size(); ++i) {
      p.unit_of_block.push_back(static_cast<int>(i));
      p.psi.push_back(psi(design.blocks[i].bits));
      start.push_back(design.blocks[i].pf);
    }
  }
  for (std::size_t i = 0; i < design.blocks.size(); ++i) {
    const auto& b = design.blocks[i];
    p.work.push_back(b.bits * op_work(op_spec(space, static_cast<int>(i), b.op)) / perf_norm);
  }

  // Continuous descent.
  const auto u_count = static_cast<Index>(p.units());
  Parameter<double> x("pf", Tensor<double>(Shape{u_count}));
  for (Index u = 0; u < u_count; ++u) x.value[u] = std::clamp(start[static_cast<std::size_t>(u)], 0.0, p.cap);
  Adam opt({&x}, {config.retune_lr});
  Tensor<double> psi_t(Shape{u_count});
  for (Index u = 0; u < u_count; ++u) psi_t[u] = p.psi[static_cast<std::size_t>(u)];
  for (int step = 0; step < config.retune_steps; ++step) {
    opt.zero_grad();
    Tape<double> tape;
    Var<double> xv = tape.leaf(x);
    Var<double> speed = exp2(-xv);
    std::vector<Var<double>> lat;
    for (std::size_t i = 0; i < p.work.size(); ++i) {
      lat.push_back(reshape(element(speed, p.unit_of_block[i]) * p.work[i], Shape{1}));
    }
    Var<double> perf = perf_loss(concat(lat), p.mode, p.alpha);
    Var<double> res = dot(tape.constant(psi_t), exp2(xv));
    tape.backward(total_loss(tape.constant(1.0), perf, res, p.hyper, device));
    opt.step();
    for (Index u = 0; u < u_count; ++u) x.value[u] = std::clamp(x.value[u], 0.0, p.cap);
  }

  // Round, repair, fill.
  const int int_cap = static_cast<int>(std::floor(p.cap));
  std::vector<int> r;
  for (Index u = 0; u < u_count; ++u) {
    r.push_back(std::clamp(static_cast<int>(std::lround(x.value[u])), 0, int_cap));
  }
  while (p.res(as_real(r)) > device.res_ub) {
    int pick = -1;
    double best = std::numeric_limits<double>::infinity();
    const double now = p.perf(as_real(r));
    for (std::size_t u = 0; u < r.size(); ++u) {
      if (r[u] == 0 || p.psi[u] == 0) continue;
      std::vector<int> t = r;
      --t[u];
      const double regret = p.perf(as_real(t)) - now;
      if (regret < best) {
        best = regret;
        pick = static_cast<int>(u);
      }
    }
    if (pick < 0) {
      throw Infeasible("resource bound " + std::to_string(device.res_ub) +
                       " is below the " + std::to_string(p.res(as_real(r))) +
                       " DSPs needed at parallel factor 0");
    }
    --r[static_cast<std::size_t>(pick)];
  }
  for (;;) {
    int pick = -1;
    double best = p.objective(as_real(r));
    for (std::size_t u = 0; u < r.size(); ++u) {
      if (r[u] >= int_cap) continue;
      std::vector<int> t = r;
      ++t[u];
      if (p.res(as_real(t)) > device.res_ub) continue;
      const double obj = p.objective(as_real(t));
      if (obj < best) {
        best = obj;
        pick = static_cast<int>(u);
      }
    }
    if (pick < 0) break;
    ++r[static_cast<std::size_t>(pick)];
  }

  DerivedDesign out = design;
  for (std::size_t i = 0; i < out.blocks.size(); ++i) {
    out.blocks[i].pf = r[static_cast<std::size_t>(p.unit_of_block[i])];
  }
  evaluate_design(out, space, device, config.hyper.alpha, perf_norm);
  return out;
}

// ---------------------------------------------------------------------------
// Search state

SpaceConfig effective_space(SpaceConfig space, const DeviceModel& device) {
  if (!device.is_fpga()) {
    space.shared_precision = true;
    device.gpu_table.validate(space.num_ops(), space.quant);
  }
  space.validate();
  return space;
}

namespace {

Tensor<double> initial_pf(const SpaceConfig& space, const DeviceModel& device) {
  if (!device.is_fpga()) return Tensor<double>::zeros(Shape{0});
  return Tensor<double>::constant(pf_shape(space, device), initial_parallel_factor(space, device));
}

}  // namespace

SearchState::SearchState(const SpaceConfig& space, const DeviceModel& device,
                         const SearchConfig& config)
    : space_(effective_space(space, device)),
      device_(device),
      config_((config.validate(), config)),
      net_(space_, config.seed),
      pf_("pf", initial_pf(space_, device_)),
      rng_(config.seed ^ 0x9e3779b97f4a7c15ULL),
      perf_norm_(initial_perf_norm(space_, device_)),
      pf_max_(pf_cap(config, device)),
      wopt_(net_.weights(), config.lr_weights, config.momentum, config.grad_clip),
      aopt_({&net_.theta(), &net_.phi(), &pf_}, {config.lr_arch, config.lr_arch, config.lr_pf}) {}

double SearchState::weight_step(const Batch& train, double tau) {
  net_.set_arch_trainable(false);
  net_.set_weights_trainable(true);
  wopt_.zero_grad();
  Tape<double> tape;
  Var<double> loss = net_.forward_train(tape, train.images, train.labels, tau, rng_);
  tape.backward(loss);
  wopt_.step();
  net_.set_arch_trainable(true);
  return loss.item();
}

StepInfo SearchState::arch_step(const Batch& val, double tau) {
  net_.set_weights_trainable(false);
  net_.set_arch_trainable(true);
  aopt_.zero_grad();
  Tape<double> tape;
  ArchSample arch = net_.sample(tape, tau, &rng_);
  Var<double> acc = softmax_xent(net_.forward(tape, val.images, arch), val.labels);
  Var<double> pf;
  if (device_.is_fpga()) pf = tape.leaf(pf_);
  RelaxedCost<double> cost = relaxed_cost(tape, space_, device_, arch.soft,
                                          device_.is_fpga() ? &pf : nullptr, config_.hyper.alpha,
                                          perf_norm_);
  Var<double> loss = total_loss(acc, cost.perf_loss, cost.res, config_.hyper, device_);
  tape.backward(loss);
  aopt_.step();
  for (Index j = 0; j < pf_.value.size(); ++j) pf_.value[j] = std::clamp(pf_.value[j], 0.0, pf_max_);
  net_.set_weights_trainable(true);

  StepInfo info;
  info.tau = tau;
  info.val_acc = acc.item();
  info.perf_loss = cost.perf_loss.item();
  info.res = cost.res.item();
  info.loss = loss.item();
  for (Index i = 0; i < cost.block_perf.size(); ++i) info.block_perf.push_back(cost.block_perf[i] / perf_norm_);
  return info;
}

StepInfo SearchState::bilevel_step(const Batch& train, const Batch& val, double tau) {
  const double train_acc = weight_step(train, tau);
  StepInfo info = arch_step(val, tau);
  info.train_acc = train_acc;
  return info;
}

double SearchState::relaxed_objective(double acc_loss, double tau) {
  net_.set_arch_trainable(false);
  Tape<double> tape;
  ArchSample arch = net_.sample(tape, tau, nullptr);
  net_.set_arch_trainable(true);
  Var<double> pf;
  if (device_.is_fpga()) pf = tape.constant(pf_.value);
  RelaxedCost<double> cost = relaxed_cost(tape, space_, device_, arch.soft,
                                          device_.is_fpga() ? &pf : nullptr, config_.hyper.alpha,
                                          perf_norm_);
  return total_loss(tape.constant(acc_loss), cost.perf_loss, cost.res, config_.hyper, device_)
      .item();
}

DerivedDesign derive_architecture(const SearchState& state) {
  const SpaceConfig& space = state.space();
  const DeviceModel& device = state.device();
  const int m_count = space.num_ops();
  const auto& theta = state.net().theta().value.values();
  const int cap = static_cast<int>(std::floor(pf_cap(state.config(), device)));
  Path path;
  std::vector<int> pf;
  for (int i = 0; i < space.num_blocks(); ++i) {
    const int m = static_cast<int>(argmax(theta.segment(i * m_count, m_count)));
    const int q = static_cast<int>(argmax(state.net().phi_row(i, m).values()));
    path.push_back({m, q});
    double raw = 0;
    if (device.kind == DeviceKind::fpga_recursive) raw = state.pf().value[m];
    if (device.kind == DeviceKind::fpga_pipelined) raw = state.pf().value[i * m_count + m];
    pf.push_back(std::clamp(static_cast<int>(std::lround(raw)), 0, cap));
  }
  return make_design(space, device, path, pf, state.config().hyper.alpha, state.perf_norm());
}

// ---------------------------------------------------------------------------
// Whole run

SearchReport run_search(const SpaceConfig& space, const DeviceModel& device,
                        const SearchConfig& config, const Dataset& data, const Split& split,
                        const StepObserver& observer) {
  if (split.train.empty() || split.val.empty()) throw Error("search needs train and val samples");
  auto state = std::make_unique<SearchState>(space, device, config);
  SearchReport report;
  report.seed = config.seed;
  report.perf_norm = state->perf_norm();
  auto snapshot = [&] {
    const auto& th = state->net().theta().value.values();
    const auto& ph = state->net().phi().value.values();
    const auto& pf = state->pf().value.values();
    report.theta.assign(th.data(), th.data() + th.size());
    report.phi.assign(ph.data(), ph.data() + ph.size());
    report.pf.assign(pf.data(), pf.data() + pf.size());
  };
  try {
    for (int e = 0; e < config.epochs; ++e) {
      const double tau = tau_at(config, e);
      const auto tb = shuffled_batches(split.train, config.batch_size, state->rng());
      const auto vb = shuffled_batches(split.val, config.batch_size, state->rng());
      const std::size_t steps = std::min(tb.size(), vb.size());
      EpochStats s;
      s.epoch = e;
      s.tau = tau;
      for (std::size_t k = 0; k < steps; ++k) {
        StepInfo info = state->bilevel_step(make_batch(data, tb[k]), make_batch(data, vb[k]), tau);
        info.epoch = e;
        if (observer) observer(info);
        s.train_acc += info.train_acc;
        s.val_acc += info.val_acc;
        s.perf_loss += info.perf_loss;
        s.res += info.res;
        s.loss += info.loss;
      }
      const double n = static_cast<double>(steps);
      s.train_acc /= n;
      s.val_acc /= n;
      s.perf_loss /= n;
      s.res /= n;
      s.loss /= n;
      report.epochs.push_back(s);
    }
    snapshot();
    const DerivedDesign derived = derive_architecture(*state);
    report.design = retune_impl(derived, state->space(), device, config, state->perf_norm());
  } catch (const NumericError& err) {
    snapshot();
    report.status = "numeric_abort";
    report.message = err.what();
  } catch (const Infeasible& err) {
    report.status = "infeasible";
    report.message = err.what();
  }
  return report;
}

}  // namespace edd
