// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <edd/alloc.hpp>
#include <edd/io.hpp>
#include <edd/oracle.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace {

using namespace edd;
using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, bool pass, const std::string& what, double seconds) {
  std::printf("%s criterion %d: %s [%.1f s]\n", pass ? "PASS" : "FAIL", id, what.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void run(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity of the relaxed objective.

struct Objective {
  SpaceConfig space;
  DeviceModel device;
  CostHyperparams hyper;
  Supernet* net;
  Parameter<double>* pf;
  double tau, acc, norm;

  double eval(bool backward) const {
    Tape<double> tape;
    const ArchSample a = net->sample(tape, tau, nullptr);
    Var<double> pfv;
    if (device.is_fpga()) pfv = tape.leaf(*pf);
    const RelaxedCost<double> c =
        relaxed_cost(tape, space, device, a.soft, device.is_fpga() ? &pfv : nullptr, hyper.alpha, norm);
    Var<double> l = total_loss(tape.constant(acc), c.perf_loss, c.res, hyper, device);
    if (backward) tape.backward(l);
    return l.item();
  }
};

void criterion_gradients() {
  const auto t0 = Clock::now();
  const SpaceConfig base;
  GpuLatencyTable table;
  for (int m = 0; m < base.num_ops(); ++m) {
    for (int q = 0; q < base.num_quant(); ++q) table.set(m, base.quant[q], 1.0 + 0.4 * m + 0.3 * q);
  }
  Rng rng(2718);
  double worst = 0, strict = 0;
  int cases = 0;
  for (DeviceKind kind : {DeviceKind::fpga_recursive, DeviceKind::fpga_pipelined, DeviceKind::gpu_table}) {
    for (int k = 0; k < 20; ++k) {
      DeviceModel device;
      device.kind = kind;
      device.res_ub = 100 + 900 * rng.uniform();
      if (kind == DeviceKind::gpu_table) device = DeviceModel::gpu(table);
      const SpaceConfig space = effective_space(base, device);
      Supernet net(space, 1);
      for (Index j = 0; j < net.theta().value.size(); ++j) net.theta().value[j] = rng.normal();
      for (Index j = 0; j < net.phi().value.size(); ++j) net.phi().value[j] = rng.normal();
      Parameter<double> pf("pf", Tensor<double>(device.is_fpga() ? pf_shape(space, device) : Shape{0}));
      for (Index j = 0; j < pf.value.size(); ++j) pf.value[j] = 1 + 6 * rng.uniform();
      Objective obj{space, device, {}, &net, &pf, 0.5 + 4.5 * rng.uniform(), 0.3 + 1.5 * rng.uniform(),
                    device.is_fpga() ? initial_perf_norm(space, device) : 1.0};
      obj.hyper.alpha = 0.5 + rng.uniform();
      obj.hyper.beta = 0.5 + rng.uniform();

      net.theta().zero_grad();
      net.phi().zero_grad();
      pf.zero_grad();
      obj.eval(true);
      const double h = 1e-6;
      for (Parameter<double>* p : {&net.theta(), &net.phi(), &pf}) {
        for (Index j = 0; j < p->value.size(); ++j) {
          const double saved = p->value[j];
          p->value[j] = saved + h;
          const double up = obj.eval(false);
          p->value[j] = saved - h;
          const double down = obj.eval(false);
          p->value[j] = saved;
          const double fd = (up - down) / (2 * h);
          const double ad = p->grad[j];
          // Same denominator as finite_diff_check; pure relative error is
          // reported alongside.
          worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
          strict = std::max(strict, std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-300}));
        }
      }
      ++cases;
    }
  }
  const double secs = since(t0);
  report(1, worst < 1e-4 && secs < 120,
         "relaxed objective vs central differences on theta, phi, pf over " + std::to_string(cases) +
             " configurations: max err/max(1,|fd|) " + fmt("%.3g", worst) + " (< 1e-4); pure relative " +
             fmt("%.3g", strict),
         secs);
}

// ---------------------------------------------------------------------------
// 2. Cost-model values computed by hand.

void criterion_cost_values() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  auto check = [&](const char* name, double got, double want) {
    if (got != want) {
      ok = false;
      detail += std::string(" ") + name + "=" + format_double(got);
    }
  };
  const LayerGeometry conv{LayerKind::conv, 1, 8, 8, 16, 32};
  const LayerGeometry dw{LayerKind::dwconv, 3, 8, 8, 16, 16};
  const LayerGeometry other{LayerKind::other, 1, 8, 8, 16, 16};
  check("conv", layer_latency_q(conv, 4.0, 8), 16384.0);
  check("dwconv", layer_latency_q(dw, 4.0, 8), 4608.0);
  check("other", layer_latency_q(other, 4.0, 8), 512.0);
  {
    Tape<double> tape;
    Var<double> pf = tape.constant(4.0);
    check("conv(tape)", layer_latency_q(conv, pf, 8).item(), 16384.0);
    check("dwconv(tape)", layer_latency_q(dw, pf, 8).item(), 4608.0);
    check("other(tape)", layer_latency_q(other, pf, 8).item(), 512.0);
    check("res16(tape)", op_resource_q(tape.constant(6.0), 16).item(), 64.0);
  }
  check("res16", op_resource_q(6.0, 16), 64.0);
  check("res8", op_resource_q(4.0, 8), 8.0);
  for (double pf : {0.0, 3.5, 11.0}) check("res4", op_resource_q(pf, 4), 0.0);
  const std::vector<std::pair<int, double>> table{{3, 0.0}, {4, 0.0}, {5, 0.5}, {8, 0.5}, {9, 1.0}, {16, 1.0}};
  for (const auto& [q, want] : table) check(("psi" + std::to_string(q)).c_str(), psi(q), want);
  const double secs = since(t0);
  report(2, ok && secs < 1,
         "layer latencies 16384/4608/512, DSPs 64/8/0 and the bit-width table match exactly" +
             (ok ? std::string() : " (mismatch:" + detail + ")"),
         secs);
}

// ---------------------------------------------------------------------------
// 3. Relaxed model at one-hot vertices vs exact evaluation.

SpaceConfig vertex_space() {
  SpaceConfig s;
  s.channels = {8, 16};
  s.strides = {1, 2};
  s.ops = {{3, 1}, {3, 2}, {5, 2}};
  s.quant.bits = {8, 16};
  return s;
}

void criterion_vertices() {
  const auto t0 = Clock::now();
  const SpaceConfig base = vertex_space();
  GpuLatencyTable table;
  for (int m = 0; m < 3; ++m) {
    table.set(m, 8, 1.0 + m);
    table.set(m, 16, 1.7 + m);
  }
  Rng rng(31);
  double worst = 0;
  int checked = 0;
  for (const DeviceModel& device :
       {DeviceModel::fpga_recursive(64), DeviceModel::fpga_pipelined(64), DeviceModel::gpu(table)}) {
    const SpaceConfig s = effective_space(base, device);
    const double norm = initial_perf_norm(s, device);
    for (const Path& p : enumerate_configs(s)) {
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> layout(static_cast<std::size_t>(device.is_fpga() ? numel(pf_shape(s, device)) : 0));
        for (double& x : layout) x = 7 * rng.uniform();
        const double acc = 0.2 + rng.uniform();
        Tape<double> tape;
        RelaxedWeights<double> w;
        for (const auto& c : p) {
          Tensor<double> th(Shape{s.num_ops()});
          th[c.op] = 1;
          w.theta.push_back(tape.constant(th));
          std::vector<Var<double>> row;
          for (int m = 0; m < s.num_ops(); ++m) {
            Tensor<double> ph(Shape{s.num_quant()});
            ph[c.quant] = 1;
            row.push_back(tape.constant(ph));
          }
          w.phi.push_back(row);
        }
        Tensor<double> pft(device.is_fpga() ? pf_shape(s, device) : Shape{0});
        for (std::size_t k = 0; k < layout.size(); ++k) pft[static_cast<Index>(k)] = layout[k];
        Var<double> pf = tape.constant(pft);
        const RelaxedCost<double> r =
            relaxed_cost(tape, s, device, w, device.is_fpga() ? &pf : nullptr, 1.0, norm);
        const double lr = total_loss(tape.constant(acc), r.perf_loss, r.res, {}, device).item();
        const ExactCost e = exact_cost(s, device, {}, norm, p, layout);
        const double le = exact_objective(acc, e, {}, device);
        worst = std::max({worst, std::abs(r.perf_loss.item() - e.perf_loss), std::abs(r.res.item() - e.res),
                          std::abs(lr - le)});
        ++checked;
      }
    }
  }
  const double secs = since(t0);
  report(3, worst <= 1e-9 && secs < 60,
         "relaxed vs exact at " + std::to_string(checked) +
             " one-hot vertices on N=2, M=3, Q=2 (three device models): max abs diff " + fmt("%.3g", worst) +
             " (<= 1e-9)",
         secs);
}

// ---------------------------------------------------------------------------
// 4. Recovery of the brute-force optimum.

void criterion_oracle(const RunConfig& cfg, const Dataset& data, const Split& parts) {
  const auto t0 = Clock::now();
  const OracleRanking ranking = rank_configs(cfg.space, cfg.device, cfg.search, cfg.oracle, data, parts,
                                             cfg.enumeration_cap, cfg.threads);
  std::string ranks;
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SearchConfig sc = cfg.search;
    sc.seed = seed;
    const SearchReport r = run_search(cfg.space, cfg.device, sc, data, parts);
    int rank = 0;
    if (r.design) rank = ranking.rank_of(r.design->path(effective_space(cfg.space, cfg.device)));
    hits += rank >= 1 && rank <= 2;
    ranks += (seed > 1 ? "," : "") + (rank ? std::to_string(rank) : r.status);
  }
  const double secs = since(t0);
  report(4, ranking.entries.size() + ranking.excluded.size() == 36 && hits >= 8 && secs < 3600,
         "derived design in oracle top-2 of 36 in " + std::to_string(hits) + "/10 seeds (>= 8); ranks " + ranks,
         secs);
}

// ---------------------------------------------------------------------------
// 5. Search progress and feasibility on the default configuration.

std::vector<SearchReport> criterion_progress(const RunConfig& cfg, const Dataset& data, const Split& parts) {
  const auto t0 = Clock::now();
  std::vector<SearchReport> out;
  int improved = 0, feasible = 0;
  double slowest = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SearchConfig sc = cfg.search;
    sc.seed = seed;
    const auto ts = Clock::now();
    SearchReport r = run_search(cfg.space, cfg.device, sc, data, parts);
    slowest = std::max(slowest, since(ts));
    if (r.status == "ok" && r.epochs.size() >= 2 && r.epochs.back().loss < r.epochs.front().loss) ++improved;
    if (r.design && r.design->res <= cfg.device.res_ub) ++feasible;
    out.push_back(std::move(r));
  }
  report(5, improved == 10 && feasible == 10 && slowest < 1800,
         "default config: last-epoch mean L below first in " + std::to_string(improved) +
             "/10 seeds, retuned RES <= RES_ub in " + std::to_string(feasible) + "/10; slowest seed " +
             fmt("%.1f", slowest) + " s (< 1800)",
         since(t0));
  return out;
}

// ---------------------------------------------------------------------------
// 6. Device-mode contracts.

void criterion_device_modes(const RunConfig& cfg, const Dataset& data, const Split& parts) {
  const auto t0 = Clock::now();
  SpaceConfig space = cfg.space;
  std::string detail;

  // GPU: no gradient reaches any parallel factor, one global bit-width.
  GpuLatencyTable table;
  for (int m = 0; m < space.num_ops(); ++m) {
    for (int q = 0; q < space.num_quant(); ++q) table.set(m, space.quant[q], 1.0 + 0.5 * m + 0.25 * q);
  }
  const DeviceModel gpu = DeviceModel::gpu(table);
  bool gpu_ok = true;
  {
    const SpaceConfig s = effective_space(space, gpu);
    Supernet net(s, 3);
    Rng rng(4);
    for (Index j = 0; j < net.theta().value.size(); ++j) net.theta().value[j] = rng.normal();
    Parameter<double> pf("pf", Tensor<double>::constant({s.num_ops()}, 3.0));
    Tape<double> tape;
    const ArchSample a = net.sample(tape, 1.0, &rng);
    Var<double> pfv = tape.leaf(pf);
    const RelaxedCost<double> c = relaxed_cost(tape, s, gpu, a.soft, &pfv, 1.0, 1.0);
    tape.backward(total_loss(tape.constant(1.2), c.perf_loss, c.res, {}, gpu));
    gpu_ok = gpu_ok && pf.grad.values().cwiseAbs().maxCoeff() == 0.0;
  }
  SearchConfig short_run = cfg.search;
  short_run.epochs = 3;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    short_run.seed = seed;
    const SearchReport r = run_search(space, gpu, short_run, data, parts);
    gpu_ok = gpu_ok && r.design && r.pf.empty();
    if (r.design) {
      for (const auto& b : r.design->blocks) gpu_ok = gpu_ok && b.pf == 0 && b.bits == r.design->blocks[0].bits;
    }
  }
  if (!gpu_ok) detail += " gpu";

  // Pipelined: alpha max(p) <= perf_loss <= alpha (max(p) + log N) on every step.
  bool lse_ok = true;
  long lse_checks = 0;
  {
    const DeviceModel pipe = DeviceModel::fpga_pipelined(cfg.device.res_ub);
    const double alpha = short_run.hyper.alpha, log_n = std::log(static_cast<double>(space.num_blocks()));
    const SearchReport r = run_search(space, pipe, short_run, data, parts, [&](const StepInfo& s) {
      const double mx = *std::max_element(s.block_perf.begin(), s.block_perf.end());
      const double tol = 1e-12 * std::max(1.0, s.perf_loss);
      lse_ok = lse_ok && s.perf_loss >= alpha * mx - tol && s.perf_loss <= alpha * (mx + log_n) + tol;
      ++lse_checks;
    });
    lse_ok = lse_ok && r.status == "ok" && lse_checks > 0;
  }
  if (!lse_ok) detail += " lse";

  // Recursive: shared RES never exceeds the unshared sum of the same state.
  bool share_ok = true;
  long share_checks = 0;
  {
    const DeviceModel rec = DeviceModel::fpga_recursive(cfg.device.res_ub);
    SearchConfig sc = short_run;
    sc.seed = 5;
    SearchState st(space, rec, sc);
    Rng rng(6);
    auto compare_once = [&](Rng* noise) {
      Tape<double> tape;
      const ArchSample a = st.net().sample(tape, 1.0, noise);
      Var<double> pf = tape.constant(st.pf().value);
      const RelaxedCost<double> c = relaxed_cost(tape, st.space(), rec, a.soft, &pf, 1.0, st.perf_norm());
      double unshared = 0;
      for (std::size_t i = 0; i < c.op_costs.size(); ++i) {
        for (std::size_t m = 0; m < c.op_costs[i].size(); ++m) {
          unshared += a.soft.theta[i][static_cast<Index>(m)] * c.op_costs[i][m].res.item();
        }
      }
      share_ok = share_ok && c.res.item() <= unshared * (1 + 1e-12);
      ++share_checks;
    };
    for (int e = 0; e < 2; ++e) {
      for (const auto& idx : shuffled_batches(parts.train, sc.batch_size, st.rng())) {
        const Batch b = make_batch(data, idx);
        st.bilevel_step(b, b, tau_at(sc, e));
        compare_once(nullptr);
        compare_once(&rng);
      }
    }
    for (int k = 0; k < 200; ++k) {
      for (Index j = 0; j < st.net().theta().value.size(); ++j) st.net().theta().value[j] = 2 * rng.normal();
      for (Index j = 0; j < st.pf().value.size(); ++j) st.pf().value[j] = 9 * rng.uniform();
      compare_once(k % 2 ? &rng : nullptr);
    }
  }
  if (!share_ok) detail += " sharing";

  report(6, gpu_ok && lse_ok && share_ok,
         "gpu pf gradient identically 0 and one global bit-width; LSE bounds held on " +
             std::to_string(lse_checks) + " pipelined steps; shared <= unshared RES on " +
             std::to_string(share_checks) + " recursive states" + (detail.empty() ? "" : " (failed:" + detail + ")"),
         since(t0));
}

// ---------------------------------------------------------------------------
// 7. Retrained design quality.

double baseline_accuracy(const Dataset& data, const Split& parts, const TrainSettings& t) {
  Rng rng(t.seed);
  auto he = [&](Shape s, double fan_in) {
    Tensor<double> w(std::move(s));
    for (Index j = 0; j < w.size(); ++j) w[j] = rng.normal() * std::sqrt(2.0 / fan_in);
    return w;
  };
  const int k = data.spec.num_classes;
  std::vector<Parameter<double>> ps{{"c1", he({8, data.spec.channels, 3, 3}, 9.0 * data.spec.channels)},
                                    {"c2", he({16, 8, 3, 3}, 72)},
                                    {"w", he({16, k}, 16)},
                                    {"b", Tensor<double>::zeros({k})}};
  std::vector<Parameter<double>*> ptrs;
  for (auto& p : ps) ptrs.push_back(&p);
  SgdMomentum opt(ptrs, t.lr, t.momentum, t.grad_clip);
  auto forward = [&](Tape<double>& tape, const Tensor<double>& x, bool train) {
    std::vector<Var<double>> v;
    for (auto& p : ps) v.push_back(train ? tape.leaf(p) : tape.constant(p.value));
    Var<double> h = relu(conv2d(tape.constant(x), v[0], 1));
    h = relu(conv2d(h, v[1], 2));
    return add_rowwise(matmul(global_avg_pool(h), v[2]), v[3]);
  };
  for (int e = 0; e < t.epochs; ++e) {
    for (const auto& idx : shuffled_batches(parts.train, t.batch_size, rng)) {
      const Batch b = make_batch(data, idx);
      opt.zero_grad();
      Tape<double> tape;
      tape.backward(softmax_xent(forward(tape, b.images, true), b.labels));
      opt.step();
    }
  }
  const Batch b = make_batch(data, parts.test);
  Tape<double> tape;
  const Tensor<double> logits = forward(tape, b.images, false).value();
  int correct = 0;
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    const Index row = static_cast<Index>(i) * k;
    Index best = 0;
    for (Index j = 1; j < k; ++j) best = logits[row + j] > logits[row + best] ? j : best;
    correct += best == b.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(b.labels.size());
}

void criterion_quality(const RunConfig& cfg, const Dataset& data, const Split& parts, const SearchReport& found) {
  const auto t0 = Clock::now();
  if (!found.design) {
    report(7, false, "no derived design to retrain (status " + found.status + ")", since(t0));
    return;
  }
  const SpaceConfig space = effective_space(cfg.space, cfg.device);
  const Path path = found.design->path(space);
  Supernet net(space, cfg.retrain.seed);
  train_path(net, path, data, parts.train, cfg.retrain);
  const double acc = evaluate_path(net, path, data, parts.test).accuracy;
  const double base = baseline_accuracy(data, parts, cfg.retrain);
  report(7, acc >= 0.90 && base >= 0.90,
         "retrained derived design test accuracy " + fmt("%.4f", acc) + ", 2-layer baseline " + fmt("%.4f", base) +
             " (both >= 0.90)",
         since(t0));
}

// ---------------------------------------------------------------------------
// 8. Bytewise determinism of the command-line run.

void criterion_determinism(const std::string& config_path) {
  const auto t0 = Clock::now();
  const auto root = std::filesystem::temp_directory_path() / "edd-acceptance-determinism";
  std::filesystem::remove_all(root);
  int status = 0;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("EDD_OUTPUT_DIR='") + (root / run).string() + "' '" + EDD_CLI +
                            "' search -c '" + config_path + "' --seed 3 > /dev/null 2>&1";
    status |= std::system(cmd.c_str());
  }
  bool same = status == 0;
  std::string detail;
  for (const char* f : {"report-seed3.json", "design-seed3.json", "curves-seed3.csv"}) {
    const auto a = root / "a" / f, b = root / "b" / f;
    if (!std::filesystem::exists(a) || !std::filesystem::exists(b) ||
        read_file(a.string()) != read_file(b.string())) {
      same = false;
      detail += std::string(" ") + f;
    }
  }
  std::filesystem::remove_all(root);
  report(8, same,
         "two consecutive CLI runs with seed 3 wrote identical report, design and curve files" +
             (detail.empty() ? std::string() : " (differs:" + detail + ")"),
         since(t0));
}

}  // namespace

int main() {
  tune_allocator();
  const std::string config_dir = EDD_CONFIG_DIR;
  const RunConfig acceptance = load_config(config_dir + "/acceptance.json");
  const RunConfig desk = load_config(config_dir + "/default.json");

  run(1, criterion_gradients);
  run(2, criterion_cost_values);
  run(3, criterion_vertices);

  const Dataset acc_data = cached_dataset(acceptance.data, acceptance.cache_dir);
  const Split acc_parts = split(acc_data, acceptance.split, acceptance.split_seed);
  run(4, [&] { criterion_oracle(acceptance, acc_data, acc_parts); });

  const Dataset data = cached_dataset(desk.data, desk.cache_dir);
  const Split parts = split(data, desk.split, desk.split_seed);
  std::vector<SearchReport> desk_reports;
  run(5, [&] { desk_reports = criterion_progress(desk, data, parts); });
  run(6, [&] { criterion_device_modes(desk, data, parts); });
  run(7, [&] {
    criterion_quality(desk, data, parts, desk_reports.empty() ? SearchReport{"missing"} : desk_reports.front());
  });
  run(8, [&] { criterion_determinism(config_dir + "/acceptance.json"); });

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
