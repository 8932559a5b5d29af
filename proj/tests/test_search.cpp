#include <edd/search.hpp>

#include <gtest/gtest.h>

#include <cmath>

namespace edd {
namespace {

SpaceConfig tiny_space() {
  SpaceConfig s;
  s.input_height = s.input_width = 8;
  s.stem_channels = 4;
  s.channels = {4, 8};
  s.strides = {1, 2};
  s.ops = op_menu({3, 5}, {1, 2});
  s.quant.bits = {4, 8, 16};
  return s;
}

GpuLatencyTable table_for(int ops, const std::vector<int>& bits) {
  GpuLatencyTable t;
  for (int m = 0; m < ops; ++m) {
    for (std::size_t q = 0; q < bits.size(); ++q) t.set(m, bits[q], 1.0 + m + 0.5 * static_cast<double>(q));
  }
  return t;
}

struct Fixture {
  Dataset data;
  Split parts;
};

Fixture tiny_data(const SpaceConfig& s, int per_class = 16) {
  DatasetSpec d;
  d.num_classes = s.num_classes;
  d.height = s.input_height;
  d.width = s.input_width;
  d.channels = s.input_channels;
  d.samples_per_class = per_class;
  Fixture f{generate_dataset(d), {}};
  f.parts = split(f.data, {0.4, 0.4, 0.2}, 1);
  return f;
}

std::vector<Tensor<double>> snapshot(const std::vector<Parameter<double>*>& ps) {
  std::vector<Tensor<double>> out;
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

TEST(SearchConfig, Validation) {
  SearchConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SearchConfig{};
  c.tau_end = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SearchConfig{};
  c.lr_arch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Schedule, ExponentialAnneal) {
  SearchConfig c;
  c.epochs = 10;
  EXPECT_DOUBLE_EQ(tau_at(c, 0), 5.0);
  EXPECT_NEAR(tau_at(c, 9), 0.5, 1e-12);
  for (int e = 1; e < 10; ++e) {
    EXPECT_LT(tau_at(c, e), tau_at(c, e - 1));
    EXPECT_NEAR(tau_at(c, e) / tau_at(c, e - 1), std::pow(0.1, 1.0 / 9), 1e-12);
  }
  c.epochs = 1;
  EXPECT_DOUBLE_EQ(tau_at(c, 0), 5.0);
}

TEST(Initialize, ParallelFactorsAndUniformLogits) {
  SpaceConfig s;
  s.ops = op_menu({3, 5, 7}, {4, 5, 6});
  SearchState rec(s, DeviceModel::fpga_recursive(900), SearchConfig{});
  ASSERT_EQ(rec.pf().value.shape(), (Shape{9}));
  for (Index j = 0; j < 9; ++j) EXPECT_NEAR(rec.pf().value[j], std::log2(100.0), 1e-12);
  EXPECT_EQ(rec.net().theta().value.values().norm(), 0.0);
  EXPECT_EQ(rec.net().phi().value.values().norm(), 0.0);

  s.channels.assign(20, 16);
  s.strides.assign(20, 1);
  SearchState pipe(s, DeviceModel::fpga_pipelined(900), SearchConfig{});
  ASSERT_EQ(pipe.pf().value.shape(), (Shape{20, 9}));
  EXPECT_NEAR(pipe.pf().value[0], std::log2(5.0), 1e-12);

  SpaceConfig g = tiny_space();
  SearchState gpu(g, DeviceModel::gpu(table_for(4, g.quant.bits)), SearchConfig{});
  EXPECT_EQ(gpu.pf().value.size(), 0);
  EXPECT_TRUE(gpu.space().shared_precision);
}

TEST(Initialize, BudgetTooSmallForStart) {
  const SpaceConfig s = tiny_space();
  EXPECT_THROW(SearchState(s, DeviceModel::fpga_recursive(4), SearchConfig{}), ConfigError);
  EXPECT_THROW(SearchState(s, DeviceModel::fpga_pipelined(8), SearchConfig{}), ConfigError);
  EXPECT_THROW(SearchState(s, DeviceModel::gpu(GpuLatencyTable{}), SearchConfig{}), Error);
}

TEST(Bilevel, PhaseSeparation) {
  const SpaceConfig s = tiny_space();
  const Fixture f = tiny_data(s);
  const std::vector<DeviceModel> devices{DeviceModel::fpga_recursive(200),
                                         DeviceModel::fpga_pipelined(200),
                                         DeviceModel::gpu(table_for(4, s.quant.bits))};
  for (const auto& device : devices) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      SearchConfig c;
      c.seed = seed;
      SearchState st(s, device, c);
      Rng rng(seed);
      for (int k = 0; k < 3; ++k) {
        const auto tb = shuffled_batches(f.parts.train, 8, rng);
        const auto vb = shuffled_batches(f.parts.val, 8, rng);
        const Batch train = make_batch(f.data, tb[0]), val = make_batch(f.data, vb[0]);

        const Tensor<double> theta = st.net().theta().value, phi = st.net().phi().value, pf = st.pf().value;
        const auto w_before = snapshot(st.net().weights());
        st.weight_step(train, 2.0);
        ASSERT_EQ(st.net().theta().value, theta) << to_string(device.kind);
        ASSERT_EQ(st.net().phi().value, phi);
        ASSERT_EQ(st.pf().value, pf);
        ASSERT_NE(snapshot(st.net().weights()), w_before);

        const auto w_mid = snapshot(st.net().weights());
        st.arch_step(val, 2.0);
        ASSERT_EQ(snapshot(st.net().weights()), w_mid) << to_string(device.kind);
        ASSERT_FALSE(st.net().theta().value == theta);
      }
    }
  }
}

TEST(Bilevel, GpuModeLeavesNoParallelFactorAndOneWidth) {
  const SpaceConfig s = tiny_space();
  const Fixture f = tiny_data(s);
  SearchState st(s, DeviceModel::gpu(table_for(4, s.quant.bits)), SearchConfig{});
  const Batch b = make_batch(f.data, f.parts.val);
  for (int k = 0; k < 5; ++k) st.arch_step(b, 1.0);
  const DerivedDesign d = derive_architecture(st);
  for (const auto& blk : d.blocks) {
    EXPECT_EQ(blk.pf, 0);
    EXPECT_EQ(blk.bits, d.blocks.front().bits);
  }
}

TEST(Bilevel, DegenerateGpuSpaceKeepsTheOnlyChoice) {
  SpaceConfig s = tiny_space();
  s.ops = {{3, 1}};
  s.quant.bits = {8};
  const Fixture f = tiny_data(s);
  SearchState st(s, DeviceModel::gpu(table_for(1, {8})), SearchConfig{});
  const Batch b = make_batch(f.data, f.parts.val);
  for (int k = 0; k < 3; ++k) st.bilevel_step(b, b, 1.0);
  EXPECT_EQ(derive_architecture(st).path(st.space()), (Path{{0, 0}, {0, 0}}));
}

TEST(Bilevel, PenaltyPressureLowersParallelFactors) {
  SpaceConfig s = tiny_space();
  s.quant.bits = {16};
  const Fixture f = tiny_data(s);
  SearchConfig c;
  c.hyper.alpha = 0.01;
  c.hyper.beta = 10;
  c.lr_pf = 0.05;
  c.pf_max = 10;
  SearchState st(s, DeviceModel::fpga_recursive(20), c);
  for (Index j = 0; j < st.pf().value.size(); ++j) st.pf().value[j] = 6.0;  // 64 DSPs per IP
  const Batch b = make_batch(f.data, f.parts.val);
  double prev = st.pf().value.values().sum();
  for (int k = 0; k < 50; ++k) {
    st.arch_step(b, 1.0);
    const double now = st.pf().value.values().sum();
    ASSERT_LT(now, prev) << "step " << k;
    prev = now;
  }
}

TEST(Bilevel, PrefersTheFasterOfTwoIdenticalOps) {
  SpaceConfig s = tiny_space();
  s.channels = {8};
  s.strides = {1};
  s.ops = {{3, 2}, {3, 2}};
  s.quant.bits = {8, 16};
  GpuLatencyTable t;
  t.set(0, 8, 1.0);
  t.set(0, 16, 1.5);
  t.set(1, 8, 2.0);
  t.set(1, 16, 3.0);
  const Fixture f = tiny_data(s);
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SearchConfig c;
    c.seed = seed;
    SearchState st(s, DeviceModel::gpu(t), c);
    auto w = st.net().weights();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const std::string& name = w[k]->name;
      const auto pos = name.find(".op1.");
      if (pos == std::string::npos) continue;
      const std::string twin = name.substr(0, pos) + ".op0." + name.substr(pos + 5);
      for (const auto* o : w) {
        if (o->name == twin) w[k]->value = o->value;
      }
    }
    Rng rng(seed + 50);
    for (int k = 0; k < 60; ++k) {
      const auto vb = shuffled_batches(f.parts.val, 16, rng);
      st.arch_step(make_batch(f.data, vb[0]), 1.0);
    }
    wins += st.net().theta().value[0] > st.net().theta().value[1];
  }
  EXPECT_GE(wins, 9);
}

TEST(Derive, SaturatedLogitsTiesAndPurity) {
  const SpaceConfig s = tiny_space();
  SearchState st(s, DeviceModel::fpga_recursive(200), SearchConfig{});
  auto& th = st.net().theta().value;
  auto& ph = st.net().phi().value;
  th[0 * 4 + 3] = 40;
  ph[(0 * 4 + 3) * 3 + 1] = 40;
  // block 1: exact tie between ops 1 and 2, phi tie everywhere
  th[1 * 4 + 1] = 2;
  th[1 * 4 + 2] = 2;
  const DerivedDesign a = derive_architecture(st);
  EXPECT_EQ(a.path(s), (Path{{3, 1}, {1, 0}}));
  EXPECT_EQ(derive_architecture(st), a);
  for (const auto& b : a.blocks) EXPECT_EQ(b.pf, static_cast<int>(std::lround(std::log2(50.0))));
}

TEST(Design, HardwareResourceAndLatencyByHand) {
  const SpaceConfig s = tiny_space();
  const Path p{{0, 1}, {0, 2}};
  const DerivedDesign rec = make_design(s, DeviceModel::fpga_recursive(1000), p, {3, 3}, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(rec.res, 8.0);  // one shared IP sized for its 16-bit user
  const DerivedDesign pipe = make_design(s, DeviceModel::fpga_pipelined(1000), p, {3, 2}, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(pipe.res, 0.5 * 8 + 1.0 * 4);
  const double l0 = 8 * op_work(op_spec(s, 0, 0)) / 8, l1 = 16 * op_work(op_spec(s, 1, 0)) / 4;
  EXPECT_DOUBLE_EQ(pipe.blocks[0].latency, l0);
  EXPECT_DOUBLE_EQ(pipe.blocks[1].latency, l1);
  EXPECT_DOUBLE_EQ(pipe.latency, l0 + l1);
  EXPECT_DOUBLE_EQ(pipe.bottleneck, std::max(l0, l1));
  const DerivedDesign four = make_design(s, DeviceModel::fpga_recursive(1000), {{1, 0}, {2, 0}}, {7, 9}, 1.0, 1.0);
  EXPECT_EQ(four.res, 0.0);
}

TEST(Design, RejectsInconsistentDesigns) {
  const SpaceConfig s = tiny_space();
  const DeviceModel rec = DeviceModel::fpga_recursive(1000);
  DerivedDesign d = make_design(s, rec, {{0, 1}, {0, 1}}, {2, 2}, 1.0, 1.0);
  d.blocks[1].pf = 3;
  EXPECT_THROW(evaluate_design(d, s, rec, 1.0, 1.0), Error);
  d.blocks[1].pf = 2;
  d.blocks[1].bits = 12;
  try {
    evaluate_design(d, s, rec, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(d.path(s), Error);
  EXPECT_THROW(make_design(s, DeviceModel::gpu(table_for(4, s.quant.bits)), {{0, 0}, {0, 0}}, {1, 0}, 1, 1),
               Error);
}

TEST(Retune, InvertsTheResourceModel) {
  SpaceConfig s = tiny_space();
  s.channels = {8};
  s.strides = {1};
  s.ops = {{3, 2}};
  s.quant.bits = {16};
  const DeviceModel dev = DeviceModel::fpga_recursive(32);
  SearchConfig c;
  const double norm = initial_perf_norm(s, dev);
  const DerivedDesign d = retune_impl(make_design(s, dev, {{0, 0}}, {0}, 1.0, norm), s, dev, c, norm);
  EXPECT_EQ(d.blocks[0].pf, 5);
  EXPECT_DOUBLE_EQ(d.res, 32.0);

  s.quant.bits = {8};
  c.pf_max = 5;
  const DeviceModel half = DeviceModel::fpga_recursive(16);
  const double n8 = initial_perf_norm(s, half);
  EXPECT_EQ(retune_impl(make_design(s, half, {{0, 0}}, {0}, 1.0, n8), s, half, c, n8).blocks[0].pf, 5);
}

TEST(Retune, RepairsAndReportsInfeasibility) {
  const SpaceConfig s = tiny_space();
  const DeviceModel dev = DeviceModel::fpga_recursive(1.5);
  SearchConfig c;
  c.pf_max = 8;
  const DerivedDesign d = make_design(s, dev, {{0, 2}, {1, 2}}, {0, 0}, 1.0, 1.0);
  EXPECT_THROW(retune_impl(d, s, dev, c, 1.0), Infeasible);

  const DeviceModel ok = DeviceModel::fpga_recursive(100);
  const DerivedDesign big = make_design(s, ok, {{0, 2}, {1, 1}}, {8, 8}, 1.0, 1.0);
  const DerivedDesign r = retune_impl(big, s, ok, c, 1.0);
  EXPECT_LE(r.res, 100.0);
}

TEST(Retune, DoublingBudgetNeverSlowsTheDesign) {
  const SpaceConfig s = tiny_space();
  Rng gen(77);
  for (int trial = 0; trial < 30; ++trial) {
    const bool pipelined = trial % 2 == 1;
    const double ub = 20 + 200 * gen.uniform();
    const DeviceModel a = pipelined ? DeviceModel::fpga_pipelined(ub) : DeviceModel::fpga_recursive(ub);
    const DeviceModel b = pipelined ? DeviceModel::fpga_pipelined(2 * ub) : DeviceModel::fpga_recursive(2 * ub);
    Path p;
    for (int i = 0; i < s.num_blocks(); ++i) {
      p.push_back({static_cast<int>(gen.below(4)), static_cast<int>(gen.below(3))});
    }
    SearchConfig c;
    c.pf_max = 12;
    const double norm = initial_perf_norm(s, a);
    const std::vector<int> zero(p.size(), 0);
    const DerivedDesign ra = retune_impl(make_design(s, a, p, zero, 1.0, norm), s, a, c, norm);
    const DerivedDesign rb = retune_impl(make_design(s, b, p, zero, 1.0, norm), s, b, c, norm);
    EXPECT_LE(ra.res, ub);
    EXPECT_LE(rb.res, 2 * ub);
    EXPECT_LE(rb.perf_loss, ra.perf_loss + 1e-12) << "trial " << trial;
  }
}

TEST(Retune, LowPrecisionIsCappedNotUnbounded) {
  const SpaceConfig s = tiny_space();
  const DeviceModel dev = DeviceModel::fpga_recursive(64);
  SearchConfig c;
  c.pf_max = 7.5;
  const DerivedDesign d = retune_impl(make_design(s, dev, {{0, 0}, {2, 0}}, {0, 0}, 1.0, 1.0), s, dev, c, 1.0);
  EXPECT_EQ(d.res, 0.0);
  for (const auto& b : d.blocks) EXPECT_EQ(b.pf, 7);
  c.pf_max = 0;
  const DerivedDesign e = retune_impl(make_design(s, dev, {{0, 0}, {2, 0}}, {0, 0}, 1.0, 1.0), s, dev, c, 1.0);
  for (const auto& b : e.blocks) EXPECT_EQ(b.pf, 6);
}

TEST(RunSearch, DeterministicAndFeasible) {
  const SpaceConfig s = tiny_space();
  const Fixture f = tiny_data(s);
  SearchConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  const DeviceModel dev = DeviceModel::fpga_pipelined(100);
  const SearchReport a = run_search(s, dev, c, f.data, f.parts);
  const SearchReport b = run_search(s, dev, c, f.data, f.parts);
  ASSERT_EQ(a.status, "ok") << a.message;
  EXPECT_EQ(a, b);
  ASSERT_TRUE(a.design);
  EXPECT_LE(a.design->res, 100.0);
  EXPECT_EQ(a.epochs.size(), 2u);
  c.seed = 2;
  EXPECT_NE(run_search(s, dev, c, f.data, f.parts).theta, a.theta);
}

TEST(RunSearch, DivergenceIsReportedNotThrown) {
  const SpaceConfig s = tiny_space();
  const Fixture f = tiny_data(s);
  SearchConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr_weights = 1e6;
  c.grad_clip = 0;
  c.momentum = 0;
  const SearchReport r = run_search(s, DeviceModel::fpga_recursive(100), c, f.data, f.parts);
  EXPECT_EQ(r.status, "numeric_abort");
  EXPECT_FALSE(r.message.empty());
  EXPECT_FALSE(r.design);
  EXPECT_FALSE(r.theta.empty());
}

}  // namespace
}  // namespace edd
