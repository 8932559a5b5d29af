#include <edd/data.hpp>
#include <edd/ops.hpp>
#include <edd/optim.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace edd {
namespace {

std::vector<int> per_class(const Dataset& d, const std::vector<int>& idx) {
  std::vector<int> c(static_cast<std::size_t>(d.spec.num_classes), 0);
  for (int i : idx) ++c[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])];
  return c;
}

TEST(Dataset, DefaultSpecIsBalanced) {
  const Dataset d = generate_dataset(DatasetSpec{});
  EXPECT_EQ(d.size(), 1024);
  EXPECT_EQ(d.images.shape(), (Shape{1024, 3, 16, 16}));
  std::vector<int> all(1024);
  for (int i = 0; i < 1024; ++i) all[static_cast<std::size_t>(i)] = i;
  for (int c : per_class(d, all)) EXPECT_EQ(c, 256);
}

TEST(Dataset, SameSeedBitwiseIdentical) {
  DatasetSpec s;
  s.samples_per_class = 20;
  const Dataset a = generate_dataset(s), b = generate_dataset(s);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 8;
  EXPECT_FALSE(generate_dataset(s).images == a.images);
}

TEST(Dataset, RejectsBadSpecs) {
  DatasetSpec s;
  s.num_classes = 1;
  EXPECT_THROW(s.validate(), Error);
  s = DatasetSpec{};
  s.samples_per_class = 0;
  EXPECT_THROW(generate_dataset(s), Error);
  s = DatasetSpec{};
  s.noise = -1;
  EXPECT_THROW(generate_dataset(s), Error);
}

TEST(Split, DefaultCounts) {
  const Dataset d = generate_dataset(DatasetSpec{});
  const Split s = split(d, {0.4, 0.4, 0.2}, 3);
  EXPECT_EQ(s.train.size(), 408u);
  EXPECT_EQ(s.val.size(), 408u);
  EXPECT_EQ(s.test.size(), 208u);
}

TEST(Split, PropertiesOverRandomSpecs) {
  Rng gen(2024);
  for (int trial = 0; trial < 40; ++trial) {
    DatasetSpec spec;
    spec.num_classes = 2 + static_cast<int>(gen.below(5));
    spec.samples_per_class = 3 + static_cast<int>(gen.below(60));
    spec.height = spec.width = 4;
    spec.seed = gen.next();
    const Dataset d = generate_dataset(spec);
    const double a = 0.1 + 0.5 * gen.uniform(), b = 0.1 + 0.3 * gen.uniform() * (0.9 - a) / 0.4;
    const std::array<double, 3> f{a, b, 1.0 - a - b};
    Split s;
    try {
      s = split(d, f, gen.next());
    } catch (const Error&) {
      // only legitimate when some split gets no sample of a class
      const double smallest = *std::min_element(f.begin(), f.end());
      ASSERT_LT(std::floor(smallest * spec.samples_per_class), 1.0 + 1e-9) << "trial " << trial;
      continue;
    }
    std::set<int> seen;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      ASSERT_FALSE(part->empty());
      ASSERT_TRUE(std::is_sorted(part->begin(), part->end()));
      for (int i : *part) ASSERT_TRUE(seen.insert(i).second) << "index " << i << " in two splits";
    }
    ASSERT_EQ(static_cast<int>(seen.size()), d.size());
    const std::array<const std::vector<int>*, 3> parts{&s.train, &s.val, &s.test};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto counts = per_class(d, *parts[k]);
      for (int c : counts) {
        ASSERT_LE(std::abs(c - f[k] * spec.samples_per_class), 1.0 + 1e-9)
            << "trial " << trial << " split " << k;
      }
    }
  }
}

TEST(Split, DeterministicPerSeed) {
  DatasetSpec spec;
  spec.samples_per_class = 30;
  const Dataset d = generate_dataset(spec);
  const Split a = split(d, {0.5, 0.3, 0.2}, 4), b = split(d, {0.5, 0.3, 0.2}, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split(d, {0.5, 0.3, 0.2}, 5).train, a.train);
}

TEST(Split, RejectsBadFractions) {
  DatasetSpec spec;
  spec.samples_per_class = 4;
  const Dataset d = generate_dataset(spec);
  EXPECT_THROW(split(d, {0.5, 0.3, 0.3}, 1), Error);
  EXPECT_THROW(split(d, {0.9, 0.05, 0.05}, 1), Error);
  EXPECT_THROW(split(d, {1.0, 0.0, 0.0}, 1), Error);
}

TEST(Batches, CoverIndicesOnce) {
  std::vector<int> idx(70);
  for (int i = 0; i < 70; ++i) idx[static_cast<std::size_t>(i)] = 3 * i;
  Rng rng(1);
  const auto batches = shuffled_batches(idx, 16, rng);
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().size(), 6u);
  std::vector<int> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  EXPECT_EQ(flat, idx);
}

TEST(Cache, RoundTripAndReuse) {
  const auto dir = std::filesystem::temp_directory_path() / "edd-test-cache";
  std::filesystem::remove_all(dir);
  DatasetSpec spec;
  spec.samples_per_class = 5;
  const Dataset a = cached_dataset(spec, dir);
  const auto file = dir / ("dataset-" + spec_hash(spec).substr(0, 16) + ".bin");
  ASSERT_TRUE(std::filesystem::exists(file));
  const Dataset b = load_dataset(file);
  EXPECT_EQ(b.spec, spec);
  EXPECT_EQ(b.images, a.images);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(cached_dataset(spec, dir).images, a.images);
  spec.noise = 0.25;
  EXPECT_NE(spec_hash(spec), spec_hash(DatasetSpec{}));
  std::filesystem::remove_all(dir);
}

TEST(Cache, RejectsCorruptFile) {
  const auto file = std::filesystem::temp_directory_path() / "edd-corrupt.bin";
  {
    std::ofstream os(file, std::ios::binary);
    os << "not a dataset";
  }
  EXPECT_THROW(load_dataset(file), Error);
  std::filesystem::remove(file);
}

// Calibration of the generator: a tiny convnet separates the classes, a
// linear classifier on raw pixels does not.

struct Model {
  std::vector<Parameter<double>> params;
  std::function<Var<double>(Tape<double>&, const Tensor<double>&, std::vector<Var<double>>&)> forward;
};

Tensor<double> he(Rng& rng, Shape shape, int fan_in) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal() * std::sqrt(2.0 / fan_in);
  return t;
}

double fit_and_score(Model& m, const Dataset& d, const Split& s, int epochs, double lr) {
  std::vector<Parameter<double>*> ptrs;
  for (auto& p : m.params) ptrs.push_back(&p);
  Adam opt(ptrs, std::vector<double>(ptrs.size(), lr));
  Rng rng(17);
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx : shuffled_batches(s.train, 32, rng)) {
      const Batch b = make_batch(d, idx);
      Tape<double> tape;
      std::vector<Var<double>> leaves;
      for (auto& p : m.params) leaves.push_back(tape.leaf(p));
      opt.zero_grad();
      tape.backward(softmax_xent(m.forward(tape, b.images, leaves), b.labels));
      opt.step();
    }
  }
  const Batch b = make_batch(d, s.val);
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (auto& p : m.params) leaves.push_back(tape.constant(p.value));
  const Tensor<double> logits = m.forward(tape, b.images, leaves).value();
  const Index k = logits.dim(1);
  int correct = 0;
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    Index best = 0;
    for (Index j = 1; j < k; ++j) {
      if (logits[static_cast<Index>(i) * k + j] > logits[static_cast<Index>(i) * k + best]) best = j;
    }
    correct += best == b.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(b.labels.size());
}

TEST(Calibration, TwoLayerConvnetSeparatesClasses) {
  const Dataset d = generate_dataset(DatasetSpec{});
  const Split s = split(d, {0.4, 0.4, 0.2}, 3);
  Rng rng(5);
  Model m;
  m.params = {{"c1", he(rng, {8, 3, 3, 3}, 27)},
              {"c2", he(rng, {16, 8, 3, 3}, 72)},
              {"w", he(rng, {16, 4}, 16)},
              {"b", Tensor<double>::zeros({4})}};
  m.forward = [](Tape<double>&, const Tensor<double>& x, std::vector<Var<double>>& p) {
    Var<double> h = relu(conv2d(p[0].tape().constant(x), p[0], 1));
    h = relu(conv2d(h, p[1], 2));
    return add_rowwise(matmul(global_avg_pool(h), p[2]), p[3]);
  };
  const double acc = fit_and_score(m, d, s, 12, 0.01);
  EXPECT_GE(acc, 0.90);
}

TEST(Calibration, LinearModelStaysWeak) {
  const Dataset d = generate_dataset(DatasetSpec{});
  const Split s = split(d, {0.4, 0.4, 0.2}, 3);
  Rng rng(6);
  Model m;
  m.params = {{"w", he(rng, {768, 4}, 768)}, {"b", Tensor<double>::zeros({4})}};
  m.forward = [](Tape<double>&, const Tensor<double>& x, std::vector<Var<double>>& p) {
    Var<double> flat = p[0].tape().constant(x.reshaped({x.dim(0), 768}));
    return add_rowwise(matmul(flat, p[0]), p[1]);
  };
  const double acc = fit_and_score(m, d, s, 30, 0.01);
  EXPECT_LE(acc, 0.70);
}

}  // namespace
}  // namespace edd
