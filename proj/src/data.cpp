#include <edd/data.hpp>
#include <edd/hash.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace edd {

void DatasetSpec::validate() const {
  if (num_classes < 2) throw Error("data.num_classes must be at least 2");
  if (samples_per_class < 1) throw Error("data.samples_per_class must be positive");
  if (height < 1 || width < 1 || channels < 1) throw Error("data: image size must be positive");
  if (!(noise >= 0) || !std::isfinite(noise)) throw Error("data.noise must be finite and >= 0");
}

std::string DatasetSpec::canonical() const {
  nlohmann::json j = {{"num_classes", num_classes}, {"samples_per_class", samples_per_class},
                      {"height", height},           {"width", width},
                      {"channels", channels},       {"seed", seed},
                      {"noise", noise}};
  return j.dump();
}

std::string spec_hash(const DatasetSpec& spec) { return content_hash(spec.canonical()); }

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int k = spec.num_classes, c = spec.channels, h = spec.height, w = spec.width;
  Rng rng(spec.seed);

  struct ClassParams {
    double angle, freq;
    std::vector<double> gain;
  };
  std::vector<ClassParams> classes;
  for (int j = 0; j < k; ++j) {
    ClassParams p;
    p.angle = M_PI * (j + 0.3 * (rng.uniform() - 0.5)) / k;
    p.freq = 0.12 + 0.16 * rng.uniform();
    for (int ch = 0; ch < c; ++ch) p.gain.push_back(0.5 + rng.uniform());
    classes.push_back(std::move(p));
  }

  const int total = k * spec.samples_per_class;
  Dataset d;
  d.spec = spec;
  d.images = Tensor<double>(Shape{total, c, h, w});
  d.labels.resize(static_cast<std::size_t>(total));
  double* out = d.images.values().data();
  for (int s = 0; s < total; ++s) {
    const int label = s % k;
    d.labels[static_cast<std::size_t>(s)] = label;
    const ClassParams& p = classes[static_cast<std::size_t>(label)];
    const double angle = p.angle + rng.normal(0.0, 0.05);
    const double freq = p.freq * (1.0 + rng.normal(0.0, 0.05));
    const double phase = 2 * M_PI * rng.uniform();
    const double amp = 0.7 + 0.6 * rng.uniform();
    const double ux = std::cos(angle), uy = std::sin(angle);
    for (int ch = 0; ch < c; ++ch) {
      const double g = amp * p.gain[static_cast<std::size_t>(ch)];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          *out++ = g * std::sin(2 * M_PI * freq * (x * ux + y * uy) + phase) +
                   rng.normal(0.0, spec.noise);
        }
      }
    }
  }
  return d;
}

Split split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (!(f >= 0) || !std::isfinite(f)) throw Error("split: fractions must be finite and >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("split: fractions must sum to 1");

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(data.spec.num_classes));
  for (int s = 0; s < data.size(); ++s) {
    by_class.at(static_cast<std::size_t>(data.labels[static_cast<std::size_t>(s)])).push_back(s);
  }
  Rng rng(seed);
  Split out;
  std::array<std::vector<int>*, 3> parts{&out.train, &out.val, &out.test};
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng.engine());
    const double n = static_cast<double>(members.size());
    std::array<int, 3> counts{};
    counts[0] = static_cast<int>(std::floor(fractions[0] * n));
    counts[1] = static_cast<int>(std::floor(fractions[1] * n));
    counts[2] = static_cast<int>(members.size()) - counts[0] - counts[1];
    if (counts[2] - fractions[2] * n >= 1.0) {
      const double r0 = fractions[0] * n - counts[0], r1 = fractions[1] * n - counts[1];
      ++counts[r1 > r0 ? 1 : 0];
      --counts[2];
    }
    std::size_t at = 0;
    for (int p = 0; p < 3; ++p) {
      for (int j = 0; j < counts[static_cast<std::size_t>(p)]; ++j) parts[static_cast<std::size_t>(p)]->push_back(members[at++]);
    }
  }
  const char* names[] = {"train", "val", "test"};
  for (int p = 0; p < 3; ++p) {
    if (parts[static_cast<std::size_t>(p)]->empty()) {
      throw Error(std::string("split: fractions leave the ") + names[p] + " split empty");
    }
    std::sort(parts[static_cast<std::size_t>(p)]->begin(), parts[static_cast<std::size_t>(p)]->end());
  }
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices) {
  const Shape& s = data.images.shape();
  const Index per = s[1] * s[2] * s[3];
  Batch b;
  b.images = Tensor<double>(Shape{static_cast<Index>(indices.size()), s[1], s[2], s[3]});
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const int i = indices[j];
    if (i < 0 || i >= data.size()) throw Error("make_batch: sample index out of range");
    b.images.values().segment(static_cast<Index>(j) * per, per) =
        data.images.values().segment(static_cast<Index>(i) * per, per);
    b.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  }
  return b;
}

std::vector<std::vector<int>> shuffled_batches(std::vector<int> indices, int batch_size, Rng& rng) {
  if (batch_size < 1) throw Error("batch size must be positive");
  std::shuffle(indices.begin(), indices.end(), rng.engine());
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                     indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'E', 'D', 'D', 'D', 'A', 'T', 'A', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("dataset cache: truncated file");
  return v;
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.num_classes = j.at("num_classes").get<int>();
  s.samples_per_class = j.at("samples_per_class").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.channels = j.at("channels").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.noise = j.at("noise").get<double>();
  return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& file, const Dataset& data) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error("cannot write " + file.string());
  const std::string echo = data.spec.canonical();
  os.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(os, echo.size());
  os.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(data.images.size()));
  os.write(reinterpret_cast<const char*>(data.images.values().data()),
           static_cast<std::streamsize>(data.images.size() * sizeof(double)));
  put<std::uint64_t>(os, data.labels.size());
  for (int l : data.labels) put<std::int32_t>(os, l);
  if (!os) throw Error("error writing " + file.string());
}

Dataset load_dataset(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error("cannot read " + file.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(file.string() + " is not a dataset cache file");
  }
  std::string echo(get<std::uint64_t>(is), '\0');
  is.read(echo.data(), static_cast<std::streamsize>(echo.size()));
  Dataset d;
  d.spec = spec_from_json(nlohmann::json::parse(echo));
  const auto n = get<std::uint64_t>(is);
  const Shape shape{static_cast<Index>(d.spec.num_classes) * d.spec.samples_per_class,
                    d.spec.channels, d.spec.height, d.spec.width};
  if (static_cast<Index>(n) != numel(shape)) throw Error("dataset cache: size does not match the dataset settings");
  Tensor<double>::Vector v(static_cast<Index>(n));
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw Error("dataset cache: truncated file");
  d.images = Tensor<double>(shape, std::move(v));
  const auto labels = get<std::uint64_t>(is);
  if (static_cast<Index>(labels) != shape[0]) throw Error("dataset cache: label count mismatch");
  for (std::uint64_t i = 0; i < labels; ++i) d.labels.push_back(get<std::int32_t>(is));
  return d;
}

Dataset cached_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  if (dir.empty()) return generate_dataset(spec);
  const auto file = dir / ("dataset-" + spec_hash(spec).substr(0, 16) + ".bin");
  if (std::filesystem::exists(file)) {
    Dataset d = load_dataset(file);
    if (d.spec == spec) return d;
  }
  Dataset d = generate_dataset(spec);
  std::filesystem::create_directories(dir);
  save_dataset(file, d);
  return d;
}

}  // namespace edd
