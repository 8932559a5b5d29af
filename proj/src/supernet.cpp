#include <edd/supernet.hpp>

#include <cmath>
#include <string>
#include <utility>

namespace edd {

namespace {

Tensor<double> he_normal(Rng& rng, Shape shape, double fan_in) {
  Tensor<double> t(std::move(shape));
  const double sd = std::sqrt(2.0 / fan_in);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sd);
  return t;
}

}  // namespace

void validate_path(const SpaceConfig& space, const Path& path) {
  if (static_cast<int>(path.size()) != space.num_blocks()) {
    throw Error("path has " + std::to_string(path.size()) + " blocks, space has " +
                std::to_string(space.num_blocks()));
  }
  for (std::size_t i = 0; i < path.size(); ++i) {
    const BlockChoice& c = path[i];
    if (c.op < 0 || c.op >= space.num_ops()) {
      throw Error("block " + std::to_string(i) + ": op " + std::to_string(c.op) +
                  " out of range [0, " + std::to_string(space.num_ops()) + ")");
    }
    if (c.quant < 0 || c.quant >= space.num_quant()) {
      throw Error("block " + std::to_string(i) + ": quantization level " +
                  std::to_string(c.quant) + " out of range [0, " +
                  std::to_string(space.num_quant()) + ")");
    }
    if (space.shared_precision && c.quant != path.front().quant) {
      throw Error("block " + std::to_string(i) + ": shared precision requires one bit-width");
    }
  }
}

Supernet::Supernet(SpaceConfig space, std::uint64_t seed) : space_(std::move(space)) {
  space_.validate();
  const int n = space_.num_blocks(), m_count = space_.num_ops(), q = space_.num_quant();
  Rng rng(seed);

  const int cs = space_.stem_channels, ci = space_.input_channels;
  stem_w_ = add("stem.w", he_normal(rng, {cs, ci, 3, 3}, 9.0 * ci));
  stem_g_ = add("stem.gamma", Tensor<double>::constant({cs}, 1.0));
  stem_b_ = add("stem.beta", Tensor<double>::zeros({cs}));

  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < m_count; ++m) {
      const OpSpec op = op_spec(space_, i, m);
      const int mid = op.c_mid();
      const std::string p = "block" + std::to_string(i) + ".op" + std::to_string(m) + ".";
      OpWeights w{};
      w.expand = add(p + "expand", he_normal(rng, {mid, op.c_in, 1, 1}, op.c_in));
      w.g1 = add(p + "gamma1", Tensor<double>::constant({mid}, 1.0));
      w.b1 = add(p + "beta1", Tensor<double>::zeros({mid}));
      w.dw = add(p + "dw", he_normal(rng, {mid, 1, op.kernel, op.kernel}, op.kernel * op.kernel));
      w.g2 = add(p + "gamma2", Tensor<double>::constant({mid}, 1.0));
      w.b2 = add(p + "beta2", Tensor<double>::zeros({mid}));
      w.project = add(p + "project", he_normal(rng, {op.c_out, mid, 1, 1}, mid));
      w.g3 = add(p + "gamma3", Tensor<double>::constant({op.c_out}, 1.0));
      w.b3 = add(p + "beta3", Tensor<double>::zeros({op.c_out}));
      ops_.push_back(w);
    }
  }

  const int c_last = space_.channels.back(), k = space_.num_classes;
  Tensor<double> head(Shape{c_last, k});
  for (Index j = 0; j < head.size(); ++j) head[j] = rng.normal(0.0, std::sqrt(1.0 / c_last));
  head_w_ = add("head.w", std::move(head));
  head_b_ = add("head.b", Tensor<double>::zeros({k}));

  theta_ = Parameter<double>("theta", Tensor<double>::zeros({n, m_count}));
  phi_ = space_.shared_precision ? Parameter<double>("phi", Tensor<double>::zeros({1, 1, q}))
                                 : Parameter<double>("phi", Tensor<double>::zeros({n, m_count, q}));
  counters_.assign(static_cast<std::size_t>(n * m_count * q), 0);
}

std::size_t Supernet::add(std::string name, Tensor<double> init) {
  params_.emplace_back(std::move(name), std::move(init));
  return params_.size() - 1;
}

std::size_t Supernet::op_index(int block, int op) const {
  return static_cast<std::size_t>(block * space_.num_ops() + op);
}

Tensor<double> Supernet::phi_row(int block, int op) const {
  const int q = space_.num_quant();
  const Index base = space_.shared_precision ? 0 : static_cast<Index>(op_index(block, op)) * q;
  return Tensor<double>(Shape{q}, phi_.value.values().segment(base, q));
}

std::vector<Parameter<double>*> Supernet::weights() {
  std::vector<Parameter<double>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

void Supernet::set_weights_trainable(bool on) {
  for (auto& p : params_) p.requires_grad = on;
}

void Supernet::set_arch_trainable(bool on) {
  theta_.requires_grad = on;
  phi_.requires_grad = on;
}

ArchSample Supernet::sample(Tape<double>& tape, double tau, Rng* rng) {
  const int n = space_.num_blocks(), m_count = space_.num_ops(), q = space_.num_quant();
  Var<double> theta = tape.leaf(theta_);
  Var<double> phi = tape.leaf(phi_);

  ArchSample s;
  GumbelDraw<double> global{};
  if (space_.shared_precision) global = gumbel_draw(phi, tau, rng);

  for (int i = 0; i < n; ++i) {
    GumbelDraw<double> op = gumbel_draw(slice(theta, i * m_count, m_count), tau, rng);
    s.soft.theta.push_back(op.soft);
    s.theta_hard.push_back(op.hard);
    std::vector<Var<double>> soft_row, hard_row;
    int chosen_q = 0;
    for (int m = 0; m < m_count; ++m) {
      GumbelDraw<double> d = space_.shared_precision
                                 ? global
                                 : gumbel_draw(slice(phi, (i * m_count + m) * q, q), tau, rng);
      soft_row.push_back(d.soft);
      hard_row.push_back(d.hard);
      if (m == op.index) chosen_q = static_cast<int>(d.index);
    }
    s.soft.phi.push_back(std::move(soft_row));
    s.phi_hard.push_back(std::move(hard_row));
    s.path.push_back({static_cast<int>(op.index), chosen_q});
  }
  return s;
}

template <typename Bind>
Var<double> Supernet::run(Tape<double>& tape, const Tensor<double>& images, const Path& path,
                          const ArchSample* gate, Bind&& bind) const {
  validate_path(space_, path);
  if (images.rank() != 4 || images.dim(1) != space_.input_channels ||
      images.dim(2) != space_.input_height || images.dim(3) != space_.input_width) {
    throw ShapeError("supernet: images of shape " + to_string(images.shape()) +
                     " do not match the stem input [B, " + std::to_string(space_.input_channels) +
                     ", " + std::to_string(space_.input_height) + ", " +
                     std::to_string(space_.input_width) + "]");
  }
  auto affine_relu = [&](Var<double> x, std::size_t g, std::size_t b) {
    return relu(channel_affine(x, bind(g), bind(b)));
  };

  Var<double> h = tape.constant(images);
  h = affine_relu(conv2d(h, bind(stem_w_), 1), stem_g_, stem_b_);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const int m = path[i].op, qi = path[i].quant;
    const int bits = space_.quant[qi];
    const OpWeights& w = ops_[op_index(static_cast<int>(i), m)];
    const int stride = space_.strides[i];
    Var<double> y = affine_relu(conv2d(h, fake_quantize(bind(w.expand), bits), 1), w.g1, w.b1);
    y = affine_relu(depthwise_conv2d(y, fake_quantize(bind(w.dw), bits), stride), w.g2, w.b2);
    y = affine_relu(conv2d(y, fake_quantize(bind(w.project), bits), 1), w.g3, w.b3);
    if (gate != nullptr) {
      y = y * (element(gate->theta_hard[i], m) * element(gate->phi_hard[i][static_cast<std::size_t>(m)], qi));
    }
    h = y;
  }
  return add_rowwise(matmul(global_avg_pool(h), bind(head_w_)), bind(head_b_));
}

Var<double> Supernet::forward(Tape<double>& tape, const Tensor<double>& images,
                              const ArchSample& arch) {
  count(arch.path);
  return run(tape, images, arch.path, &arch, [&](std::size_t k) { return tape.leaf(params_[k]); });
}

Var<double> Supernet::forward_train(Tape<double>& tape, const Tensor<double>& images,
                                    const std::vector<int>& labels, double tau, Rng& rng) {
  ArchSample arch = sample(tape, tau, &rng);
  return softmax_xent(forward(tape, images, arch), labels);
}

Var<double> Supernet::forward_infer(Tape<double>& tape, const Tensor<double>& images,
                                    const Path& path) {
  count(path);
  return run(tape, images, path, nullptr, [&](std::size_t k) { return tape.leaf(params_[k]); });
}

Tensor<double> Supernet::predict(const Tensor<double>& images, const Path& path) const {
  Tape<double> tape;
  return run(tape, images, path, nullptr,
             [&](std::size_t k) { return tape.constant(params_[k].value); })
      .value();
}

void Supernet::count(const Path& path) {
  validate_path(space_, path);
  const int q = space_.num_quant();
  for (std::size_t i = 0; i < path.size(); ++i) {
    ++counters_[op_index(static_cast<int>(i), path[i].op) * static_cast<std::size_t>(q) +
                static_cast<std::size_t>(path[i].quant)];
  }
}

long Supernet::executions(int block, int op, int quant) const {
  return counters_.at(op_index(block, op) * static_cast<std::size_t>(space_.num_quant()) +
                      static_cast<std::size_t>(quant));
}

void Supernet::reset_counters() { std::fill(counters_.begin(), counters_.end(), 0); }

}  // namespace edd
