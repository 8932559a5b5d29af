#include <edd/optim.hpp>
#include <edd/train.hpp>

#include <algorithm>
#include <cmath>

namespace edd {

void TrainSettings::validate() const {
  if (epochs < 0) throw Error("train: epochs must be >= 0");
  if (batch_size < 1) throw Error("train: batch_size must be positive");
  if (!(lr > 0)) throw Error("train: lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw Error("train: momentum must lie in [0, 1)");
  if (!(grad_clip >= 0)) throw Error("train: grad_clip must be non-negative");
}

double train_path(Supernet& net, const Path& path, const Dataset& data,
                  const std::vector<int>& indices, const TrainSettings& settings) {
  settings.validate();
  validate_path(net.space(), path);
  net.set_arch_trainable(false);
  net.set_weights_trainable(true);
  SgdMomentum opt(net.weights(), settings.lr, settings.momentum, settings.grad_clip);
  Rng rng(settings.seed);
  double last = 0;
  for (int e = 0; e < settings.epochs; ++e) {
    double total = 0;
    int steps = 0;
    for (const auto& idx : shuffled_batches(indices, settings.batch_size, rng)) {
      const Batch b = make_batch(data, idx);
      opt.zero_grad();
      Tape<double> tape;
      Var<double> loss = softmax_xent(net.forward_infer(tape, b.images, path), b.labels);
      tape.backward(loss);
      opt.step();
      total += loss.item();
      ++steps;
    }
    last = steps ? total / steps : 0.0;
  }
  net.set_arch_trainable(true);
  return last;
}

EvalResult evaluate_path(const Supernet& net, const Path& path, const Dataset& data,
                         const std::vector<int>& indices, int batch_size) {
  if (indices.empty()) throw Error("evaluate: no samples");
  double loss = 0;
  int correct = 0;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    const Batch b = make_batch(
        data, std::vector<int>(indices.begin() + static_cast<std::ptrdiff_t>(at),
                               indices.begin() + static_cast<std::ptrdiff_t>(end)));
    const Tensor<double> logits = net.predict(b.images, path);
    const Index k = logits.dim(1);
    const auto m = logits.as_matrix(logits.dim(0), k);
    for (Index r = 0; r < m.rows(); ++r) {
      const double mx = m.row(r).maxCoeff();
      const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
      const int label = b.labels[static_cast<std::size_t>(r)];
      loss += lse - m(r, label);
      Index best = 0;
      for (Index c = 1; c < k; ++c) {
        if (m(r, c) > m(r, best)) best = c;
      }
      if (best == label) ++correct;
    }
  }
  const double n = static_cast<double>(indices.size());
  return {loss / n, correct / n};
}

}  // namespace edd
