#pragma once

#include <edd/autodiff.hpp>
#include <edd/costmodel.hpp>
#include <edd/gumbel.hpp>
#include <edd/space.hpp>

#include <cstdint>
#include <vector>

namespace edd {

/// Operation and quantization level executed by one block.
struct BlockChoice {
  int op = 0;
  int quant = 0;  // index into SpaceConfig::quant

  friend bool operator==(const BlockChoice&, const BlockChoice&) = default;
};

using Path = std::vector<BlockChoice>;

/// Throws Error naming the block when `path` does not fit `space`.
void validate_path(const SpaceConfig& space, const Path& path);

/// One draw of the architecture distribution. `soft` feeds the cost model;
/// the hard weights gate the executed path and carry straight-through
/// gradients back to the logits.
struct ArchSample {
  RelaxedWeights<double> soft;
  std::vector<Var<double>> theta_hard;               // [N] of length M
  std::vector<std::vector<Var<double>>> phi_hard;    // [N][M] of length Q
  Path path;
};

/// Single-path supernet: a conv stem, N blocks of M candidate MBConv ops,
/// and a pooled linear classifier. Each (block, op) owns one weight set that
/// is fake-quantized on the fly at the sampled bit-width.
class Supernet {
 public:
  Supernet(SpaceConfig space, std::uint64_t seed);

  const SpaceConfig& space() const { return space_; }

  /// Operation logits, [N, M].
  Parameter<double>& theta() { return theta_; }
  const Parameter<double>& theta() const { return theta_; }
  /// Quantization logits, [N, M, Q], or [1, 1, Q] with shared precision.
  Parameter<double>& phi() { return phi_; }
  const Parameter<double>& phi() const { return phi_; }

  /// Logits of op m's quantization choice in block i.
  Tensor<double> phi_row(int block, int op) const;

  std::vector<Parameter<double>*> weights();
  std::vector<Parameter<double>*> arch_params() { return {&theta_, &phi_}; }

  void set_weights_trainable(bool on);
  void set_arch_trainable(bool on);

  /// Draws ops and bit-widths for every block. A null rng gives the
  /// noise-free relaxation.
  ArchSample sample(Tape<double>& tape, double tau, Rng* rng);

  /// Logits along the sampled path, gated by the hard weights.
  Var<double> forward(Tape<double>& tape, const Tensor<double>& images, const ArchSample& arch);

  /// Cross-entropy of a freshly sampled path.
  Var<double> forward_train(Tape<double>& tape, const Tensor<double>& images,
                            const std::vector<int>& labels, double tau, Rng& rng);

  /// Logits along a fixed path, no sampling and no gating.
  Var<double> forward_infer(Tape<double>& tape, const Tensor<double>& images, const Path& path);

  /// Tape-free inference on the current weights; safe to call concurrently.
  Tensor<double> predict(const Tensor<double>& images, const Path& path) const;

  /// Number of forward executions of (block, op, quant level).
  long executions(int block, int op, int quant) const;
  void reset_counters();

 private:
  struct OpWeights {
    std::size_t expand, g1, b1, dw, g2, b2, project, g3, b3;
  };

  template <typename Bind>
  Var<double> run(Tape<double>& tape, const Tensor<double>& images, const Path& path,
                  const ArchSample* gate, Bind&& bind) const;

  std::size_t add(std::string name, Tensor<double> init);
  std::size_t op_index(int block, int op) const;
  void count(const Path& path);

  SpaceConfig space_;
  std::vector<Parameter<double>> params_;
  std::size_t stem_w_ = 0, stem_g_ = 0, stem_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<OpWeights> ops_;  // [N * M]
  Parameter<double> theta_;
  Parameter<double> phi_;
  std::vector<long> counters_;  // [N * M * Q]
};

}  // namespace edd
