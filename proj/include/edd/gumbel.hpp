#pragma once

#include <edd/ops.hpp>

#include <cmath>
#include <cstdint>
#include <random>

namespace edd {

/// Seeded random stream. Uniform draws are formed from the top 53 bits of a
/// 64-bit Mersenne Twister so sequences are identical across standard
/// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard Gumbel draw, -log(-log U).
  double gumbel() { return -std::log(-std::log(uniform())); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller keeps the stream independent of the standard library's
    // distribution implementations.
    const double u1 = uniform(), u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * n) % n; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Index of the largest entry; ties go to the lowest index.
template <typename Vec>
Index argmax(const Vec& v) {
  Index best = 0;
  for (Index i = 1; i < static_cast<Index>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// One Gumbel-Softmax draw in both forms: the soft relaxation and its
/// straight-through one-hot, built from the same noise.
template <typename S>
struct GumbelDraw {
  Var<S> soft;
  Var<S> hard;
  Index index = 0;
};

template <typename S>
GumbelDraw<S> gumbel_draw(Var<S> logits, double tau, Rng* rng) {
  if (!(tau > 0)) throw Error("gumbel_softmax: temperature must be positive");
  if (logits.size() == 0) throw ShapeError("gumbel_softmax: empty logits");
  Var<S> z = logits;
  if (rng != nullptr) {
    Tensor<S> noise(logits.shape());
    for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<S>(rng->gumbel());
    z = z + logits.tape().constant(std::move(noise));
  }
  GumbelDraw<S> d;
  d.soft = softmax(z / static_cast<S>(tau));
  d.index = argmax(d.soft.value().values());
  Tensor<S> one_hot(d.soft.shape());
  one_hot[d.index] = S(1);
  d.hard = straight_through(std::move(one_hot), d.soft);
  return d;
}

/// Gumbel-Softmax relaxation of a categorical draw.
///
/// y = softmax((logits + g) / tau), g ~ Gumbel(0, 1) from `rng`; a null `rng`
/// disables the noise. With `hard`, the forward value is the one-hot vector
/// at argmax(y) and the gradient flows through the soft y.
template <typename S>
Var<S> gumbel_softmax(Var<S> logits, double tau, Rng* rng, bool hard) {
  GumbelDraw<S> d = gumbel_draw(logits, tau, rng);
  return hard ? d.hard : d.soft;
}

}  // namespace edd
