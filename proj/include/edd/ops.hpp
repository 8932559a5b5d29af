#pragma once

#include <edd/autodiff.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace edd {

namespace detail {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
ArrayX<S> expand(const Tensor<S>& t, Index n) {
  if (t.size() == n) return t.values().array();
  return ArrayX<S>::Constant(n, t[0]);
}

template <typename S>
Shape broadcast_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.size() == 1) return b.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == b.size()) return a.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()));
}

// Reduces a full-size gradient back onto an operand that may have been
// broadcast from a single value.
template <typename S>
typename Tensor<S>::Vector reduce_to(const ArrayX<S>& g, Index size) {
  if (g.size() == size) return g.matrix();
  return Tensor<S>::Vector::Constant(1, g.sum());
}

template <typename S>
void require_rank(const char* op, const Tensor<S>& t, Index rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

// Elementwise binary op with scalar broadcasting. `fwd(a, b)` returns the
// output array; `bwd(g, a, b, out)` returns the pair of full-size partials.
template <typename S, typename Fwd, typename Bwd>
Var<S> binary(const char* op, Var<S> a, Var<S> b, Fwd fwd, Bwd bwd) {
  Tape<S>& tape = a.tape();
  const Shape shape = broadcast_shape(op, a.value(), b.value());
  const Index n = numel(shape);
  ArrayX<S> av = expand(a.value(), n);
  ArrayX<S> bv = expand(b.value(), n);
  ArrayX<S> out = fwd(av, bv);
  const int ia = a.id(), ib = b.id();
  const Index na = a.size(), nb = b.size();
  Tensor<S> result(shape, out.matrix(), typename Tensor<S>::Unchecked{});
  return tape.record(op, std::move(result), {ia, ib},
                     [=](const Tensor<S>& g, Tape<S>& t) {
                       auto [ga, gb] = bwd(g.values().array(), av, bv, out);
                       t.accumulate(ia, reduce_to<S>(ga, na));
                       t.accumulate(ib, reduce_to<S>(gb, nb));
                     });
}

template <typename S, typename Fwd, typename Bwd>
Var<S> unary(const char* op, Var<S> x, Fwd fwd, Bwd bwd) {
  ArrayX<S> xv = x.value().values().array();
  ArrayX<S> out = fwd(xv);
  const int ix = x.id();
  Tensor<S> result(x.shape(), out.matrix(), typename Tensor<S>::Unchecked{});
  return x.tape().record(op, std::move(result), {ix}, [=](const Tensor<S>& g, Tape<S>& t) {
    t.accumulate(ix, ArrayX<S>(bwd(g.values().array(), xv, out)).matrix());
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return detail::binary<S>(
      "add", a, b, [](const auto& x, const auto& y) { return (x + y).eval(); },
      [](const auto& g, const auto&, const auto&, const auto&) { return std::pair(g, g); });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return detail::binary<S>(
      "sub", a, b, [](const auto& x, const auto& y) { return (x - y).eval(); },
      [](const auto& g, const auto&, const auto&, const auto&) {
        return std::pair(detail::ArrayX<S>(g), detail::ArrayX<S>(-g));
      });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return detail::binary<S>(
      "mul", a, b, [](const auto& x, const auto& y) { return (x * y).eval(); },
      [](const auto& g, const auto& x, const auto& y, const auto&) {
        return std::pair(detail::ArrayX<S>(g * y), detail::ArrayX<S>(g * x));
      });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  return detail::binary<S>(
      "div", a, b, [](const auto& x, const auto& y) { return (x / y).eval(); },
      [](const auto& g, const auto&, const auto& y, const auto& out) {
        return std::pair(detail::ArrayX<S>(g / y), detail::ArrayX<S>(-g * out / y));
      });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S>
Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }

template <typename S>
Var<S> operator+(Var<S> a, S c) { return add(a, a.tape().constant(c)); }
template <typename S>
Var<S> operator+(S c, Var<S> a) { return add(a.tape().constant(c), a); }
template <typename S>
Var<S> operator-(Var<S> a, S c) { return sub(a, a.tape().constant(c)); }
template <typename S>
Var<S> operator-(S c, Var<S> a) { return sub(a.tape().constant(c), a); }
template <typename S>
Var<S> operator*(Var<S> a, S c) { return mul(a, a.tape().constant(c)); }
template <typename S>
Var<S> operator*(S c, Var<S> a) { return mul(a.tape().constant(c), a); }
template <typename S>
Var<S> operator/(Var<S> a, S c) { return div(a, a.tape().constant(c)); }
template <typename S>
Var<S> operator/(S c, Var<S> a) { return div(a.tape().constant(c), a); }

template <typename S>
Var<S> operator-(Var<S> a) {
  return detail::unary<S>(
      "neg", a, [](const auto& x) { return (-x).eval(); },
      [](const auto& g, const auto&, const auto&) { return (-g).eval(); });
}

// ---------------------------------------------------------------------------
// Elementwise transcendental functions

template <typename S>
Var<S> exp(Var<S> x) {
  return detail::unary<S>(
      "exp", x, [](const auto& v) { return v.exp().eval(); },
      [](const auto& g, const auto&, const auto& out) { return (g * out).eval(); });
}

/// 2^x.
template <typename S>
Var<S> exp2(Var<S> x) {
  const S ln2 = static_cast<S>(std::log(2.0));
  return detail::unary<S>(
      "exp2", x, [](const auto& v) { return v.unaryExpr([](S t) { return std::exp2(t); }).eval(); },
      [ln2](const auto& g, const auto&, const auto& out) { return (g * out * ln2).eval(); });
}

template <typename S>
Var<S> log(Var<S> x) {
  if ((x.value().values().array() <= S(0)).any()) {
    throw NumericError("log: non-positive input");
  }
  return detail::unary<S>(
      "log", x, [](const auto& v) { return v.log().eval(); },
      [](const auto& g, const auto& v, const auto&) { return (g / v).eval(); });
}

template <typename S>
Var<S> tanh(Var<S> x) {
  return detail::unary<S>(
      "tanh", x, [](const auto& v) { return v.tanh().eval(); },
      [](const auto& g, const auto&, const auto& out) { return (g * (S(1) - out * out)).eval(); });
}

/// tanh(x) / x, continuously extended with value 1 at x = 0.
template <typename S>
Var<S> tanhc(Var<S> x) {
  auto f = [](S v) {
    if (std::abs(v) < S(1e-4)) return S(1) - v * v / S(3) + S(2) * v * v * v * v / S(15);
    return std::tanh(v) / v;
  };
  auto df = [](S v) {
    if (std::abs(v) < S(1e-4)) return -S(2) * v / S(3) + S(8) * v * v * v / S(15);
    const S t = std::tanh(v);
    return ((S(1) - t * t) * v - t) / (v * v);
  };
  return detail::unary<S>(
      "tanhc", x, [f](const auto& v) { return v.unaryExpr(f).eval(); },
      [df](const auto& g, const auto& v, const auto&) { return (g * v.unaryExpr(df)).eval(); });
}

template <typename S>
Var<S> relu(Var<S> x) {
  return detail::unary<S>(
      "relu", x, [](const auto& v) { return v.max(S(0)).eval(); },
      [](const auto& g, const auto& v, const auto&) {
        return (g * (v > S(0)).template cast<S>()).eval();
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  const int ix = x.id();
  return x.tape().record("reshape", x.value().reshaped(std::move(shape)), {ix},
                         [ix](const Tensor<S>& g, Tape<S>& t) { t.accumulate(ix, g.values()); });
}

/// Flat slice [begin, begin + count) as a vector of length count.
template <typename S>
Var<S> slice(Var<S> x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.size()) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside tensor of size " +
                     std::to_string(x.size()));
  }
  const int ix = x.id();
  const Index n = x.size();
  Tensor<S> out(Shape{count}, x.value().values().segment(begin, count));
  return x.tape().record("slice", std::move(out), {ix},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           typename Tensor<S>::Vector full = Tensor<S>::Vector::Zero(n);
                           full.segment(begin, count) = g.values();
                           t.accumulate(ix, full);
                         });
}

/// Single element as a scalar.
template <typename S>
Var<S> element(Var<S> x, Index i) {
  return reshape(slice(x, i, 1), Shape{});
}

/// Flat concatenation into a vector.
template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Index total = 0;
  std::vector<int> ids;
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    total += p.size();
    ids.push_back(p.id());
    sizes.push_back(p.size());
  }
  typename Tensor<S>::Vector v(total);
  Index off = 0;
  for (const auto& p : parts) {
    v.segment(off, p.size()) = p.value().values();
    off += p.size();
  }
  return parts.front().tape().record("concat", Tensor<S>(Shape{total}, std::move(v), typename Tensor<S>::Unchecked{}), ids,
                                     [ids, sizes](const Tensor<S>& g, Tape<S>& t) {
                                       Index o = 0;
                                       for (std::size_t k = 0; k < ids.size(); ++k) {
                                         t.accumulate(ids[k], g.values().segment(o, sizes[k]));
                                         o += sizes[k];
                                       }
                                     });
}

template <typename S>
Var<S> sum(Var<S> x) {
  const int ix = x.id();
  const Index n = x.size();
  return x.tape().record("sum", Tensor<S>(Shape{}, Tensor<S>::Vector::Constant(1, x.value().values().sum()), typename Tensor<S>::Unchecked{}), {ix},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           t.accumulate(ix, Tensor<S>::Vector::Constant(n, g[0]));
                         });
}

template <typename S>
Var<S> mean(Var<S> x) {
  return sum(x) / static_cast<S>(x.size());
}

template <typename S>
Var<S> dot(Var<S> a, Var<S> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: sizes " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  return sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// Dense linear algebra and convolution

/// [n, k] x [k, m] -> [n, m].
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require_rank("matmul", a.value(), 2);
  detail::require_rank("matmul", b.value(), 2);
  const Index n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Tensor<S> out(Shape{n, m});
  out.as_matrix(n, m).noalias() = a.value().as_matrix(n, k) * b.value().as_matrix(k, m);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           auto gm = g.as_matrix(n, m);
                           if (t.requires_grad(ia)) {
                             Tensor<S> ga(Shape{n, k});
                             ga.as_matrix(n, k).noalias() =
                                 gm * t.value(ib).as_matrix(k, m).transpose();
                             t.accumulate(ia, ga.values());
                           }
                           if (t.requires_grad(ib)) {
                             Tensor<S> gb(Shape{k, m});
                             gb.as_matrix(k, m).noalias() =
                                 t.value(ia).as_matrix(n, k).transpose() * gm;
                             t.accumulate(ib, gb.values());
                           }
                         });
}

/// Adds a length-C bias to every row of [B, C].
template <typename S>
Var<S> add_rowwise(Var<S> x, Var<S> bias) {
  detail::require_rank("add_rowwise", x.value(), 2);
  const Index rows = x.value().dim(0), cols = x.value().dim(1);
  if (bias.size() != cols) {
    throw ShapeError("add_rowwise: bias " + to_string(bias.shape()) + " for input " +
                     to_string(x.shape()));
  }
  Tensor<S> out = x.value();
  out.as_matrix(rows, cols).rowwise() += bias.value().values().transpose();
  const int ix = x.id(), ib = bias.id();
  return x.tape().record("add_rowwise", std::move(out), {ix, ib},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           t.accumulate(ix, g.values());
                           t.accumulate(ib, g.as_matrix(rows, cols).colwise().sum().transpose());
                         });
}

/// Output spatial size for "same" padding (pad = k / 2) with the given stride.
inline Index conv_out_size(Index in, Index kernel, Index stride) {
  const Index pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// cols[(c * k + ky) * k + kx, oy * wo + ox] = x[c, oy * s - p + ky, ox * s - p + kx]
template <typename S, typename Cols>
void im2col(const S* x, Index c_in, Index h, Index w, Index k, Index stride, Index ho, Index wo,
            Cols& cols) {
  const Index pad = k / 2;
  for (Index c = 0; c < c_in; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - pad + kx;
            cols(row, oy * wo + ox) =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(c * h + iy) * w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S, typename Cols>
void col2im(const Cols& cols, Index c_in, Index h, Index w, Index k, Index stride, Index ho,
            Index wo, S* dx) {
  const Index pad = k / 2;
  for (Index c = 0; c < c_in; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            dx[(c * h + iy) * w + ix] += cols(row, oy * wo + ox);
          }
        }
      }
    }
  }
}

inline void require_stride(const char* op, Index stride) {
  if (stride != 1 && stride != 2) {
    throw ShapeError(std::string(op) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
}

}  // namespace detail

/// 2-D convolution, NCHW input [B, Ci, H, W], weights [Co, Ci, k, k], same
/// padding, stride 1 or 2.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, Index stride) {
  using RowMatrix = typename Tensor<S>::RowMatrix;
  detail::require_rank("conv2d", x.value(), 4);
  detail::require_rank("conv2d", weight.value(), 4);
  detail::require_stride("conv2d", stride);
  const Index batch = x.value().dim(0), c_in = x.value().dim(1), h = x.value().dim(2),
              w = x.value().dim(3);
  const Index c_out = weight.value().dim(0), k = weight.value().dim(2);
  if (weight.value().dim(1) != c_in || weight.value().dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  const Index ho = conv_out_size(h, k, stride), wo = conv_out_size(w, k, stride);
  const Index patch = c_in * k * k, pixels = ho * wo;
  const bool pointwise = (k == 1 && stride == 1);

  auto cols = std::make_shared<std::vector<RowMatrix>>();
  if (!pointwise) {
    cols->reserve(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b) {
      RowMatrix c(patch, pixels);
      detail::im2col(x.value().values().data() + b * c_in * h * w, c_in, h, w, k, stride, ho, wo,
                     c);
      cols->push_back(std::move(c));
    }
  }
  Tensor<S> out(Shape{batch, c_out, ho, wo});
  auto wm = weight.value().as_matrix(c_out, patch);
  for (Index b = 0; b < batch; ++b) {
    typename Tensor<S>::MatrixMap ob(out.values().data() + b * c_out * pixels, c_out, pixels);
    if (pointwise) {
      typename Tensor<S>::ConstMatrixMap xb(x.value().values().data() + b * c_in * h * w, c_in,
                                            pixels);
      ob.noalias() = wm * xb;
    } else {
      ob.noalias() = wm * (*cols)[static_cast<std::size_t>(b)];
    }
  }
  const int ix = x.id(), iw = weight.id();
  return x.tape().record(
      "conv2d", std::move(out), {ix, iw}, [=](const Tensor<S>& g, Tape<S>& t) {
        auto wmat = t.value(iw).as_matrix(c_out, patch);
        const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
        Tensor<S> gx(Shape{batch, c_in, h, w});
        Tensor<S> gw(Shape{c_out, c_in, k, k});
        auto gwm = gw.as_matrix(c_out, patch);
        for (Index b = 0; b < batch; ++b) {
          typename Tensor<S>::ConstMatrixMap gb(g.values().data() + b * c_out * pixels, c_out,
                                                pixels);
          if (pointwise) {
            typename Tensor<S>::ConstMatrixMap xb(t.value(ix).values().data() + b * c_in * h * w,
                                                  c_in, pixels);
            if (need_w) gwm.noalias() += gb * xb.transpose();
            if (need_x) {
              typename Tensor<S>::MatrixMap dxb(gx.values().data() + b * c_in * h * w, c_in,
                                                pixels);
              dxb.noalias() = wmat.transpose() * gb;
            }
          } else {
            const RowMatrix& cb = (*cols)[static_cast<std::size_t>(b)];
            if (need_w) gwm.noalias() += gb * cb.transpose();
            if (need_x) {
              RowMatrix dcols = wmat.transpose() * gb;
              detail::col2im(dcols, c_in, h, w, k, stride, ho, wo,
                             gx.values().data() + b * c_in * h * w);
            }
          }
        }
        if (need_x) t.accumulate(ix, gx.values());
        if (need_w) t.accumulate(iw, gw.values());
      });
}

/// Depthwise 2-D convolution, input [B, C, H, W], weights [C, 1, k, k].
template <typename S>
Var<S> depthwise_conv2d(Var<S> x, Var<S> weight, Index stride) {
  detail::require_rank("depthwise_conv2d", x.value(), 4);
  detail::require_rank("depthwise_conv2d", weight.value(), 4);
  detail::require_stride("depthwise_conv2d", stride);
  const Index batch = x.value().dim(0), ch = x.value().dim(1), h = x.value().dim(2),
              w = x.value().dim(3);
  const Index k = weight.value().dim(2);
  if (weight.value().dim(0) != ch || weight.value().dim(1) != 1 || weight.value().dim(3) != k ||
      k % 2 == 0) {
    throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) +
                     " incompatible with input " + to_string(x.shape()));
  }
  const Index pad = k / 2;
  const Index ho = conv_out_size(h, k, stride), wo = conv_out_size(w, k, stride);
  const Index hp = h + 2 * pad, wp_ = w + 2 * pad;
  Tensor<S> out(Shape{batch, ch, ho, wo});
  std::vector<S> plane(static_cast<std::size_t>(hp * wp_), S(0));
  const S* xv = x.value().values().data();
  const S* wv = weight.value().values().data();
  S* ov = out.values().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < ch; ++c) {
      const S* xp = xv + (b * ch + c) * h * w;
      for (Index y = 0; y < h; ++y) {
        std::copy(xp + y * w, xp + (y + 1) * w, plane.data() + (y + pad) * wp_ + pad);
      }
      const S* wk = wv + c * k * k;
      S* op = ov + (b * ch + c) * ho * wo;
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const S* base = plane.data() + oy * stride * wp_ + ox * stride;
          S acc = 0;
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) acc += base[ky * wp_ + kx] * wk[ky * k + kx];
          }
          op[oy * wo + ox] = acc;
        }
      }
    }
  }
  const int ix_id = x.id(), iw = weight.id();
  return x.tape().record(
      "depthwise_conv2d", std::move(out), {ix_id, iw}, [=](const Tensor<S>& g, Tape<S>& t) {
        const S* xv2 = t.value(ix_id).values().data();
        const S* wv2 = t.value(iw).values().data();
        const S* gv = g.values().data();
        Tensor<S> gx(Shape{batch, ch, h, w});
        Tensor<S> gw(Shape{ch, 1, k, k});
        S* gxv = gx.values().data();
        S* gwv = gw.values().data();
        std::vector<S> xpad(static_cast<std::size_t>(hp * wp_), S(0));
        std::vector<S> gpad(static_cast<std::size_t>(hp * wp_));
        for (Index b = 0; b < batch; ++b) {
          for (Index c = 0; c < ch; ++c) {
            const S* xp = xv2 + (b * ch + c) * h * w;
            for (Index y = 0; y < h; ++y) {
              std::copy(xp + y * w, xp + (y + 1) * w, xpad.data() + (y + pad) * wp_ + pad);
            }
            std::fill(gpad.begin(), gpad.end(), S(0));
            const S* wk = wv2 + c * k * k;
            const S* gp = gv + (b * ch + c) * ho * wo;
            S* gwk = gwv + c * k * k;
            for (Index oy = 0; oy < ho; ++oy) {
              for (Index ox = 0; ox < wo; ++ox) {
                const S go = gp[oy * wo + ox];
                const Index at = oy * stride * wp_ + ox * stride;
                for (Index ky = 0; ky < k; ++ky) {
                  for (Index kx = 0; kx < k; ++kx) {
                    gpad[static_cast<std::size_t>(at + ky * wp_ + kx)] += go * wk[ky * k + kx];
                    gwk[ky * k + kx] += go * xpad[static_cast<std::size_t>(at + ky * wp_ + kx)];
                  }
                }
              }
            }
            S* gxp = gxv + (b * ch + c) * h * w;
            for (Index y = 0; y < h; ++y) {
              const S* row = gpad.data() + (y + pad) * wp_ + pad;
              std::copy(row, row + w, gxp + y * w);
            }
          }
        }
        t.accumulate(ix_id, gx.values());
        t.accumulate(iw, gw.values());
      });
}

/// Per-channel y = gamma[c] * x + beta[c] for [B, C, ...] input. Stands in
/// for batch normalization with frozen running statistics.
template <typename S>
Var<S> channel_affine(Var<S> x, Var<S> gamma, Var<S> beta) {
  if (x.value().rank() < 2) {
    throw ShapeError("channel_affine: input " + to_string(x.shape()) + " has no channel axis");
  }
  const Index batch = x.value().dim(0), ch = x.value().dim(1);
  const Index inner = x.size() / (batch * ch);
  if (gamma.size() != ch || beta.size() != ch) {
    throw ShapeError("channel_affine: gamma " + to_string(gamma.shape()) + " / beta " +
                     to_string(beta.shape()) + " for input " + to_string(x.shape()));
  }
  Tensor<S> out = x.value();
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < ch; ++c) {
      auto seg = out.values().segment((b * ch + c) * inner, inner);
      seg = (seg.array() * gamma.value()[c] + beta.value()[c]).matrix();
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record("channel_affine", std::move(out), {ix, ig, ib},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           const auto& xv = t.value(ix).values();
                           const auto& gm = t.value(ig).values();
                           typename Tensor<S>::Vector gx(xv.size());
                           typename Tensor<S>::Vector gg = Tensor<S>::Vector::Zero(ch);
                           typename Tensor<S>::Vector gb = Tensor<S>::Vector::Zero(ch);
                           for (Index b = 0; b < batch; ++b) {
                             for (Index c = 0; c < ch; ++c) {
                               const Index off = (b * ch + c) * inner;
                               auto gs = g.values().segment(off, inner);
                               gx.segment(off, inner) = gs * gm[c];
                               gg[c] += gs.dot(xv.segment(off, inner));
                               gb[c] += gs.sum();
                             }
                           }
                           t.accumulate(ix, gx);
                           t.accumulate(ig, gg);
                           t.accumulate(ib, gb);
                         });
}

/// [B, C, H, W] -> [B, C].
template <typename S>
Var<S> global_avg_pool(Var<S> x) {
  detail::require_rank("global_avg_pool", x.value(), 4);
  const Index batch = x.value().dim(0), ch = x.value().dim(1);
  const Index inner = x.value().dim(2) * x.value().dim(3);
  Tensor<S> out(Shape{batch, ch});
  out.values() = x.value().as_matrix(batch * ch, inner).rowwise().mean();
  const int ix = x.id();
  return x.tape().record("global_avg_pool", std::move(out), {ix},
                         [=](const Tensor<S>& g, Tape<S>& t) {
                           Tensor<S> gx(Shape{batch * ch, inner});
                           gx.as_matrix(batch * ch, inner).colwise() =
                               g.values() / static_cast<S>(inner);
                           t.accumulate(ix, gx.values());
                         });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace detail {

template <typename S>
typename Tensor<S>::Vector softmax_values(const typename Tensor<S>::Vector& v) {
  const S m = v.maxCoeff();
  typename Tensor<S>::Vector e = (v.array() - m).exp().matrix();
  return e / e.sum();
}

}  // namespace detail

/// Softmax over all entries of a vector.
template <typename S>
Var<S> softmax(Var<S> x) {
  if (x.size() == 0) throw ShapeError("softmax: empty input");
  Tensor<S> out(x.shape(), detail::softmax_values<S>(x.value().values()), typename Tensor<S>::Unchecked{});
  const int ix = x.id();
  auto y = out.values();
  return x.tape().record("softmax", std::move(out), {ix}, [=](const Tensor<S>& g, Tape<S>& t) {
    const S inner = g.values().dot(y);
    t.accumulate(ix, (y.array() * (g.values().array() - inner)).matrix());
  });
}

/// log(sum(exp(v))) with max shift.
template <typename S>
Var<S> log_sum_exp(Var<S> x) {
  if (x.size() == 0) throw ShapeError("log_sum_exp: empty input");
  const auto& v = x.value().values();
  const S m = v.maxCoeff();
  const S value = m + std::log((v.array() - m).exp().sum());
  auto y = detail::softmax_values<S>(v);
  const int ix = x.id();
  return x.tape().record("log_sum_exp", Tensor<S>(Shape{}, Tensor<S>::Vector::Constant(1, value), typename Tensor<S>::Unchecked{}), {ix},
                         [=](const Tensor<S>& g, Tape<S>& t) { t.accumulate(ix, y * g[0]); });
}

/// Mean softmax cross-entropy of logits [B, K] against integer labels.
template <typename S>
Var<S> softmax_xent(Var<S> logits, const std::vector<int>& labels) {
  detail::require_rank("softmax_xent", logits.value(), 2);
  const Index batch = logits.value().dim(0), classes = logits.value().dim(1);
  if (static_cast<Index>(labels.size()) != batch) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  auto lm = logits.value().as_matrix(batch, classes);
  typename Tensor<S>::RowMatrix probs(batch, classes);
  S total = 0;
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw ShapeError("softmax_xent: label out of range");
    const S m = lm.row(b).maxCoeff();
    auto e = (lm.row(b).array() - m).exp();
    const S z = e.sum();
    probs.row(b) = e / z;
    total += std::log(z) + m - lm(b, y);
  }
  const int il = logits.id();
  return logits.tape().record("softmax_xent", Tensor<S>(Shape{}, Tensor<S>::Vector::Constant(1, total / static_cast<S>(batch)), typename Tensor<S>::Unchecked{}),
                              {il}, [=](const Tensor<S>& g, Tape<S>& t) {
                                Tensor<S> gl(Shape{batch, classes});
                                auto gm = gl.as_matrix(batch, classes);
                                gm = probs;
                                for (Index b = 0; b < batch; ++b) {
                                  gm(b, labels[static_cast<std::size_t>(b)]) -= S(1);
                                }
                                gm *= g[0] / static_cast<S>(batch);
                                t.accumulate(il, gl.values());
                              });
}

// ---------------------------------------------------------------------------
// Estimators with surrogate gradients

/// Forward value `forward`, gradient passed unchanged to `surrogate`.
template <typename S>
Var<S> straight_through(Tensor<S> forward, Var<S> surrogate) {
  if (forward.shape() != surrogate.shape()) {
    throw ShapeError("straight_through: forward " + to_string(forward.shape()) + " vs surrogate " +
                     to_string(surrogate.shape()));
  }
  const int is = surrogate.id();
  return surrogate.tape().record("straight_through", std::move(forward), {is},
                                 [is](const Tensor<S>& g, Tape<S>& t) {
                                   t.accumulate(is, g.values());
                                 });
}

/// Symmetric uniform per-tensor quantization onto a q-bit grid.
///
/// Levels are n / L * max|w| for integer |n| <= L = 2^(q-1) - 1. The largest
/// magnitude maps to itself exactly, which makes the map idempotent.
template <typename S>
Tensor<S> fake_quantize_values(const Tensor<S>& w, int bits) {
  if (bits < 2) throw Error("fake_quantize: bit-width must be >= 2, got " + std::to_string(bits));
  const S max_abs = w.values().cwiseAbs().maxCoeff();
  if (max_abs == S(0)) return w;
  const S levels = static_cast<S>((std::int64_t{1} << (bits - 1)) - 1);
  Tensor<S> out = w;
  for (Index i = 0; i < out.size(); ++i) {
    const S n = std::round(w[i] / max_abs * levels);
    out[i] = max_abs * (n / levels);
  }
  return out;
}

/// Fake quantization with a straight-through (identity) gradient.
template <typename S>
Var<S> fake_quantize(Var<S> w, int bits) {
  return straight_through(fake_quantize_values(w.value(), bits), w);
}

}  // namespace edd
