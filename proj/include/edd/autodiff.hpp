#pragma once

#include <edd/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace edd {

/// Trainable leaf. The tape accumulates into `grad` during backward.
template <typename Scalar>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor<Scalar> init)
      : name(std::move(name)), value(std::move(init)), grad(Tensor<Scalar>::zeros(value.shape())) {}

  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = true;

  void zero_grad() { grad = Tensor<Scalar>::zeros(value.shape()); }
};

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  Scalar item() const { return value().item(); }
  Scalar operator[](Index i) const { return value()[i]; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode gradient record.
///
/// Nodes are appended in execution order, so every input id precedes its
/// consumer and a single reverse sweep visits each node exactly once. Values
/// are checked for finiteness as they are recorded; the error names the
/// primitive that produced the bad value.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Vector = typename TensorT::Vector;
  /// Receives the gradient of the node's output and the tape, and
  /// accumulates into the node's inputs.
  using Backward = std::function<void(const TensorT& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value) { return push("constant", std::move(value), {}, {}, false); }

  Var<Scalar> constant(Scalar value) { return constant(TensorT::scalar(value)); }

  /// Binds a parameter as a leaf. Frozen parameters enter as constants.
  Var<Scalar> leaf(Parameter<Scalar>& param) {
    Var<Scalar> v = push("leaf", param.value, {}, {}, param.requires_grad);
    if (param.requires_grad) nodes_.back().param = &param;
    return v;
  }

  Var<Scalar> record(const char* op, TensorT value, std::vector<int> inputs, Backward backward) {
    bool needs = false;
    for (int in : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(in)).requires_grad;
    return push(op, std::move(value), std::move(inputs), needs ? std::move(backward) : Backward{},
                needs);
  }

  const TensorT& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const char* op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() with respect to node `id`.
  TensorT grad(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.size() == n.value.size()) return TensorT(n.value.shape(), n.grad, typename TensorT::Unchecked{});
    return TensorT::zeros(n.value.shape());
  }

  /// Adds `g` (flat, same size as the node value) into the node's gradient.
  void accumulate(int id, const Vector& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() != n.value.size()) n.grad = Vector::Zero(n.value.size());
    n.grad += g;
  }

  /// Runs the reverse sweep from a scalar node and accumulates leaf gradients
  /// into their bound parameters.
  void backward(Var<Scalar> loss) {
    const Node& root = nodes_.at(static_cast<std::size_t>(loss.id()));
    if (root.value.size() != 1) {
      throw ShapeError(std::string("backward: loss must be scalar, got ") +
                       to_string(root.value.shape()) + " from " + root.op);
    }
    for (Node& n : nodes_) n.grad.resize(0);
    accumulate(loss.id(), Vector::Ones(1));
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0) continue;
      if (n.backward) {
        TensorT g(n.value.shape(), n.grad, typename TensorT::Unchecked{});
        n.backward(g, *this);
      }
      if (n.param != nullptr) n.param->grad.values() += n.grad;
    }
  }

 private:
  struct Node {
    const char* op = "";
    TensorT value;
    Vector grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(const char* op, TensorT value, std::vector<int> inputs, Backward backward,
                   bool requires_grad) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by '") + op + "' with shape " +
                         to_string(value.shape()));
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

/// Central-difference gradient check.
///
/// `loss` builds the scalar objective on a fresh tape from the current
/// parameter values. Returns max |g_ad - g_fd| / max(1, |g_fd|) over every
/// coordinate of every parameter.
template <typename Scalar, typename LossFn>
double finite_diff_check(LossFn&& loss, const std::vector<Parameter<Scalar>*>& params,
                         double epsilon) {
  if (!(epsilon > 0)) throw Error("finite_diff_check: epsilon must be positive");
  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape;
    Var<Scalar> l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&]() {
    Tape<Scalar> tape;
    return static_cast<double>(loss(tape).item());
  };
  double worst = 0.0;
  for (auto* p : params) {
    for (Index j = 0; j < p->value.size(); ++j) {
      const Scalar saved = p->value[j];
      p->value[j] = saved + static_cast<Scalar>(epsilon);
      const double up = eval();
      p->value[j] = saved - static_cast<Scalar>(epsilon);
      const double down = eval();
      p->value[j] = saved;
      const double fd = (up - down) / (2 * epsilon);
      const double ad = static_cast<double>(p->grad[j]);
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace edd
