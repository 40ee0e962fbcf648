#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sne/error.hpp"

namespace sne::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of doubles.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(element_count(shape), fill) {}
  Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != element_count(shape))
      throw InvalidArgument("array payload of " + std::to_string(data.size()) +
                            " values does not match shape " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.empty() ? 1 : size() / std::max<std::size_t>(shape[0], 1); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  const std::vector<double>& values() const;
  const std::vector<double>& grad() const;
  bool requires_grad() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return values().size(); }
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of operations. Single-threaded; independent tapes may
/// be used from different threads.
class Tape {
 public:
  struct Node {
    std::string op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> backward;  // reads this node's grad, accumulates into inputs
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that gradients are tracked for.
  Tensor variable(Array a) { return leaf("variable", std::move(a), true); }
  Tensor variable(Shape shape, std::vector<double> values) {
    return variable(Array(std::move(shape), std::move(values)));
  }
  Tensor constant(Array a) { return leaf("constant", std::move(a), false); }
  Tensor constant(Shape shape, std::vector<double> values) {
    return constant(Array(std::move(shape), std::move(values)));
  }

  /// Records the result of an operation. `backward` is invoked once during
  /// the reverse sweep, after this node's gradient is complete.
  Tensor record(std::string op, Shape shape, std::vector<double> value,
                std::initializer_list<Tensor> inputs, std::function<void()> backward) {
    bool needs = false;
    for (const Tensor& t : inputs) {
      if (t.valid() && &t.tape() != this) throw InvalidArgument(op + ": operands live on different tapes");
      needs = needs || node(t.id()).requires_grad;
    }
    return record_impl(std::move(op), std::move(shape), std::move(value), needs, std::move(backward));
  }

  Tensor record(std::string op, Shape shape, std::vector<double> value,
                const std::vector<Tensor>& inputs, std::function<void()> backward) {
    bool needs = false;
    for (const Tensor& t : inputs) {
      if (&t.tape() != this) throw InvalidArgument(op + ": operands live on different tapes");
      needs = needs || node(t.id()).requires_grad;
    }
    return record_impl(std::move(op), std::move(shape), std::move(value), needs, std::move(backward));
  }

  /// Reverse sweep from a scalar. Gradients of all tracked nodes are reset
  /// first, so calling this twice yields identical results.
  void backward(Tensor loss) {
    if (&loss.tape() != this) throw InvalidArgument("backward: loss lives on a different tape");
    if (node(loss.id()).value.size() != 1)
      throw InvalidArgument("backward needs a scalar loss, got shape " +
                            shape_string(node(loss.id()).shape));
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward();
    }
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// When set, every recorded value is scanned for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  Tensor leaf(const char* op, Array a, bool requires_grad) {
    return record_impl(op, std::move(a.shape), std::move(a.data), requires_grad, nullptr);
  }

  Tensor record_impl(std::string op, Shape shape, std::vector<double> value, bool requires_grad,
                     std::function<void()> backward) {
    if (value.size() != element_count(shape))
      throw InvalidArgument(op + ": value size does not match shape " + shape_string(shape));
    if (check_finite_)
      for (double v : value)
        if (!std::isfinite(v)) throw NumericalError(op + " produced a non-finite value");
    Node n;
    n.op = std::move(op);
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

inline const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
inline const std::vector<double>& Tensor::values() const { return tape_->node(id_).value; }
inline const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }
inline bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
inline std::size_t Tensor::rows() const { return shape().empty() ? 1 : shape()[0]; }
inline std::size_t Tensor::cols() const {
  const std::size_t r = rows();
  return r == 0 ? 0 : size() / r;
}
inline double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item() on a non-scalar tensor");
  return values()[0];
}

}  // namespace sne::ad
