#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsu/error.hpp"
#include "dsu/rng.hpp"

namespace dsu {

class Tape;
class Gradients;

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles. A tensor optionally carries a handle
/// into a Tape; ops propagate the handle so that backward() can replay the
/// chain rule. Forward values are computed identically whether or not the
/// inputs are traced.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor random_normal(const Shape& shape, RngStream& rng);
  static Tensor random_uniform(const Shape& shape, double lo, double hi,
                               RngStream& rng);

  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(values_.size()); }
  int64_t dim(size_t axis) const { return shape_.at(axis); }
  size_t rank() const { return shape_.size(); }

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  double& operator[](int64_t i) { return values_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return values_[static_cast<size_t>(i)]; }

  /// Value of a 1-element tensor.
  double item() const;

  bool traced() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int64_t node() const { return node_; }

  /// Untraced copy of the values.
  Tensor detach() const;

  bool all_finite() const;

 private:
  friend class Tape;
  Shape shape_;
  std::vector<double> values_;
  Tape* tape_ = nullptr;
  int64_t node_ = -1;
};

/// Gradient accumulation callback for one recorded op: slot indexes into the
/// node's parent list; grad has the parent's shape.
using AccumFn = std::function<void(size_t slot, std::vector<double>&& grad)>;
using PullFn = std::function<void(std::span<const double> out_grad,
                                  const AccumFn& accum)>;

/// Reverse-mode tape. Nodes are appended in execution order, so parents
/// always precede their consumers and a single reverse sweep implements
/// backpropagation. One tape per thread of computation.
class Tape {
 public:
  /// Register a tensor as a traced leaf and return the traced copy.
  Tensor var(const Tensor& t);

  int64_t record(std::vector<int64_t> parents, const Shape& shape,
                 PullFn pull);
  Tensor adopt(Tensor value, int64_t node);

  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }
  const Shape& node_shape(int64_t id) const { return nodes_.at(id).shape; }

  friend Gradients backward(const Tape& tape, const Tensor& output);

 private:
  struct Node {
    std::vector<int64_t> parents;
    Shape shape;
    PullFn pull;  // empty for leaves
  };
  std::vector<Node> nodes_;
};

/// Result of backward(): gradient buffers keyed by tape node id. Inputs that
/// did not influence the output get a zero gradient of their own shape.
class Gradients {
 public:
  Tensor at(const Tensor& input) const;
  bool touched(const Tensor& input) const;

 private:
  friend Gradients backward(const Tape& tape, const Tensor& output);
  const Tape* tape_ = nullptr;
  std::unordered_map<int64_t, std::vector<double>> by_node_;
};

Gradients backward(const Tape& tape, const Tensor& scalar_output);

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

/// Sum over the given axes (all axes when empty).
Tensor sum(const Tensor& x, const std::vector<int64_t>& axes = {},
           bool keepdims = false);
Tensor mean(const Tensor& x, const std::vector<int64_t>& axes = {},
            bool keepdims = false);
/// Biased variance (divide by count) over the given axes.
Tensor variance(const Tensor& x, const std::vector<int64_t>& axes = {},
                bool keepdims = false);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Mean softmax cross-entropy of logits [B,K] against integer labels [B].
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels);
/// Mean squared error over all elements.
Tensor squared_error(const Tensor& pred, const Tensor& target);

Shape broadcast_shape(const Shape& a, const Shape& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

/// Central finite differences, (f(x+h e_i) - f(x-h e_i)) / 2h per element.
/// f must be deterministic; any random draws inside it must be frozen.
Tensor finite_difference_gradient(
    const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace dsu
