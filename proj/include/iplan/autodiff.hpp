#pragma once

// Minimal reverse-mode differentiation over dense float64 arrays.
//
// A Tape records every operation as a node holding its value; nodes are
// appended in creation order, which is already a topological order, so
// backward() is one reverse sweep. Tensors are cheap handles into a tape.
//
// Shape rules: element-wise ops need identical shapes. The only broadcast is
// the row bias in affine(). Tensors are 0-D (scalar), 1-D or 2-D; matmul works
// on 2-D operands. Violations throw ShapeError with the op name.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iplan::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  double item() const;  // requires a single element
  double operator[](std::size_t i) const { return values()[i]; }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the tape and the node id being back-propagated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives gradients.
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor variable(Shape shape, std::span<const double> values);
  /// Leaf that never receives gradients.
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double value) { return constant({}, {value}); }

  /// Records a derived node. `inputs` are the operands; the node tracks
  /// gradients iff any operand does, and `backward` is dropped otherwise.
  Tensor record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                BackwardFn backward);

  /// Reverse sweep from a scalar root. Calling it twice without zero_grad()
  /// throws std::logic_error.
  void backward(const Tensor& root);
  void zero_grad();

  /// Gradient of the last backward root w.r.t. t (zeros if none reached it).
  std::span<const double> grad(const Tensor& t) const;

  // Used by backward rules.
  std::span<const double> value_of(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }
  bool tracks(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Mutable gradient buffer of a tracked node; empty span for untracked ones.
  std::span<double> accumulate(std::size_t id);

  std::size_t node_count() const { return nodes_.size(); }
  void reserve(std::size_t nodes) { nodes_.reserve(nodes); }

 private:
  friend class Tensor;
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<std::size_t> inputs;
  };
  Tensor push(Node node);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Element-wise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

// Scalar constants.
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Unary.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + exp(a)), stable for any a
Tensor abs(const Tensor& a);       // subgradient 0 at 0
Tensor sqrt(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
/// Gradient passes only where lo <= a <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Same value, no gradient.
Tensor stop_gradient(const Tensor& a);

// Linear algebra. matmul: (r x k) * (k x c). affine: x (r x in), w (in x out),
// bias (out) added to every row.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);

// Reductions.
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
/// Per-row sum of a 2-D tensor, returns 1-D of length rows.
Tensor sum_rows(const Tensor& a);

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
/// 1-D: joins along the only axis. 2-D: axis 0 stacks rows, axis 1 joins columns.
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
/// Range [begin, end) along `axis` (1-D or 2-D).
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// out.flat[i] = a.flat[indices[i]], reshaped to `shape`; backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape);

}  // namespace iplan::ad
