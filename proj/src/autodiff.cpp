#include "iplan/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace iplan::ad {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor / Tape

const Shape& Tensor::shape() const { return tape_->nodes_[id_].shape; }
std::size_t Tensor::size() const { return tape_->nodes_[id_].value.size(); }
std::span<const double> Tensor::values() const { return tape_->nodes_[id_].value; }
bool Tensor::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor has shape " + shape_string(shape()));
  return values()[0];
}

Tensor Tape::push(Node node) {
  if (node.value.size() != element_count(node.shape))
    throw ShapeError("tape: value count " + std::to_string(node.value.size()) +
                     " does not match shape " + shape_string(node.shape));
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Tape::variable(Shape shape, std::span<const double> values) {
  return variable(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  return push(std::move(n));
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                    BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  for (const Tensor& in : inputs) {
    if (in.tape_ != this) throw std::logic_error("tape: operand belongs to another tape");
    assert(in.id_ < nodes_.size());
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(const Tensor& root) {
  if (root.tape_ != this) throw std::logic_error("backward: root belongs to another tape");
  if (root.size() != 1)
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(root.shape()));
  if (backward_done_) throw std::logic_error("backward: already run; call zero_grad() first");
  backward_done_ = true;

  for (Node& n : nodes_)
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  if (!nodes_[root.id_].requires_grad) return;

  std::vector<char> reached(nodes_.size(), 0);
  reached[root.id_] = 1;
  nodes_[root.id_].grad[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    if (!reached[i]) continue;
    Node& n = nodes_[i];
    if (!n.backward) continue;
    for (std::size_t in : n.inputs) {
      assert(in < i && "tape is acyclic by construction");
      if (nodes_[in].requires_grad) reached[in] = 1;
    }
    n.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  backward_done_ = false;
}

std::span<const double> Tape::grad(const Tensor& t) const {
  const Node& n = nodes_[t.id_];
  if (n.grad.size() != n.value.size())
    throw std::logic_error("grad: tensor does not track gradients or backward not run");
  return n.grad;
}

std::span<double> Tape::accumulate(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  return n.grad;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw std::logic_error(std::string(op) + ": operands must live on the same tape");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

void require_2d(const Tensor& a, const char* op) {
  if (a.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_string(a.shape()));
}

// Unary op from value map f and derivative df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  const Tensor in[] = {a};
  return a.tape()->record(a.shape(), std::move(y), in, [ia, df](Tape& t, std::size_t self) {
    const auto xv = t.value_of(ia);
    const auto yv = t.value_of(self);
    const auto g = t.grad_of(self);
    auto ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Element-wise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Tensor in[] = {a, b};
  return a.tape()->record(a.shape(), std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    for (std::size_t id : {ia, ib}) {
      auto acc = t.accumulate(id);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Tensor in[] = {a, b};
  return a.tape()->record(a.shape(), std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto ga = t.accumulate(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = t.accumulate(ib);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Tensor in[] = {a, b};
  return a.tape()->record(a.shape(), std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto xv = t.value_of(ia), yv = t.value_of(ib);
    auto ga = t.accumulate(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * yv[i];
    auto gb = t.accumulate(ib);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * xv[i];
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor stop_gradient(const Tensor& a) {
  return a.tape()->constant(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b, "matmul");
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  const auto x = a.values(), y = b.values();
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = &y[p * c];
      double* orow = &out[i * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += xv * yrow[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  const Tensor in[] = {a, b};
  return a.tape()->record({r, c}, std::move(out), in, [ia, ib, r, k, c](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto xv = t.value_of(ia), yv = t.value_of(ib);
    auto ga = t.accumulate(ia);
    if (!ga.empty())
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * yv[p * c + j];
          ga[i * k + p] += s;
        }
    auto gb = t.accumulate(ib);
    if (!gb.empty())
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xval = xv[i * k + p];
          if (xval == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) gb[p * c + j] += xval * g[i * c + j];
        }
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_same_tape(x, w, "affine");
  require_same_tape(x, bias, "affine");
  require_2d(x, "affine");
  require_2d(w, "affine");
  const std::size_t r = x.shape()[0], k = x.shape()[1], c = w.shape()[1];
  if (w.shape()[0] != k)
    throw ShapeError("affine: input width " + std::to_string(k) + " vs weight " +
                     shape_string(w.shape()));
  if (bias.shape() != Shape{c})
    throw ShapeError("affine: bias shape " + shape_string(bias.shape()) + ", expected [" +
                     std::to_string(c) + "]");
  const auto xv = x.values(), wv = w.values(), bv = bias.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = &out[i * c];
    for (std::size_t j = 0; j < c; ++j) orow[j] = bv[j];
    for (std::size_t p = 0; p < k; ++p) {
      const double v = xv[i * k + p];
      if (v == 0.0) continue;
      const double* wrow = &wv[p * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += v * wrow[j];
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  const Tensor in[] = {x, w, bias};
  return x.tape()->record({r, c}, std::move(out), in,
                          [ix, iw, ib, r, k, c](Tape& t, std::size_t self) {
                            const auto g = t.grad_of(self);
                            const auto xval = t.value_of(ix), wval = t.value_of(iw);
                            auto gx = t.accumulate(ix);
                            if (!gx.empty())
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                  double s = 0.0;
                                  const double* wrow = &wval[p * c];
                                  const double* grow = &g[i * c];
                                  for (std::size_t j = 0; j < c; ++j) s += grow[j] * wrow[j];
                                  gx[i * k + p] += s;
                                }
                            auto gw = t.accumulate(iw);
                            if (!gw.empty())
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                  const double v = xval[i * k + p];
                                  if (v == 0.0) continue;
                                  double* gwrow = &gw[p * c];
                                  const double* grow = &g[i * c];
                                  for (std::size_t j = 0; j < c; ++j) gwrow[j] += v * grow[j];
                                }
                            auto gb = t.accumulate(ib);
                            if (!gb.empty())
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                          });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t ia = a.id();
  const Tensor in[] = {a};
  return a.tape()->record({}, {s}, in, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.accumulate(ia)) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  require_2d(a, "sum_rows");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto x = a.values();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  const std::size_t ia = a.id();
  const Tensor in[] = {a};
  return a.tape()->record({r}, std::move(out), in, [ia, r, c](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto ga = t.accumulate(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Structure

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  const std::size_t ia = a.id();
  const Tensor in[] = {a};
  return a.tape()->record(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()),
                          in, [ia](Tape& t, std::size_t self) {
                            const auto g = t.grad_of(self);
                            auto ga = t.accumulate(ia);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape* tape = parts[0].tape();
  const std::size_t rank = parts[0].shape().size();
  if (rank == 0 || rank > 2 || axis >= rank)
    throw ShapeError("concat: unsupported rank/axis for " + shape_string(parts[0].shape()));
  for (const Tensor& p : parts) {
    if (p.tape() != tape) throw std::logic_error("concat: operands must live on the same tape");
    if (p.shape().size() != rank) throw ShapeError("concat: rank mismatch");
    if (rank == 2 && p.shape()[1 - axis] != parts[0].shape()[1 - axis])
      throw ShapeError("concat: off-axis extent mismatch " + shape_string(p.shape()) + " vs " +
                       shape_string(parts[0].shape()));
  }

  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) out_shape[axis] += p.shape()[axis];

  // Flat source offsets for each output element block.
  std::vector<double> out;
  out.reserve(element_count(out_shape));
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    ids.push_back(p.id());
    widths.push_back(p.shape()[axis]);
  }
  const std::size_t rows = (rank == 2 && axis == 1) ? out_shape[0] : 1;
  if (rank == 1 || axis == 0) {
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  } else {
    for (std::size_t i = 0; i < rows; ++i)
      for (const Tensor& p : parts) {
        const std::size_t w = p.shape()[1];
        const auto v = p.values();
        out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * w),
                   v.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
      }
  }
  const bool columns = rank == 2 && axis == 1;
  return tape->record(std::move(out_shape), std::move(out), parts,
                      [ids, widths, columns, rows](Tape& t, std::size_t self) {
                        const auto g = t.grad_of(self);
                        if (!columns) {
                          std::size_t off = 0;
                          for (std::size_t id : ids) {
                            const std::size_t n = t.value_of(id).size();
                            auto acc = t.accumulate(id);
                            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[off + i];
                            off += n;
                          }
                          return;
                        }
                        std::size_t total = 0;
                        for (std::size_t w : widths) total += w;
                        std::size_t col = 0;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          auto acc = t.accumulate(ids[k]);
                          if (!acc.empty())
                            for (std::size_t i = 0; i < rows; ++i)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                acc[i * widths[k] + j] += g[i * total + col + j];
                          col += widths[k];
                        }
                      });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.empty() || s.size() > 2 || axis >= s.size())
    throw ShapeError("slice: unsupported rank/axis for " + shape_string(s));
  if (begin > end || end > s[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of extent " + std::to_string(s[axis]));
  std::vector<std::size_t> idx;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  if (s.size() == 1) {
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  } else if (axis == 0) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < s[1]; ++j) idx.push_back(i * s[1] + j);
  } else {
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = begin; j < end; ++j) idx.push_back(i * s[1] + j);
  }
  return gather(a, std::move(idx), std::move(out_shape));
}

Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  if (element_count(shape) != indices.size())
    throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " +
                     shape_string(shape));
  const auto x = a.values();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size())
      throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range " +
                       std::to_string(x.size()));
    out[i] = x[indices[i]];
  }
  const std::size_t ia = a.id();
  const Tensor in[] = {a};
  return a.tape()->record(std::move(shape), std::move(out), in,
                          [ia, indices = std::move(indices)](Tape& t, std::size_t self) {
                            const auto g = t.grad_of(self);
                            auto ga = t.accumulate(ia);
                            for (std::size_t i = 0; i < indices.size(); ++i) ga[indices[i]] += g[i];
                          });
}

}  // namespace iplan::ad
