#pragma once

// Reverse-mode differentiation over dense row-major arrays of doubles.
//
// Values recorded on a Tape carry a node id; constants do not.  Adjoint rules
// are written in terms of the same taped operations, so calling grad() with
// create_graph = true records the backward pass itself and the resulting
// gradients can be differentiated once more.  Nesting is capped at two levels.
//
// A Tape and every Tensor that references it must stay on one thread.  Tensors
// hold a raw pointer to their tape; the tape must outlive them.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bsct/chem.hpp"

namespace bsct::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class DomainError : public Error {
 public:
  DomainError(const std::string& op, const std::string& what)
      : Error("domain error in " + op + ": " + what) {}
};

class DepthError : public Error {
 public:
  explicit DepthError(const std::string& what) : Error(what) {}
};

struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  Array(Shape s, std::vector<double> d);
  static Array zeros(Shape s);
  static Array filled(Shape s, double v);
  static Array scalar(double v);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
};

class Tape;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value);
  static Tensor scalar(double v) { return Tensor(Array::scalar(v)); }

  bool defined() const noexcept { return value_ != nullptr; }
  const Array& array() const { return *value_; }
  const Shape& shape() const { return value_->shape; }
  std::size_t rank() const { return value_->shape.size(); }
  std::size_t dim(std::size_t i) const { return value_->shape.at(i); }
  std::size_t size() const { return value_->data.size(); }
  std::span<const double> data() const { return value_->data; }
  double operator[](std::size_t i) const { return value_->data[i]; }
  double item() const;

  Tape* tape() const noexcept { return tape_; }
  bool on_tape() const noexcept { return tape_ != nullptr; }
  int node() const noexcept { return node_; }
  int depth() const noexcept { return depth_; }

  /// Same value, no tape: gradients do not flow through the result.
  Tensor detach() const;

 private:
  friend class Tape;
  std::shared_ptr<const Array> value_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  int depth_ = 0;
};

struct BackwardArgs {
  std::span<const Tensor> inputs;
  const Tensor& output;
  const Tensor& grad;
  std::span<const char> needs;  // needs[i]: gradient w.r.t. inputs[i] is consumed
};

/// Returns one gradient per input; an undefined Tensor means zero.
using BackwardFn = std::function<std::vector<Tensor>(const BackwardArgs&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf.
  Tensor variable(Array value);
  Tensor variable(const Tensor& value) { return variable(value.array()); }

  std::size_t size() const noexcept { return records_.size(); }

  /// Records an operation.  Used by the op library; constants among `inputs`
  /// receive no gradient.
  Tensor record(Array value, std::vector<Tensor> inputs, BackwardFn backward);

 private:
  struct Record {
    std::vector<Tensor> inputs;
    std::shared_ptr<const BackwardFn> backward;  // null for leaves
    std::shared_ptr<const Array> value;
    int depth = 0;
  };

  Tensor handle(int node) const;

  std::vector<Record> records_;
  int active_depth_ = 0;

  friend std::vector<Tensor> grad(const Tensor&, std::span<const Tensor>, bool);
};

/// Gradients of a scalar `output` with respect to `inputs`.  Inputs not on the
/// path to `output` (or not on the tape at all) receive zeros.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool create_graph = false);
inline std::vector<Tensor> grad(const Tensor& output, std::initializer_list<Tensor> inputs,
                                bool create_graph = false) {
  return grad(output, std::span<const Tensor>(inputs.begin(), inputs.size()), create_graph);
}

// ---------------------------------------------------------------------------
// Operations.  Binary elementwise ops broadcast numpy-style (right aligned).
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double p);
Tensor sqrt(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
/// Max along `axis`; the adjoint is routed to the first maximal element.
Tensor max(const Tensor& x, std::size_t axis);

/// 2-D (m×k · k×n) or batched 3-D (b×m×k · b×k×n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums broadcast dimensions away so the result has `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);

/// mask has the output shape; entries != 0 select `a`.
Tensor where(const Array& mask, const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);
/// Rows of x along axis 0; index -1 yields a zero row.
Tensor gather(const Tensor& x, std::span<const int> index);
/// out[index[r]] += src[r]; rows with index -1 are dropped.
Tensor scatter_add(const Tensor& src, std::span<const int> index, std::size_t n_rows);

// Composites built from the primitives above.
Tensor silu(const Tensor& x);
Tensor softmax(const Tensor& x);  // along the last axis
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-5);
/// x[..., in] · w[in, out] + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

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

}  // namespace bsct::ad
