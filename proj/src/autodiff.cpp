#include "bsct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace bsct::ad {

// ---------------------------------------------------------------------------
// Array / Tensor basics
// ---------------------------------------------------------------------------

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("array of shape " + shape_str(shape) + " given " +
                     std::to_string(data.size()) + " values");
  }
}

Array Array::zeros(Shape s) { return filled(std::move(s), 0.0); }

Array Array::filled(Shape s, double v) {
  Array a;
  a.data.assign(shape_size(s), v);
  a.shape = std::move(s);
  return a;
}

Array Array::scalar(double v) { return Array({}, {v}); }

Tensor::Tensor(Array value) : value_(std::make_shared<const Array>(std::move(value))) {}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return value_->data[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.value_ = value_;
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::handle(int node) const {
  Tensor t;
  t.value_ = records_[static_cast<std::size_t>(node)].value;
  t.tape_ = const_cast<Tape*>(this);
  t.node_ = node;
  t.depth_ = records_[static_cast<std::size_t>(node)].depth;
  return t;
}

Tensor Tape::variable(Array value) {
  Record r;
  r.value = std::make_shared<const Array>(std::move(value));
  r.depth = active_depth_;
  records_.push_back(std::move(r));
  return handle(static_cast<int>(records_.size()) - 1);
}

Tensor Tape::record(Array value, std::vector<Tensor> inputs, BackwardFn backward) {
  int depth = active_depth_;
  for (const auto& in : inputs) {
    if (in.on_tape() && in.tape() != this) throw Error("operands recorded on different tapes");
    depth = std::max(depth, in.depth());
  }
  Record r;
  r.inputs = std::move(inputs);
  r.backward = std::make_shared<const BackwardFn>(std::move(backward));
  r.value = std::make_shared<const Array>(std::move(value));
  r.depth = depth;
  records_.push_back(std::move(r));
  return handle(static_cast<int>(records_.size()) - 1);
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, bool create_graph) {
  if (!output.defined() || output.size() != 1) {
    throw ShapeError("grad() needs a scalar output, got " +
                     (output.defined() ? shape_str(output.shape()) : std::string("undefined")));
  }
  const int level = output.depth() + 1;
  if (level > 2 || (create_graph && level >= 2)) {
    throw DepthError("unsupported differentiation depth: at most two nested levels");
  }

  std::vector<Tensor> result(inputs.size());
  Tape* tape = output.tape();
  if (tape == nullptr) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = Tensor(Array::zeros(inputs[i].shape()));
    return result;
  }

  const auto n_nodes = static_cast<std::size_t>(output.node()) + 1;
  std::vector<char> reaches(n_nodes, 0);
  for (const auto& in : inputs) {
    if (in.on_tape() && in.tape() == tape && static_cast<std::size_t>(in.node()) < n_nodes) {
      reaches[static_cast<std::size_t>(in.node())] = 1;
    }
  }
  for (std::size_t n = 0; n < n_nodes; ++n) {
    if (reaches[n]) continue;
    for (const auto& in : tape->records_[n].inputs) {
      if (in.on_tape() && reaches[static_cast<std::size_t>(in.node())]) {
        reaches[n] = 1;
        break;
      }
    }
  }

  const int saved_depth = tape->active_depth_;
  if (create_graph) tape->active_depth_ = level;

  std::vector<Tensor> adjoint(n_nodes);
  adjoint[n_nodes - 1] = Tensor(Array::filled(output.shape(), 1.0));

  auto accumulate = [&](std::size_t node, const Tensor& g) {
    auto& slot = adjoint[node];
    slot = slot.defined() ? add(slot, g) : g;
  };

  try {
    for (std::size_t n = n_nodes; n-- > 0;) {
      if (!adjoint[n].defined() || !reaches[n]) continue;
      // Copy what we need: recording during create_graph may reallocate records_.
      const auto backward = tape->records_[n].backward;
      if (!backward) continue;
      std::vector<Tensor> ins = tape->records_[n].inputs;
      std::vector<char> needs(ins.size(), 0);
      for (std::size_t i = 0; i < ins.size(); ++i) {
        needs[i] = ins[i].on_tape() && reaches[static_cast<std::size_t>(ins[i].node())];
      }
      if (std::none_of(needs.begin(), needs.end(), [](char c) { return c != 0; })) continue;
      Tensor out = tape->handle(static_cast<int>(n));
      Tensor g = adjoint[n];
      if (!create_graph) {
        for (auto& t : ins) t = t.detach();
        out = out.detach();
        g = g.detach();
      }
      const auto grads = (*backward)(BackwardArgs{ins, out, g, needs});
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!needs[i] || i >= grads.size() || !grads[i].defined()) continue;
        if (grads[i].shape() != ins[i].shape()) {
          throw ShapeError("internal adjoint shape mismatch " + shape_str(grads[i].shape()) +
                           " vs " + shape_str(ins[i].shape()));
        }
        accumulate(static_cast<std::size_t>(tape->records_[n].inputs[i].node()), grads[i]);
      }
      if (!create_graph) adjoint[n] = Tensor();
    }
  } catch (...) {
    tape->active_depth_ = saved_depth;
    throw;
  }
  tape->active_depth_ = saved_depth;

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    if (in.on_tape() && in.tape() == tape && static_cast<std::size_t>(in.node()) < n_nodes &&
        adjoint[static_cast<std::size_t>(in.node())].defined()) {
      result[i] = adjoint[static_cast<std::size_t>(in.node())];
    } else {
      result[i] = Tensor(Array::zeros(in.shape()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

Tape* find_tape(std::initializer_list<const Tensor*> ts) {
  for (const auto* t : ts) {
    if (t->on_tape()) return t->tape();
  }
  return nullptr;
}

template <class F>
Tensor make(Array value, std::initializer_list<const Tensor*> inputs, F&& backward) {
  Tape* tape = find_tape(inputs);
  if (tape == nullptr) return Tensor(std::move(value));
  std::vector<Tensor> ins;
  ins.reserve(inputs.size());
  for (const auto* t : inputs) ins.push_back(*t);
  return tape->record(std::move(value), std::move(ins), BackwardFn(std::forward<F>(backward)));
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` viewed with the rank of `out`; broadcast dimensions get 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t acc = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t d = r - in.size() + k;
    st[d] = in[k] == 1 ? 0 : acc;
    acc *= in[k];
  }
  return st;
}

// Calls f(out_flat, offset_a, offset_b) over `out` in row-major order.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = shape_size(out);
  const std::size_t r = out.size();
  if (r == 0) {
    if (total) f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(flat, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class Op>
Array binary_kernel(const Array& a, const Array& b, Op op, const char* name) {
  if (a.shape == b.shape) {
    Array out;
    out.shape = a.shape;
    out.data.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = op(a.data[i], b.data[i]);
    return out;
  }
  Shape shape = broadcast_shape(a.shape, b.shape, name);
  Array out;
  out.data.resize(shape_size(shape));
  if (shape == a.shape && b.size() == 1) {
    const double bv = b.data[0];
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = op(a.data[i], bv);
  } else if (shape == b.shape && a.size() == 1) {
    const double av = a.data[0];
    for (std::size_t i = 0; i < b.size(); ++i) out.data[i] = op(av, b.data[i]);
  } else {
    const auto sa = broadcast_strides(a.shape, shape);
    const auto sb = broadcast_strides(b.shape, shape);
    for_each_broadcast(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out.data[o] = op(a.data[ia], b.data[ib]);
    });
  }
  out.shape = std::move(shape);
  return out;
}

template <class Op>
Array unary_kernel(const Array& x, Op op) {
  Array out;
  out.shape = x.shape;
  out.data.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = op(x.data[i]);
  return out;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape keepdim_shape(Shape s, std::size_t axis) {
  s[axis] = 1;
  return s;
}

Shape drop_axis(Shape s, std::size_t axis) {
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

std::size_t row_size(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 1; i < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto v = binary_kernel(a.array(), b.array(), std::plus<>(), "add");
  return make(std::move(v), {&a, &b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = sum_to(g.grad, g.inputs[0].shape());
    if (g.needs[1]) r[1] = sum_to(g.grad, g.inputs[1].shape());
    return r;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto v = binary_kernel(a.array(), b.array(), std::minus<>(), "sub");
  return make(std::move(v), {&a, &b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = sum_to(g.grad, g.inputs[0].shape());
    if (g.needs[1]) r[1] = sum_to(neg(g.grad), g.inputs[1].shape());
    return r;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto v = binary_kernel(a.array(), b.array(), std::multiplies<>(), "mul");
  return make(std::move(v), {&a, &b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = sum_to(mul(g.grad, g.inputs[1]), g.inputs[0].shape());
    if (g.needs[1]) r[1] = sum_to(mul(g.grad, g.inputs[0]), g.inputs[1].shape());
    return r;
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto v = binary_kernel(a.array(), b.array(), std::divides<>(), "div");
  return make(std::move(v), {&a, &b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = sum_to(div(g.grad, g.inputs[1]), g.inputs[0].shape());
    if (g.needs[1]) r[1] = sum_to(neg(div(mul(g.grad, g.output), g.inputs[1])), g.inputs[1].shape());
    return r;
  });
}

Tensor neg(const Tensor& x) {
  auto v = unary_kernel(x.array(), [](double t) { return -t; });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{neg(g.grad)};
  });
}

Tensor exp(const Tensor& x) {
  auto v = unary_kernel(x.array(), [](double t) { return std::exp(t); });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{mul(g.grad, g.output)};
  });
}

Tensor log(const Tensor& x) {
  for (double t : x.data()) {
    if (!(t > 0.0)) throw DomainError("log", "argument must be strictly positive, got " + std::to_string(t));
  }
  auto v = unary_kernel(x.array(), [](double t) { return std::log(t); });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{div(g.grad, g.inputs[0])};
  });
}

Tensor pow(const Tensor& x, double p) {
  if (p != std::floor(p)) {
    for (double t : x.data()) {
      if (t < 0.0) throw DomainError("pow", "negative base with non-integer exponent");
    }
  }
  auto v = unary_kernel(x.array(), [p](double t) { return std::pow(t, p); });
  return make(std::move(v), {&x}, [p](const BackwardArgs& g) {
    if (p == 0.0) return std::vector<Tensor>{Tensor(Array::zeros(g.inputs[0].shape()))};
    return std::vector<Tensor>{mul(g.grad, mul(Tensor::scalar(p), pow(g.inputs[0], p - 1.0)))};
  });
}

Tensor sqrt(const Tensor& x) {
  for (double t : x.data()) {
    if (!(t >= 0.0)) throw DomainError("sqrt", "argument must be nonnegative, got " + std::to_string(t));
  }
  auto v = unary_kernel(x.array(), [](double t) { return std::sqrt(t); });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{div(mul(g.grad, Tensor::scalar(0.5)), g.output)};
  });
}

Tensor tanh(const Tensor& x) {
  auto v = unary_kernel(x.array(), [](double t) { return std::tanh(t); });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{mul(g.grad, sub(Tensor::scalar(1.0), mul(g.output, g.output)))};
  });
}

Tensor sigmoid(const Tensor& x) {
  auto v = unary_kernel(x.array(), [](double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{mul(g.grad, mul(g.output, sub(Tensor::scalar(1.0), g.output)))};
  });
}

Tensor abs(const Tensor& x) {
  auto v = unary_kernel(x.array(), [](double t) { return std::abs(t); });
  return make(std::move(v), {&x}, [](const BackwardArgs& g) {
    Tensor sign(unary_kernel(g.inputs[0].array(), [](double t) {
      return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
    }));
    return std::vector<Tensor>{mul(g.grad, sign)};
  });
}

Tensor square(const Tensor& x) { return mul(x, x); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double t : x.data()) s += t;
  return make(Array::scalar(s), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{broadcast_to(g.grad, g.inputs[0].shape())};
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "sum");
  Array out = Array::zeros(drop_axis(x.shape(), axis));
  const auto& d = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.len; ++l) {
      const double* src = d.data() + (o * sp.len + l) * sp.inner;
      double* dst = out.data.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make(std::move(out), {&x}, [axis](const BackwardArgs& g) {
    const auto& s = g.inputs[0].shape();
    return std::vector<Tensor>{broadcast_to(reshape(g.grad, keepdim_shape(s, axis)), s)};
  });
}

Tensor mean(const Tensor& x) {
  return div(sum(x), Tensor::scalar(static_cast<double>(std::max<std::size_t>(x.size(), 1))));
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto len = split_axis(x.shape(), axis, "mean").len;
  return div(sum(x, axis), Tensor::scalar(static_cast<double>(len)));
}

Tensor max(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "max");
  if (sp.len == 0) throw ShapeError("max over empty axis");
  Array out = Array::zeros(drop_axis(x.shape(), axis));
  auto mask = std::make_shared<Array>(Array::zeros(x.shape()));
  const auto& d = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = d[(o * sp.len) * sp.inner + i];
      for (std::size_t l = 1; l < sp.len; ++l) {
        const double v = d[(o * sp.len + l) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = l;
        }
      }
      out.data[o * sp.inner + i] = bv;
      mask->data[(o * sp.len + best) * sp.inner + i] = 1.0;
    }
  }
  return make(std::move(out), {&x}, [axis, mask](const BackwardArgs& g) {
    const auto& s = g.inputs[0].shape();
    Tensor m(*mask);
    return std::vector<Tensor>{mul(broadcast_to(reshape(g.grad, keepdim_shape(s, axis)), s), m)};
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape manipulation
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0];
    k = sa[1];
    n = sb[1];
    if (sb[0] != k) throw ShapeError("matmul: " + shape_str(sa) + " · " + shape_str(sb));
    out_shape = {m, n};
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    if (sb[0] != batch || sb[1] != k) throw ShapeError("matmul: " + shape_str(sa) + " · " + shape_str(sb));
    out_shape = {batch, m, n};
  } else {
    throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " · " + shape_str(sb));
  }
  Array out = Array::zeros(out_shape);
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data.data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double* Ab = A + bi * m * k;
    const double* Bb = B + bi * k * n;
    double* Cb = C + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = Cb + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = Ab[i * k + p];
        if (av == 0.0) continue;
        const double* brow = Bb + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return make(std::move(out), {&a, &b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = matmul(g.grad, transpose(g.inputs[1]));
    if (g.needs[1]) r[1] = matmul(transpose(g.inputs[0]), g.grad);
    return r;
  });
}

Tensor transpose(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  const std::size_t batch = x.size() / std::max<std::size_t>(r * c, 1);
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  Array out;
  out.shape = os;
  out.data.resize(x.size());
  const auto& d = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out.data[b * r * c + j * r + i] = d[b * r * c + i * c + j];
    }
  }
  return make(std::move(out), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{transpose(g.grad)};
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Array out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  return make(std::move(out), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{reshape(g.grad, g.inputs[0].shape())};
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) {
    throw ShapeError("broadcast_to " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Array out;
  out.data.resize(shape_size(shape));
  const auto sx = broadcast_strides(x.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  const auto& d = x.data();
  for_each_broadcast(shape, sx, zero, [&](std::size_t o, std::size_t ix, std::size_t) { out.data[o] = d[ix]; });
  out.shape = shape;
  return make(std::move(out), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{sum_to(g.grad, g.inputs[0].shape())};
  });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape(shape, x.shape(), "sum_to") != x.shape()) {
    throw ShapeError("sum_to " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Array out = Array::zeros(shape);
  const auto st = broadcast_strides(shape, x.shape());
  const std::vector<std::size_t> zero(x.rank(), 0);
  const auto& d = x.data();
  for_each_broadcast(x.shape(), st, zero, [&](std::size_t i, std::size_t o, std::size_t) { out.data[o] += d[i]; });
  return make(std::move(out), {&x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{broadcast_to(g.grad, g.inputs[0].shape())};
  });
}

Tensor where(const Array& mask, const Tensor& a, const Tensor& b) {
  const Shape& shape = mask.shape;
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  if (broadcast_shape(a.shape(), shape, "where") != shape || broadcast_shape(b.shape(), shape, "where") != shape) {
    throw ShapeError("where: operands " + shape_str(a.shape()) + ", " + shape_str(b.shape()) +
                     " do not broadcast to mask " + shape_str(shape));
  }
  Array out = Array::zeros(shape);
  const auto& da = a.data();
  const auto& db = b.data();
  for_each_broadcast(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out.data[o] = mask.data[o] != 0.0 ? da[ia] : db[ib];
  });
  auto m = std::make_shared<Array>(unary_kernel(mask, [](double t) { return t != 0.0 ? 1.0 : 0.0; }));
  return make(std::move(out), {&a, &b}, [m](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = sum_to(mul(g.grad, Tensor(*m)), g.inputs[0].shape());
    if (g.needs[1]) {
      Tensor inv(unary_kernel(*m, [](double t) { return 1.0 - t; }));
      r[1] = sum_to(mul(g.grad, inv), g.inputs[1].shape());
    }
    return r;
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = split_axis(x.shape(), axis, "slice");
  if (begin > end || end > sp.len) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of axis length " +
                     std::to_string(sp.len));
  }
  Shape os = x.shape();
  os[axis] = end - begin;
  Array out = Array::zeros(os);
  const auto& d = x.data();
  const std::size_t w = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(d.data() + (o * sp.len + begin) * sp.inner, w, out.data.data() + o * w);
  }
  return make(std::move(out), {&x}, [axis, begin, end](const BackwardArgs& g) {
    const std::size_t len = g.inputs[0].shape()[axis];
    return std::vector<Tensor>{pad(g.grad, axis, begin, len - end)};
  });
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  const auto sp = split_axis(x.shape(), axis, "pad");
  Shape os = x.shape();
  const std::size_t new_len = sp.len + before + after;
  os[axis] = new_len;
  Array out = Array::zeros(os);
  const auto& d = x.data();
  const std::size_t w = sp.len * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(d.data() + o * w, w, out.data.data() + (o * new_len + before) * sp.inner);
  }
  return make(std::move(out), {&x}, [axis, before](const BackwardArgs& g) {
    const std::size_t len = g.inputs[0].shape()[axis];
    return std::vector<Tensor>{slice(g.grad, axis, before, before + len)};
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Shape os = xs[0].shape();
  split_axis(os, axis, "concat");
  std::size_t total = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = os;
    if (a.size() != b.size()) throw ShapeError("concat rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    total += t.shape()[axis];
  }
  os[axis] = total;
  Array out = Array::zeros(os);
  const auto sp = split_axis(os, axis, "concat");
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    const std::size_t len = t.shape()[axis];
    offsets.push_back(off);
    const auto& d = t.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(d.data() + o * len * sp.inner, len * sp.inner,
                  out.data.data() + (o * total + off) * sp.inner);
    }
    off += len;
  }
  Tape* tape = nullptr;
  for (const auto& t : xs) {
    if (t.on_tape()) {
      tape = t.tape();
      break;
    }
  }
  if (tape == nullptr) return Tensor(std::move(out));
  return tape->record(std::move(out), xs, [axis, offsets](const BackwardArgs& g) {
    std::vector<Tensor> r(g.inputs.size());
    for (std::size_t i = 0; i < g.inputs.size(); ++i) {
      if (!g.needs[i]) continue;
      r[i] = slice(g.grad, axis, offsets[i], offsets[i] + g.inputs[i].shape()[axis]);
    }
    return r;
  });
}

Tensor gather(const Tensor& x, std::span<const int> index) {
  if (x.rank() == 0) throw ShapeError("gather on scalar");
  const std::size_t rows = x.shape()[0];
  const std::size_t rs = row_size(x.shape());
  Shape os = x.shape();
  os[0] = index.size();
  Array out = Array::zeros(os);
  const auto& d = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int i = index[r];
    if (i < 0) continue;
    if (static_cast<std::size_t>(i) >= rows) throw ShapeError("gather index out of range");
    std::copy_n(d.data() + static_cast<std::size_t>(i) * rs, rs, out.data.data() + r * rs);
  }
  if (!x.on_tape()) return Tensor(std::move(out));
  auto idx = std::make_shared<const std::vector<int>>(index.begin(), index.end());
  return make(std::move(out), {&x}, [idx](const BackwardArgs& g) {
    return std::vector<Tensor>{scatter_add(g.grad, *idx, g.inputs[0].shape()[0])};
  });
}

Tensor scatter_add(const Tensor& src, std::span<const int> index, std::size_t n_rows) {
  if (src.rank() == 0 || src.shape()[0] != index.size()) {
    throw ShapeError("scatter_add: " + shape_str(src.shape()) + " with " + std::to_string(index.size()) +
                     " indices");
  }
  const std::size_t rs = row_size(src.shape());
  Shape os = src.shape();
  os[0] = n_rows;
  Array out = Array::zeros(os);
  const auto& d = src.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int i = index[r];
    if (i < 0) continue;
    if (static_cast<std::size_t>(i) >= n_rows) throw ShapeError("scatter_add index out of range");
    double* dst = out.data.data() + static_cast<std::size_t>(i) * rs;
    const double* s = d.data() + r * rs;
    for (std::size_t c = 0; c < rs; ++c) dst[c] += s[c];
  }
  if (!src.on_tape()) return Tensor(std::move(out));
  auto idx = std::make_shared<const std::vector<int>>(index.begin(), index.end());
  return make(std::move(out), {&src}, [idx](const BackwardArgs& g) {
    return std::vector<Tensor>{gather(g.grad, *idx)};
  });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Tensor silu(const Tensor& x) { return mul(x, sigmoid(x)); }

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax on scalar");
  const std::size_t axis = x.rank() - 1;
  Shape keep = keepdim_shape(x.shape(), axis);
  // Shift by the (detached) row max; softmax is invariant to it.
  Tensor shift = reshape(max(x.detach(), axis), keep);
  Tensor e = exp(sub(x, shift));
  return div(e, reshape(sum(e, axis), keep));
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  const std::size_t axis = x.rank() - 1;
  Shape keep = keepdim_shape(x.shape(), axis);
  Tensor mu = reshape(mean(x, axis), keep);
  Tensor centered = sub(x, mu);
  Tensor var = reshape(mean(square(centered), axis), keep);
  Tensor normed = div(centered, sqrt(add(var, Tensor::scalar(eps))));
  return add(mul(normed, scale), shift);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y;
  if (x.rank() == 2) {
    y = matmul(x, w);
  } else {
    const std::size_t in = x.shape().back();
    Shape flat{x.size() / std::max<std::size_t>(in, 1), in};
    Shape os = x.shape();
    os.back() = w.shape()[1];
    y = reshape(matmul(reshape(x, flat), w), os);
  }
  return b.defined() ? add(y, b) : y;
}

}  // namespace bsct::ad
