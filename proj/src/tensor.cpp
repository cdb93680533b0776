#include "samtta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace samtta {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Position on the tape that produced this tensor, or -1 for leaves.
  std::int64_t node = -1;
  std::uint64_t graph_id = 0;
};

}  // namespace detail

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local Graph g_graph;
thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

const std::vector<double>& values(const Tensor& t) { return t.impl()->data; }

}  // namespace

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::scalar(double value) { return Tensor(new_impl({}, {value})); }

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  auto impl = new_impl(std::move(shape), std::move(data));
  impl->requires_grad = true;
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_data() { return impl_->data; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw GraphError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_->node < 0; }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::vector<double> Tensor::grad_or_zeros() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(new_impl(impl_->shape, impl_->data)); }

Tensor Tensor::clone() const {
  auto impl = new_impl(impl_->shape, impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

double* Tensor::grad_sink() const {
  if (!impl_->requires_grad) return nullptr;
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

namespace {

template <typename Inputs>
std::shared_ptr<TensorImpl> make_result_impl(const char* op, Shape shape, std::vector<double> data,
                                             const Inputs& inputs,
                                             std::function<void(std::span<const double>)> backward_fn) {
  auto impl = new_impl(std::move(shape), std::move(data));
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    impl->node = static_cast<std::int64_t>(g_graph.append({op, impl, std::move(backward_fn)}));
    impl->graph_id = g_graph.id();
  }
  return impl;
}

}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward_fn) {
  return Tensor(make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward_fn)));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward_fn) {
  return Tensor(make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward_fn)));
}

std::size_t Graph::append(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Graph::backward_from(const TensorImpl& loss) {
  if (loss.graph_id != id_ || loss.node < 0 || static_cast<std::size_t>(loss.node) >= nodes_.size()) {
    throw GraphError("backward on a tensor whose graph was already consumed");
  }
  auto& seed = nodes_[static_cast<std::size_t>(loss.node)].output->grad;
  if (seed.empty()) seed.assign(1, 0.0);
  seed[0] += 1.0;
  for (auto i = loss.node; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
  clear();
}

void Graph::clear() {
  nodes_.clear();
  ++id_;
}

Graph& current_graph() { return g_graph; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& impl = *loss.impl();
  if (impl.node < 0) {
    // Nothing recorded depends on a trainable leaf: all gradients stay zero.
    g_graph.clear();
    return;
  }
  g_graph.backward_from(impl);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { None, LeftScalar, RightScalar };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (b.numel() == 1) return Broadcast::RightScalar;
  if (a.numel() == 1) return Broadcast::LeftScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

// Applies f(x, y) with broadcast; dfa/dfb give partial derivatives.
template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto mode = check_binary(op, a, b);
  const auto& av = values(a);
  const auto& bv = values(b);
  Shape shape = mode == Broadcast::LeftScalar ? b.shape() : a.shape();
  std::size_t n = shape_numel(shape);
  auto ia = [&](std::size_t i) { return mode == Broadcast::LeftScalar ? av[0] : av[i]; };
  auto ib = [&](std::size_t i) { return mode == Broadcast::RightScalar ? bv[0] : bv[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ia(i), ib(i));
  return make_result(op, shape, std::move(out), {a, b}, [a, b, mode, n, dfa, dfb](std::span<const double> g) {
    const auto& av = values(a);
    const auto& bv = values(b);
    auto xa = [&](std::size_t i) { return mode == Broadcast::LeftScalar ? av[0] : av[i]; };
    auto xb = [&](std::size_t i) { return mode == Broadcast::RightScalar ? bv[0] : bv[i]; };
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < n; ++i) {
        ga[mode == Broadcast::LeftScalar ? 0 : i] += g[i] * dfa(xa(i), xb(i));
      }
    }
    if (double* gb = b.grad_sink()) {
      for (std::size_t i = 0; i < n; ++i) {
        gb[mode == Broadcast::RightScalar ? 0 : i] += g[i] * dfb(xa(i), xb(i));
      }
    }
  });
}

// f(x) with derivative expressed through x and y = f(x).
template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D df) {
  const auto& av = values(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(op, a.shape(), std::move(out), {a}, [a, y, df](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      const auto& av = values(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * df(av[i], (*y)[i]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < b.numel(); ++i) {
    if (b.at(i) == 0.0) {
      throw DomainError("div: divisor (operand 2) is zero at flat index " + std::to_string(i));
    }
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double b) {
  return unary("add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary("mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor log(const Tensor& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(a.at(i) > 0.0)) {
      throw DomainError("log: operand 1 is nonpositive (" + std::to_string(a.at(i)) + ") at flat index " +
                        std::to_string(i));
    }
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        double th = std::tanh(c * (x + k * x * x * x));
        double dinner = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
      });
}

Tensor pow(const Tensor& a, double exponent) {
  if (exponent != std::floor(exponent)) {
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (a.at(i) < 0.0) throw DomainError("pow: negative base with non-integer exponent");
    }
  }
  return unary(
      "pow", a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& av = values(a);
  const auto& bv = values(b);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    const auto& av = values(a);
    const auto& bv = values(b);
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = bv.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (double* gb = b.grad_sink()) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (a.rank() != 2 || row.numel() != a.dim(1) || row.rank() > 2 || (row.rank() == 2 && row.dim(0) != 1)) {
    throw ShapeError("add_row: cannot broadcast " + shape_str(row.shape()) + " over rows of " +
                     shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& av = values(a);
  const auto& rv = values(row);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + rv[j];
  }
  return make_result("add_row", a.shape(), std::move(out), {a, row}, [a, row, m, n](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
    }
    if (double* gr = row.grad_sink()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape) {
  if (shape_numel(shape) != index.size()) {
    throw ShapeError("gather: index length does not match target shape " + shape_str(shape));
  }
  const auto& av = values(a);
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.size()) throw ShapeError("gather: index out of range");
    out[i] = av[index[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return make_result("gather", std::move(shape), std::move(out), {a}, [a, idx](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < idx->size(); ++i) ga[(*idx)[i]] += g[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(values(a));
  return make_result("reshape", std::move(shape), std::move(out), {a}, [a](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> index(m * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) index[i * m + j] = j * n + i;
  }
  return gather(a, std::move(index), {n, m});
}

namespace {

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  auto s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<std::size_t> index;
  index.reserve(shape_numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = start; k < start + length; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) index.push_back((o * s.n + k) * s.inner + i);
    }
  }
  return gather(a, std::move(index), std::move(shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  Shape shape = ref;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(ref));
      }
    }
    shape[axis] += p.dim(axis);
  }
  auto s = split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  // offsets[p] = starting position of part p along `axis`
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    auto ps = split_axis(p.shape(), axis);
    const auto& pv = values(p);
    for (std::size_t o = 0; o < ps.outer; ++o) {
      for (std::size_t k = 0; k < ps.n; ++k) {
        for (std::size_t i = 0; i < ps.inner; ++i) {
          out[(o * s.n + off + k) * s.inner + i] = pv[(o * ps.n + k) * ps.inner + i];
        }
      }
    }
    off += p.dim(axis);
  }
  return make_result("concat", shape, std::move(out), parts, [parts, offsets, s, axis](std::span<const double> g) {
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      double* gp = parts[pi].grad_sink();
      if (!gp) continue;
      auto ps = split_axis(parts[pi].shape(), axis);
      for (std::size_t o = 0; o < ps.outer; ++o) {
        for (std::size_t k = 0; k < ps.n; ++k) {
          for (std::size_t i = 0; i < ps.inner; ++i) {
            gp[(o * ps.n + k) * ps.inner + i] += g[(o * s.n + offsets[pi] + k) * s.inner + i];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

void check_softmax(const char* op, const Tensor& x, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) throw DomainError(std::string(op) + ": temperature must be positive");
  if (axis >= x.rank()) throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(x.shape()));
}

std::vector<double> softmax_values(const std::vector<double>& xv, AxisSplit s, double temperature) {
  std::vector<double> y(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        y[at(k)] = std::exp((xv[at(k)] - mx) / temperature);
        z += y[at(k)];
      }
      for (std::size_t k = 0; k < s.n; ++k) y[at(k)] /= z;
    }
  }
  return y;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis, double temperature) {
  check_softmax("softmax", x, axis, temperature);
  auto s = split_axis(x.shape(), axis);
  auto yv = softmax_values(values(x), s, temperature);
  auto y = std::make_shared<std::vector<double>>(yv);
  return make_result("softmax", x.shape(), std::move(yv), {x}, [x, y, s, temperature](std::span<const double> g) {
    double* gx = x.grad_sink();
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[at(k)] * (*y)[at(k)];
        for (std::size_t k = 0; k < s.n; ++k) gx[at(k)] += (*y)[at(k)] * (g[at(k)] - dot) / temperature;
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis, double temperature) {
  check_softmax("log_softmax", x, axis, temperature);
  auto s = split_axis(x.shape(), axis);
  const auto& xv = values(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += std::exp((xv[at(k)] - mx) / temperature);
      const double lz = std::log(z);
      for (std::size_t k = 0; k < s.n; ++k) out[at(k)] = (xv[at(k)] - mx) / temperature - lz;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [x, y, s, temperature](std::span<const double> g) {
    double* gx = x.grad_sink();
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
        double gs = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) gs += g[at(k)];
        for (std::size_t k = 0; k < s.n; ++k) gx[at(k)] += (g[at(k)] - std::exp((*y)[at(k)]) * gs) / temperature;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and reductions

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm on a scalar");
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine parameters do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto& xv = values(x);
  const auto& gv = values(gamma);
  const auto& bv = values(beta);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    (*rstd)[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      double h = (row[j] - mu) * (*rstd)[r];
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, rstd, rows, n](std::span<const double> g) {
                       const auto& gv = values(gamma);
                       if (double* gx = x.grad_sink()) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             double dh = g[r * n + j] * gv[j];
                             m1 += dh;
                             m2 += dh * (*xhat)[r * n + j];
                           }
                           m1 /= static_cast<double>(n);
                           m2 /= static_cast<double>(n);
                           for (std::size_t j = 0; j < n; ++j) {
                             double dh = g[r * n + j] * gv[j];
                             gx[r * n + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * n + j] * m2);
                           }
                         }
                       }
                       if (double* gg = gamma.grad_sink()) {
                         for (std::size_t i = 0; i < rows * n; ++i) gg[i % n] += g[i] * (*xhat)[i];
                       }
                       if (double* gb = beta.grad_sink()) {
                         for (std::size_t i = 0; i < rows * n; ++i) gb[i % n] += g[i];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  const auto& av = values(a);
  double s = 0.0;
  for (double v : av) s += v;
  return make_result("sum", {}, {s}, {a}, [a](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const auto& av = values(a);
  double s = 0.0;
  for (double v : av) s += v;
  const double n = static_cast<double>(av.size());
  return make_result("mean", {}, {s / n}, {a}, [a, n](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0] / n;
    }
  });
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(a.shape()));
  auto s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& av = values(a);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.n + k) * s.inner + i];
    }
  }
  return make_result("sum_axis", std::move(shape), std::move(out), {a}, [a, s](std::span<const double> g) {
    if (double* ga = a.grad_sink()) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.n; ++k) {
          for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.n + k) * s.inner + i] += g[o * s.inner + i];
        }
      }
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: " + shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  }
  const auto& xv = values(logits);
  const auto& yv = values(targets);
  const double n = static_cast<double>(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - yv[i] * x;
  }
  return make_result("bce_with_logits", {}, {total / n}, {logits, targets},
                     [logits, targets, n](std::span<const double> g) {
                       const auto& xv = values(logits);
                       const auto& yv = values(targets);
                       if (double* gx = logits.grad_sink()) {
                         for (std::size_t i = 0; i < xv.size(); ++i) {
                           gx[i] += g[0] * (stable_sigmoid(xv[i]) - yv[i]) / n;
                         }
                       }
                       if (double* gy = targets.grad_sink()) {
                         for (std::size_t i = 0; i < xv.size(); ++i) gy[i] -= g[0] * xv[i] / n;
                       }
                     });
}

}  // namespace samtta
