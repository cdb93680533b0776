#pragma once

// Minimal reverse-mode automatic differentiation over dense f64 tensors.
//
// Every differentiable operation appends a node to a thread-local tape. The
// tape is append-only, so parents always precede their children; backward()
// walks it once in reverse insertion order and then discards it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "samtta/error.hpp"

namespace samtta {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> data);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  // In-place access for leaves (optimizer, EMA, checkpoint loading).
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  // Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  bool has_grad() const { return !grad().empty(); }
  std::vector<double> grad_or_zeros() const;
  void zero_grad();

  // Copy of the values with no tape history.
  Tensor detach() const;
  // Deep copy that keeps requires_grad but drops grad and history.
  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Gradient buffer for use inside backward closures; nullptr when this
  // tensor does not take part in differentiation.
  double* grad_sink() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(const char*, Shape, std::vector<double>,
                            std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>);
  friend Tensor make_result(const char*, Shape, std::vector<double>,
                            const std::vector<Tensor>&,
                            std::function<void(std::span<const double>)>);
};

// Builds an op result. The backward closure is recorded only when gradient
// mode is on and some input requires grad; it receives d(loss)/d(output).
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

// Thread-local tape.
class Graph {
 public:
  struct Node {
    const char* op;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(std::span<const double>)> backward;
  };

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  const char* op_at(std::size_t index) const { return nodes_.at(index).op; }

  std::size_t append(Node node);
  void backward_from(const detail::TensorImpl& loss);
  void clear();

 private:
  std::vector<Node> nodes_;
  std::uint64_t id_ = 1;
};

Graph& current_graph();
bool grad_enabled();

// Disables tape recording in its scope (stop-gradient).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Populates grad on every requires_grad leaf reachable from `loss` and
// consumes the tape.
void backward(const Tensor& loss);

// Elementwise. Shapes must match unless one side has a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(double a, const Tensor& b) { return add(neg(b), a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Adds a length-n row (shape [n] or [1,n]) to every row of an [m,n] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);

// out.flat[i] = a.flat[index[i]]; covers reshape, transpose, slicing and
// pixel shuffles. Backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// exp((x - max)/T) normalised along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, double temperature = 1.0);
Tensor log_softmax(const Tensor& x, std::size_t axis, double temperature = 1.0);

// Normalises each row over the last axis, then scales and shifts.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduces one axis away.
Tensor sum_axis(const Tensor& a, std::size_t axis);

// Mean of softplus(x) - y*x, the numerically stable BCE on logits.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

bool all_finite(std::span<const double> values);

}  // namespace samtta
