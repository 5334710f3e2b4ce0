#pragma once

// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// Every op records its inputs and a closure that pushes the output gradient
// back into them. The graph is owned by the result tensors: dropping the
// last handle to a loss releases every intermediate. Leaves created with
// requires_grad = true accumulate gradients across backward() calls until
// zero_grad() is called.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sapf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // 2-D helpers; a 1-D tensor of length n is treated as 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  // Gradient buffer; allocated (zero-filled) on first access.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;
  void zero_grad();

  /// Same values, no history, requires_grad = false.
  Tensor detach() const;

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output. `backward` receives dL/d(output) and must accumulate
/// into the inputs that require grad. When gradient recording is disabled, or
/// no input requires grad, the closure is dropped and the result is a leaf.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse pass from a scalar loss. Populates grad() of every reachable
/// tensor that requires grad.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (rows x d) + bias (d), bias broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// a * s where s is a one-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Softmax along `axis` of a 1-D or 2-D tensor, max-subtracted.
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Row-wise normalization over the last dimension (eps 1e-5), then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEps = 1e-5;

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
/// out[i] = table[indices[i]]; repeated indices accumulate gradient.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
/// out[i] = x[i, indices[i]], shape {rows}.
Tensor pick(const Tensor& x, std::span<const std::size_t> indices);

/// b[n,k] = <q_n, d_k> / (|q_n| |d_k| + eps). q: N x D, d: K x D.
Tensor cosine_similarity(const Tensor& q, const Tensor& d, double eps = 1e-8);

inline Tensor stop_gradient(const Tensor& x) { return x.detach(); }

}  // namespace sapf
