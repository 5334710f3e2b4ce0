#include "sapf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "sapf/error.hpp"

namespace sapf {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(std::span<const double>)> backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_2d(const Tensor& a, const char* op) {
  if (a.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
  }
}

// Accumulates into an input's gradient when it participates in the graph.
inline bool wants_grad(const Tensor& t) { return t.requires_grad(); }

template <typename F>
Tensor unary(const Tensor& a, F&& f) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor::from_data(a.shape(), std::move(out));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from_data({r, c}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from_data({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 2) return s[0];
  if (s.size() <= 1) return 1;
  throw DimensionError("rows() on tensor of shape " + shape_str(s));
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw DimensionError("cols() on tensor of shape " + shape_str(s));
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return node_->value.at(i); }
double Tensor::at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }
std::vector<double> Tensor::to_vector() const { return node_->value; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

std::span<const double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from_data(shape(), node_->value, false); }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.node());
  node.backward = std::move(backward);
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Non-leaf gradients are scratch space for this pass.
  for (auto* node : order) {
    if (node->backward) node->grad.assign(node->value.size(), 0.0);
  }
  auto* root = loss.node().get();
  if (root->grad.size() != 1) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward) node->backward(node->grad);
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    Tensor ta = a, tb = b;
    auto A = a.data();
    auto B = b.data();
    if (wants_grad(a)) {
      auto gA = ta.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          gA[i * k + p] += acc;
        }
      }
    }
    if (wants_grad(b)) {
      auto gB = tb.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gB.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [a, r, c](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (Tensor t : {a, b}) {
      if (!wants_grad(t)) continue;
      auto gt = t.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    Tensor ta = a, tb = b;
    if (wants_grad(a)) {
      auto ga = ta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      auto gb = tb.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    Tensor ta = a, tb = b;
    auto x = a.data();
    auto y = b.data();
    if (wants_grad(a)) {
      auto ga = ta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (wants_grad(b)) {
      auto gb = tb.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.numel() != c) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return make_result(a.shape(), std::move(out), {a, bias}, [a, bias, r, c](std::span<const double> g) {
    Tensor ta = a, tb = bias;
    if (wants_grad(a)) {
      auto ga = ta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(bias)) {
      auto gb = tb.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = unary(a, [factor](double v) { return v * factor; });
  return make_result(a.shape(), out.to_vector(), {a}, [a, factor](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  Tensor out = unary(a, [value](double v) { return v + value; });
  return make_result(a.shape(), out.to_vector(), {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: factor must have one element");
  const double f = s.item();
  Tensor out = unary(a, [f](double v) { return v * f; });
  return make_result(a.shape(), out.to_vector(), {a, s}, [a, s, f](std::span<const double> g) {
    Tensor ta = a, ts = s;
    if (wants_grad(a)) {
      auto ga = ta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
    }
    if (wants_grad(s)) {
      auto x = a.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      ts.mutable_grad()[0] += acc;
    }
  });
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = unary(a, [](double v) { return 1.0 / v; });
  auto y = out.to_vector();
  return make_result(a.shape(), y, {a}, [a, y](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * y[i] * y[i];
  });
}

Tensor exp(const Tensor& a) {
  auto y = unary(a, [](double v) { return std::exp(v); }).to_vector();
  return make_result(a.shape(), y, {a}, [a, y](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Tensor log(const Tensor& a) {
  auto y = unary(a, [](double v) { return std::log(v); }).to_vector();
  return make_result(a.shape(), y, {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto x = a.data();
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Tensor abs(const Tensor& a) {
  auto y = unary(a, [](double v) { return std::fabs(v); }).to_vector();
  return make_result(a.shape(), y, {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto x = a.data();
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
      ga[i] += g[i] * s;
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  auto y = unary(a, [](double v) {
             if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
             const double e = std::exp(v);
             return e / (1.0 + e);
           }).to_vector();
  return make_result(a.shape(), y, {a}, [a, y](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor gelu(const Tensor& a) {
  // Exact form: x * Phi(x).
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  auto y = unary(a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); }).to_vector();
  return make_result(a.shape(), y, {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto x = a.data();
    auto ga = ta.mutable_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  if (a.numel() == 0) return Tensor::scalar(0.0);
  return scale(sum(a), 1.0 / n);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), a.to_vector(), {a}, [a](std::span<const double> g) {
    Tensor ta = a;
    auto ga = ta.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace {

// Walks the slices along `axis` of a 1-D or 2-D tensor: count slices, each of
// length len, element j of slice s at offset(s) + j * stride.
struct AxisLayout {
  std::size_t count, len, stride;
  std::size_t offset(std::size_t s) const { return stride == 1 ? s * len : s; }
};

AxisLayout axis_layout(const Tensor& x, int axis, const char* op) {
  if (x.dim() == 1 && axis == 0) return {1, x.shape()[0], 1};
  if (x.dim() == 2 && (axis == 1 || axis == -1)) return {x.shape()[0], x.shape()[1], 1};
  if (x.dim() == 2 && axis == 0) return {x.shape()[1], x.shape()[0], x.shape()[1]};
  throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                       shape_str(x.shape()));
}

void check_finite(const Tensor& x, const char* op) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const auto L = axis_layout(x, axis, "softmax");
  check_finite(x, "softmax");
  auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < L.count; ++s) {
    const std::size_t o = L.offset(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L.len; ++j) mx = std::max(mx, in[o + j * L.stride]);
    double z = 0.0;
    for (std::size_t j = 0; j < L.len; ++j) {
      double e = std::exp(in[o + j * L.stride] - mx);
      out[o + j * L.stride] = e;
      z += e;
    }
    for (std::size_t j = 0; j < L.len; ++j) out[o + j * L.stride] /= z;
  }
  auto y = out;
  return make_result(x.shape(), std::move(out), {x}, [x, y, L](std::span<const double> g) {
    Tensor tx = x;
    auto gx = tx.mutable_grad();
    for (std::size_t s = 0; s < L.count; ++s) {
      const std::size_t o = L.offset(s);
      double dot = 0.0;
      for (std::size_t j = 0; j < L.len; ++j) dot += g[o + j * L.stride] * y[o + j * L.stride];
      for (std::size_t j = 0; j < L.len; ++j) {
        const std::size_t idx = o + j * L.stride;
        gx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const auto L = axis_layout(x, axis, "log_softmax");
  check_finite(x, "log_softmax");
  auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < L.count; ++s) {
    const std::size_t o = L.offset(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L.len; ++j) mx = std::max(mx, in[o + j * L.stride]);
    double z = 0.0;
    for (std::size_t j = 0; j < L.len; ++j) z += std::exp(in[o + j * L.stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < L.len; ++j) out[o + j * L.stride] = in[o + j * L.stride] - lse;
  }
  auto y = out;
  return make_result(x.shape(), std::move(out), {x}, [x, y, L](std::span<const double> g) {
    Tensor tx = x;
    auto gx = tx.mutable_grad();
    for (std::size_t s = 0; s < L.count; ++s) {
      const std::size_t o = L.offset(s);
      double gs = 0.0;
      for (std::size_t j = 0; j < L.len; ++j) gs += g[o + j * L.stride];
      for (std::size_t j = 0; j < L.len; ++j) {
        const std::size_t idx = o + j * L.stride;
        gx[idx] += g[idx] - std::exp(y[idx]) * gs;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  }
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, r, c](std::span<const double> g) {
        Tensor tx = x, tg = gain, tb = bias;
        auto gv = gain.data();
        if (wants_grad(gain)) {
          auto gg = tg.mutable_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
        }
        if (wants_grad(bias)) {
          auto gb = tb.mutable_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
        if (wants_grad(x)) {
          auto gx = tx.mutable_grad();
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[i * c + j] * gv[j];
              s1 += dxh;
              s2 += dxh * xhat[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[i * c + j] * gv[j];
              gx[i * c + j] += inv_std[i] * (dxh - s1 / n - xhat[i * c + j] * s2 / n);
            }
          }
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    r += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result({r, c}, std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t off = 0;
    for (Tensor p : parts) {
      if (wants_grad(p)) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      }
      off += p.numel();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    auto d = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * c + col + j] = d[i * pc + j];
    col += pc;
  }
  return make_result({r, c}, std::move(out), parts, [parts, r, c](std::span<const double> g) {
    std::size_t col = 0;
    for (Tensor p : parts) {
      const std::size_t pc = p.cols();
      if (wants_grad(p)) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + col + j];
      }
      col += pc;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  const std::size_t c = x.cols();
  if (start + count > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  auto d = x.data();
  std::vector<double> out(d.begin() + start * c, d.begin() + (start + count) * c);
  return make_result({count, c}, std::move(out), {x}, [x, start, c](std::span<const double> g) {
    Tensor tx = x;
    auto gx = tx.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[start * c + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (start + count > c) throw DimensionError("slice_cols: range out of bounds");
  auto d = x.data();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = d[i * c + start + j];
  return make_result({r, count}, std::move(out), {x}, [x, start, count, r, c](std::span<const double> g) {
    Tensor tx = x;
    auto gx = tx.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += g[i * count + j];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_2d(table, "gather_rows");
  const std::size_t c = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  auto d = table.data();
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(d.begin() + idx[i] * c, c, out.begin() + i * c);
  }
  return make_result({idx.size(), c}, std::move(out), {table}, [table, idx, c](std::span<const double> g) {
    Tensor tt = table;
    auto gt = tt.mutable_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> indices) {
  require_2d(x, "pick");
  const std::size_t r = x.rows(), c = x.cols();
  if (indices.size() != r) throw DimensionError("pick: need one index per row");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw DimensionError("pick: index out of range");
    out[i] = x.data()[i * c + idx[i]];
  }
  return make_result({r}, std::move(out), {x}, [x, idx, c](std::span<const double> g) {
    Tensor tx = x;
    auto gx = tx.mutable_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) gx[i * c + idx[i]] += g[i];
  });
}

Tensor cosine_similarity(const Tensor& q, const Tensor& d, double eps) {
  require_2d(q, "cosine_similarity");
  require_2d(d, "cosine_similarity");
  const std::size_t n = q.rows(), k = d.rows(), dim = q.cols();
  if (d.cols() != dim) {
    throw DimensionError("cosine_similarity: " + shape_str(q.shape()) + " vs " + shape_str(d.shape()));
  }
  auto Q = q.data();
  auto D = d.data();
  std::vector<double> qn(n), dn(k), dots(n * k), out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += Q[i * dim + j] * Q[i * dim + j];
    qn[i] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += D[i * dim + j] * D[i * dim + j];
    dn[i] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < k; ++m) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += Q[i * dim + j] * D[m * dim + j];
      dots[i * k + m] = s;
      out[i * k + m] = s / (qn[i] * dn[m] + eps);
    }
  return make_result({n, k}, std::move(out), {q, d},
                     [q, d, qn, dn, dots, n, k, dim, eps](std::span<const double> g) {
    Tensor tq = q, td = d;
    auto Q = q.data();
    auto D = d.data();
    // b = s / (|q||d| + eps); db/ds = 1/den; db/d|q| = -s |d| / den^2.
    std::vector<double> gq_norm(n, 0.0), gd_norm(k, 0.0);
    std::vector<double> gdot(n * k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        const double den = qn[i] * dn[m] + eps;
        const double gi = g[i * k + m];
        gdot[i * k + m] = gi / den;
        const double common = -gi * dots[i * k + m] / (den * den);
        gq_norm[i] += common * dn[m];
        gd_norm[m] += common * qn[i];
      }
    if (wants_grad(q)) {
      auto gq = tq.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
          double acc = 0.0;
          for (std::size_t m = 0; m < k; ++m) acc += gdot[i * k + m] * D[m * dim + j];
          if (qn[i] > 0) acc += gq_norm[i] * Q[i * dim + j] / qn[i];
          gq[i * dim + j] += acc;
        }
    }
    if (wants_grad(d)) {
      auto gd = td.mutable_grad();
      for (std::size_t m = 0; m < k; ++m)
        for (std::size_t j = 0; j < dim; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += gdot[i * k + m] * Q[i * dim + j];
          if (dn[m] > 0) acc += gd_norm[m] * D[m * dim + j] / dn[m];
          gd[m * dim + j] += acc;
        }
    }
  });
}

}  // namespace sapf
