#include "plroad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "plroad/errors.hpp"

namespace plroad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
void require_finite(const char* what, const char* op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << "non-finite " << what << " in op '" << op << "' at element " << i
          << " (value " << values[i] << ")";
      throw NumericalError(msg.str());
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {
thread_local BranchProbe* g_probe = nullptr;
}  // namespace

BranchProbe::BranchProbe() : previous_(g_probe) { g_probe = this; }
BranchProbe::~BranchProbe() { g_probe = previous_; }

template <typename T>
std::span<T> TensorNode<T>::input_grad(std::size_t i) {
  auto& in = *inputs[i];
  if (in.grad.empty()) in.grad.assign(in.data.size(), T(0));
  return in.grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape));
  }
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ConfigError("shape " + shape_str(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(const char* op, Shape shape, std::vector<T> values,
                                 std::vector<Tensor> inputs, BackwardFn<T> backward_fn) {
  require_finite<T>("output", op, values);
  Tensor out;
  out.node_ = std::make_shared<TensorNode<T>>();
  out.node_->shape = std::move(shape);
  out.node_->data = std::move(values);
  out.node_->op = op;
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward = std::move(backward_fn);
  }
  return out;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->inputs.empty()) throw ConfigError("set_requires_grad is only valid on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ConfigError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), node_->data, {*this}, [](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ConfigError("backward needs a scalar loss, got shape " +
                      (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  auto* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; input order fixes the visit order.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->grad.empty()) root->grad.assign(1, T(0));
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    for (auto& in : node->inputs) {
      if (in->requires_grad && !in->grad.empty()) {
        require_finite<T>("gradient", node->op, std::span<const T>(in->grad));
      }
    }
  }
  // Release intermediate state so the graph can be freed.
  for (auto* node : order) {
    if (!node->inputs.empty()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

namespace {

template <typename T>
void check_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da, DB db) {
  check_binary(op, a, b);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  }
  return Tensor<T>::make_result(op, shape, std::move(out), {a, b},
      [a_scalar, b_scalar, da, db](TensorNode<T>& self) {
        const auto& av = self.inputs[0]->data;
        const auto& bv = self.inputs[1]->data;
        const std::size_t n = self.grad.size();
        if (self.input_requires_grad(0)) {
          auto ga = self.input_grad(0);
          for (std::size_t i = 0; i < n; ++i) {
            const T x = av[a_scalar ? 0 : i], y = bv[b_scalar ? 0 : i];
            ga[a_scalar ? 0 : i] += self.grad[i] * da(x, y);
          }
        }
        if (self.input_requires_grad(1)) {
          auto gb = self.input_grad(1);
          for (std::size_t i = 0; i < n; ++i) {
            const T x = av[a_scalar ? 0 : i], y = bv[b_scalar ? 0 : i];
            gb[b_scalar ? 0 : i] += self.grad[i] * db(x, y);
          }
        }
      });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const char* op, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  return Tensor<T>::make_result(op, a.shape(), std::move(out), {a}, [deriv](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    const auto& x = self.inputs[0]->data;
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(x[i], self.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>("add", a, b, [](T x, T y) { return x + y; },
                      [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>("sub", a, b, [](T x, T y) { return x - y; },
                      [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>("mul", a, b, [](T x, T y) { return x * y; },
                      [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>("div", a, b, [](T x, T y) { return x / y; },
                      [](T, T y) { return T(1) / y; }, [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_op<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary_op<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  if (g_probe) {
    for (T x : a.data()) g_probe->fold(x > T(0) ? 1u : 0u);
  }
  return unary_op<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                     [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>("sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary_op<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary_op<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (g_probe) {
    for (T x : a.data()) g_probe->fold(x < lo ? 0u : x > hi ? 2u : 1u);
  }
  return unary_op<T>("clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                     [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result("sum", Shape{1}, {total}, {a}, [](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return Tensor<T>::make_result("mean", Shape{1}, {total * inv}, {a}, [inv](TensorNode<T>& self) {
    if (!self.input_requires_grad(0)) return;
    auto g = self.input_grad(0);
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>* b) {
  const bool binary = op == Elementwise::kAdd || op == Elementwise::kSub || op == Elementwise::kMul;
  if (binary && b == nullptr) throw ConfigError("binary elementwise op needs two operands");
  switch (op) {
    case Elementwise::kAdd: return add(a, *b);
    case Elementwise::kSub: return sub(a, *b);
    case Elementwise::kMul: return mul(a, *b);
    case Elementwise::kRelu: return relu(a);
    case Elementwise::kSigmoid: return sigmoid(a);
  }
  throw ConfigError("unknown elementwise op");
}

#define PLROAD_INSTANTIATE(T)                                                   \
  template struct TensorNode<T>;                                                \
  template class Tensor<T>;                                                     \
  template void backward<T>(const Tensor<T>&);                                  \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                        \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                        \
  template Tensor<T> relu<T>(const Tensor<T>&);                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                              \
  template Tensor<T> square<T>(const Tensor<T>&);                               \
  template Tensor<T> log<T>(const Tensor<T>&);                                  \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                  \
  template Tensor<T> mean<T>(const Tensor<T>&);                                 \
  template Tensor<T> elementwise<T>(Elementwise, const Tensor<T>&, const Tensor<T>*);

PLROAD_INSTANTIATE(float)
PLROAD_INSTANTIATE(double)

#undef PLROAD_INSTANTIATE

}  // namespace plroad
