#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace plroad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode;

/// Called during backward with the node whose grad is complete. The function
/// adds contributions into the grads of the node's inputs.
template <typename T>
using BackwardFn = std::function<void(TensorNode<T>&)>;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<T> backward;

  /// Grad buffer of input `i`, allocated (zeroed) on first use.
  std::span<T> input_grad(std::size_t i);
  bool input_requires_grad(std::size_t i) const { return inputs[i]->requires_grad; }
};

/// Handle to a dense row-major array that can take part in reverse-mode
/// differentiation. Copies share the underlying node; operations never mutate
/// their inputs, so a Tensor behaves as an immutable value except for
/// parameter leaves, which the optimizer updates in place.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  /// Builds the result of an operation. Records `backward` only when some
  /// input requires grad and grad mode is enabled. Throws NumericalError on
  /// non-finite output values.
  static Tensor make_result(const char* op, Shape shape, std::vector<T> values,
                            std::vector<Tensor> inputs, BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Mutable access for leaves (initialization, optimizer updates, loading).
  std::span<T> data_mut() { return node_->data; }
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Same values, no graph history.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// While alive, operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// While alive, relu and clamp on this thread fold the branch taken by every
/// element into value(). Two evaluations with equal values took the same
/// piece of every piecewise op.
class BranchProbe {
 public:
  BranchProbe();
  ~BranchProbe();
  BranchProbe(const BranchProbe&) = delete;
  BranchProbe& operator=(const BranchProbe&) = delete;

  std::uint64_t value() const { return hash_; }
  void fold(unsigned code) { hash_ = (hash_ ^ code) * 0x100000001b3ULL; }

 private:
  BranchProbe* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Reverse pass from a scalar. Leaves that require grad accumulate into their
/// grad buffers; the graph is released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

// Elementwise. Binary ops need equal shapes; either side may be a one-element
// tensor, which is broadcast. No other broadcasting exists.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// Gradient is zero outside [lo, hi].
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid };

/// Dispatcher over the elementwise family; `b` is required for binary ops.
template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>* b = nullptr);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace plroad
