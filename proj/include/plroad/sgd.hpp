#pragma once

#include <cstdint>
#include <vector>

#include "plroad/tensor.hpp"

namespace plroad {

struct SgdConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  /// Rescales the gradient when its global L2 norm exceeds this; 0 disables.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Momentum SGD: v <- momentum * v + g;  p <- p - lr * v, with g optionally
/// rescaled to global norm clip_norm.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, SgdConfig cfg);

  /// Applies one update from the accumulated grads. Throws NumericalError on
  /// a non-finite gradient before touching any parameter.
  void step();
  void zero_grad();

  const SgdConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  SgdConfig cfg_;
};

}  // namespace plroad
