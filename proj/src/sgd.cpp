#include "plroad/sgd.hpp"

#include <cmath>
#include <string>

#include "plroad/errors.hpp"

namespace plroad {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("sgd: learning_rate must be > 0, got " + std::to_string(learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("sgd: momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
  if (batch_size == 0) throw ConfigError("sgd: batch_size must be positive");
  if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm)) throw ConfigError("sgd: clip_norm must be >= 0");
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  // A zero rate is allowed here so that frozen parameter groups can share the
  // same code path; configs coming from users go through validate().
  if (cfg_.learning_rate < 0.0 || !(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0)) {
    throw ConfigError("sgd: invalid learning rate or momentum");
  }
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (T g : params_[k].grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError("sgd: non-finite gradient in parameter group " + std::to_string(k));
      }
    }
  }
  T scale = T(1);
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_) {
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = static_cast<T>(cfg_.clip_norm / norm);
  }
  const T lr = static_cast<T>(cfg_.learning_rate);
  const T mu = static_cast<T>(cfg_.momentum);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto data = p.data_mut();
    auto grad = p.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = mu * v[i] + scale * grad[i];
      data[i] -= lr * v[i];
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace plroad
