#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plroad/rng.hpp"
#include "plroad/tensor.hpp"

namespace plroad {

struct GradcheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error of near-zero derivatives.
  double floor = 1e-6;
  /// Entries checked per input; 0 checks every entry.
  std::size_t max_entries = 0;
  /// Entries whose +-step evaluations take a different relu/clamp branch
  /// than the unperturbed point are not differentiable within the stencil;
  /// they are skipped and, when sampling, replaced by another entry.
  bool skip_kinks = true;
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::size_t skipped = 0;  // kink entries left out
  std::string worst;  // "input k entry i: analytic a numeric n"
};

using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode derivatives of `loss(inputs)` with central finite
/// differences, entry by entry. Inputs must be leaf tensors.
GradcheckResult gradcheck(const LossFn& loss, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options = {});

struct GradcheckCase {
  std::string name;
  std::size_t instances = 0;
  GradcheckResult result;
};

/// The finite-difference suite over every differentiable operation, the full
/// network and the distillation losses.
std::vector<GradcheckCase> run_gradcheck_suite(std::size_t instances_per_case, std::uint64_t seed,
                                               bool verbose = false);

}  // namespace plroad
