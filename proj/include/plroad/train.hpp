#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plroad/dataset.hpp"
#include "plroad/metrics.hpp"
#include "plroad/net.hpp"
#include "plroad/sgd.hpp"

namespace plroad {

struct Batch {
  NetInputs<float> inputs;
  Tensor<float> labels;  // [N, H, W]
};

Batch make_batch(const TrainingData& data, const std::vector<std::size_t>& indices);

/// Shuffles `pool` with a stream derived from (seed, epoch) and cuts it into
/// batches; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

using BatchLossFn = std::function<Tensor<float>(const std::vector<std::size_t>& batch, std::size_t step)>;

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::size_t steps = 0;
};
using EpochHook = std::function<void(const EpochStats&)>;
/// Called after each update with the step index and the optimizer index used.
using StepHook = std::function<void(std::size_t step, std::size_t optimizer)>;

struct LoopConfig {
  std::size_t epochs = 0;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  /// Poly decay: lr_k = lr_0 * (1 - k / total_steps)^lr_power; 0 keeps lr fixed.
  double lr_power = 0.0;
};

/// Minibatch SGD over `pool`. With several optimizers, step k updates only
/// optimizer k mod n; the others' gradients are discarded.
void run_optimization(const std::vector<Sgd<float>*>& optimizers, const std::vector<std::size_t>& pool,
                      const LoopConfig& cfg, const BatchLossFn& loss_fn, const EpochHook& on_epoch = {},
                      const StepHook& after_step = {});

/// Road scores of every pixel of the listed samples, pooled. `threads`
/// workers score disjoint samples; the merge is order-independent.
ScoreAccumulator score_samples(const PlifNet<float>& net, const TrainingData& data,
                               const std::vector<std::size_t>& indices, std::size_t threads = 1);

EvalReport evaluate_network(const PlifNet<float>& net, const TrainingData& data, const std::string& split,
                            std::size_t threads = 1);

}  // namespace plroad
