#include "plroad/train.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "plroad/errors.hpp"
#include "plroad/nn_ops.hpp"
#include "plroad/rng.hpp"

namespace plroad {

Batch make_batch(const TrainingData& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("make_batch: empty batch");
  std::vector<Tensor<float>> rgb, pl, depth, labels;
  for (std::size_t i : indices) {
    if (i >= data.samples.size()) throw ConfigError("make_batch: sample index " + std::to_string(i) + " out of range");
    const SampleTensors& s = data.samples[i];
    rgb.push_back(s.rgb);
    pl.push_back(s.pl);
    depth.push_back(s.depth);
    labels.push_back(s.labels);
  }
  Batch b;
  b.inputs.rgb = stack_batch(rgb);
  b.inputs.pl = stack_batch(pl);
  b.inputs.depth = stack_batch(depth);
  b.labels = stack_batch(labels);
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order = pool;
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    out.emplace_back(order.begin() + b, order.begin() + std::min(order.size(), b + batch_size));
  }
  return out;
}

void run_optimization(const std::vector<Sgd<float>*>& optimizers, const std::vector<std::size_t>& pool,
                      const LoopConfig& cfg, const BatchLossFn& loss_fn, const EpochHook& on_epoch,
                      const StepHook& after_step) {
  if (optimizers.empty()) throw ConfigError("run_optimization: no optimizer");
  if (pool.empty()) throw ConfigError("run_optimization: empty training pool");
  if (cfg.batch_size == 0) throw ConfigError("run_optimization: batch size must be positive");
  if (!(cfg.lr_power >= 0.0)) throw ConfigError("run_optimization: lr_power must be >= 0");
  std::vector<double> base_lr;
  for (auto* opt : optimizers) base_lr.push_back(opt->config().learning_rate);
  const std::size_t per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total = static_cast<double>(per_epoch * cfg.epochs);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t steps = 0;
    for (const auto& batch : epoch_batches(pool, cfg.batch_size, cfg.seed, epoch)) {
      for (auto* opt : optimizers) opt->zero_grad();
      Tensor<float> loss = loss_fn(batch, step);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      backward(loss);
      const std::size_t which = step % optimizers.size();
      if (cfg.lr_power > 0.0) {
        const double frac = 1.0 - static_cast<double>(step) / total;
        optimizers[which]->set_learning_rate(base_lr[which] * std::pow(frac, cfg.lr_power));
      }
      optimizers[which]->step();
      if (after_step) after_step(step, which);
      sum += value;
      ++steps;
      ++step;
    }
    for (auto* opt : optimizers) opt->zero_grad();
    if (on_epoch) on_epoch({epoch, sum / static_cast<double>(steps), steps});
  }
  for (std::size_t k = 0; k < optimizers.size(); ++k) optimizers[k]->set_learning_rate(base_lr[k]);
}

ScoreAccumulator score_samples(const PlifNet<float>& net, const TrainingData& data,
                               const std::vector<std::size_t>& indices, std::size_t threads) {
  threads = std::max<std::size_t>(1, std::min(threads, indices.size()));
  std::vector<ScoreAccumulator> parts(threads);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t t) {
    try {
      NoGradGuard guard;
      for (std::size_t k = t; k < indices.size(); k += threads) {
        const Batch b = make_batch(data, {indices[k]});
        const std::vector<float> scores = road_scores(net.forward(b.inputs).logits);
        parts[t].add(scores, b.labels.data());
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  ScoreAccumulator acc;
  for (const auto& p : parts) acc.merge(p);
  return acc;
}

EvalReport evaluate_network(const PlifNet<float>& net, const TrainingData& data, const std::string& split,
                            std::size_t threads) {
  const auto& idx = data.split(split);
  if (idx.empty()) throw ConfigError("split '" + split + "' is empty");
  return make_report(score_samples(net, data, idx, threads));
}

}  // namespace plroad
