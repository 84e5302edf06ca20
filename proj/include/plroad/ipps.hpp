#pragma once

#include <string>
#include <vector>

#include "plroad/dataset.hpp"
#include "plroad/net.hpp"
#include "plroad/sgd.hpp"
#include "plroad/train.hpp"

namespace plroad {

/// One path weight p[branch][target][source]; source == target is the
/// identity path.
struct PathWeight {
  std::size_t branch = 0;
  std::size_t target = 0;
  std::size_t source = 0;
  double value = 0.0;
};

/// Every p of a search-mode network, ordered by (branch, target, source).
std::vector<PathWeight> read_path_weights(const PlifNet<float>& net);

struct SelectedPaths {
  std::vector<PathSpec> paths;
  std::vector<PathWeight> weights;  // the p they were selected from

  std::string to_json() const;
  static SelectedPaths from_json(const std::string& text);
};

/// Per (branch, target): the shallow source with the largest weight, ties to
/// the deeper source, kept only if that weight is >= 0.
SelectedPaths select_paths(const std::vector<PathWeight>& weights);

/// Supernet over `base`: every shallow path, every p learnable.
NetConfig search_config(NetConfig base);
/// `base` plus exactly the selected transfers, unweighted.
NetConfig finalize_config(NetConfig base, const SelectedPaths& selected);
/// `base` plus every shallow transfer, unweighted.
NetConfig all_paths_config(NetConfig base);

struct SearchConfig {
  SgdConfig weights;
  double path_learning_rate = 1e-2;
  double path_momentum = 0.9;
  std::size_t epochs = 10;
  double lr_power = 0.0;  // poly decay of both learning rates
};

struct SearchTrace {
  /// p after every path update.
  std::vector<std::vector<PathWeight>> trajectory;
  std::vector<double> epoch_loss;
};

/// Alternating minimization of the segmentation loss over the train split:
/// even minibatches update the network weights, odd ones the path weights.
SearchTrace alternate_search(PlifNet<float>& supernet, const TrainingData& data, const SearchConfig& cfg,
                             const EpochHook& on_epoch = {});

/// Scalar two-path problem: y_hat = theta * (p_id * base + p_sig * sig +
/// p_noise * noise) fit to base + 0.8 * sig under the same alternation.
struct TwoPathToyResult {
  double theta = 0.0;
  double p_identity = 0.0;
  double p_signal = 0.0;
  double p_noise = 0.0;
};
TwoPathToyResult run_two_path_toy(std::uint64_t seed, std::size_t steps = 400);

}  // namespace plroad
