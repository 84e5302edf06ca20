#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "plroad/checkpoint.hpp"
#include "plroad/nn_ops.hpp"
#include "plroad/rng.hpp"
#include "plroad/tensor.hpp"

namespace plroad {

inline constexpr std::size_t kStages = 5;  // S0 (stem) .. S4
inline constexpr std::size_t kFusedStages = 4;

struct BackboneConfig {
  std::array<std::size_t, kStages> widths{8, 16, 32, 64, 64};
  std::array<std::size_t, kStages> strides{2, 1, 2, 2, 1};
  std::size_t blocks_per_stage = 1;

  void validate() const;
};

/// NF-* use a single branch fed by the named input; LIF and PLIF use an RGB
/// and a PL branch joined by CTG modules (LIF leaves the PL branch unchanged).
enum class FusionMode { kNfRgb, kNfPl, kNfDepth, kLif, kPlif };

std::string mode_name(FusionMode mode);
FusionMode parse_mode(const std::string& name);

enum class InputKind { kRgb, kPl, kDepth };
std::string input_name(InputKind kind);

/// How the input of each CTG module is assembled from stage outputs.
enum class PathMode {
  kPlain,   // o_i = s_i
  kSearch,  // o_i = sum_j p[c][i][j] * T(s_j), every p learnable
  kFixed,   // o_i = s_i + sum over listed paths of T(s_j)
};

struct PathSpec {
  std::size_t branch = 0;  // 0 = rgb, 1 = pl
  std::size_t target = 0;  // 2..4
  std::size_t source = 0;  // 1..target-1
  bool operator==(const PathSpec&) const = default;
};

/// Every shallow path of a branch count, in (branch, target, source) order.
std::vector<PathSpec> all_shallow_paths(std::size_t branches);

struct NetConfig {
  BackboneConfig backbone;
  FusionMode mode = FusionMode::kPlif;
  /// Both branches take the RGB image (modality-distillation student).
  bool student = false;
  PathMode paths = PathMode::kPlain;
  std::vector<PathSpec> fixed_paths;
  std::vector<std::size_t> ppm_bins{1, 2, 4};
  std::size_t ppm_width = 16;
  std::size_t branch_width = 32;
  std::size_t head_width = 32;
  std::uint64_t init_seed = 1;

  void validate() const;
  std::size_t branch_count() const;
  std::vector<InputKind> branch_inputs() const;
  bool has_ctg() const { return branch_count() == 2; }
};

nlohmann::ordered_json net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

enum class ParamGroup { kWeight, kPath };

template <typename T>
struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor<T> tensor;
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // OIHW
  Tensor<T> bias;    // [O]
  Conv2dParams params;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct FusionParams {
  Tensor<T> alpha1, beta1, alpha2, beta2;
};

/// Generation step: F_rgb + (a1 * F_pl + b1), F_pl + (a2 * F_rgb + b2). For
/// one-directional fusion only a1, b1 are used.
template <typename T>
std::array<Tensor<T>, 2> ctg_generate(const Tensor<T>& f_rgb, const Tensor<T>& f_pl, const FusionParams<T>& fp,
                                      bool bidirectional = true);

template <typename T>
struct CtgModule {
  std::size_t channels = 0;
  bool bidirectional = true;
  ConvLayer<T> reduce_rgb, reduce_pl;  // 1x1, C -> C/2
  ConvLayer<T> tfn_hidden;             // 3x3, C -> C
  ConvLayer<T> tfn_out;                // 3x3, C -> 4C (2C one-directional)

  FusionParams<T> transform(const Tensor<T>& f_rgb, const Tensor<T>& f_pl) const;
  std::array<Tensor<T>, 2> forward(const Tensor<T>& f_rgb, const Tensor<T>& f_pl) const;
};

template <typename T>
struct ResidualBlock {
  ConvLayer<T> conv1, conv2;
  std::optional<ConvLayer<T>> shortcut;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct PpmModule {
  std::vector<std::size_t> bins;
  std::vector<ConvLayer<T>> bin_convs;
  ConvLayer<T> reduce;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Per fused stage i = 1..4 (index i-1) and branch: stage output s, CTG input
/// o and CTG output h.
template <typename T>
struct FusionState {
  std::vector<std::vector<Tensor<T>>> s, o, h;
};

template <typename T>
struct NetOutput {
  Tensor<T> logits;  // [N, 2, H, W]
  FusionState<T> state;
};

/// Network inputs, NCHW with N >= 1. Which fields are needed depends on the
/// configuration; see PlifNet::required_inputs.
template <typename T>
struct NetInputs {
  Tensor<T> rgb;
  Tensor<T> pl;
  Tensor<T> depth;
};

template <typename T>
class PlifNet {
 public:
  /// Builds and initializes every parameter; `height` x `width` is the input
  /// resolution used to validate the stride plan and path transfers.
  PlifNet(NetConfig cfg, std::size_t height, std::size_t width);

  const NetConfig& config() const { return cfg_; }
  std::size_t input_height() const { return height_; }
  std::size_t input_width() const { return width_; }
  std::vector<InputKind> required_inputs() const;

  NetOutput<T> forward(const NetInputs<T>& in) const;

  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<Tensor<T>> tensors(ParamGroup group) const;
  std::size_t parameter_count() const;
  std::size_t transfer_op_count() const;

  /// Path weight p[branch][target][source] (search mode only).
  Tensor<T> path_weight(std::size_t branch, std::size_t target, std::size_t source) const;

  std::vector<CheckpointRecord> to_records() const;
  /// Names, order and shapes must match exactly.
  void load_records(const std::vector<CheckpointRecord>& records);

  CtgModule<T>& ctg(std::size_t stage) { return ctg_.at(stage - 1); }
  ConvLayer<T>& classifier() { return head_out_; }
  /// Spatial extent of stage outputs S0..S4.
  const std::vector<std::array<std::size_t, 2>>& stage_extents() const { return extents_; }

 private:
  struct Transfer {
    PathSpec spec;
    ConvLayer<T> conv;
    std::optional<Tensor<T>> weight;  // p, search mode only
  };

  Tensor<T>& add_param(const std::string& name, ParamGroup group, Shape shape);
  ConvLayer<T> make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                         std::size_t stride, double gain = 1.0);
  Tensor<T> branch_input(const NetInputs<T>& in, std::size_t branch) const;
  Tensor<T> assemble(std::size_t branch, std::size_t stage, const std::vector<Tensor<T>>& s) const;

  NetConfig cfg_;
  std::size_t height_, width_;
  std::vector<NamedParam<T>> params_;
  std::vector<std::array<std::size_t, 2>> extents_;
  std::vector<ConvLayer<T>> stems_;
  std::vector<std::vector<std::vector<ResidualBlock<T>>>> stages_;  // [branch][stage-1][block]
  std::vector<CtgModule<T>> ctg_;
  std::vector<Transfer> transfers_;
  std::vector<Tensor<T>> identity_weights_;  // [branch * 4 + stage-1], search mode
  std::vector<PpmModule<T>> ppm_;
  ConvLayer<T> head_hidden_, head_out_;
};

/// Cross-entropy of [N,2,H,W] logits against [N,H,W] road labels.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& labels);

/// Road probability per pixel, [N*H*W].
template <typename T>
std::vector<T> road_scores(const Tensor<T>& logits);

}  // namespace plroad
