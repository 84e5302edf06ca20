#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "plroad/pl_transform.hpp"
#include "plroad/tensor.hpp"

namespace plroad {

/// Synthetic road scene parameters. The camera looks along +z from
/// `camera_height` metres above a flat road; y points down, so the road plane
/// is y = +camera_height in camera coordinates.
struct SceneConfig {
  std::size_t width = 96;
  std::size_t height = 32;
  double camera_height = 1.6;
  double road_half_width = 3.5;
  double shadow_probability = 0.6;
  std::array<int, 2> obstacle_count_range{2, 6};
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;
  bool straight_road = false;
  /// Off-road terrain rises by `curb_height` at the road edge, then by
  /// `verge_slope` metres per lateral metre.
  double curb_height = 0.15;
  double verge_slope = 0.12;
  /// Distance of the vertical backdrop that bounds every ray.
  double max_depth = 80.0;

  void validate() const;
  /// f = width / 2 (90 degree horizontal field of view), horizon at 28% of
  /// the image height.
  CameraIntrinsics intrinsics() const;
};

struct Sample {
  Tensor<float> rgb;   // [3, H, W], multiples of 1/255
  DepthMap depth;      // float32-representable metres
  Tensor<float> mask;  // [H, W], 1 = road
  CameraIntrinsics intrinsics;
  bool boundary_shadow = false;  // a shadow visibly straddles the road edge
};

/// Fully determined by (cfg, index).
Sample generate_scene(const SceneConfig& cfg, std::size_t index);

}  // namespace plroad
