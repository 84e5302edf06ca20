#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "plroad/tensor.hpp"

namespace plroad {

/// Pinhole parameters in pixels. Only the vertical focal length and the
/// principal point enter the altitude transform.
struct CameraIntrinsics {
  double f_v = 1.0;
  double c_u = 0.0;
  double c_v = 0.0;

  void validate() const;
  std::string to_json() const;
  static CameraIntrinsics from_json(const std::string& text);
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Row-major per-pixel scalar field; u indexes columns, v rows.
template <typename Tag>
struct PixelField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  PixelField() = default;
  PixelField(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}

  double at(std::size_t u, std::size_t v) const { return values[v * width + u]; }
  double& at(std::size_t u, std::size_t v) { return values[v * width + u]; }
  bool operator==(const PixelField&) const = default;
};

struct DepthTag {};
struct AltitudeTag {};
struct PseudoLidarTag {};

/// Metric z-depth per pixel.
using DepthMap = PixelField<DepthTag>;
/// Camera-frame altitude per pixel (the camera y axis points down the image).
using AltitudeMap = PixelField<AltitudeTag>;
/// Mean local altitude-slope magnitude per pixel.
using PseudoLidarMap = PixelField<PseudoLidarTag>;

/// Half-size of the square neighbourhood used by altitude_to_pl (7x7 window).
inline constexpr std::size_t kPlWindowRadius = 3;

/// H(u,v) = (v - c_v) / f_v * D(u,v).
AltitudeMap depth_to_altitude(const DepthMap& depth, const CameraIntrinsics& cam);

/// PL(u,v) = 1/N * sum over in-image neighbours (centre excluded) of
/// sqrt((dh/du)^2 + (dh/dv)^2), dh = H(nu,nv) - H(u,v). A ratio whose
/// coordinate offset is zero contributes nothing under the radical.
PseudoLidarMap altitude_to_pl(const AltitudeMap& altitude, std::size_t radius = kPlWindowRadius);

/// Clamps to [0, clip] and rescales to [0, 1]; shape [1, H, W].
template <typename T>
Tensor<T> pl_feature_image(const PseudoLidarMap& pl, double clip);

/// Same mapping for an arbitrary non-negative field (raw depth input).
template <typename Tag, typename T>
Tensor<T> clipped_feature_image(const PixelField<Tag>& field, double clip);

/// Nearest-rank percentile (q in (0, 1]) of a pooled set of values.
double percentile(std::vector<double> values, double q);

}  // namespace plroad
