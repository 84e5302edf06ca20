#include "plroad/pl_transform.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "plroad/errors.hpp"

namespace plroad {

void CameraIntrinsics::validate() const {
  if (!(f_v > 0.0) || !std::isfinite(f_v)) throw ConfigError("intrinsics: f_v must be > 0");
  if (!std::isfinite(c_u) || !std::isfinite(c_v)) throw ConfigError("intrinsics: non-finite principal point");
}

std::string CameraIntrinsics::to_json() const {
  nlohmann::ordered_json j;
  j["f_v"] = f_v;
  j["c_u"] = c_u;
  j["c_v"] = c_v;
  return j.dump(2) + "\n";
}

CameraIntrinsics CameraIntrinsics::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("intrinsics: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("intrinsics: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "f_v" && it.key() != "c_u" && it.key() != "c_v") {
      throw ConfigError("intrinsics: unknown key '" + it.key() + "'");
    }
  }
  CameraIntrinsics cam;
  try {
    cam.f_v = j.at("f_v").get<double>();
    cam.c_u = j.at("c_u").get<double>();
    cam.c_v = j.at("c_v").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("intrinsics: ") + e.what());
  }
  cam.validate();
  return cam;
}

AltitudeMap depth_to_altitude(const DepthMap& depth, const CameraIntrinsics& cam) {
  cam.validate();
  if (depth.width == 0 || depth.height == 0 || depth.values.size() != depth.width * depth.height) {
    throw ConfigError("depth_to_altitude: empty or inconsistent depth map");
  }
  AltitudeMap out(depth.width, depth.height);
  for (std::size_t v = 0; v < depth.height; ++v) {
    const double ratio = (static_cast<double>(v) - cam.c_v) / cam.f_v;
    for (std::size_t u = 0; u < depth.width; ++u) {
      const double z = depth.at(u, v);
      if (!std::isfinite(z) || z < 0.0) {
        throw ConfigError("depth_to_altitude: invalid depth " + std::to_string(z) + " at (" + std::to_string(u) + ", " +
                          std::to_string(v) + ")");
      }
      out.at(u, v) = ratio * z;
    }
  }
  return out;
}

PseudoLidarMap altitude_to_pl(const AltitudeMap& altitude, std::size_t radius) {
  const std::size_t W = altitude.width, H = altitude.height;
  if (W == 0 || H == 0) throw ConfigError("altitude_to_pl: empty altitude map");
  PseudoLidarMap out(W, H);
  const long r = static_cast<long>(radius);
  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const double centre = altitude.at(u, v);
      double total = 0.0;
      std::size_t count = 0;
      for (long dv = -r; dv <= r; ++dv) {
        const long nv = static_cast<long>(v) + dv;
        if (nv < 0 || nv >= static_cast<long>(H)) continue;
        for (long du = -r; du <= r; ++du) {
          const long nu = static_cast<long>(u) + du;
          if ((du == 0 && dv == 0) || nu < 0 || nu >= static_cast<long>(W)) continue;
          const double dh = altitude.at(static_cast<std::size_t>(nu), static_cast<std::size_t>(nv)) - centre;
          const double a = du != 0 ? dh / static_cast<double>(du) : 0.0;
          const double b = dv != 0 ? dh / static_cast<double>(dv) : 0.0;
          total += std::sqrt(a * a + b * b);
          ++count;
        }
      }
      out.at(u, v) = count ? total / static_cast<double>(count) : 0.0;
    }
  }
  return out;
}

template <typename Tag, typename T>
Tensor<T> clipped_feature_image(const PixelField<Tag>& field, double clip) {
  if (!(clip > 0.0)) throw ConfigError("feature clip must be > 0");
  std::vector<T> values(field.values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<T>(std::clamp(field.values[i], 0.0, clip) / clip);
  }
  return Tensor<T>(Shape{1, field.height, field.width}, std::move(values));
}

template <typename T>
Tensor<T> pl_feature_image(const PseudoLidarMap& pl, double clip) {
  return clipped_feature_image<PseudoLidarTag, T>(pl, clip);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("percentile rank must lie in (0, 1]");
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  const std::size_t k = std::max<std::size_t>(rank, 1) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<long>(k), values.end());
  return values[k];
}

template Tensor<float> pl_feature_image<float>(const PseudoLidarMap&, double);
template Tensor<double> pl_feature_image<double>(const PseudoLidarMap&, double);
template Tensor<float> clipped_feature_image<DepthTag, float>(const DepthMap&, double);
template Tensor<double> clipped_feature_image<DepthTag, double>(const DepthMap&, double);
template Tensor<float> clipped_feature_image<PseudoLidarTag, float>(const PseudoLidarMap&, double);
template Tensor<double> clipped_feature_image<PseudoLidarTag, double>(const PseudoLidarMap&, double);

}  // namespace plroad
