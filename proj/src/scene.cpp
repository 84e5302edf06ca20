#include "plroad/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "plroad/errors.hpp"
#include "plroad/rng.hpp"

namespace plroad {

void SceneConfig::validate() const {
  if (width < 16 || height < 16) throw ConfigError("scene: width and height must be >= 16");
  if (!(camera_height > 0.0) || !std::isfinite(camera_height)) {
    throw ConfigError("scene: camera must sit above the ground plane (camera_height > 0)");
  }
  if (!(road_half_width > 0.0)) throw ConfigError("scene: road_half_width must be > 0");
  if (!(shadow_probability >= 0.0 && shadow_probability <= 1.0)) {
    throw ConfigError("scene: shadow_probability must lie in [0, 1]");
  }
  if (obstacle_count_range[0] < 0 || obstacle_count_range[1] < obstacle_count_range[0]) {
    throw ConfigError("scene: obstacle_count_range must satisfy 0 <= lo <= hi");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("scene: noise_sigma must be >= 0");
  if (!(curb_height >= 0.0) || !(verge_slope >= 0.0)) throw ConfigError("scene: terrain rise must be >= 0");
  if (!(max_depth > 10.0)) throw ConfigError("scene: max_depth must exceed 10 m");
}

CameraIntrinsics SceneConfig::intrinsics() const {
  CameraIntrinsics cam;
  cam.f_v = static_cast<double>(width) / 2.0;
  cam.c_u = (static_cast<double>(width) - 1.0) / 2.0;
  cam.c_v = 0.28 * static_cast<double>(height);
  return cam;
}

namespace {

constexpr double kMaxTerrainRise = 1.5;
constexpr double kGolden = 0.6180339887498949;

struct Road {
  double offset = 0.0;
  double heading = 0.0;
  double curvature = 0.0;
  double half_width = 3.5;

  double centre(double z) const { return offset + heading * z + 0.5 * curvature * z * z; }
};

struct Terrain {
  Road road;
  double curb = 0.15;
  double slope = 0.12;

  double lateral(double x, double z) const { return x - road.centre(z); }
  // Height above the road plane.
  double rise(double x, double z) const {
    const double d = std::abs(lateral(x, z));
    if (d <= road.half_width) return 0.0;
    return std::min(curb + slope * (d - road.half_width), kMaxTerrainRise);
  }
};

struct Box {
  double x0, x1, y0, y1, z0, z1;
  float r, g, b;
};

// Shadow footprint on the ground in (lateral offset, z) coordinates; the
// lateral bounds drift linearly with z so the polygon is a parallelogram.
struct Shadow {
  double z0, z1;
  double e0, e1;
  double skew;
  double strength;
  double ambient;

  bool covers(double e, double z) const {
    if (z < z0 || z > z1) return false;
    const double shift = skew * (z - z0);
    return e >= e0 + shift && e <= e1 + shift;
  }
};

enum class Surface { kRoad, kVerge, kObstacle, kSky };

struct Hit {
  Surface surface = Surface::kSky;
  double z = 0.0;
  double x = 0.0;
  std::size_t box = 0;
};

struct Ray {
  double au, av;  // x = au * z, y = av * z
};

// First z at which the ray enters the box, or +inf.
double box_entry(const Ray& ray, const Box& b) {
  double lo = b.z0, hi = b.z1;
  auto clip = [&](double a, double s0, double s1) {
    if (a == 0.0) {
      if (s0 > 0.0 || s1 < 0.0) hi = -1.0;
      return;
    }
    double t0 = s0 / a, t1 = s1 / a;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  };
  clip(ray.au, b.x0, b.x1);
  clip(ray.av, b.y0, b.y1);
  if (lo > hi || lo <= 0.0) return std::numeric_limits<double>::infinity();
  return lo;
}

Hit trace_terrain(const Ray& ray, const Terrain& terrain, double camera_height, double max_depth) {
  auto inside = [&](double z) { return ray.av * z >= camera_height - terrain.rise(ray.au * z, z); };
  Hit hit;
  double prev = 0.25;
  if (inside(prev)) prev = 0.05;
  double z = prev;
  while (z < max_depth) {
    z = std::min(z * 1.01 + 0.01, max_depth);
    if (inside(z)) {
      double a = prev, b = z;
      for (int it = 0; it < 60; ++it) {
        const double m = 0.5 * (a + b);
        (inside(m) ? b : a) = m;
      }
      const double x = ray.au * b;
      if (std::abs(terrain.lateral(x, b)) <= terrain.road.half_width && ray.av > 0.0) {
        hit.surface = Surface::kRoad;
        hit.z = camera_height / ray.av;
      } else {
        hit.surface = Surface::kVerge;
        hit.z = b;
      }
      hit.x = ray.au * hit.z;
      return hit;
    }
    prev = z;
  }
  hit.surface = Surface::kSky;
  hit.z = max_depth;
  hit.x = ray.au * max_depth;
  return hit;
}

Road sample_road(const SceneConfig& cfg, Rng& rng) {
  Road road;
  road.half_width = cfg.road_half_width;
  if (cfg.straight_road) return road;
  road.offset = rng.uniform(-1.2, 1.2);
  road.heading = rng.uniform(-0.04, 0.04);
  road.curvature = rng.uniform(-0.006, 0.006);
  road.half_width = cfg.road_half_width * rng.uniform(0.85, 1.15);
  return road;
}

std::vector<Box> sample_obstacles(const SceneConfig& cfg, const Terrain& terrain, Rng& rng) {
  const int count = static_cast<int>(rng.range(cfg.obstacle_count_range[0], cfg.obstacle_count_range[1]));
  std::vector<Box> boxes;
  for (int attempt = 0; static_cast<int>(boxes.size()) < count && attempt < 20 * (count + 1); ++attempt) {
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double zc = rng.uniform(8.0, 45.0);
    const double depth = rng.uniform(0.6, 3.0);
    const double gap = rng.uniform(0.8, 5.0);
    const double width = rng.uniform(0.6, 2.5);
    const double tall = rng.uniform(0.6, 2.5);
    const double inner = terrain.road.centre(zc) + side * (terrain.road.half_width + gap);
    Box b{};
    b.x0 = std::min(inner, inner + side * width);
    b.x1 = std::max(inner, inner + side * width);
    b.z0 = zc - 0.5 * depth;
    b.z1 = zc + 0.5 * depth;
    const double base = terrain.rise(0.5 * (b.x0 + b.x1), zc);
    b.y1 = cfg.camera_height;
    b.y0 = cfg.camera_height - base - tall;
    b.r = static_cast<float>(rng.uniform(0.15, 0.75));
    b.g = static_cast<float>(rng.uniform(0.15, 0.75));
    b.b = static_cast<float>(rng.uniform(0.15, 0.75));
    bool clear = true;
    for (int k = 0; k <= 10 && clear; ++k) {
      const double z = b.z0 + (b.z1 - b.z0) * k / 10.0;
      const double c = terrain.road.centre(z);
      const double lo = c - terrain.road.half_width - 0.3, hi = c + terrain.road.half_width + 0.3;
      clear = b.x1 < lo || b.x0 > hi;
    }
    if (clear) boxes.push_back(b);
  }
  return boxes;
}

Shadow sample_shadow(const Road& road, Rng& rng) {
  Shadow s{};
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  s.z0 = rng.uniform(4.0, 22.0);
  s.z1 = s.z0 + rng.uniform(3.0, 12.0);
  const double edge = side * road.half_width;
  const double into_road = rng.uniform(1.0, road.half_width);
  const double into_verge = rng.uniform(1.0, 4.0);
  s.e0 = side > 0 ? edge - into_road : edge - into_verge;
  s.e1 = side > 0 ? edge + into_verge : edge + into_road;
  s.skew = rng.uniform(-0.15, 0.15);
  s.strength = rng.uniform(0.3, 0.45);
  s.ambient = rng.uniform(0.35, 0.5);
  return s;
}

// Stratified so that any run of consecutive indices has a shadow share close
// to the configured probability.
bool draw_boundary_shadow(const SceneConfig& cfg, std::size_t index) {
  const double phase = static_cast<double>(mix_seed(cfg.seed, 0x5ad0u) >> 11) * 0x1.0p-53;
  const double u = std::fmod(phase + static_cast<double>(index) * kGolden, 1.0);
  return u < cfg.shadow_probability;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Sample generate_scene(const SceneConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::size_t W = cfg.width, H = cfg.height;
  const CameraIntrinsics cam = cfg.intrinsics();
  const double f = cam.f_v;
  Rng rng(mix_seed(cfg.seed, index));

  Terrain terrain;
  terrain.road = sample_road(cfg, rng);
  terrain.curb = cfg.curb_height;
  terrain.slope = cfg.straight_road ? cfg.verge_slope : cfg.verge_slope * rng.uniform(0.7, 1.3);
  const std::vector<Box> boxes = sample_obstacles(cfg, terrain, rng);

  std::vector<Hit> hits(W * H);
  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const Ray ray{(static_cast<double>(u) - cam.c_u) / f, (static_cast<double>(v) - cam.c_v) / f};
      Hit hit = trace_terrain(ray, terrain, cfg.camera_height, cfg.max_depth);
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const double z = box_entry(ray, boxes[k]);
        if (z < hit.z) {
          hit.surface = Surface::kObstacle;
          hit.z = z;
          hit.x = ray.au * z;
          hit.box = k;
        }
      }
      hits[v * W + u] = hit;
    }
  }

  // Colour palette for this sample. The verge hue runs from green to brown
  // and its saturation varies, so some verges are nearly as grey as the road.
  const double road_grey = rng.uniform(0.38, 0.55);
  const double hue = rng.uniform();
  const double saturation = rng.uniform(0.15, 1.0);
  const double verge_luma = road_grey + rng.uniform(-0.08, 0.08);
  double verge[3] = {0.30 + 0.15 * hue, 0.45 - 0.07 * hue, 0.18 + 0.10 * hue};
  const double base_luma = (verge[0] + verge[1] + verge[2]) / 3.0;
  for (double& ch : verge) ch = verge_luma + saturation * (ch - base_luma);
  const double illumination = rng.uniform(0.75, 1.15);
  const double texture_phase = rng.uniform(0.0, 6.283185307179586);
  const double sky = rng.uniform(0.85, 1.0);

  std::vector<Shadow> shadows;
  bool boundary_shadow = false;
  if (draw_boundary_shadow(cfg, index)) {
    const int n = 1 + static_cast<int>(rng.below(2));
    for (int s = 0; s < n; ++s) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const Shadow cand = sample_shadow(terrain.road, rng);
        bool on_road = false, on_verge = false;
        for (const Hit& h : hits) {
          if (h.surface != Surface::kRoad && h.surface != Surface::kVerge) continue;
          if (!cand.covers(terrain.lateral(h.x, h.z), h.z)) continue;
          (h.surface == Surface::kRoad ? on_road : on_verge) = true;
        }
        if (on_road && on_verge) {
          shadows.push_back(cand);
          boundary_shadow = true;
          break;
        }
      }
    }
  }

  Sample out;
  out.intrinsics = cam;
  out.boundary_shadow = boundary_shadow;
  out.depth = DepthMap(W, H);
  std::vector<float> rgb(3 * W * H), mask(W * H, 0.0f);
  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const std::size_t i = v * W + u;
      const Hit& h = hits[i];
      double c[3];
      switch (h.surface) {
        case Surface::kRoad:
          c[0] = road_grey;
          c[1] = road_grey;
          c[2] = road_grey + 0.02;
          mask[i] = 1.0f;
          break;
        case Surface::kVerge: {
          const double t = 0.04 * std::sin(1.7 * h.x + 0.9 * h.z + texture_phase) +
                           0.03 * std::sin(0.6 * h.z - 2.3 * h.x);
          c[0] = verge[0] + t;
          c[1] = verge[1] + t;
          c[2] = verge[2] + 0.5 * t;
          break;
        }
        case Surface::kObstacle:
          c[0] = boxes[h.box].r;
          c[1] = boxes[h.box].g;
          c[2] = boxes[h.box].b;
          break;
        case Surface::kSky: {
          const double fade = static_cast<double>(v) / static_cast<double>(H);
          c[0] = sky * (0.55 + 0.2 * fade);
          c[1] = sky * (0.70 + 0.1 * fade);
          c[2] = sky * 0.90;
          break;
        }
      }
      if (h.surface == Surface::kRoad || h.surface == Surface::kVerge) {
        const double e = terrain.lateral(h.x, h.z);
        for (const Shadow& s : shadows) {
          if (!s.covers(e, h.z)) continue;
          // Deep shade: little of the surface colour survives.
          for (double& ch : c) ch = s.strength * (0.2 * ch + 0.8 * s.ambient);
        }
      }
      for (double& ch : c) ch *= illumination;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double noisy = c[ch] + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0);
        rgb[ch * W * H + i] = static_cast<float>(quantize(noisy)) / 255.0f;
      }
      out.depth.values[i] = static_cast<double>(static_cast<float>(h.z));
    }
  }
  out.rgb = Tensor<float>(Shape{3, H, W}, std::move(rgb));
  out.mask = Tensor<float>(Shape{H, W}, std::move(mask));
  return out;
}

}  // namespace plroad
