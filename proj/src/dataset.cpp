#include "plroad/dataset.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "plroad/checkpoint.hpp"
#include "plroad/errors.hpp"
#include "plroad/image_io.hpp"
#include "plroad/json_util.hpp"

namespace plroad {

nlohmann::ordered_json scene_config_to_json(const SceneConfig& cfg) {
  nlohmann::ordered_json j;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["camera_height"] = cfg.camera_height;
  j["road_half_width"] = cfg.road_half_width;
  j["shadow_probability"] = cfg.shadow_probability;
  j["obstacle_count_range"] = cfg.obstacle_count_range;
  j["noise_sigma"] = cfg.noise_sigma;
  j["seed"] = cfg.seed;
  j["straight_road"] = cfg.straight_road;
  j["curb_height"] = cfg.curb_height;
  j["verge_slope"] = cfg.verge_slope;
  j["max_depth"] = cfg.max_depth;
  return j;
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "scene";
  reject_unknown_keys(j,
                      {"width", "height", "camera_height", "road_half_width", "shadow_probability",
                       "obstacle_count_range", "noise_sigma", "seed", "straight_road", "curb_height",
                       "verge_slope", "max_depth"},
                      ctx);
  SceneConfig cfg;
  read_optional(j, "width", cfg.width, ctx);
  read_optional(j, "height", cfg.height, ctx);
  read_optional(j, "camera_height", cfg.camera_height, ctx);
  read_optional(j, "road_half_width", cfg.road_half_width, ctx);
  read_optional(j, "shadow_probability", cfg.shadow_probability, ctx);
  read_optional(j, "obstacle_count_range", cfg.obstacle_count_range, ctx);
  read_optional(j, "noise_sigma", cfg.noise_sigma, ctx);
  read_optional(j, "seed", cfg.seed, ctx);
  read_optional(j, "straight_road", cfg.straight_road, ctx);
  read_optional(j, "curb_height", cfg.curb_height, ctx);
  read_optional(j, "verge_slope", cfg.verge_slope, ctx);
  read_optional(j, "max_depth", cfg.max_depth, ctx);
  cfg.validate();
  return cfg;
}

std::string split_of(std::size_t index, std::size_t count) {
  const std::size_t n_train = count * 70 / 100;
  const std::size_t n_val = count * 15 / 100;
  if (index < n_train) return "train";
  if (index < n_train + n_val) return "val";
  return "test";
}

std::vector<std::size_t> DatasetManifest::split(const std::string& name) const {
  if (name != "train" && name != "val" && name != "test" && name != "all") {
    throw ConfigError("unknown split '" + name + "' (expected train, val, test or all)");
  }
  std::vector<std::size_t> out;
  for (const auto& e : samples) {
    if (name == "all" || e.split == name) out.push_back(e.index);
  }
  return out;
}

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "plroad-dataset";
  j["version"] = 1;
  j["generator_seed"] = generator_seed;
  j["count"] = count;
  j["pl_clip"] = pl_clip;
  j["depth_clip"] = depth_clip;
  j["scene"] = scene_config_to_json(scene);
  j["intrinsics"] = {{"f_v", intrinsics.f_v}, {"c_u", intrinsics.c_u}, {"c_v", intrinsics.c_v}};
  nlohmann::ordered_json splits;
  for (const char* name : {"train", "val", "test"}) splits[name] = split(name).size();
  j["split_sizes"] = splits;
  auto& list = j["samples"] = nlohmann::ordered_json::array();
  for (const auto& e : samples) {
    nlohmann::ordered_json s;
    s["index"] = e.index;
    s["split"] = e.split;
    s["rgb"] = e.rgb;
    s["depth"] = e.depth;
    s["mask"] = e.mask;
    s["boundary_shadow"] = e.boundary_shadow;
    list.push_back(s);
  }
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text, const std::filesystem::path& dir) {
  const std::string ctx = "manifest";
  const auto j = parse_json_text(text, ctx);
  reject_unknown_keys(j,
                      {"format", "version", "generator_seed", "count", "pl_clip", "depth_clip", "scene",
                       "intrinsics", "split_sizes", "samples"},
                      ctx);
  if (read_required<std::string>(j, "format", ctx) != "plroad-dataset") throw ConfigError(ctx + ": bad format tag");
  if (read_required<int>(j, "version", ctx) != 1) throw ConfigError(ctx + ": unsupported version");
  DatasetManifest m;
  m.dir = dir;
  m.generator_seed = read_required<std::uint64_t>(j, "generator_seed", ctx);
  m.count = read_required<std::size_t>(j, "count", ctx);
  m.pl_clip = read_required<double>(j, "pl_clip", ctx);
  m.depth_clip = read_required<double>(j, "depth_clip", ctx);
  m.scene = scene_config_from_json(j.at("scene"));
  m.intrinsics = CameraIntrinsics::from_json(j.at("intrinsics").dump());
  const auto& list = j.at("samples");
  if (!list.is_array() || list.size() != m.count) throw ConfigError(ctx + ": sample list does not match count");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& s = list[i];
    const std::string sctx = ctx + ".samples[" + std::to_string(i) + "]";
    reject_unknown_keys(s, {"index", "split", "rgb", "depth", "mask", "boundary_shadow"}, sctx);
    ManifestEntry e;
    e.index = read_required<std::size_t>(s, "index", sctx);
    e.split = read_required<std::string>(s, "split", sctx);
    e.rgb = read_required<std::string>(s, "rgb", sctx);
    e.depth = read_required<std::string>(s, "depth", sctx);
    e.mask = read_required<std::string>(s, "mask", sctx);
    read_optional(s, "boundary_shadow", e.boundary_shadow, sctx);
    if (e.index != i) throw ConfigError(sctx + ": indices must be consecutive from 0");
    if (e.split != split_of(i, m.count)) throw ConfigError(sctx + ": split disagrees with the 70/15/15 rule");
    m.samples.push_back(std::move(e));
  }
  if (!(m.pl_clip > 0.0) || !(m.depth_clip > 0.0)) throw ConfigError(ctx + ": clips must be > 0");
  return m;
}

PseudoLidarMap sample_pl(const Sample& sample) {
  return altitude_to_pl(depth_to_altitude(sample.depth, sample.intrinsics));
}

namespace {

std::string numbered(const char* stem, std::size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, index, ext);
  return buf;
}

struct Written {
  ManifestEntry entry;
  std::vector<double> pl;     // train samples only
  std::vector<double> depth;  // train samples only
};

Written write_one(const SceneConfig& cfg, std::size_t index, std::size_t count, const std::filesystem::path& dir) {
  const Sample s = generate_scene(cfg, index);
  const std::size_t W = cfg.width, H = cfg.height;
  Written out;
  out.entry.index = index;
  out.entry.split = split_of(index, count);
  out.entry.rgb = numbered("rgb", index, "ppm");
  out.entry.depth = numbered("depth", index, "pfm");
  out.entry.mask = numbered("mask", index, "pgm");
  out.entry.boundary_shadow = s.boundary_shadow;

  ByteImage rgb{W, H, 3, std::vector<std::uint8_t>(3 * W * H)};
  ByteImage mask{W, H, 1, std::vector<std::uint8_t>(W * H)};
  FloatImage depth{W, H, std::vector<float>(W * H)};
  const auto& c = s.rgb.data();
  for (std::size_t i = 0; i < W * H; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      rgb.data[3 * i + ch] = static_cast<std::uint8_t>(std::lround(c[ch * W * H + i] * 255.0f));
    }
    mask.data[i] = s.mask.data()[i] > 0.5f ? 255 : 0;
    depth.data[i] = static_cast<float>(s.depth.values[i]);
  }
  write_ppm(dir / out.entry.rgb, rgb);
  write_pfm(dir / out.entry.depth, depth);
  write_pgm(dir / out.entry.mask, mask);
  if (out.entry.split == "train") {
    out.pl = sample_pl(s).values;
    out.depth = s.depth.values;
  }
  return out;
}

}  // namespace

DatasetManifest write_dataset(const SceneConfig& cfg, std::size_t count, const std::filesystem::path& dir,
                              std::size_t threads) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory: " + ec.message());

  std::vector<Written> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = write_one(cfg, i, count, dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, count));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  DatasetManifest m;
  m.dir = dir;
  m.scene = cfg;
  m.intrinsics = cfg.intrinsics();
  m.generator_seed = cfg.seed;
  m.count = count;
  std::vector<double> pl, depth;
  for (auto& r : results) {
    pl.insert(pl.end(), r.pl.begin(), r.pl.end());
    depth.insert(depth.end(), r.depth.begin(), r.depth.end());
    m.samples.push_back(std::move(r.entry));
  }
  if (!pl.empty()) {
    m.pl_clip = percentile(std::move(pl), kClipPercentile);
    m.depth_clip = percentile(std::move(depth), kClipPercentile);
  }
  if (!(m.pl_clip > 0.0)) m.pl_clip = 1.0;
  write_text_atomic(dir / "intrinsics.json", m.intrinsics.to_json());
  write_text_atomic(dir / kManifestName, m.to_json());
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
  const auto bytes = read_file_bytes(file);
  try {
    return DatasetManifest::from_json(std::string(bytes.begin(), bytes.end()), file.parent_path());
  } catch (const ConfigError& e) {
    throw IoError(file.string() + ": " + e.what());
  }
}

Sample load_sample(const DatasetManifest& m, std::size_t index) {
  if (index >= m.samples.size()) {
    throw ConfigError("load_sample: index " + std::to_string(index) + " out of range (count " +
                      std::to_string(m.samples.size()) + ")");
  }
  const auto& e = m.samples[index];
  const std::size_t W = m.scene.width, H = m.scene.height;
  const auto rgb_path = m.dir / e.rgb, depth_path = m.dir / e.depth, mask_path = m.dir / e.mask;
  const ByteImage rgb = read_ppm(rgb_path);
  const FloatImage depth = read_pfm(depth_path);
  const ByteImage mask = read_pgm(mask_path);
  auto check_size = [&](const std::filesystem::path& p, std::size_t w, std::size_t h) {
    if (w != W || h != H) {
      throw IoError(p.string() + ": size " + std::to_string(w) + "x" + std::to_string(h) + " differs from manifest " +
                    std::to_string(W) + "x" + std::to_string(H));
    }
  };
  check_size(rgb_path, rgb.width, rgb.height);
  check_size(depth_path, depth.width, depth.height);
  check_size(mask_path, mask.width, mask.height);

  Sample s;
  s.intrinsics = m.intrinsics;
  s.boundary_shadow = e.boundary_shadow;
  s.depth = DepthMap(W, H);
  std::vector<float> c(3 * W * H), labels(W * H);
  for (std::size_t i = 0; i < W * H; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) c[ch * W * H + i] = static_cast<float>(rgb.data[3 * i + ch]) / 255.0f;
    const std::uint8_t mv = mask.data[i];
    if (mv != 0 && mv != 255) {
      throw IoError(mask_path.string() + ": mask value " + std::to_string(mv) + " at pixel " + std::to_string(i) +
                    " is not 0 or 255");
    }
    labels[i] = mv == 255 ? 1.0f : 0.0f;
    if (!std::isfinite(depth.data[i])) {
      throw IoError(depth_path.string() + ": non-finite depth at pixel " + std::to_string(i));
    }
    s.depth.values[i] = static_cast<double>(depth.data[i]);
  }
  s.rgb = Tensor<float>(Shape{3, H, W}, std::move(c));
  s.mask = Tensor<float>(Shape{H, W}, std::move(labels));
  return s;
}

SampleTensors make_sample_tensors(const Sample& sample, double pl_clip, double depth_clip) {
  const std::size_t H = sample.depth.height, W = sample.depth.width;
  SampleTensors t;
  t.rgb = sample.rgb.reshape(Shape{1, 3, H, W});
  t.pl = pl_feature_image<float>(sample_pl(sample), pl_clip).reshape(Shape{1, 1, H, W});
  t.depth = clipped_feature_image<DepthTag, float>(sample.depth, depth_clip).reshape(Shape{1, 1, H, W});
  t.labels = sample.mask.reshape(Shape{1, H, W});
  return t;
}

const std::vector<std::size_t>& TrainingData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

TrainingData load_training_data(const DatasetManifest& manifest) {
  TrainingData data;
  data.manifest = manifest;
  for (std::size_t i = 0; i < manifest.count; ++i) {
    data.samples.push_back(make_sample_tensors(load_sample(manifest, i), manifest.pl_clip, manifest.depth_clip));
  }
  data.train = manifest.split("train");
  data.val = manifest.split("val");
  data.test = manifest.split("test");
  return data;
}

}  // namespace plroad
