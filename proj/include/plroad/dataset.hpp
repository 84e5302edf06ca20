#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "plroad/pl_transform.hpp"
#include "plroad/scene.hpp"

namespace plroad {

nlohmann::ordered_json scene_config_to_json(const SceneConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
SceneConfig scene_config_from_json(const nlohmann::json& j);

struct ManifestEntry {
  std::size_t index = 0;
  std::string split;
  std::string rgb;
  std::string depth;
  std::string mask;
  bool boundary_shadow = false;
};

struct DatasetManifest {
  std::filesystem::path dir;  // not serialized; set by the reader/writer
  SceneConfig scene;
  CameraIntrinsics intrinsics;
  std::uint64_t generator_seed = 0;
  std::size_t count = 0;
  /// 99th percentile of PL (resp. depth) over the train split; used to map
  /// the raw fields to [0, 1] network inputs.
  double pl_clip = 1.0;
  double depth_clip = 1.0;
  std::vector<ManifestEntry> samples;

  std::vector<std::size_t> split(const std::string& name) const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, const std::filesystem::path& dir);
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr double kClipPercentile = 0.99;

/// 70/15/15 by index: train, val, test.
std::string split_of(std::size_t index, std::size_t count);

/// PL of a sample's depth under its own intrinsics.
PseudoLidarMap sample_pl(const Sample& sample);

/// Writes rgb_NNNN.ppm, depth_NNNN.pfm, mask_NNNN.pgm per sample, then
/// intrinsics.json and manifest.json last.
DatasetManifest write_dataset(const SceneConfig& cfg, std::size_t count, const std::filesystem::path& dir,
                              std::size_t threads = 1);

/// Accepts either the manifest file or its directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

Sample load_sample(const DatasetManifest& manifest, std::size_t index);

/// Network-ready tensors for one sample (batch dimension of 1).
struct SampleTensors {
  Tensor<float> rgb;     // [1, 3, H, W]
  Tensor<float> pl;      // [1, 1, H, W], clipped and scaled to [0, 1]
  Tensor<float> depth;   // [1, 1, H, W], clipped and scaled to [0, 1]
  Tensor<float> labels;  // [1, H, W], 1 = road
};

SampleTensors make_sample_tensors(const Sample& sample, double pl_clip, double depth_clip);

/// Every sample of a manifest loaded into memory.
struct TrainingData {
  DatasetManifest manifest;
  std::vector<SampleTensors> samples;
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& split(const std::string& name) const;
};

TrainingData load_training_data(const DatasetManifest& manifest);

}  // namespace plroad
