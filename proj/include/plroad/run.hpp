#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "plroad/dataset.hpp"
#include "plroad/distill.hpp"
#include "plroad/net.hpp"
#include "plroad/sgd.hpp"

namespace plroad {

/// Everything a run needs besides its input files. The top-level seed drives
/// network init, batch order and the image-loss pairs; the scene keeps its
/// own seed so every run seed sees the same benchmark.
struct RunConfig {
  std::filesystem::path dataset;  // resolved against the config file's directory
  SceneConfig scene;
  std::size_t count = 200;
  NetConfig net;
  SgdConfig sgd;
  double lr_power = 0.9;
  std::size_t epochs = 30;
  std::size_t search_epochs = 30;
  double path_learning_rate = 1e-2;
  double path_momentum = 0.9;
  MdConfig md;
  std::size_t distill_epochs = 30;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::filesystem::path out;  // optional; --out wins

  void validate() const;
  /// Sets the seed and copies it into net, sgd and md.
  void set_seed(std::uint64_t s);
};

RunConfig default_run_config();

/// Strict: unknown keys anywhere are errors. Relative paths are taken
/// relative to `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig read_run_config(const std::filesystem::path& path);

/// Paths are written relative to `base_dir` when `base_dir` is given.
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg, const std::filesystem::path& base_dir = {});
/// Omits the output directory.
void write_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// The config without file locations; what a run's hash covers.
nlohmann::ordered_json run_config_snapshot(const RunConfig& cfg);

/// SHA-1 of "blob <size>\0" + bytes, hex (the git object id of a file).
std::string git_blob_hash(const std::string& bytes);

/// Blob hash over "<blob hash> <name>\n" lines of the manifest and every
/// sample file, in manifest order.
std::string dataset_digest(const DatasetManifest& manifest);

/// Describes a checkpoint: architecture, input geometry and the input
/// normalization it was trained with. Stored next to the .plrd file.
struct ModelInfo {
  std::string role;  // teacher, supernet or student
  NetConfig net;
  std::size_t height = 0;
  std::size_t width = 0;
  double pl_clip = 1.0;
  double depth_clip = 1.0;
  CameraIntrinsics intrinsics;

  std::string to_json() const;
  static ModelInfo from_json(const std::string& text);
};

inline constexpr const char* kModelFile = "model.plrd";
inline constexpr const char* kModelInfoFile = "model.json";
inline constexpr const char* kRecordFile = "record.json";

void save_model(const std::filesystem::path& dir, const PlifNet<float>& net, const ModelInfo& info);

struct LoadedModel {
  ModelInfo info;
  PlifNet<float> net;
};

/// Accepts the .plrd file or the directory holding it.
LoadedModel load_model(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_max_f = 0.0;
};

/// Progress of one run directory. Rewritten atomically after every epoch.
struct RunRecord {
  std::string command;
  std::string status = "running";  // running, complete, diverged
  std::string hash;
  nlohmann::ordered_json config;
  nlohmann::ordered_json inputs;  // name -> content hash
  std::vector<EpochLog> epochs;
  std::string checkpoint;
  std::string message;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

/// Hash of the command name, config snapshot and input hashes.
std::string run_hash(const std::string& command, const nlohmann::ordered_json& config,
                     const nlohmann::ordered_json& inputs);

enum class RunState { kFresh, kComplete };

/// Checks `dir` against a new run with `hash`. A complete record with the
/// same hash means there is nothing to do; a record with another hash is an
/// error unless `force`. Anything else starts over.
RunState check_run_dir(const std::filesystem::path& dir, const std::string& hash, bool force);

void write_record(const std::filesystem::path& dir, const RunRecord& record);
RunRecord read_record(const std::filesystem::path& dir);

}  // namespace plroad
