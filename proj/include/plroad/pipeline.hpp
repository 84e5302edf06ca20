#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "plroad/image_io.hpp"
#include "plroad/ipps.hpp"
#include "plroad/metrics.hpp"
#include "plroad/run.hpp"

namespace plroad {

struct RunOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; null is silent
};

struct RunResult {
  std::filesystem::path dir;
  bool skipped = false;  // a complete identical run was already there
};

/// Inside a run directory, next to the model.
inline constexpr const char* kTimingFile = "timing.json";

DatasetManifest gen_data(const SceneConfig& scene, std::size_t count, const std::filesystem::path& out,
                         std::size_t threads, const RunOptions& opt = {});

/// Trains cfg.net from scratch on the train split, checkpointing and
/// scoring the val split after every epoch.
RunResult train_run(const RunConfig& cfg, const std::filesystem::path& out, const RunOptions& opt = {});

/// Supernet search; writes the supernet, paths.json, trajectory.csv and a
/// copy of the config for finalize.
RunResult search_run(const RunConfig& cfg, const std::filesystem::path& out, const RunOptions& opt = {});

inline constexpr const char* kPathsFile = "paths.json";

/// Writes <out>/config.json: `cfg` with the selected transfers as its net.
std::filesystem::path finalize_run(const RunConfig& cfg, const SelectedPaths& selected,
                                   const std::filesystem::path& out, const RunOptions& opt = {});

/// Student of `teacher_path` trained with cfg.md.
RunResult distill_run(const RunConfig& cfg, const std::filesystem::path& teacher_path,
                      const std::filesystem::path& out, const RunOptions& opt = {});

struct EvalOutput {
  EvalReport report;
  ScoreAccumulator scores;
};

/// Scores a saved model on a split of `dataset`, normalizing inputs the
/// way the model was trained.
EvalOutput eval_model(const std::filesystem::path& model, const std::filesystem::path& dataset,
                      const std::string& split, std::size_t threads = 1);

/// report-<split>.json, report-<split>.txt and pr-<split>.csv in `dir`.
void write_eval_outputs(const EvalOutput& out, const std::filesystem::path& dir, const std::string& split,
                        const std::string& title);

/// Road probability map (0..255) of one image. Teacher-style models need
/// `depth`; students take the image alone.
ByteImage infer_image(const LoadedModel& model, const ByteImage& rgb, const std::optional<FloatImage>& depth);

struct AblationRow {
  std::string group;  // fusion, paths or distill
  std::string name;
  std::string run;    // directory below the repro root
  EvalReport report;
};

struct ReproResult {
  std::vector<AblationRow> rows;
  SelectedPaths selected;

  const AblationRow& row(const std::string& name) const;
};

/// Data, every fusion mode, search, finalized and all-path nets, four
/// distilled students and their test reports under `out`, then
/// ablation.md and ablation.json.
ReproResult repro(RunConfig cfg, std::uint64_t seed, const std::filesystem::path& out, const RunOptions& opt = {});

std::string ablation_markdown(const ReproResult& result);
std::string ablation_json(const ReproResult& result);

}  // namespace plroad
