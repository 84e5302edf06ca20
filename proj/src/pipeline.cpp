#include "plroad/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "plroad/checkpoint.hpp"
#include "plroad/image_io.hpp"
#include "plroad/json_util.hpp"

namespace plroad {

namespace fs = std::filesystem;

namespace {

void say(const RunOptions& opt, const std::string& line) {
  if (opt.log) *opt.log << line << "\n" << std::flush;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string file_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Loads a dataset, optionally forcing the input clips a model was trained with.
TrainingData load_data(const fs::path& dataset, const ModelInfo* model = nullptr) {
  DatasetManifest m = read_manifest(dataset);
  if (model) {
    if (m.scene.width != model->width || m.scene.height != model->height) {
      throw ConfigError(dataset.string() + ": images are " + std::to_string(m.scene.width) + "x" +
                        std::to_string(m.scene.height) + " but the model expects " + std::to_string(model->width) +
                        "x" + std::to_string(model->height));
    }
    m.pl_clip = model->pl_clip;
    m.depth_clip = model->depth_clip;
  }
  return load_training_data(m);
}

ModelInfo describe(const std::string& role, const PlifNet<float>& net, const TrainingData& data) {
  ModelInfo info;
  info.role = role;
  info.net = net.config();
  info.height = net.input_height();
  info.width = net.input_width();
  info.pl_clip = data.manifest.pl_clip;
  info.depth_clip = data.manifest.depth_clip;
  info.intrinsics = data.manifest.intrinsics;
  return info;
}

std::string model_hash(const fs::path& dir) {
  return git_blob_hash(file_text(dir / kModelFile) + file_text(dir / kModelInfoFile));
}

using TrainBody = std::function<void(const EpochHook&)>;

struct ManagedRun {
  std::string command;
  std::string label;
  nlohmann::ordered_json config;
  nlohmann::ordered_json inputs;
  std::size_t epochs = 0;
};

/// Record keeping shared by every training command: skip complete runs,
/// checkpoint and score val after each epoch, mark divergence.
RunResult managed(const ManagedRun& run, const fs::path& out, const RunOptions& opt, PlifNet<float>& net,
                  const ModelInfo& info, const TrainingData& data, std::size_t threads, const TrainBody& body,
                  const std::function<void()>& finish = {}) {
  RunRecord rec;
  rec.command = run.command;
  rec.config = run.config;
  rec.inputs = run.inputs;
  rec.hash = run_hash(run.command, run.config, run.inputs);
  rec.checkpoint = kModelFile;
  if (check_run_dir(out, rec.hash, opt.force) == RunState::kComplete) {
    say(opt, run.label + ": " + out.string() + " is complete, nothing to do");
    return {out, true};
  }
  fs::create_directories(out);
  fs::remove(out / kTimingFile);
  const auto t0 = std::chrono::steady_clock::now();
  save_model(out, net, info);
  write_record(out, rec);
  say(opt, run.label + ": " + std::to_string(net.parameter_count()) + " parameters, " + std::to_string(run.epochs) +
               " epochs -> " + out.string());
  auto hook = [&](const EpochStats& s) {
    const EvalReport val = evaluate_network(net, data, "val", threads);
    rec.epochs.push_back({s.epoch, s.mean_loss, val.max_f});
    save_model(out, net, info);
    write_record(out, rec);
    say(opt, run.label + " epoch " + std::to_string(s.epoch) + "/" + std::to_string(run.epochs) + " loss " +
                 fmt("%.4f", s.mean_loss) + " val MaxF " + fmt("%.2f", val.max_f));
  };
  try {
    body(hook);
  } catch (const NumericalError& e) {
    rec.status = "diverged";
    rec.message = e.what();
    write_record(out, rec);
    throw NumericalError(run.label + " diverged after " + std::to_string(rec.epochs.size()) +
                         " complete epochs; the last stable checkpoint is kept in " + (out / kModelFile).string() +
                         ": " + e.what());
  }
  if (finish) finish();
  rec.status = "complete";
  write_record(out, rec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_atomic(out / kTimingFile, nlohmann::ordered_json{{"seconds", secs}}.dump(2) + "\n");
  return {out, false};
}

nlohmann::ordered_json dataset_inputs(const TrainingData& data) {
  return {{"dataset", dataset_digest(data.manifest)}};
}

LoopConfig loop_of(const RunConfig& cfg) { return {cfg.epochs, cfg.sgd.batch_size, cfg.sgd.seed, cfg.lr_power}; }

Tensor<float> rgb_tensor(const ByteImage& img) {
  const std::size_t H = img.height, W = img.width;
  std::vector<float> v(3 * H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * H * W + i] = static_cast<float>(img.data[3 * i + c]) / 255.0f;
  }
  return Tensor<float>(Shape{1, 3, H, W}, std::move(v));
}

}  // namespace

DatasetManifest gen_data(const SceneConfig& scene, std::size_t count, const fs::path& out, std::size_t threads,
                         const RunOptions& opt) {
  const DatasetManifest m = write_dataset(scene, count, out, threads);
  say(opt, "wrote " + std::to_string(m.count) + " samples (train " + std::to_string(m.split("train").size()) +
               ", val " + std::to_string(m.split("val").size()) + ", test " +
               std::to_string(m.split("test").size()) + ")");
  return m;
}

RunResult train_run(const RunConfig& cfg, const fs::path& out, const RunOptions& opt) {
  cfg.validate();
  const TrainingData data = load_data(cfg.dataset);
  if (cfg.net.paths == PathMode::kSearch) throw ConfigError("train: use the search command for a supernet");
  PlifNet<float> net(cfg.net, data.manifest.scene.height, data.manifest.scene.width);
  const ManagedRun run{"train", "train " + mode_name(cfg.net.mode), run_config_snapshot(cfg), dataset_inputs(data),
                       cfg.epochs};
  return managed(run, out, opt, net, describe("teacher", net, data), data, cfg.threads, [&](const EpochHook& hook) {
    Sgd<float> sgd(net.tensors(ParamGroup::kWeight), cfg.sgd);
    run_optimization(
        {&sgd}, data.train, loop_of(cfg),
        [&](const std::vector<std::size_t>& batch, std::size_t) {
          const Batch b = make_batch(data, batch);
          return seg_loss(net.forward(b.inputs).logits, b.labels);
        },
        hook);
  });
}

RunResult search_run(const RunConfig& cfg, const fs::path& out, const RunOptions& opt) {
  cfg.validate();
  const TrainingData data = load_data(cfg.dataset);
  PlifNet<float> net(search_config(cfg.net), data.manifest.scene.height, data.manifest.scene.width);
  const ManagedRun run{"search", "search", run_config_snapshot(cfg), dataset_inputs(data), cfg.search_epochs};
  SearchTrace trace;
  return managed(
      run, out, opt, net, describe("supernet", net, data), data, cfg.threads,
      [&](const EpochHook& hook) {
        SearchConfig sc;
        sc.weights = cfg.sgd;
        sc.path_learning_rate = cfg.path_learning_rate;
        sc.path_momentum = cfg.path_momentum;
        sc.epochs = cfg.search_epochs;
        sc.lr_power = cfg.lr_power;
        trace = alternate_search(net, data, sc, hook);
      },
      [&] {
        const SelectedPaths sel = select_paths(read_path_weights(net));
        write_text_atomic(out / kPathsFile, sel.to_json());
        std::ostringstream csv;
        csv << "update";
        for (const auto& w : read_path_weights(net)) {
          csv << ",p_" << (w.branch == 0 ? "rgb" : "pl") << "_" << w.target << "_" << w.source;
        }
        csv << "\n";
        char buf[32];
        for (std::size_t k = 0; k < trace.trajectory.size(); ++k) {
          csv << k + 1;
          for (const auto& w : trace.trajectory[k]) {
            std::snprintf(buf, sizeof buf, ",%.9g", w.value);
            csv << buf;
          }
          csv << "\n";
        }
        write_text_atomic(out / "trajectory.csv", csv.str());
        write_run_config(out / "config.json", cfg);
        say(opt, "search: kept " + std::to_string(sel.paths.size()) + " of " +
                     std::to_string(all_shallow_paths(net.config().branch_count()).size()) + " transfers -> " +
                     (out / kPathsFile).string());
      });
}

fs::path finalize_run(const RunConfig& cfg, const SelectedPaths& selected, const fs::path& out,
                      const RunOptions& opt) {
  RunConfig fin = cfg;
  fin.net = finalize_config(cfg.net, selected);
  fin.validate();
  fs::create_directories(out);
  const fs::path path = out / "config.json";
  write_run_config(path, fin);
  std::string list;
  for (const auto& p : selected.paths) {
    list += std::string(list.empty() ? "" : ", ") + (p.branch == 0 ? "rgb" : "pl") + " S" + std::to_string(p.source) +
            "->S" + std::to_string(p.target);
  }
  const PlifNet<float> net(fin.net, cfg.scene.height, cfg.scene.width);
  say(opt, "finalize: " + std::to_string(net.transfer_op_count()) + " transfers (" + (list.empty() ? "none" : list) +
               "), " + std::to_string(net.parameter_count()) + " parameters -> " + path.string());
  return path;
}

RunResult distill_run(const RunConfig& cfg, const fs::path& teacher_path, const fs::path& out,
                      const RunOptions& opt) {
  cfg.validate();
  const LoadedModel teacher = load_model(teacher_path);
  if (teacher.info.role != "teacher") {
    throw ConfigError(teacher_path.string() + ": a " + teacher.info.role + " checkpoint cannot be a teacher");
  }
  const TrainingData data = load_data(cfg.dataset, &teacher.info);
  NetConfig sc = student_config(teacher.info.net);
  sc.init_seed = cfg.seed;
  PlifNet<float> student(sc, teacher.info.height, teacher.info.width);
  const fs::path teacher_dir = fs::is_directory(teacher_path) ? teacher_path : teacher_path.parent_path();
  auto inputs = dataset_inputs(data);
  inputs["teacher"] = model_hash(teacher_dir);
  const ManagedRun run{"distill", "distill", run_config_snapshot(cfg), inputs, cfg.distill_epochs};
  ModelInfo info = describe("student", student, data);
  return managed(run, out, opt, student, info, data, cfg.threads, [&](const EpochHook& hook) {
    DistillConfig dc;
    dc.md = cfg.md;
    dc.sgd = cfg.sgd;
    dc.epochs = cfg.distill_epochs;
    dc.lr_power = cfg.lr_power;
    distill(teacher.net, student, data, dc, hook);
  });
}

EvalOutput eval_model(const fs::path& model, const fs::path& dataset, const std::string& split, std::size_t threads) {
  const LoadedModel m = load_model(model);
  const TrainingData data = load_data(dataset, &m.info);
  const auto& idx = data.split(split);
  if (idx.empty()) throw ConfigError("eval: split '" + split + "' of " + dataset.string() + " is empty");
  EvalOutput out;
  out.scores = score_samples(m.net, data, idx, threads);
  out.report = make_report(out.scores);
  return out;
}

void write_eval_outputs(const EvalOutput& out, const fs::path& dir, const std::string& split,
                        const std::string& title) {
  fs::create_directories(dir);
  write_text_atomic(dir / ("report-" + split + ".json"), out.report.to_json());
  write_text_atomic(dir / ("report-" + split + ".txt"), out.report.to_table(title));
  write_text_atomic(dir / ("pr-" + split + ".csv"), pr_curve_csv(out.scores));
}

ByteImage infer_image(const LoadedModel& model, const ByteImage& rgb, const std::optional<FloatImage>& depth) {
  const std::size_t H = model.info.height, W = model.info.width;
  if (rgb.channels != 3 || rgb.width != W || rgb.height != H) {
    throw ConfigError("infer: the image is " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                      " with " + std::to_string(rgb.channels) + " channels; the model expects a " + std::to_string(W) +
                      "x" + std::to_string(H) + " RGB image");
  }
  const auto needs = model.net.required_inputs();
  const bool geometric = needs != std::vector<InputKind>{InputKind::kRgb};
  Tensor<float> logits;
  NoGradGuard guard;
  if (!geometric) {
    logits = DistilledStudent(model.net).predict(rgb_tensor(rgb));
  } else {
    if (!depth) {
      throw ConfigError("infer: this " + model.info.role + " checkpoint (" + mode_name(model.info.net.mode) +
                        ") requires the 'depth' input; pass --depth <map.pfm>");
    }
    if (depth->width != W || depth->height != H) {
      throw ConfigError("infer: the depth map is " + std::to_string(depth->width) + "x" +
                        std::to_string(depth->height) + "; the model expects " + std::to_string(W) + "x" +
                        std::to_string(H));
    }
    Sample s;
    s.intrinsics = model.info.intrinsics;
    s.rgb = rgb_tensor(rgb).reshape(Shape{3, H, W});
    s.mask = Tensor<float>(Shape{H, W}, 0.0f);
    s.depth = DepthMap(W, H);
    for (std::size_t i = 0; i < W * H; ++i) {
      const float d = depth->data[i];
      if (!std::isfinite(d) || d < 0.0f) {
        throw ConfigError("infer: depth at pixel " + std::to_string(i) + " is negative or not finite");
      }
      s.depth.values[i] = d;
    }
    const SampleTensors t = make_sample_tensors(s, model.info.pl_clip, model.info.depth_clip);
    logits = model.net.forward({t.rgb, t.pl, t.depth}).logits;
  }
  const std::vector<float> scores = road_scores(logits);
  ByteImage out{W, H, 1, std::vector<std::uint8_t>(W * H)};
  for (std::size_t i = 0; i < W * H; ++i) out.data[i] = static_cast<std::uint8_t>(std::lround(scores[i] * 255.0f));
  return out;
}

const AblationRow& ReproResult::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw ConfigError("no ablation row named '" + name + "'");
}

ReproResult repro(RunConfig cfg, std::uint64_t seed, const fs::path& out, const RunOptions& opt) {
  cfg.set_seed(seed);
  cfg.net.mode = FusionMode::kPlif;
  cfg.net.student = false;
  cfg.net.paths = PathMode::kPlain;
  cfg.net.fixed_paths.clear();
  cfg.dataset = out / "data";
  cfg.validate();
  gen_data(cfg.scene, cfg.count, cfg.dataset, cfg.threads, opt);

  ReproResult result;
  auto score = [&](const std::string& group, const std::string& name, const std::string& run) {
    const fs::path dir = out / run;
    const EvalOutput ev = eval_model(dir, cfg.dataset, "test", cfg.threads);
    write_eval_outputs(ev, dir, "test", name + " (test split)");
    result.rows.push_back({group, name, run, ev.report});
    say(opt, name + ": test MaxF " + fmt("%.2f", ev.report.max_f));
  };

  for (auto mode : {FusionMode::kNfRgb, FusionMode::kNfPl, FusionMode::kNfDepth, FusionMode::kLif, FusionMode::kPlif}) {
    RunConfig c = cfg;
    c.net.mode = mode;
    const std::string name = mode_name(mode);
    train_run(c, out / ("train-" + name), opt);
    score("fusion", name, "train-" + name);
  }

  search_run(cfg, out / "search", opt);
  score("paths", "All-paths supernet", "search");
  result.selected = SelectedPaths::from_json(file_text(out / "search" / kPathsFile));
  const RunConfig ipps = read_run_config(finalize_run(cfg, result.selected, out / "finalize", opt));
  train_run(ipps, out / "train-IPPS", opt);
  score("paths", "IPPS paths", "train-IPPS");
  RunConfig all = cfg;
  all.net = all_paths_config(cfg.net);
  train_run(all, out / "train-AllPaths", opt);
  score("paths", "All paths retrained", "train-AllPaths");

  struct Variant {
    const char* name;
    const char* run;
    bool pixel, image, patch;
  };
  const Variant variants[] = {{"MD seg only", "distill-seg", false, false, false},
                              {"MD +pixel", "distill-pixel", true, false, false},
                              {"MD +pixel+image", "distill-pixel-image", true, true, false},
                              {"MD all three", "distill-all", true, true, true}};
  for (const auto& v : variants) {
    RunConfig d = ipps;
    d.md.pixel = v.pixel;
    d.md.image = v.image;
    d.md.patch = v.patch;
    distill_run(d, out / "train-IPPS", out / v.run, opt);
    score("distill", v.name, v.run);
  }

  write_text_atomic(out / "ablation.md", ablation_markdown(result));
  write_text_atomic(out / "ablation.json", ablation_json(result));
  say(opt, "ablation table -> " + (out / "ablation.md").string());
  return result;
}

std::string ablation_markdown(const ReproResult& result) {
  std::ostringstream md;
  md << "| group | variant | MaxF | AP | PRE | REC | FPR | FNR | ACC | F-score | IoU |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& r : result.rows) {
    const auto& e = r.report;
    std::snprintf(buf, sizeof buf, "| %.2f | %.2f | %.2f | %.2f | %.2f | %.2f | %.2f | %.2f | %.2f |\n", e.max_f, e.ap,
                  e.pre, e.rec, e.fpr, e.fnr, e.acc, e.f_score, e.iou);
    md << "| " << r.group << " | " << r.name << " " << buf;
  }
  md << "\nSelected transfers:";
  if (result.selected.paths.empty()) md << " none";
  for (const auto& p : result.selected.paths) {
    md << " " << (p.branch == 0 ? "rgb" : "pl") << " S" << p.source << "->S" << p.target << ";";
  }
  md << "\n";
  return md.str();
}

std::string ablation_json(const ReproResult& result) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : result.rows) {
    nlohmann::ordered_json row;
    row["group"] = r.group;
    row["variant"] = r.name;
    row["run"] = r.run;
    row["report"] = nlohmann::ordered_json::parse(r.report.to_json());
    j["rows"].push_back(row);
  }
  j["selected_paths"] = nlohmann::ordered_json::parse(result.selected.to_json());
  return j.dump(2) + "\n";
}

}  // namespace plroad
