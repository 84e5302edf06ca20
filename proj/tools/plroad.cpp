#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "plroad/checkpoint.hpp"
#include "plroad/errors.hpp"
#include "plroad/gradcheck.hpp"
#include "plroad/image_io.hpp"
#include "plroad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace plroad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

const char* kExitCodes =
    "Exit codes: 0 ok, 2 usage or configuration error, 3 I/O error, 4 numerical failure "
    "(non-finite loss or gradient, failed gradient check).";

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool force = false;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? default_run_config() : read_run_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.out = c.out;
  if (cfg.out.empty()) throw ConfigError("no output directory: pass --out or set \"out\" in the config");
  cfg.validate();
  return cfg;
}

RunOptions options(const Common& c) {
  RunOptions o;
  o.force = c.force;
  o.log = &std::cout;
  return o;
}

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "Run config (JSON)")->check(CLI::ExistingFile);
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory (overrides the config's \"out\")");
  cmd->add_option("--seed", c.seed, "Overrides the config's seed");
  cmd->add_option("--threads", c.threads, "Worker cap for data generation and evaluation")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--force", c.force, "Redo a run even if its directory holds a complete or different run");
}

int run(int argc, char** argv) {
  CLI::App app{"plroad: road detection with pseudo-LiDAR fusion, path search and modality distillation"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  std::function<int()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic road dataset");
  std::string gen_config, gen_out;
  std::size_t gen_width = 96, gen_height = 32, gen_count = 200, gen_threads = 1;
  std::uint64_t gen_seed = 1;
  auto* gen_cfg_opt = gen->add_option("--config", gen_config, "Take scene and count from a run config")
                          ->check(CLI::ExistingFile);
  auto* w_opt = gen->add_option("--width", gen_width, "Image width")->check(CLI::PositiveNumber);
  auto* h_opt = gen->add_option("--height", gen_height, "Image height")->check(CLI::PositiveNumber);
  auto* c_opt = gen->add_option("--count", gen_count, "Number of samples");
  auto* s_opt = gen->add_option("--seed", gen_seed, "Scene seed");
  for (auto* o : {w_opt, h_opt, c_opt, s_opt}) o->excludes(gen_cfg_opt);
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--threads", gen_threads, "Generator threads")->check(CLI::PositiveNumber);
  gen->callback([&] {
    action = [&] {
      SceneConfig scene;
      std::size_t count = gen_count;
      if (!gen_config.empty()) {
        const RunConfig cfg = read_run_config(gen_config);
        scene = cfg.scene;
        count = cfg.count;
      } else {
        scene.width = gen_width;
        scene.height = gen_height;
        scene.seed = gen_seed;
      }
      RunOptions o;
      o.log = &std::cout;
      const DatasetManifest m = gen_data(scene, count, gen_out, gen_threads, o);
      std::cout << (m.dir / kManifestName).string() << "\n";
      return kExitOk;
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train a fusion network on the train split");
  Common train_c;
  std::string train_mode;
  add_common(train, train_c, true);
  train->add_option("--mode", train_mode, "Fusion mode (overrides the config)")
      ->check(CLI::IsMember({"PLIF", "LIF", "NF-RGB", "NF-PL", "NF-Depth"}));
  train->callback([&] {
    action = [&] {
      RunConfig cfg = load_config(train_c);
      if (!train_mode.empty()) cfg.net.mode = parse_mode(train_mode);
      const RunResult r = train_run(cfg, cfg.out, options(train_c));
      std::cout << (r.dir / kModelFile).string() << "\n";
      return kExitOk;
    };
  });

  // search
  auto* search = app.add_subcommand("search", "Search transfer paths with a supernet");
  Common search_c;
  add_common(search, search_c, true);
  search->callback([&] {
    action = [&] {
      const RunConfig cfg = load_config(search_c);
      const RunResult r = search_run(cfg, cfg.out, options(search_c));
      std::cout << (r.dir / kPathsFile).string() << "\n";
      return kExitOk;
    };
  });

  // finalize
  auto* fin = app.add_subcommand("finalize", "Write a run config whose network keeps the selected paths");
  std::string fin_paths, fin_config, fin_out;
  fin->add_option("--paths", fin_paths, "paths.json written by search")->required()->check(CLI::ExistingFile);
  fin->add_option("--config", fin_config, "Base run config (default: config.json next to --paths)")
      ->check(CLI::ExistingFile);
  fin->add_option("--out", fin_out, "Output directory")->required();
  fin->callback([&] {
    action = [&] {
      const fs::path cfg_path =
          fin_config.empty() ? fs::path(fin_paths).parent_path() / "config.json" : fs::path(fin_config);
      RunConfig cfg = read_run_config(cfg_path);
      const auto bytes = read_file_bytes(fin_paths);
      const SelectedPaths sel = SelectedPaths::from_json(std::string(bytes.begin(), bytes.end()));
      RunOptions o;
      o.log = &std::cout;
      std::cout << finalize_run(cfg, sel, fin_out, o).string() << "\n";
      return kExitOk;
    };
  });

  // distill
  auto* dist = app.add_subcommand("distill", "Train an RGB-only student from a fusion teacher");
  Common dist_c;
  std::string dist_teacher;
  add_common(dist, dist_c, true);
  dist->add_option("--teacher", dist_teacher, "Teacher checkpoint or run directory")->required();
  dist->callback([&] {
    action = [&] {
      const RunConfig cfg = load_config(dist_c);
      const RunResult r = distill_run(cfg, dist_teacher, cfg.out, options(dist_c));
      std::cout << (r.dir / kModelFile).string() << "\n";
      return kExitOk;
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_report;
  std::size_t ev_threads = 1;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint or run directory")->required();
  ev->add_option("--data", ev_data, "Dataset directory or manifest")->required();
  ev->add_option("--split", ev_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--report", ev_report, "Directory for report JSON, table and PR curve CSV");
  ev->add_option("--threads", ev_threads, "Evaluation threads")->check(CLI::PositiveNumber);
  ev->callback([&] {
    action = [&] {
      const EvalOutput out = eval_model(ev_ckpt, ev_data, ev_split, ev_threads);
      const std::string title = ev_ckpt + " on " + ev_split;
      if (!ev_report.empty()) write_eval_outputs(out, ev_report, ev_split, title);
      std::cout << out.report.to_table(title);
      return kExitOk;
    };
  });

  // infer
  auto* inf = app.add_subcommand("infer", "Road probability map of one image");
  std::string inf_ckpt, inf_image, inf_depth, inf_out;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint or run directory")->required();
  inf->add_option("--image", inf_image, "RGB image (PPM)")->required();
  inf->add_option("--depth", inf_depth, "Depth map (PFM); needed by fusion and depth checkpoints");
  inf->add_option("--out", inf_out, "Output PGM, 255 = road")->required();
  inf->callback([&] {
    action = [&] {
      const LoadedModel model = load_model(inf_ckpt);
      std::optional<FloatImage> depth;
      if (!inf_depth.empty()) depth = read_pfm(inf_depth);
      const ByteImage map = infer_image(model, read_ppm(inf_image), depth);
      write_pgm(inf_out, map);
      std::size_t road = 0;
      for (auto v : map.data) road += v >= 128;
      std::cout << "road pixels (p >= 0.5): " << road << " of " << map.data.size() << "\n" << inf_out << "\n";
      return kExitOk;
    };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 1;
  gc->add_option("--instances", gc_instances, "Random instances per case")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "Instance seed");
  gc->callback([&] {
    action = [&] {
      constexpr double kTol = 1e-4;
      double worst = 0.0;
      bool ok = true;
      for (const auto& c : run_gradcheck_suite(gc_instances, gc_seed, true)) {
        worst = std::max(worst, c.result.max_rel_error);
        if (!(c.result.max_rel_error < kTol)) {
          ok = false;
          std::cout << "FAIL " << c.name << ": " << c.result.worst << "\n";
        }
      }
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s, max rel err %.3g %s 1e-4", ok ? "PASS" : "FAIL", worst, ok ? "<" : ">=");
      std::cout << buf << "\n";
      return ok ? kExitOk : kExitNumerical;
    };
  });

  // repro
  auto* rep = app.add_subcommand("repro", "Full chain: data, every mode, search, finalize, distill, eval, ablation");
  Common rep_c;
  add_common(rep, rep_c, false);
  rep->callback([&] {
    action = [&] {
      RunConfig cfg = load_config(rep_c);
      const ReproResult r = repro(cfg, cfg.seed, cfg.out, options(rep_c));
      std::cout << ablation_markdown(r);
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  return action();
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}
