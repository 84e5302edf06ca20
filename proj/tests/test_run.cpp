#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "plroad/checkpoint.hpp"
#include "plroad/errors.hpp"
#include "plroad/image_io.hpp"
#include "plroad/pipeline.hpp"

using namespace plroad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("plroad_test_run_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

/// Tiny run config over the shared tiny dataset.
RunConfig tiny_config(std::size_t epochs) {
  RunConfig c = default_run_config();
  c.dataset = tiny_data().manifest.dir;
  c.scene = tiny_data().manifest.scene;
  c.count = 12;
  c.epochs = epochs;
  c.search_epochs = epochs;
  c.distill_epochs = epochs;
  c.md.ssim_window = 5;
  c.md.n_samples = 16;
  c.set_seed(3);
  return c;
}

}  // namespace

TEST_CASE("git blob hashes match git's object ids") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("run config json") {
  SUBCASE("round trip through a file") {
    const auto dir = fresh_dir("cfg");
    RunConfig c = tiny_config(4);
    c.dataset = dir / "data";
    c.net.mode = FusionMode::kLif;
    c.md.image = false;
    c.path_learning_rate = 0.05;
    write_run_config(dir / "sub" / "c.json", c);
    CHECK(slurp(dir / "sub" / "c.json").find("\"dataset\": \"../data\"") != std::string::npos);
    const RunConfig back = read_run_config(dir / "sub" / "c.json");
    CHECK(fs::weakly_canonical(back.dataset) == fs::weakly_canonical(c.dataset));
    CHECK(run_config_snapshot(back) == run_config_snapshot(c));
    CHECK(back.net.init_seed == 3);
    CHECK(back.md.seed == 3);
    CHECK(back.sgd.seed == 3);
  }
  SUBCASE("unknown keys are rejected at every level") {
    for (const char* text : {R"({"bogus": 1})", R"({"train": {"lr": 0.1}})", R"({"net": {"depth": 3}})",
                             R"({"search": {"paths": 1}})", R"({"distill": {"gamma": 1}})",
                             R"({"scene": {"fog": true}})"}) {
      CAPTURE(text);
      CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(text), "."), ConfigError);
    }
  }
  SUBCASE("seeds only at the top") {
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"net": {"init_seed": 2}})"), "."), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"distill": {"seed": 2}})"), "."), ConfigError);
  }
  SUBCASE("invalid values") {
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train": {"learning_rate": -1}})"), "."),
                    ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"threads": 0})"), "."), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"net": {"mode": "NF-X"}})"), "."), ConfigError);
  }
  SUBCASE("relative paths follow the config file") {
    const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"dataset": "d", "out": "o"})"), "/a/b");
    CHECK(c.dataset == fs::path("/a/b/d"));
    CHECK(c.out == fs::path("/a/b/o"));
  }
}

TEST_CASE("model sidecar round trip") {
  const auto dir = fresh_dir("model");
  NetConfig nc;
  nc.init_seed = 9;
  const PlifNet<float> net(nc, 16, 48);
  ModelInfo info;
  info.role = "teacher";
  info.net = nc;
  info.height = 16;
  info.width = 48;
  info.pl_clip = 0.25;
  info.depth_clip = 40.0;
  info.intrinsics = tiny_data().manifest.intrinsics;
  save_model(dir, net, info);
  const LoadedModel m = load_model(dir / kModelFile);
  CHECK(m.info.to_json() == info.to_json());
  CHECK(encode_checkpoint(m.net.to_records()) == encode_checkpoint(net.to_records()));
  SUBCASE("missing sidecar") {
    fs::remove(dir / kModelInfoFile);
    CHECK_THROWS_AS(load_model(dir), IoError);
  }
  SUBCASE("wrong version") {
    std::string text = slurp(dir / kModelInfoFile);
    text.replace(text.find("\"version\": 1"), 12, "\"version\": 7");
    write_text_atomic(dir / kModelInfoFile, text);
    CHECK_THROWS_AS(load_model(dir), ConfigError);
  }
}

TEST_CASE("train runs: records, skipping and determinism") {
  const auto dir = fresh_dir("train");
  RunConfig c = tiny_config(0);
  c.net.mode = FusionMode::kNfRgb;

  SUBCASE("zero epochs leaves the initialization") {
    train_run(c, dir / "a");
    const PlifNet<float> init(c.net, 16, 48);
    CHECK(slurp(dir / "a" / kModelFile) == [&] {
      const auto b = encode_checkpoint(init.to_records());
      return std::string(b.begin(), b.end());
    }());
    CHECK(read_record(dir / "a").status == "complete");
  }
  SUBCASE("reruns") {
    c.epochs = 1;
    CHECK_FALSE(train_run(c, dir / "a").skipped);
    const std::string first = slurp(dir / "a" / kModelFile);
    const RunRecord rec = read_record(dir / "a");
    CHECK(rec.epochs.size() == 1);
    CHECK(rec.inputs.at("dataset").get<std::string>().size() == 40);

    CHECK(train_run(c, dir / "a").skipped);
    CHECK_FALSE(train_run(c, dir / "b").skipped);
    CHECK(slurp(dir / "b" / kModelFile) == first);
    CHECK(slurp(dir / "b" / kRecordFile) == slurp(dir / "a" / kRecordFile));

    RunConfig edited = c;
    edited.sgd.learning_rate = 0.01;
    CHECK_THROWS_AS(train_run(edited, dir / "a"), ConfigError);
    RunOptions force;
    force.force = true;
    CHECK_FALSE(train_run(edited, dir / "a", force).skipped);
    CHECK(read_record(dir / "a").hash != rec.hash);
  }
  SUBCASE("divergence keeps the last stable checkpoint") {
    c.epochs = 3;
    c.sgd.learning_rate = 1e30;
    c.sgd.clip_norm = 0.0;
    c.lr_power = 0.0;
    CHECK_THROWS_AS(train_run(c, dir / "nan"), NumericalError);
    const RunRecord rec = read_record(dir / "nan");
    CHECK(rec.status == "diverged");
    CHECK_FALSE(rec.message.empty());
    const LoadedModel m = load_model(dir / "nan");
    for (const auto& p : m.net.params()) {
      for (float v : p.tensor.data()) REQUIRE(std::isfinite(v));
    }
  }
}

TEST_CASE("inference interfaces") {
  const auto dir = fresh_dir("infer");
  RunConfig c = tiny_config(0);
  train_run(c, dir / "teacher");
  distill_run(c, dir / "teacher", dir / "student");
  const LoadedModel teacher = load_model(dir / "teacher");
  const LoadedModel student = load_model(dir / "student");
  CHECK(student.info.role == "student");
  CHECK(student.net.required_inputs() == std::vector<InputKind>{InputKind::kRgb});

  const auto& m = tiny_data().manifest;
  const ByteImage rgb = read_ppm(m.dir / m.samples[0].rgb);
  const FloatImage depth = read_pfm(m.dir / m.samples[0].depth);
  CHECK(infer_image(student, rgb, std::nullopt).data.size() == 16 * 48);
  try {
    infer_image(teacher, rgb, std::nullopt);
    FAIL("teacher inference without depth must fail");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'depth'") != std::string::npos);
  }
  const ByteImage map = infer_image(teacher, rgb, depth);
  CHECK(map.channels == 1);

  SUBCASE("inference matches evaluation scores") {
    const Batch b = make_batch(tiny_data(), {0});
    NoGradGuard guard;
    const auto scores = road_scores(teacher.net.forward(b.inputs).logits);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      REQUIRE(map.data[i] == static_cast<std::uint8_t>(std::lround(scores[i] * 255.0f)));
    }
  }
  SUBCASE("a student cannot teach") {
    CHECK_THROWS_AS(distill_run(c, dir / "student", dir / "s2"), ConfigError);
  }
  SUBCASE("eval writes reports") {
    const EvalOutput ev = eval_model(dir / "student", m.dir, "test");
    write_eval_outputs(ev, dir / "student", "test", "student");
    CHECK(fs::exists(dir / "student" / "report-test.json"));
    CHECK(slurp(dir / "student" / "pr-test.csv").rfind("threshold,pre,rec\n", 0) == 0);
  }
}

TEST_CASE("search and finalize") {
  const auto dir = fresh_dir("search");
  RunConfig c = tiny_config(1);
  search_run(c, dir / "s");
  for (const char* f : {kPathsFile, "trajectory.csv", "config.json", kModelFile}) CHECK(fs::exists(dir / "s" / f));
  const auto sel = SelectedPaths::from_json(slurp(dir / "s" / kPathsFile));
  const LoadedModel sup = load_model(dir / "s");
  CHECK(sup.info.role == "supernet");
  CHECK(select_paths(read_path_weights(sup.net)).to_json() == sel.to_json());
  const RunConfig base = read_run_config(dir / "s" / "config.json");
  const RunConfig fin = read_run_config(finalize_run(base, sel, dir / "f"));
  CHECK(fin.net.fixed_paths == sel.paths);
  CHECK(fs::weakly_canonical(fin.dataset) == fs::weakly_canonical(c.dataset));
}

TEST_CASE("repro is byte-reproducible") {
  const auto dir = fresh_dir("repro");
  RunConfig c = tiny_config(1);
  c.count = 12;
  repro(c, 5, dir / "a");
  const ReproResult r = repro(c, 5, dir / "b");
  CHECK(r.rows.size() == 12);
  CHECK(r.row("All-paths supernet").run == "search");
  CHECK(r.row("PLIF").group == "fusion");
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == kTimingFile) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    CAPTURE(rel.string());
    REQUIRE(fs::exists(dir / "b" / rel));
    CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    ++compared;
  }
  CHECK(compared > 50);
  std::ostringstream log;
  RunOptions quiet;
  quiet.log = &log;
  repro(c, 5, dir / "a", quiet);
  CHECK(log.str().find("nothing to do") != std::string::npos);
}
