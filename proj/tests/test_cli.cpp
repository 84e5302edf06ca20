#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "plroad/checkpoint.hpp"
#include "plroad/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr
};

Result cli(const std::string& args) {
  Result r;
  FILE* p = popen((std::string("'") + PLROAD_CLI_PATH + "' " + args + " 2>&1").c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("plroad_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  const auto b = plroad::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// A small config: tiny images, few samples, `epochs` everywhere.
fs::path small_config(const fs::path& dir, int epochs, double lr = 0.02) {
  nlohmann::json j = {{"dataset", "data"},
                      {"scene", {{"width", 48}, {"height", 16}}},
                      {"count", 12},
                      {"train", {{"epochs", epochs}, {"learning_rate", lr}}},
                      {"search", {{"epochs", epochs}}},
                      {"distill", {{"epochs", epochs}, {"ssim_window", 5}, {"n_samples", 16}}}};
  if (lr > 1.0) j["train"]["clip_norm"] = 0.0, j["train"]["lr_power"] = 0.0;
  std::ofstream(dir / "c.json") << j.dump(2);
  REQUIRE(cli("gen-data --config " + q(dir / "c.json") + " --out " + q(dir / "data")).code == 0);
  return dir / "c.json";
}

}  // namespace

TEST_CASE("help lists every flag; unknown flags are errors") {
  const std::map<std::string, std::vector<std::string>> flags{
      {"gen-data", {"--config", "--width", "--height", "--count", "--seed", "--out", "--threads"}},
      {"train", {"--config", "--mode", "--out", "--seed", "--threads", "--force"}},
      {"search", {"--config", "--out", "--seed", "--threads", "--force"}},
      {"finalize", {"--paths", "--config", "--out"}},
      {"distill", {"--teacher", "--config", "--out", "--seed", "--threads", "--force"}},
      {"eval", {"--ckpt", "--data", "--split", "--report", "--threads"}},
      {"infer", {"--ckpt", "--image", "--depth", "--out"}},
      {"gradcheck", {"--instances", "--seed"}},
      {"repro", {"--config", "--out", "--seed", "--threads", "--force"}}};
  const Result top = cli("--help");
  CHECK(top.code == 0);
  CHECK(top.out.find("Exit codes") != std::string::npos);
  for (const auto& [cmd, list] : flags) {
    CAPTURE(cmd);
    const Result h = cli(cmd + " --help");
    CHECK(h.code == 0);
    CHECK(top.out.find(cmd) != std::string::npos);
    for (const auto& f : list) CHECK_MESSAGE(h.out.find(f) != std::string::npos, f);
    CHECK(cli(cmd + " --no-such-flag 1").code == 2);
  }
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
}

TEST_CASE("gen-data") {
  const auto dir = fresh_dir("gen");
  SUBCASE("count 0 gives an empty manifest") {
    const Result r = cli("gen-data --count 0 --out " + q(dir / "empty"));
    CHECK(r.code == 0);
    CHECK(r.out.find("manifest.json") != std::string::npos);
    CHECK(plroad::read_manifest(dir / "empty").samples.empty());
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "empty")) files += e.path().extension() != ".json";
    CHECK(files == 0);
  }
  SUBCASE("same flags twice give identical files") {
    const std::string flags = "gen-data --width 40 --height 16 --count 7 --seed 3 --threads 2 --out ";
    REQUIRE(cli(flags + q(dir / "a")).code == 0);
    REQUIRE(cli(flags + q(dir / "b")).code == 0);
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
      CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
      ++n;
    }
    CHECK(n == 7 * 3 + 2);
  }
  SUBCASE("the default config splits 200 samples 140/30/30") {
    REQUIRE(cli("gen-data --config " + q(fs::path(PLROAD_SOURCE_DIR) / "configs" / "default.json") + " --out " +
                   q(dir / "full"))
                .code == 0);
    const auto m = plroad::read_manifest(dir / "full");
    CHECK(m.count == 200);
    CHECK(m.split("train").size() == 140);
    CHECK(m.split("val").size() == 30);
    CHECK(m.split("test").size() == 30);
  }
  SUBCASE("errors") {
    CHECK(cli("gen-data --config x.json --width 3 --out " + q(dir / "x")).code == 2);
    CHECK(cli("gen-data --width 0 --out " + q(dir / "x")).code == 2);
  }
}

TEST_CASE("gradcheck passes") {
  const Result r = cli("gradcheck --instances 2");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS, max rel err") != std::string::npos);
}

TEST_CASE("train, distill and infer exit codes") {
  const auto dir = fresh_dir("train");
  const fs::path cfg = small_config(dir, 1);
  REQUIRE(cli("train --config " + q(cfg) + " --out " + q(dir / "teacher")).code == 0);
  REQUIRE(cli("distill --config " + q(cfg) + " --teacher " + q(dir / "teacher") + " --out " + q(dir / "student"))
              .code == 0);
  const auto m = plroad::read_manifest(dir / "data");
  const fs::path rgb = m.dir / m.samples[0].rgb, depth = m.dir / m.samples[0].depth;

  CHECK(cli("infer --ckpt " + q(dir / "student") + " --image " + q(rgb) + " --out " + q(dir / "s.pgm")).code == 0);
  const Result teacher =
      cli("infer --ckpt " + q(dir / "teacher") + " --image " + q(rgb) + " --out " + q(dir / "t.pgm"));
  CHECK(teacher.code == 2);
  CHECK(teacher.out.find("'depth'") != std::string::npos);
  CHECK(cli("infer --ckpt " + q(dir / "teacher") + " --image " + q(rgb) + " --depth " + q(depth) + " --out " +
               q(dir / "t.pgm"))
            .code == 0);
  CHECK(cli("infer --ckpt " + q(dir / "nowhere") + " --image " + q(rgb) + " --out " + q(dir / "n.pgm")).code == 3);

  const Result ev = cli("eval --ckpt " + q(dir / "student") + " --data " + q(dir / "data") + " --report " +
                           q(dir / "report"));
  CHECK(ev.code == 0);
  CHECK(fs::exists(dir / "report" / "report-test.json"));

  SUBCASE("rerun is a no-op; an edited config is refused unless forced") {
    const std::string before = slurp(dir / "teacher" / "model.plrd");
    CHECK(cli("train --config " + q(cfg) + " --out " + q(dir / "teacher")).code == 0);
    CHECK(slurp(dir / "teacher" / "model.plrd") == before);
    const Result edited = cli("train --config " + q(cfg) + " --seed 9 --out " + q(dir / "teacher"));
    CHECK(edited.code == 2);
    CHECK(edited.out.find("--force") != std::string::npos);
    CHECK(cli("train --config " + q(cfg) + " --seed 9 --force --out " + q(dir / "teacher")).code == 0);
  }
  SUBCASE("seeded reruns give identical checkpoints") {
    REQUIRE(cli("train --config " + q(cfg) + " --out " + q(dir / "again")).code == 0);
    CHECK(slurp(dir / "again" / "model.plrd") == slurp(dir / "teacher" / "model.plrd"));
  }
}

TEST_CASE("a diverging run exits 4 and keeps a checkpoint") {
  const auto dir = fresh_dir("nan");
  const fs::path cfg = small_config(dir, 2, 1e30);
  const Result r = cli("train --config " + q(cfg) + " --out " + q(dir / "run"));
  CHECK(r.code == 4);
  CHECK(r.out.find("last stable checkpoint") != std::string::npos);
  CHECK(fs::exists(dir / "run" / "model.plrd"));
  CHECK(nlohmann::json::parse(slurp(dir / "run" / "record.json")).at("status") == "diverged");
}
