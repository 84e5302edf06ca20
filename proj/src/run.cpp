#include "plroad/run.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>

#include "plroad/checkpoint.hpp"
#include "plroad/json_util.hpp"

namespace plroad {

namespace fs = std::filesystem;

namespace {

constexpr int kRunFormatVersion = 1;

std::string sha1_hex(const std::string& bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
    throw IoError("sha1: digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string file_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty() || base.empty()) return p.generic_string();
  return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

nlohmann::ordered_json train_section(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.sgd.learning_rate;
  j["momentum"] = c.sgd.momentum;
  j["batch_size"] = c.sgd.batch_size;
  j["clip_norm"] = c.sgd.clip_norm;
  j["lr_power"] = c.lr_power;
  return j;
}

nlohmann::ordered_json net_section(const NetConfig& net) {
  auto j = net_config_to_json(net);
  j.erase("init_seed");
  return j;
}

nlohmann::ordered_json distill_section(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.distill_epochs;
  const auto md = md_config_to_json(c.md);
  for (auto it = md.begin(); it != md.end(); ++it) {
    if (it.key() != "seed") j[it.key()] = it.value();
  }
  return j;
}

nlohmann::ordered_json epoch_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"loss", e.loss}, {"val_max_f", e.val_max_f}};
}

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  net.validate();
  sgd.validate();
  md.validate();
  if (!(lr_power >= 0.0)) throw ConfigError("train.lr_power must be >= 0");
  if (!(path_learning_rate >= 0.0)) throw ConfigError("search.path_learning_rate must be >= 0");
  if (!(path_momentum >= 0.0 && path_momentum < 1.0)) throw ConfigError("search.path_momentum must lie in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  net.init_seed = s;
  sgd.seed = s;
  md.seed = s;
}

RunConfig default_run_config() {
  RunConfig c;
  c.dataset = "data";
  c.sgd.learning_rate = 0.02;
  c.sgd.momentum = 0.9;
  c.sgd.batch_size = 4;
  c.sgd.clip_norm = 2.0;
  c.set_seed(1);
  return c;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  const std::string ctx = "config";
  reject_unknown_keys(j, {"dataset", "scene", "count", "net", "train", "search", "distill", "seed", "threads", "out"},
                      ctx);
  RunConfig c = default_run_config();
  if (j.contains("dataset")) c.dataset = resolve(read_required<std::string>(j, "dataset", ctx), base_dir);
  if (j.contains("out")) c.out = resolve(read_required<std::string>(j, "out", ctx), base_dir);
  if (j.contains("scene")) c.scene = scene_config_from_json(j.at("scene"));
  read_optional(j, "count", c.count, ctx);
  if (j.contains("net")) {
    if (j.at("net").contains("init_seed")) throw ConfigError("net.init_seed: set the top-level seed instead");
    c.net = net_config_from_json(j.at("net"));
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown_keys(t, {"epochs", "learning_rate", "momentum", "batch_size", "clip_norm", "lr_power"}, "train");
    read_optional(t, "epochs", c.epochs, "train");
    read_optional(t, "learning_rate", c.sgd.learning_rate, "train");
    read_optional(t, "momentum", c.sgd.momentum, "train");
    read_optional(t, "batch_size", c.sgd.batch_size, "train");
    read_optional(t, "clip_norm", c.sgd.clip_norm, "train");
    read_optional(t, "lr_power", c.lr_power, "train");
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    reject_unknown_keys(s, {"epochs", "path_learning_rate", "path_momentum"}, "search");
    read_optional(s, "epochs", c.search_epochs, "search");
    read_optional(s, "path_learning_rate", c.path_learning_rate, "search");
    read_optional(s, "path_momentum", c.path_momentum, "search");
  }
  if (j.contains("distill")) {
    auto d = j.at("distill");
    require_object(d, "distill");
    if (d.contains("seed")) throw ConfigError("distill.seed: set the top-level seed instead");
    read_optional(d, "epochs", c.distill_epochs, "distill");
    d.erase("epochs");
    c.md = md_config_from_json(d);
  }
  std::uint64_t seed = c.seed;
  read_optional(j, "seed", seed, ctx);
  read_optional(j, "threads", c.threads, ctx);
  c.set_seed(seed);
  c.validate();
  return c;
}

RunConfig read_run_config(const fs::path& path) {
  const std::string text = file_text(path);
  try {
    return run_config_from_json(parse_json_text(text, path.string()), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg, const fs::path& base_dir) {
  nlohmann::ordered_json j;
  j["dataset"] = relative_to(cfg.dataset, base_dir);
  if (!cfg.out.empty()) j["out"] = relative_to(cfg.out, base_dir);
  j["scene"] = scene_config_to_json(cfg.scene);
  j["count"] = cfg.count;
  j["net"] = net_section(cfg.net);
  j["train"] = train_section(cfg);
  j["search"]["epochs"] = cfg.search_epochs;
  j["search"]["path_learning_rate"] = cfg.path_learning_rate;
  j["search"]["path_momentum"] = cfg.path_momentum;
  j["distill"] = distill_section(cfg);
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j;
}

void write_run_config(const fs::path& path, const RunConfig& cfg) {
  auto j = run_config_to_json(cfg, path.parent_path());
  j.erase("out");
  write_text_atomic(path, j.dump(2) + "\n");
}

nlohmann::ordered_json run_config_snapshot(const RunConfig& cfg) {
  auto j = run_config_to_json(cfg);
  j.erase("dataset");
  j.erase("out");
  j.erase("threads");
  return j;
}

std::string git_blob_hash(const std::string& bytes) {
  return sha1_hex("blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes);
}

std::string dataset_digest(const DatasetManifest& m) {
  std::string listing = git_blob_hash(file_text(m.dir / kManifestName)) + " " + kManifestName + "\n";
  for (const auto& e : m.samples) {
    for (const auto* name : {&e.rgb, &e.depth, &e.mask}) {
      listing += git_blob_hash(file_text(m.dir / *name)) + " " + *name + "\n";
    }
  }
  return git_blob_hash(listing);
}

std::string ModelInfo::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "plroad-model";
  j["version"] = kRunFormatVersion;
  j["role"] = role;
  j["net"] = net_config_to_json(net);
  j["height"] = height;
  j["width"] = width;
  j["pl_clip"] = pl_clip;
  j["depth_clip"] = depth_clip;
  j["intrinsics"] = nlohmann::json::parse(intrinsics.to_json());
  return j.dump(2) + "\n";
}

ModelInfo ModelInfo::from_json(const std::string& text) {
  const std::string ctx = "model info";
  const auto j = parse_json_text(text, ctx);
  reject_unknown_keys(j, {"format", "version", "role", "net", "height", "width", "pl_clip", "depth_clip", "intrinsics"},
                      ctx);
  if (read_required<std::string>(j, "format", ctx) != "plroad-model") throw ConfigError(ctx + ": not a model file");
  const int version = read_required<int>(j, "version", ctx);
  if (version != kRunFormatVersion) {
    throw ConfigError(ctx + ": version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kRunFormatVersion) + ")");
  }
  ModelInfo m;
  m.role = read_required<std::string>(j, "role", ctx);
  if (m.role != "teacher" && m.role != "supernet" && m.role != "student") {
    throw ConfigError(ctx + ": unknown role '" + m.role + "'");
  }
  if (!j.contains("net")) throw ConfigError(ctx + ": missing key 'net'");
  m.net = net_config_from_json(j.at("net"));
  m.height = read_required<std::size_t>(j, "height", ctx);
  m.width = read_required<std::size_t>(j, "width", ctx);
  m.pl_clip = read_required<double>(j, "pl_clip", ctx);
  m.depth_clip = read_required<double>(j, "depth_clip", ctx);
  if (!j.contains("intrinsics")) throw ConfigError(ctx + ": missing key 'intrinsics'");
  m.intrinsics = CameraIntrinsics::from_json(j.at("intrinsics").dump());
  if (!(m.pl_clip > 0.0 && m.depth_clip > 0.0)) throw ConfigError(ctx + ": clips must be > 0");
  return m;
}

void save_model(const fs::path& dir, const PlifNet<float>& net, const ModelInfo& info) {
  fs::create_directories(dir);
  save_checkpoint(dir / kModelFile, net.to_records());
  write_text_atomic(dir / kModelInfoFile, info.to_json());
}

LoadedModel load_model(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  const fs::path ckpt = fs::is_directory(path) ? dir / kModelFile : path;
  const fs::path info_path = dir / kModelInfoFile;
  if (!fs::exists(ckpt)) throw IoError(ckpt.string() + ": no such checkpoint");
  if (!fs::exists(info_path)) throw IoError(info_path.string() + ": model description missing next to the checkpoint");
  ModelInfo info;
  try {
    info = ModelInfo::from_json(file_text(info_path));
  } catch (const ConfigError& e) {
    throw ConfigError(info_path.string() + ": " + e.what());
  }
  PlifNet<float> net(info.net, info.height, info.width);
  try {
    net.load_records(load_checkpoint(ckpt));
  } catch (const ConfigError& e) {
    throw ConfigError(ckpt.string() + ": " + e.what());
  }
  return {std::move(info), std::move(net)};
}

std::string RunRecord::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "plroad-run";
  j["version"] = kRunFormatVersion;
  j["command"] = command;
  j["status"] = status;
  j["hash"] = hash;
  j["config"] = config;
  j["inputs"] = inputs;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) j["epochs"].push_back(epoch_json(e));
  j["checkpoint"] = checkpoint;
  j["message"] = message;
  return j.dump(2) + "\n";
}

RunRecord RunRecord::from_json(const std::string& text) {
  const std::string ctx = "run record";
  const auto j = parse_json_text(text, ctx);
  reject_unknown_keys(
      j, {"format", "version", "command", "status", "hash", "config", "inputs", "epochs", "checkpoint", "message"},
      ctx);
  if (read_required<std::string>(j, "format", ctx) != "plroad-run") throw ConfigError(ctx + ": not a run record");
  if (read_required<int>(j, "version", ctx) != kRunFormatVersion) throw ConfigError(ctx + ": unsupported version");
  RunRecord r;
  r.command = read_required<std::string>(j, "command", ctx);
  r.status = read_required<std::string>(j, "status", ctx);
  r.hash = read_required<std::string>(j, "hash", ctx);
  r.config = nlohmann::ordered_json::parse(j.at("config").dump());
  r.inputs = nlohmann::ordered_json::parse(j.at("inputs").dump());
  for (const auto& e : j.at("epochs")) {
    reject_unknown_keys(e, {"epoch", "loss", "val_max_f"}, ctx + ".epochs");
    r.epochs.push_back({read_required<std::size_t>(e, "epoch", ctx), read_required<double>(e, "loss", ctx),
                        read_required<double>(e, "val_max_f", ctx)});
  }
  r.checkpoint = read_required<std::string>(j, "checkpoint", ctx);
  r.message = read_required<std::string>(j, "message", ctx);
  return r;
}

std::string run_hash(const std::string& command, const nlohmann::ordered_json& config,
                     const nlohmann::ordered_json& inputs) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config;
  j["inputs"] = inputs;
  return git_blob_hash(j.dump());
}

RunState check_run_dir(const fs::path& dir, const std::string& hash, bool force) {
  if (force || !fs::exists(dir / kRecordFile)) return RunState::kFresh;
  const RunRecord old = read_record(dir);
  if (old.hash != hash) {
    throw ConfigError((dir / kRecordFile).string() +
                      ": the run there was started from different config or inputs (hash " + old.hash + ", now " +
                      hash + "); pick another --out or pass --force");
  }
  return old.status == "complete" ? RunState::kComplete : RunState::kFresh;
}

void write_record(const fs::path& dir, const RunRecord& record) {
  fs::create_directories(dir);
  write_text_atomic(dir / kRecordFile, record.to_json());
}

RunRecord read_record(const fs::path& dir) {
  const fs::path path = dir / kRecordFile;
  try {
    return RunRecord::from_json(file_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace plroad
