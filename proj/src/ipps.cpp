#include "plroad/ipps.hpp"

#include <cmath>

#include "plroad/errors.hpp"
#include "plroad/json_util.hpp"
#include "plroad/rng.hpp"

namespace plroad {

namespace {

const char* branch_key(std::size_t b) { return b == 0 ? "rgb" : "pl"; }

std::size_t parse_branch(const std::string& s, const std::string& ctx) {
  if (s == "rgb") return 0;
  if (s == "pl") return 1;
  throw ConfigError(ctx + ": branch must be 'rgb' or 'pl', got '" + s + "'");
}

}  // namespace

std::vector<PathWeight> read_path_weights(const PlifNet<float>& net) {
  const NetConfig& cfg = net.config();
  if (cfg.paths != PathMode::kSearch) throw ConfigError("read_path_weights: network is not a search supernet");
  std::vector<PathWeight> out;
  for (std::size_t b = 0; b < cfg.branch_count(); ++b) {
    for (std::size_t i = 1; i <= kFusedStages; ++i) {
      for (std::size_t j = 1; j <= i; ++j) {
        out.push_back({b, i, j, static_cast<double>(net.path_weight(b, i, j).item())});
      }
    }
  }
  return out;
}

SelectedPaths select_paths(const std::vector<PathWeight>& weights) {
  SelectedPaths sel;
  sel.weights = weights;
  std::size_t branches = 0;
  for (const auto& w : weights) {
    if (!std::isfinite(w.value)) throw NumericalError("select_paths: non-finite path weight");
    branches = std::max(branches, w.branch + 1);
  }
  for (std::size_t b = 0; b < branches; ++b) {
    for (std::size_t i = 2; i <= kFusedStages; ++i) {
      const PathWeight* best = nullptr;
      for (const auto& w : weights) {
        if (w.branch != b || w.target != i || w.source >= i) continue;
        if (!best || w.value > best->value || (w.value == best->value && w.source > best->source)) best = &w;
      }
      if (best && best->value >= 0.0) sel.paths.push_back({b, i, best->source});
    }
  }
  return sel;
}

std::string SelectedPaths::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "plroad-paths";
  j["version"] = 1;
  auto& list = j["paths"] = nlohmann::ordered_json::array();
  for (const auto& p : paths) {
    list.push_back({{"branch", branch_key(p.branch)}, {"target_stage", p.target}, {"source_stage", p.source}});
  }
  auto& raw = j["path_weights"] = nlohmann::ordered_json::array();
  for (const auto& w : weights) {
    raw.push_back({{"branch", branch_key(w.branch)}, {"target_stage", w.target}, {"source_stage", w.source},
                   {"p", w.value}});
  }
  return j.dump(2) + "\n";
}

SelectedPaths SelectedPaths::from_json(const std::string& text) {
  const std::string ctx = "paths";
  const nlohmann::json j = parse_json_text(text, ctx);
  require_object(j, ctx);
  reject_unknown_keys(j, {"format", "version", "paths", "path_weights"}, ctx);
  if (read_required<std::string>(j, "format", ctx) != "plroad-paths") throw ConfigError(ctx + ": wrong format tag");
  if (read_required<int>(j, "version", ctx) != 1) throw ConfigError(ctx + ": unsupported version");
  SelectedPaths sel;
  if (!j.contains("paths") || !j.at("paths").is_array()) throw ConfigError(ctx + ".paths: expected an array");
  for (const auto& item : j.at("paths")) {
    require_object(item, ctx + ".paths");
    reject_unknown_keys(item, {"branch", "target_stage", "source_stage"}, ctx + ".paths");
    PathSpec p;
    p.branch = parse_branch(read_required<std::string>(item, "branch", ctx + ".paths"), ctx + ".paths");
    p.target = read_required<std::size_t>(item, "target_stage", ctx + ".paths");
    p.source = read_required<std::size_t>(item, "source_stage", ctx + ".paths");
    sel.paths.push_back(p);
  }
  if (j.contains("path_weights")) {
    if (!j.at("path_weights").is_array()) throw ConfigError(ctx + ".path_weights: expected an array");
    for (const auto& item : j.at("path_weights")) {
      require_object(item, ctx + ".path_weights");
      reject_unknown_keys(item, {"branch", "target_stage", "source_stage", "p"}, ctx + ".path_weights");
      PathWeight w;
      w.branch = parse_branch(read_required<std::string>(item, "branch", ctx + ".path_weights"), ctx);
      w.target = read_required<std::size_t>(item, "target_stage", ctx + ".path_weights");
      w.source = read_required<std::size_t>(item, "source_stage", ctx + ".path_weights");
      w.value = read_required<double>(item, "p", ctx + ".path_weights");
      sel.weights.push_back(w);
    }
  }
  return sel;
}

NetConfig search_config(NetConfig base) {
  base.paths = PathMode::kSearch;
  base.fixed_paths.clear();
  base.validate();
  return base;
}

NetConfig finalize_config(NetConfig base, const SelectedPaths& selected) {
  base.fixed_paths = selected.paths;
  base.paths = base.fixed_paths.empty() ? PathMode::kPlain : PathMode::kFixed;
  base.validate();
  return base;
}

NetConfig all_paths_config(NetConfig base) {
  base.fixed_paths = all_shallow_paths(base.branch_count());
  base.paths = base.fixed_paths.empty() ? PathMode::kPlain : PathMode::kFixed;
  base.validate();
  return base;
}

SearchTrace alternate_search(PlifNet<float>& supernet, const TrainingData& data, const SearchConfig& cfg,
                             const EpochHook& on_epoch) {
  if (supernet.config().paths != PathMode::kSearch) throw ConfigError("alternate_search: network is not a supernet");
  cfg.weights.validate();
  SgdConfig path_cfg = cfg.weights;
  path_cfg.learning_rate = cfg.path_learning_rate;
  path_cfg.momentum = cfg.path_momentum;
  if (!(path_cfg.learning_rate >= 0.0)) throw ConfigError("search: path learning rate must be >= 0");
  Sgd<float> theta(supernet.tensors(ParamGroup::kWeight), cfg.weights);
  Sgd<float> paths(supernet.tensors(ParamGroup::kPath), path_cfg);
  SearchTrace trace;
  auto loss_fn = [&](const std::vector<std::size_t>& batch, std::size_t) {
    const Batch b = make_batch(data, batch);
    return seg_loss(supernet.forward(b.inputs).logits, b.labels);
  };
  auto hook = [&](const EpochStats& s) {
    trace.epoch_loss.push_back(s.mean_loss);
    if (on_epoch) on_epoch(s);
  };
  const LoopConfig loop{cfg.epochs, cfg.weights.batch_size, cfg.weights.seed, cfg.lr_power};
  run_optimization({&theta, &paths}, data.train, loop, loss_fn, hook, [&](std::size_t, std::size_t opt) {
    if (opt == 1) trace.trajectory.push_back(read_path_weights(supernet));
  });
  return trace;
}

TwoPathToyResult run_two_path_toy(std::uint64_t seed, std::size_t steps) {
  constexpr std::size_t kBatch = 16;
  Tensor<double> theta(Shape{1}, 1.0), p_id(Shape{1}, 1.0), p_sig(Shape{1}, 0.0), p_noise(Shape{1}, 0.0);
  for (auto* t : {&theta, &p_id, &p_sig, &p_noise}) t->set_requires_grad(true);
  SgdConfig c;
  c.learning_rate = 0.02;
  c.momentum = 0.9;
  Sgd<double> opt_theta({theta}, c);
  Sgd<double> opt_paths({p_id, p_sig, p_noise}, c);
  Rng rng(mix_seed(seed, 0x70f));
  for (std::size_t step = 0; step < steps; ++step) {
    Tensor<double> base(Shape{kBatch}), sig(Shape{kBatch}), noise(Shape{kBatch}), y(Shape{kBatch});
    for (std::size_t k = 0; k < kBatch; ++k) {
      base.data_mut()[k] = rng.normal();
      sig.data_mut()[k] = rng.normal();
      noise.data_mut()[k] = rng.normal();
      y.data_mut()[k] = base[k] + 0.8 * sig[k];
    }
    opt_theta.zero_grad();
    opt_paths.zero_grad();
    Tensor<double> o = p_id * base + p_sig * sig + p_noise * noise;
    Tensor<double> loss = mean(square(theta * o - y));
    backward(loss);
    (step % 2 == 0 ? opt_theta : opt_paths).step();
  }
  return {theta.item(), p_id.item(), p_sig.item(), p_noise.item()};
}

}  // namespace plroad
