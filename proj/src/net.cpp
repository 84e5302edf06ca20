#include "plroad/net.hpp"

#include <algorithm>
#include <cmath>

#include "plroad/errors.hpp"
#include "plroad/json_util.hpp"

namespace plroad {

void BackboneConfig::validate() const {
  for (std::size_t i = 0; i < kStages; ++i) {
    if (widths[i] == 0) throw ConfigError("backbone: stage widths must be > 0");
    if (strides[i] == 0) throw ConfigError("backbone: stage strides must be > 0");
  }
  if (blocks_per_stage == 0) throw ConfigError("backbone: blocks_per_stage must be >= 1");
}

std::string mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNfRgb: return "NF-RGB";
    case FusionMode::kNfPl: return "NF-PL";
    case FusionMode::kNfDepth: return "NF-Depth";
    case FusionMode::kLif: return "LIF";
    case FusionMode::kPlif: return "PLIF";
  }
  return "?";
}

FusionMode parse_mode(const std::string& name) {
  for (auto m : {FusionMode::kNfRgb, FusionMode::kNfPl, FusionMode::kNfDepth, FusionMode::kLif, FusionMode::kPlif}) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigError("unknown fusion mode '" + name + "' (expected NF-RGB, NF-PL, NF-Depth, LIF or PLIF)");
}

std::string input_name(InputKind kind) {
  switch (kind) {
    case InputKind::kRgb: return "rgb";
    case InputKind::kPl: return "pl";
    case InputKind::kDepth: return "depth";
  }
  return "?";
}

std::vector<PathSpec> all_shallow_paths(std::size_t branches) {
  std::vector<PathSpec> out;
  for (std::size_t c = 0; c < branches; ++c) {
    for (std::size_t i = 2; i <= kFusedStages; ++i) {
      for (std::size_t j = 1; j < i; ++j) out.push_back({c, i, j});
    }
  }
  return out;
}

std::size_t NetConfig::branch_count() const {
  return mode == FusionMode::kLif || mode == FusionMode::kPlif ? 2 : 1;
}

std::vector<InputKind> NetConfig::branch_inputs() const {
  switch (mode) {
    case FusionMode::kNfRgb: return {InputKind::kRgb};
    case FusionMode::kNfPl: return {student ? InputKind::kRgb : InputKind::kPl};
    case FusionMode::kNfDepth: return {student ? InputKind::kRgb : InputKind::kDepth};
    case FusionMode::kLif:
    case FusionMode::kPlif: return {InputKind::kRgb, student ? InputKind::kRgb : InputKind::kPl};
  }
  return {};
}

void NetConfig::validate() const {
  backbone.validate();
  if (ppm_bins.empty()) throw ConfigError("net: ppm_bins must not be empty");
  for (auto b : ppm_bins) {
    if (b == 0) throw ConfigError("net: ppm bins must be >= 1");
  }
  if (ppm_width == 0 || branch_width == 0 || head_width == 0) throw ConfigError("net: widths must be > 0");
  for (std::size_t c = 1; c <= kFusedStages; ++c) {
    if (has_ctg() && backbone.widths[c] < 2) throw ConfigError("net: fused stages need at least 2 channels");
  }
  if (paths != PathMode::kFixed && !fixed_paths.empty()) {
    throw ConfigError("net: fixed_paths given but path mode is not 'fixed'");
  }
  for (std::size_t k = 0; k < fixed_paths.size(); ++k) {
    const auto& p = fixed_paths[k];
    if (p.branch >= branch_count() || p.target < 2 || p.target > kFusedStages || p.source < 1 ||
        p.source >= p.target) {
      throw ConfigError("net: invalid path {branch " + std::to_string(p.branch) + ", target " +
                        std::to_string(p.target) + ", source " + std::to_string(p.source) + "}");
    }
    for (std::size_t q = 0; q < k; ++q) {
      if (fixed_paths[q] == p) throw ConfigError("net: duplicate path in fixed_paths");
    }
  }
}

namespace {

std::string path_mode_name(PathMode m) {
  switch (m) {
    case PathMode::kPlain: return "plain";
    case PathMode::kSearch: return "search";
    case PathMode::kFixed: return "fixed";
  }
  return "?";
}

PathMode parse_path_mode(const std::string& s) {
  for (auto m : {PathMode::kPlain, PathMode::kSearch, PathMode::kFixed}) {
    if (path_mode_name(m) == s) return m;
  }
  throw ConfigError("net: unknown path mode '" + s + "' (expected plain, search or fixed)");
}

const char* kBranchNames[2] = {"rgb", "pl"};

}  // namespace

nlohmann::ordered_json net_config_to_json(const NetConfig& cfg) {
  nlohmann::ordered_json j;
  j["widths"] = cfg.backbone.widths;
  j["strides"] = cfg.backbone.strides;
  j["blocks_per_stage"] = cfg.backbone.blocks_per_stage;
  j["mode"] = mode_name(cfg.mode);
  j["student"] = cfg.student;
  j["paths"] = path_mode_name(cfg.paths);
  auto& fixed = j["fixed_paths"] = nlohmann::ordered_json::array();
  for (const auto& p : cfg.fixed_paths) {
    fixed.push_back({{"branch", kBranchNames[p.branch]}, {"target_stage", p.target}, {"source_stage", p.source}});
  }
  j["ppm_bins"] = cfg.ppm_bins;
  j["ppm_width"] = cfg.ppm_width;
  j["branch_width"] = cfg.branch_width;
  j["head_width"] = cfg.head_width;
  j["init_seed"] = cfg.init_seed;
  return j;
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "net";
  reject_unknown_keys(j,
                      {"widths", "strides", "blocks_per_stage", "mode", "student", "paths", "fixed_paths",
                       "ppm_bins", "ppm_width", "branch_width", "head_width", "init_seed"},
                      ctx);
  NetConfig cfg;
  read_optional(j, "widths", cfg.backbone.widths, ctx);
  read_optional(j, "strides", cfg.backbone.strides, ctx);
  read_optional(j, "blocks_per_stage", cfg.backbone.blocks_per_stage, ctx);
  if (j.contains("mode")) cfg.mode = parse_mode(read_required<std::string>(j, "mode", ctx));
  read_optional(j, "student", cfg.student, ctx);
  if (j.contains("paths")) cfg.paths = parse_path_mode(read_required<std::string>(j, "paths", ctx));
  if (j.contains("fixed_paths")) {
    const auto& list = j.at("fixed_paths");
    if (!list.is_array()) throw ConfigError(ctx + ".fixed_paths: expected an array");
    for (const auto& item : list) {
      reject_unknown_keys(item, {"branch", "target_stage", "source_stage"}, ctx + ".fixed_paths");
      PathSpec p;
      const auto b = read_required<std::string>(item, "branch", ctx + ".fixed_paths");
      if (b == "rgb") {
        p.branch = 0;
      } else if (b == "pl") {
        p.branch = 1;
      } else {
        throw ConfigError(ctx + ".fixed_paths: branch must be 'rgb' or 'pl'");
      }
      p.target = read_required<std::size_t>(item, "target_stage", ctx + ".fixed_paths");
      p.source = read_required<std::size_t>(item, "source_stage", ctx + ".fixed_paths");
      cfg.fixed_paths.push_back(p);
    }
  }
  read_optional(j, "ppm_bins", cfg.ppm_bins, ctx);
  read_optional(j, "ppm_width", cfg.ppm_width, ctx);
  read_optional(j, "branch_width", cfg.branch_width, ctx);
  read_optional(j, "head_width", cfg.head_width, ctx);
  read_optional(j, "init_seed", cfg.init_seed, ctx);
  cfg.validate();
  return cfg;
}

template <typename T>
Tensor<T> ConvLayer<T>::operator()(const Tensor<T>& x) const {
  return bias_add(conv2d(x, weight, params), bias);
}

template <typename T>
std::array<Tensor<T>, 2> ctg_generate(const Tensor<T>& f_rgb, const Tensor<T>& f_pl, const FusionParams<T>& fp,
                                      bool bidirectional) {
  if (f_rgb.shape() != f_pl.shape()) {
    throw ConfigError("ctg: branch shapes differ: " + shape_str(f_rgb.shape()) + " vs " + shape_str(f_pl.shape()));
  }
  Tensor<T> rgb = add(f_rgb, add(mul(fp.alpha1, f_pl), fp.beta1));
  if (!bidirectional) return {rgb, f_pl};
  Tensor<T> pl = add(f_pl, add(mul(fp.alpha2, f_rgb), fp.beta2));
  return {rgb, pl};
}

template <typename T>
FusionParams<T> CtgModule<T>::transform(const Tensor<T>& f_rgb, const Tensor<T>& f_pl) const {
  if (f_rgb.shape() != f_pl.shape()) {
    throw ConfigError("ctg: branch shapes differ: " + shape_str(f_rgb.shape()) + " vs " + shape_str(f_pl.shape()));
  }
  const Tensor<T> cat = concat_channels<T>({relu(reduce_rgb(f_rgb)), relu(reduce_pl(f_pl))});
  const Tensor<T> t = tfn_out(relu(tfn_hidden(cat)));
  const std::size_t C = channels;
  FusionParams<T> fp;
  fp.alpha1 = slice_channels(t, 0, C);
  fp.beta1 = slice_channels(t, C, C);
  if (bidirectional) {
    fp.alpha2 = slice_channels(t, 2 * C, C);
    fp.beta2 = slice_channels(t, 3 * C, C);
  }
  return fp;
}

template <typename T>
std::array<Tensor<T>, 2> CtgModule<T>::forward(const Tensor<T>& f_rgb, const Tensor<T>& f_pl) const {
  return ctg_generate(f_rgb, f_pl, transform(f_rgb, f_pl), bidirectional);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> y = conv2(relu(conv1(x)));
  return relu(add(y, shortcut ? (*shortcut)(x) : x));
}

template <typename T>
Tensor<T> PpmModule<T>::operator()(const Tensor<T>& x) const {
  const std::size_t H = x.dim(2), W = x.dim(3);
  std::vector<Tensor<T>> parts{x};
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const Tensor<T> pooled = avg_pool_to_bins(x, std::min(bins[b], H), std::min(bins[b], W));
    parts.push_back(bilinear_resize(relu(bin_convs[b](pooled)), H, W));
  }
  return relu(reduce(concat_channels(parts)));
}

template <typename T>
PlifNet<T>::PlifNet(NetConfig cfg, std::size_t height, std::size_t width)
    : cfg_(std::move(cfg)), height_(height), width_(width) {
  cfg_.validate();
  const auto& bb = cfg_.backbone;
  std::size_t total_stride = 1;
  for (auto s : bb.strides) total_stride *= s;
  if (height < total_stride || width < total_stride) {
    throw ConfigError("net: input " + std::to_string(height) + "x" + std::to_string(width) +
                      " is smaller than the total stride " + std::to_string(total_stride));
  }
  std::array<std::size_t, 2> ext{height, width};
  for (std::size_t i = 0; i < kStages; ++i) {
    for (auto& e : ext) {
      if (e == 0) throw ConfigError("net: empty input");
      e = conv_out_extent(e, 3, bb.strides[i], 1);
    }
    extents_.push_back(ext);
  }

  const std::size_t nb = cfg_.branch_count();
  const auto inputs = cfg_.branch_inputs();
  stages_.resize(nb);
  for (std::size_t c = 0; c < nb; ++c) {
    const std::string bn = kBranchNames[c];
    const std::size_t cin = inputs[c] == InputKind::kRgb ? 3 : 1;
    stems_.push_back(make_conv(bn + ".stem", cin, bb.widths[0], 3, bb.strides[0]));
    for (std::size_t i = 1; i < kStages; ++i) {
      std::vector<ResidualBlock<T>> blocks;
      for (std::size_t b = 0; b < bb.blocks_per_stage; ++b) {
        const std::string name = bn + ".s" + std::to_string(i) + ".b" + std::to_string(b);
        const std::size_t in_w = b == 0 ? bb.widths[i - 1] : bb.widths[i];
        const std::size_t stride = b == 0 ? bb.strides[i] : 1;
        ResidualBlock<T> block;
        block.conv1 = make_conv(name + ".conv1", in_w, bb.widths[i], 3, stride);
        block.conv2 = make_conv(name + ".conv2", bb.widths[i], bb.widths[i], 3, 1);
        if (in_w != bb.widths[i] || stride != 1) {
          block.shortcut = make_conv(name + ".proj", in_w, bb.widths[i], 1, stride);
        }
        blocks.push_back(std::move(block));
      }
      stages_[c].push_back(std::move(blocks));
    }
  }

  if (cfg_.has_ctg()) {
    const bool bidirectional = cfg_.mode == FusionMode::kPlif;
    for (std::size_t i = 1; i <= kFusedStages; ++i) {
      const std::string name = "ctg" + std::to_string(i);
      const std::size_t C = bb.widths[i];
      const std::size_t half = std::max<std::size_t>(1, C / 2);
      CtgModule<T> m;
      m.channels = C;
      m.bidirectional = bidirectional;
      m.reduce_rgb = make_conv(name + ".reduce_rgb", C, half, 1, 1);
      m.reduce_pl = make_conv(name + ".reduce_pl", C, half, 1, 1);
      m.tfn_hidden = make_conv(name + ".tfn_hidden", 2 * half, C, 3, 1);
      m.tfn_out = make_conv(name + ".tfn_out", C, (bidirectional ? 4 : 2) * C, 3, 1, 0.1);
      ctg_.push_back(std::move(m));
    }
  }

  std::vector<PathSpec> shallow;
  if (cfg_.paths == PathMode::kSearch) shallow = all_shallow_paths(nb);
  if (cfg_.paths == PathMode::kFixed) shallow = cfg_.fixed_paths;
  for (const auto& p : shallow) {
    std::size_t stride = 1;
    for (std::size_t k = p.source + 1; k <= p.target; ++k) stride *= bb.strides[k];
    for (std::size_t d = 0; d < 2; ++d) {
      if (conv_out_extent(extents_[p.source][d], 3, stride, 1) != extents_[p.target][d]) {
        throw ConfigError("net: transfer S" + std::to_string(p.source) + " -> S" + std::to_string(p.target) +
                          " cannot match spatial extents for this input size");
      }
    }
    const std::string name =
        std::string("path.") + kBranchNames[p.branch] + "." + std::to_string(p.target) + "." + std::to_string(p.source);
    Transfer t{p, make_conv(name, bb.widths[p.source], bb.widths[p.target], 3, stride), std::nullopt};
    transfers_.push_back(std::move(t));
  }
  if (cfg_.paths == PathMode::kSearch) {
    for (std::size_t c = 0; c < nb; ++c) {
      for (std::size_t i = 1; i <= kFusedStages; ++i) {
        const std::string name =
            std::string("p.") + kBranchNames[c] + "." + std::to_string(i) + "." + std::to_string(i);
        identity_weights_.push_back(add_param(name, ParamGroup::kPath, Shape{1}));
        identity_weights_.back().data_mut()[0] = T(1);
      }
    }
    for (auto& t : transfers_) {
      const std::string name = std::string("p.") + kBranchNames[t.spec.branch] + "." + std::to_string(t.spec.target) +
                               "." + std::to_string(t.spec.source);
      t.weight = add_param(name, ParamGroup::kPath, Shape{1});
    }
  }

  for (std::size_t c = 0; c < nb; ++c) {
    const std::string name = std::string("ppm.") + kBranchNames[c];
    PpmModule<T> m;
    m.bins = cfg_.ppm_bins;
    const std::size_t C = bb.widths[kStages - 1];
    for (std::size_t b = 0; b < m.bins.size(); ++b) {
      m.bin_convs.push_back(make_conv(name + ".bin" + std::to_string(m.bins[b]), C, cfg_.ppm_width, 1, 1));
    }
    m.reduce = make_conv(name + ".reduce", C + m.bins.size() * cfg_.ppm_width, cfg_.branch_width, 1, 1);
    ppm_.push_back(std::move(m));
  }
  head_hidden_ = make_conv("head.hidden", nb * cfg_.branch_width, cfg_.head_width, 1, 1);
  head_out_ = make_conv("head.out", cfg_.head_width, 2, 1, 1);
}

template <typename T>
Tensor<T>& PlifNet<T>::add_param(const std::string& name, ParamGroup group, Shape shape) {
  Tensor<T> t(std::move(shape), T(0));
  t.set_requires_grad(true);
  params_.push_back({name, group, t});
  return params_.back().tensor;
}

template <typename T>
ConvLayer<T> PlifNet<T>::make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                                   std::size_t stride, double gain) {
  ConvLayer<T> layer;
  layer.weight = add_param(name + ".w", ParamGroup::kWeight, Shape{cout, cin, k, k});
  layer.bias = add_param(name + ".b", ParamGroup::kWeight, Shape{cout});
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(cin * k * k));
  // Seeded by name so layers shared between variants start identical.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) h = (h ^ ch) * 0x100000001b3ULL;
  Rng rng(mix_seed(cfg_.init_seed, h));
  for (T& w : layer.weight.data_mut()) w = static_cast<T>(stddev * rng.normal());
  layer.params.stride = {stride, stride};
  layer.params.padding = {k / 2, k / 2};
  return layer;
}

template <typename T>
std::vector<InputKind> PlifNet<T>::required_inputs() const {
  auto kinds = cfg_.branch_inputs();
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  return kinds;
}

template <typename T>
Tensor<T> PlifNet<T>::branch_input(const NetInputs<T>& in, std::size_t branch) const {
  const InputKind kind = cfg_.branch_inputs()[branch];
  const Tensor<T>& t = kind == InputKind::kRgb ? in.rgb : kind == InputKind::kPl ? in.pl : in.depth;
  if (!t.defined()) {
    throw ConfigError("network (" + mode_name(cfg_.mode) + (cfg_.student ? " student" : "") +
                      ") requires the '" + input_name(kind) + "' input, which was not provided");
  }
  const std::size_t channels = kind == InputKind::kRgb ? 3 : 1;
  if (t.rank() != 4 || t.dim(1) != channels || t.dim(2) != height_ || t.dim(3) != width_) {
    throw ConfigError("network input '" + input_name(kind) + "' has shape " + shape_str(t.shape()) +
                      ", expected [N x " + std::to_string(channels) + " x " + std::to_string(height_) + " x " +
                      std::to_string(width_) + "]");
  }
  return t;
}

template <typename T>
Tensor<T> PlifNet<T>::assemble(std::size_t branch, std::size_t stage, const std::vector<Tensor<T>>& s) const {
  const Tensor<T>& own = s[stage - 1];
  if (cfg_.paths == PathMode::kPlain) return own;
  Tensor<T> o = cfg_.paths == PathMode::kSearch
                    ? mul(identity_weights_[branch * kFusedStages + stage - 1], own)
                    : own;
  for (const auto& t : transfers_) {
    if (t.spec.branch != branch || t.spec.target != stage) continue;
    Tensor<T> moved = t.conv(s[t.spec.source - 1]);
    o = add(o, t.weight ? mul(*t.weight, moved) : moved);
  }
  return o;
}

template <typename T>
NetOutput<T> PlifNet<T>::forward(const NetInputs<T>& in) const {
  const std::size_t nb = cfg_.branch_count();
  std::vector<Tensor<T>> x(nb);
  for (std::size_t c = 0; c < nb; ++c) x[c] = branch_input(in, c);
  if (nb == 2 && x[0].dim(0) != x[1].dim(0)) throw ConfigError("network inputs disagree on batch size");

  NetOutput<T> out;
  auto& st = out.state;
  st.s.assign(kFusedStages, {});
  st.o.assign(kFusedStages, {});
  st.h.assign(kFusedStages, {});
  std::vector<std::vector<Tensor<T>>> s_hist(nb);
  std::vector<Tensor<T>> h(nb);
  for (std::size_t c = 0; c < nb; ++c) h[c] = relu(stems_[c](x[c]));
  for (std::size_t i = 1; i <= kFusedStages; ++i) {
    std::vector<Tensor<T>> o(nb);
    for (std::size_t c = 0; c < nb; ++c) {
      Tensor<T> y = h[c];
      for (const auto& block : stages_[c][i - 1]) y = block(y);
      s_hist[c].push_back(y);
      o[c] = assemble(c, i, s_hist[c]);
    }
    if (cfg_.has_ctg()) {
      const auto fused = ctg_[i - 1].forward(o[0], o[1]);
      h = {fused[0], fused[1]};
    } else {
      h = o;
    }
    for (std::size_t c = 0; c < nb; ++c) {
      st.s[i - 1].push_back(s_hist[c].back());
      st.o[i - 1].push_back(o[c]);
      st.h[i - 1].push_back(h[c]);
    }
  }
  std::vector<Tensor<T>> pooled;
  for (std::size_t c = 0; c < nb; ++c) pooled.push_back(ppm_[c](h[c]));
  const Tensor<T> joined = nb == 1 ? pooled[0] : concat_channels(pooled);
  const Tensor<T> logits = head_out_(relu(head_hidden_(joined)));
  out.logits = bilinear_resize(logits, height_, width_);
  return out;
}

template <typename T>
std::vector<Tensor<T>> PlifNet<T>::tensors(ParamGroup group) const {
  std::vector<Tensor<T>> out;
  for (const auto& p : params_) {
    if (p.group == group) out.push_back(p.tensor);
  }
  return out;
}

template <typename T>
std::size_t PlifNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
std::size_t PlifNet<T>::transfer_op_count() const {
  return transfers_.size();
}

template <typename T>
Tensor<T> PlifNet<T>::path_weight(std::size_t branch, std::size_t target, std::size_t source) const {
  if (cfg_.paths != PathMode::kSearch) throw ConfigError("path weights exist only in search mode");
  if (branch >= cfg_.branch_count() || target < 1 || target > kFusedStages || source < 1 || source > target) {
    throw ConfigError("path_weight: index out of range");
  }
  if (source == target) return identity_weights_[branch * kFusedStages + target - 1];
  for (const auto& t : transfers_) {
    if (t.spec == PathSpec{branch, target, source}) return *t.weight;
  }
  throw ConfigError("path_weight: path not found");
}

template <typename T>
std::vector<CheckpointRecord> PlifNet<T>::to_records() const {
  std::vector<CheckpointRecord> out;
  for (const auto& p : params_) {
    CheckpointRecord r;
    r.name = p.name;
    for (auto d : p.tensor.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
    for (T v : p.tensor.data()) r.values.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
void PlifNet<T>::load_records(const std::vector<CheckpointRecord>& records) {
  if (records.size() != params_.size()) {
    throw ConfigError("checkpoint has " + std::to_string(records.size()) + " tensors, network expects " +
                      std::to_string(params_.size()));
  }
  for (std::size_t k = 0; k < records.size(); ++k) {
    auto& p = params_[k];
    const auto& r = records[k];
    Shape shape(r.dims.begin(), r.dims.end());
    if (r.name != p.name || shape != p.tensor.shape()) {
      throw ConfigError("checkpoint tensor #" + std::to_string(k) + " is '" + r.name + "' " + shape_str(shape) +
                        ", network expects '" + p.name + "' " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.data_mut();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
  }
}

template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ConfigError("seg_loss: logits must be [N x 2 x H x W], got " + shape_str(logits.shape()));
  }
  return softmax_cross_entropy(logits, labels);
}

template <typename T>
std::vector<T> road_scores(const Tensor<T>& logits) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ConfigError("road_scores: logits must be [N x 2 x H x W], got " + shape_str(logits.shape()));
  }
  const auto probs = channel_softmax(logits);
  const std::size_t N = logits.dim(0), HW = logits.dim(2) * logits.dim(3);
  std::vector<T> out(N * HW);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(probs.begin() + static_cast<long>((n * 2 + 1) * HW), HW, out.begin() + static_cast<long>(n * HW));
  }
  return out;
}

#define PLROAD_INSTANTIATE(T)                                                                              \
  template struct ConvLayer<T>;                                                                            \
  template struct CtgModule<T>;                                                                            \
  template struct ResidualBlock<T>;                                                                        \
  template struct PpmModule<T>;                                                                            \
  template class PlifNet<T>;                                                                               \
  template std::array<Tensor<T>, 2> ctg_generate<T>(const Tensor<T>&, const Tensor<T>&, const FusionParams<T>&, \
                                                    bool);                                                 \
  template Tensor<T> seg_loss<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template std::vector<T> road_scores<T>(const Tensor<T>&);

PLROAD_INSTANTIATE(float)
PLROAD_INSTANTIATE(double)

}  // namespace plroad
