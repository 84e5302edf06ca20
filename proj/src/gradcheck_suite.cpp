#include <chrono>
#include <cmath>
#include <cstdio>

#include "plroad/distill.hpp"
#include "plroad/errors.hpp"
#include "plroad/gradcheck.hpp"
#include "plroad/ipps.hpp"
#include "plroad/net.hpp"
#include "plroad/nn_ops.hpp"

namespace plroad {

namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;

T uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T(std::move(shape), std::move(v));
}

// Values with |x| in [lo, hi] and a random sign, keeping clear of kinks at 0.
T away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
  T t = uniform_tensor(rng, std::move(shape), lo, hi);
  for (auto& x : t.data_mut()) x = rng.uniform() < 0.5 ? -x : x;
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.range(static_cast<long long>(lo), static_cast<long long>(hi)));
}

Shape small_nchw(Rng& rng) { return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 6)}; }

struct Instance {
  LossFn loss;
  Inputs inputs;
  GradcheckOptions options;
};

using Builder = std::function<Instance(Rng&)>;

Instance unary(Rng& rng, T x, T (*op)(const T&)) {
  const T r = uniform_tensor(rng, x.shape(), -1.0, 1.0);
  return {[op, r](const Inputs& in) { return sum(op(in[0]) * r); }, {x}, {}};
}

Instance binary(Rng& rng, T a, T b, T (*op)(const T&, const T&)) {
  const T r = uniform_tensor(rng, a.shape(), -1.0, 1.0);
  return {[op, r](const Inputs& in) { return sum(op(in[0], in[1]) * r); }, {a, b}, {}};
}

std::vector<std::pair<std::string, Builder>> cases() {
  std::vector<std::pair<std::string, Builder>> c;
  c.emplace_back("add", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    // Alternate between equal shapes and a broadcast scalar.
    T b = rng.uniform() < 0.5 ? uniform_tensor(rng, s, -2, 2) : uniform_tensor(rng, {1}, -2, 2);
    return binary(rng, uniform_tensor(rng, s, -2, 2), b, &add<double>);
  });
  c.emplace_back("sub", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    return binary(rng, uniform_tensor(rng, s, -2, 2), uniform_tensor(rng, s, -2, 2), &sub<double>);
  });
  c.emplace_back("mul", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    T b = rng.uniform() < 0.5 ? uniform_tensor(rng, s, -2, 2) : uniform_tensor(rng, {1}, -2, 2);
    return binary(rng, uniform_tensor(rng, s, -2, 2), b, &mul<double>);
  });
  c.emplace_back("div", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    return binary(rng, uniform_tensor(rng, s, -2, 2), away_from_zero(rng, s, 0.5, 2), &div<double>);
  });
  c.emplace_back("add_scalar", [](Rng& rng) {
    const double k = rng.uniform(-3, 3);
    const T x = uniform_tensor(rng, small_nchw(rng), -2, 2), r = uniform_tensor(rng, x.shape(), -1, 1);
    return Instance{[k, r](const Inputs& in) { return sum(add_scalar(in[0], k) * r); }, {x}, {}};
  });
  c.emplace_back("mul_scalar", [](Rng& rng) {
    const double k = rng.uniform(-3, 3);
    const T x = uniform_tensor(rng, small_nchw(rng), -2, 2), r = uniform_tensor(rng, x.shape(), -1, 1);
    return Instance{[k, r](const Inputs& in) { return sum(mul_scalar(in[0], k) * r); }, {x}, {}};
  });
  c.emplace_back("relu", [](Rng& rng) {
    return unary(rng, away_from_zero(rng, small_nchw(rng), 0.01, 2), &relu<double>);
  });
  c.emplace_back("sigmoid", [](Rng& rng) {
    return unary(rng, uniform_tensor(rng, small_nchw(rng), -4, 4), &sigmoid<double>);
  });
  c.emplace_back("square", [](Rng& rng) {
    return unary(rng, uniform_tensor(rng, small_nchw(rng), -2, 2), &square<double>);
  });
  c.emplace_back("log", [](Rng& rng) {
    return unary(rng, uniform_tensor(rng, small_nchw(rng), 0.2, 3), &log<double>);
  });
  c.emplace_back("clamp", [](Rng& rng) {
    // Entries stay at least 0.01 from either bound.
    T x = uniform_tensor(rng, small_nchw(rng), -2, 2);
    for (auto& v : x.data_mut()) {
      if (std::abs(v + 0.5) < 0.01 || std::abs(v - 0.7) < 0.01) v += 0.03;
    }
    const T r = uniform_tensor(rng, x.shape(), -1, 1);
    return Instance{[r](const Inputs& in) { return sum(clamp(in[0], -0.5, 0.7) * r); }, {x}, {}};
  });
  c.emplace_back("sum", [](Rng& rng) {
    return Instance{[](const Inputs& in) { return square(sum(in[0])); }, {uniform_tensor(rng, small_nchw(rng), -1, 1)},
                    {}};
  });
  c.emplace_back("mean", [](Rng& rng) {
    return Instance{[](const Inputs& in) { return square(mean(in[0])); }, {uniform_tensor(rng, small_nchw(rng), -1, 1)},
                    {}};
  });
  c.emplace_back("conv2d", [](Rng& rng) {
    const std::size_t k = rng.uniform() < 0.5 ? 1 : 3;
    Conv2dParams p;
    p.stride = {pick(rng, 1, 2), pick(rng, 1, 2)};
    p.padding = {pick(rng, 0, k / 2), pick(rng, 0, k / 2)};
    const T x = uniform_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 7), pick(rng, 3, 7)}, -1, 1);
    const T w = uniform_tensor(rng, {pick(rng, 1, 3), x.dim(1), k, k}, -1, 1);
    const T r = uniform_tensor(rng,
                               {x.dim(0), w.dim(0), conv_out_extent(x.dim(2), k, p.stride[0], p.padding[0]),
                                conv_out_extent(x.dim(3), k, p.stride[1], p.padding[1])},
                               -1, 1);
    return Instance{[p, r](const Inputs& in) { return sum(conv2d(in[0], in[1], p) * r); }, {x, w}, {}};
  });
  c.emplace_back("bias_add", [](Rng& rng) {
    const T x = uniform_tensor(rng, small_nchw(rng), -1, 1);
    const T b = uniform_tensor(rng, {x.dim(1)}, -1, 1), r = uniform_tensor(rng, x.shape(), -1, 1);
    return Instance{[r](const Inputs& in) { return sum(bias_add(in[0], in[1]) * r); }, {x, b}, {}};
  });
  c.emplace_back("concat_channels", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
    const T a = uniform_tensor(rng, {n, pick(rng, 1, 3), h, w}, -1, 1);
    const T b = uniform_tensor(rng, {n, pick(rng, 1, 3), h, w}, -1, 1);
    const T r = uniform_tensor(rng, {n, a.dim(1) + b.dim(1), h, w}, -1, 1);
    return Instance{[r](const Inputs& in) { return sum(concat_channels<double>({in[0], in[1]}) * r); }, {a, b}, {}};
  });
  c.emplace_back("slice_channels", [](Rng& rng) {
    const T x = uniform_tensor(rng, {1, pick(rng, 2, 5), 3, 4}, -1, 1);
    const std::size_t begin = pick(rng, 0, x.dim(1) - 1), count = pick(rng, 1, x.dim(1) - begin);
    const T r = uniform_tensor(rng, {1, count, 3, 4}, -1, 1);
    return Instance{[=](const Inputs& in) { return sum(slice_channels(in[0], begin, count) * r); }, {x}, {}};
  });
  c.emplace_back("stack_batch", [](Rng& rng) {
    const Shape s{1, pick(rng, 1, 3), 3, 3};
    const T a = uniform_tensor(rng, s, -1, 1), b = uniform_tensor(rng, s, -1, 1);
    const T r = uniform_tensor(rng, {2, s[1], 3, 3}, -1, 1);
    return Instance{[r](const Inputs& in) { return sum(stack_batch<double>({in[0], in[1]}) * r); }, {a, b}, {}};
  });
  c.emplace_back("avg_pool_to_bins", [](Rng& rng) {
    const T x = uniform_tensor(rng, {1, 2, pick(rng, 3, 9), pick(rng, 3, 9)}, -1, 1);
    const std::size_t bh = pick(rng, 1, x.dim(2)), bw = pick(rng, 1, x.dim(3));
    const T r = uniform_tensor(rng, {1, 2, bh, bw}, -1, 1);
    return Instance{[=](const Inputs& in) { return sum(avg_pool_to_bins(in[0], bh, bw) * r); }, {x}, {}};
  });
  c.emplace_back("bilinear_resize", [](Rng& rng) {
    const T x = uniform_tensor(rng, {1, 2, pick(rng, 1, 6), pick(rng, 1, 6)}, -1, 1);
    const std::size_t oh = pick(rng, 1, 9), ow = pick(rng, 1, 9);
    const T r = uniform_tensor(rng, {1, 2, oh, ow}, -1, 1);
    return Instance{[=](const Inputs& in) { return sum(bilinear_resize(in[0], oh, ow) * r); }, {x}, {}};
  });
  c.emplace_back("pool_and_resize", [](Rng& rng) {
    const T x = uniform_tensor(rng, {1, 2, pick(rng, 2, 7), pick(rng, 2, 7)}, -1, 1);
    const PoolResize mode = rng.uniform() < 0.5 ? PoolResize::kAvgPoolToBins : PoolResize::kBilinearResize;
    const std::size_t oh = pick(rng, 1, x.dim(2)), ow = pick(rng, 1, x.dim(3));
    const T r = uniform_tensor(rng, {1, 2, oh, ow}, -1, 1);
    return Instance{[=](const Inputs& in) { return sum(pool_and_resize(in[0], mode, oh, ow) * r); }, {x}, {}};
  });
  c.emplace_back("window_mean", [](Rng& rng) {
    const T x = uniform_tensor(rng, {1, 2, pick(rng, 3, 8), pick(rng, 3, 8)}, -1, 1);
    const std::size_t k = pick(rng, 1, std::min(x.dim(2), x.dim(3)));
    const T r = uniform_tensor(rng, {1, 2, x.dim(2) - k + 1, x.dim(3) - k + 1}, -1, 1);
    return Instance{[=](const Inputs& in) { return sum(window_mean(in[0], k) * r); }, {x}, {}};
  });
  c.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 2), cls = pick(rng, 2, 4), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
    const T logits = uniform_tensor(rng, {n, cls, h, w}, -3, 3);
    std::vector<double> lab(n * h * w), keep(n * h * w);
    for (auto& l : lab) l = static_cast<double>(rng.below(cls));
    for (auto& m : keep) m = rng.uniform() < 0.8 ? 1.0 : 0.0;
    keep[0] = 1.0;
    const T labels(Shape{n, h, w}, lab), mask(Shape{n, h, w}, keep);
    const bool masked = rng.uniform() < 0.5;
    return Instance{[=](const Inputs& in) { return softmax_cross_entropy(in[0], labels, masked ? &mask : nullptr); },
                    {logits}, {}};
  });
  c.emplace_back("ctg_generate", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    Inputs in;
    for (int k = 0; k < 6; ++k) in.push_back(uniform_tensor(rng, s, -1, 1));
    const bool bi = rng.uniform() < 0.7;
    const T r1 = uniform_tensor(rng, s, -1, 1), r2 = uniform_tensor(rng, s, -1, 1);
    return Instance{[=](const Inputs& x) {
                      const auto out = ctg_generate(x[0], x[1], FusionParams<double>{x[2], x[3], x[4], x[5]}, bi);
                      return sum(out[0] * r1) + sum(out[1] * r2);
                    },
                    in, {}};
  });
  c.emplace_back("pixel_loss", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    return Instance{[](const Inputs& in) { return pixel_loss(in[0], in[1]); },
                    {uniform_tensor(rng, s, -2, 2), uniform_tensor(rng, s, -2, 2)}, {}};
  });
  c.emplace_back("patch_loss", [](Rng& rng) {
    // Student = teacher + noise keeps SSIM well inside the clamp range.
    const std::size_t k = 2 * pick(rng, 1, 3) + 1;
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), k + pick(rng, 0, 3), k + pick(rng, 0, 3)};
    T t, st;
    double v = 0.0;
    do {
      t = uniform_tensor(rng, s, -2, 2);
      st = t + uniform_tensor(rng, s, -1.5, 1.5);
      v = ssim(sigmoid(t), sigmoid(st), k).item();
    } while (!(v > 1e-3 && v < 0.999));
    return Instance{[k](const Inputs& in) { return patch_loss(in[0], in[1], k); }, {t, st}, {}};
  });
  c.emplace_back("image_loss", [](Rng& rng) {
    const Shape s{pick(rng, 1, 2), pick(rng, 2, 4), pick(rng, 2, 5), pick(rng, 2, 5)};
    const std::uint64_t seed = rng.next();
    const std::size_t n = pick(rng, 1, 64);
    return Instance{[=](const Inputs& in) { return image_loss(in[0], in[1], n, seed); },
                    {uniform_tensor(rng, s, -2, 2), uniform_tensor(rng, s, -2, 2)}, {}};
  });
  c.emplace_back("md_total", [](Rng& rng) {
    const Shape s{1, 4, pick(rng, 2, 4), pick(rng, 3, 5)};
    const T t1 = uniform_tensor(rng, s, -2, 2), t2 = uniform_tensor(rng, s, -2, 2);
    const T s1 = t1 + uniform_tensor(rng, s, -1, 1), s2 = t2 + uniform_tensor(rng, s, -1, 1);
    const T logits = uniform_tensor(rng, {1, 2, 11, 13}, -2, 2);
    std::vector<double> lab(11 * 13);
    for (auto& l : lab) l = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const T labels(Shape{1, 11, 13}, lab);
    MdConfig md;
    md.n_samples = 32;
    md.seed = rng.next();
    return Instance{[=](const Inputs& in) {
                      return md_total(FeatureTaps<double>{in[0], in[1], in[2], in[3]}, in[4], labels, md, 0);
                    },
                    {t1, t2, s1, s2, logits}, {}};
  });
  c.emplace_back("ctg_module", [](Rng& rng) {
    NetConfig cfg;
    cfg.backbone.widths = {4, 4, 4, 4, 4};
    auto net = std::make_shared<PlifNet<double>>(cfg, 16, 16);
    const std::size_t stage = pick(rng, 1, 4);
    const std::size_t ch = net->ctg(stage).channels;
    const Shape s{1, ch, pick(rng, 2, 4), pick(rng, 2, 4)};
    Inputs in{uniform_tensor(rng, s, -1, 1), uniform_tensor(rng, s, -1, 1)};
    auto& m = net->ctg(stage);
    for (ConvLayer<double>* l : {&m.reduce_rgb, &m.reduce_pl, &m.tfn_hidden, &m.tfn_out}) {
      in.push_back(l->weight);
      in.push_back(l->bias);
    }
    const T r1 = uniform_tensor(rng, s, -1, 1), r2 = uniform_tensor(rng, s, -1, 1);
    return Instance{[net, stage, r1, r2](const Inputs& x) {
                      const auto out = net->ctg(stage).forward(x[0], x[1]);
                      return sum(out[0] * r1) + sum(out[1] * r2);
                    },
                    in, {}};
  });
  c.emplace_back("network", [](Rng& rng) {
    // Rotates through fusion modes and path layouts.
    static const FusionMode modes[] = {FusionMode::kPlif, FusionMode::kLif, FusionMode::kNfRgb, FusionMode::kNfPl,
                                       FusionMode::kNfDepth};
    NetConfig cfg;
    cfg.mode = modes[rng.below(5)];
    cfg.init_seed = rng.next();
    const double which = rng.uniform();
    if (which < 0.3) {
      cfg = search_config(cfg);
    } else if (which < 0.5) {
      cfg = all_paths_config(cfg);
    } else if (which < 0.65 && cfg.has_ctg()) {
      cfg.student = true;
    }
    auto net = std::make_shared<PlifNet<double>>(cfg, 16, 24);
    if (cfg.paths == PathMode::kSearch) {
      for (auto& p : net->params()) {
        if (p.group == ParamGroup::kPath) p.tensor.data_mut()[0] = rng.uniform(0.3, 1.2);
      }
    }
    NetInputs<double> x;
    x.rgb = uniform_tensor(rng, {1, 3, 16, 24}, 0, 1);
    x.pl = uniform_tensor(rng, {1, 1, 16, 24}, 0, 1);
    x.depth = uniform_tensor(rng, {1, 1, 16, 24}, 0, 1);
    std::vector<double> lab(16 * 24);
    for (auto& l : lab) l = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const T labels(Shape{1, 16, 24}, lab);
    Inputs params;
    for (const auto& p : net->params()) params.push_back(p.tensor);
    GradcheckOptions opt;
    opt.max_entries = 1;
    opt.seed = rng.next();
    return Instance{[net, x, labels](const Inputs&) { return seg_loss(net->forward(x).logits, labels); }, params, opt};
  });
  return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::size_t instances_per_case, std::uint64_t seed, bool verbose) {
  if (instances_per_case == 0) throw ConfigError("gradcheck: need at least one instance per case");
  std::vector<GradcheckCase> out;
  std::size_t index = 0;
  for (const auto& [name, build] : cases()) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(seed, ++index));
    GradcheckCase gc;
    gc.name = name;
    for (std::size_t i = 0; i < instances_per_case; ++i) {
      Instance inst = build(rng);
      if (inst.options.seed == GradcheckOptions{}.seed) inst.options.seed = rng.next();
      const auto r = gradcheck(inst.loss, inst.inputs, inst.options);
      ++gc.instances;
      gc.result.entries += r.entries;
      gc.result.skipped += r.skipped;
      if (r.max_rel_error >= gc.result.max_rel_error || gc.result.worst.empty()) {
        gc.result.max_rel_error = r.max_rel_error;
        gc.result.worst = "instance " + std::to_string(i) + ", " + r.worst;
      }
    }
    if (verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("%-22s instances %3zu  entries %6zu  kinks skipped %4zu  max rel err %.3e  (%.1fs)\n",
                  name.c_str(), gc.instances, gc.result.entries, gc.result.skipped, gc.result.max_rel_error, secs);
      std::fflush(stdout);
    }
    out.push_back(std::move(gc));
  }
  return out;
}

}  // namespace plroad
