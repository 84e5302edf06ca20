#include "plroad/distill.hpp"

#include <cmath>
#include <numbers>

#include "plroad/errors.hpp"
#include "plroad/json_util.hpp"
#include "plroad/nn_ops.hpp"
#include "plroad/rng.hpp"

namespace plroad {

namespace {

template <typename T>
void require_same(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(what) + ": teacher tap " + shape_str(a.shape()) + " vs student tap " +
                      shape_str(b.shape()));
  }
  if (a.rank() != 4) throw ConfigError(std::string(what) + ": expected [N,C,H,W] features");
}

constexpr std::size_t kRedraws = 16;

}  // namespace

void MdConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("md: lambda must be >= 0");
  if (ssim_window == 0 || ssim_window % 2 == 0) throw ConfigError("md: ssim_window must be odd");
  if (n_samples == 0) throw ConfigError("md: n_samples must be >= 1");
}

nlohmann::ordered_json md_config_to_json(const MdConfig& cfg) {
  nlohmann::ordered_json j;
  j["lambda"] = cfg.lambda;
  j["ssim_window"] = cfg.ssim_window;
  j["n_samples"] = cfg.n_samples;
  j["seed"] = cfg.seed;
  j["pixel"] = cfg.pixel;
  j["patch"] = cfg.patch;
  j["image"] = cfg.image;
  return j;
}

MdConfig md_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "md";
  require_object(j, ctx);
  reject_unknown_keys(j, {"lambda", "ssim_window", "n_samples", "seed", "pixel", "patch", "image"}, ctx);
  MdConfig cfg;
  read_optional(j, "lambda", cfg.lambda, ctx);
  read_optional(j, "ssim_window", cfg.ssim_window, ctx);
  read_optional(j, "n_samples", cfg.n_samples, ctx);
  read_optional(j, "seed", cfg.seed, ctx);
  read_optional(j, "pixel", cfg.pixel, ctx);
  read_optional(j, "patch", cfg.patch, ctx);
  read_optional(j, "image", cfg.image, ctx);
  cfg.validate();
  return cfg;
}

template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& h_t, const Tensor<T>& h_s) {
  require_same("pixel_loss", h_t, h_s);
  return mean(square(sigmoid(h_t) - sigmoid(h_s)));
}

template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, std::size_t window) {
  require_same("ssim", a, b);
  if (a.dim(2) < window || a.dim(3) < window) {
    throw ConfigError("ssim: features " + shape_str(a.shape()) + " are smaller than the " + std::to_string(window) +
                      "x" + std::to_string(window) + " window");
  }
  const Tensor<T> mu_a = window_mean(a, window), mu_b = window_mean(b, window);
  const Tensor<T> var_a = window_mean(square(a), window) - square(mu_a);
  const Tensor<T> var_b = window_mean(square(b), window) - square(mu_b);
  const Tensor<T> cov = window_mean(a * b, window) - mu_a * mu_b;
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  const Tensor<T> num = add_scalar(mul_scalar(mu_a * mu_b, T(2)), c1) * add_scalar(mul_scalar(cov, T(2)), c2);
  const Tensor<T> den = add_scalar(square(mu_a) + square(mu_b), c1) * add_scalar(var_a + var_b, c2);
  return mean(div(num, den));
}

template <typename T>
Tensor<T> patch_loss(const Tensor<T>& h_t, const Tensor<T>& h_s, std::size_t window) {
  const Tensor<T> s = clamp(ssim(sigmoid(h_t), sigmoid(h_s), window), static_cast<T>(kSsimFloor), T(1));
  return mul_scalar(log(s), static_cast<T>(-1.0 / std::numbers::ln10));
}

template <typename T>
Tensor<T> image_loss(const Tensor<T>& h_t, const Tensor<T>& h_s, std::size_t n, std::uint64_t seed) {
  require_same("image_loss", h_t, h_s);
  const std::size_t N = h_t.dim(0), C = h_t.dim(1), HW = h_t.dim(2) * h_t.dim(3);
  if (HW < 2) throw ConfigError("image_loss: need at least two pixel locations");
  if (n == 0) throw ConfigError("image_loss: n must be >= 1");
  const T* xt = h_t.data().data();
  const T* xs = h_s.data().data();
  auto diff = [&](const T* x, std::size_t img, std::size_t p, std::size_t q, std::size_t c) {
    const std::size_t base = img * C * HW + c * HW;
    return static_cast<double>(x[base + p]) - static_cast<double>(x[base + q]);
  };
  struct Draw {
    std::size_t img, p, q;
    double nt, ns, cos, angle;
  };
  std::vector<Draw> draws;
  Rng rng(mix_seed(seed, 0x1a6e));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t attempt = 0; attempt < kRedraws; ++attempt) {
      Draw d{};
      d.img = rng.below(N);
      d.p = rng.below(HW);
      d.q = rng.below(HW - 1);
      if (d.q >= d.p) ++d.q;
      double dot = 0.0, nt = 0.0, ns = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double a = diff(xt, d.img, d.p, d.q, c), b = diff(xs, d.img, d.p, d.q, c);
        dot += a * b;
        nt += a * a;
        ns += b * b;
      }
      if (nt == 0.0 || ns == 0.0) continue;
      d.nt = std::sqrt(nt);
      d.ns = std::sqrt(ns);
      d.cos = dot / (d.nt * d.ns);
      // 2 atan2(|u - v|, |u + v|) for unit u, v; exact at 0 and pi, unlike acos.
      double minus = 0.0, plus = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double u = diff(xt, d.img, d.p, d.q, c) / d.nt, v = diff(xs, d.img, d.p, d.q, c) / d.ns;
        minus += (u - v) * (u - v);
        plus += (u + v) * (u + v);
      }
      d.angle = 2.0 * std::atan2(std::sqrt(minus), std::sqrt(plus));
      draws.push_back(d);
      break;
    }
  }
  double total = 0.0;
  for (const auto& d : draws) total += d.angle / std::numbers::pi;
  const double count = static_cast<double>(draws.size());
  const T value = draws.empty() ? T(0) : static_cast<T>(total / count);
  return Tensor<T>::make_result(
      "image_loss", Shape{1}, {value}, {h_t, h_s}, [=, draws = std::move(draws)](TensorNode<T>& self) {
        if (draws.empty()) return;
        const double g = static_cast<double>(self.grad[0]) / count;
        const T* at = self.inputs[0]->data.data();
        const T* as = self.inputs[1]->data.data();
        const bool want_t = self.input_requires_grad(0), want_s = self.input_requires_grad(1);
        std::span<T> gt, gs;
        if (want_t) gt = self.input_grad(0);
        if (want_s) gs = self.input_grad(1);
        for (const auto& d : draws) {
          const double sine = std::sin(d.angle);
          if (sine <= 0.0) continue;  // cosine at +-1: zero gradient
          const double dl_dc = -g / (std::numbers::pi * sine);
          const double inv = 1.0 / (d.nt * d.ns);
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = d.img * C * HW + c * HW;
            const double a = static_cast<double>(at[base + d.p]) - static_cast<double>(at[base + d.q]);
            const double b = static_cast<double>(as[base + d.p]) - static_cast<double>(as[base + d.q]);
            if (want_s) {
              const T v = static_cast<T>(dl_dc * (a * inv - d.cos * b / (d.ns * d.ns)));
              gs[base + d.p] += v;
              gs[base + d.q] -= v;
            }
            if (want_t) {
              const T v = static_cast<T>(dl_dc * (b * inv - d.cos * a / (d.nt * d.nt)));
              gt[base + d.p] += v;
              gt[base + d.q] -= v;
            }
          }
        }
      });
}

template <typename T>
FeatureTaps<T> student_taps(const NetOutput<T>& student, const Tensor<T>& t1, const Tensor<T>& t2) {
  const auto& h = student.state.h;
  if (h.size() != kFusedStages || h.back().size() != 2) {
    throw ConfigError("distill: the student has no CTG modules to tap");
  }
  FeatureTaps<T> taps{t1, t2, h.back()[0], h.back()[1]};
  require_same("distill", taps.t1, taps.s1);
  require_same("distill", taps.t2, taps.s2);
  return taps;
}

template <typename T>
Tensor<T> md_total(const FeatureTaps<T>& taps, const Tensor<T>& logits_s, const Tensor<T>& labels,
                   const MdConfig& cfg, std::uint64_t step) {
  Tensor<T> loss = seg_loss(logits_s, labels);
  if (cfg.lambda == 0.0 || !(cfg.pixel || cfg.patch || cfg.image)) return loss;
  const std::array<std::array<Tensor<T>, 2>, 2> pairs{{{taps.t1, taps.s1}, {taps.t2, taps.s2}}};
  for (std::size_t k = 0; k < 2; ++k) {
    const Tensor<T>& t = pairs[k][0];
    const Tensor<T>& s = pairs[k][1];
    require_same("md_total", t, s);
    std::vector<Tensor<T>> terms;
    if (cfg.pixel) terms.push_back(pixel_loss(t, s));
    if (cfg.patch) {
      // Smallest integer upsampling that fits the SSIM window.
      const std::size_t h = t.dim(2), w = t.dim(3);
      const std::size_t f = std::max((cfg.ssim_window + h - 1) / h, (cfg.ssim_window + w - 1) / w);
      if (f <= 1) {
        terms.push_back(patch_loss(t, s, cfg.ssim_window));
      } else {
        terms.push_back(patch_loss(bilinear_resize(t, h * f, w * f), bilinear_resize(s, h * f, w * f),
                                   cfg.ssim_window));
      }
    }
    if (cfg.image) terms.push_back(image_loss(t, s, cfg.n_samples, mix_seed(cfg.seed, 2 * step + k)));
    for (const auto& term : terms) loss = loss + mul_scalar(term, static_cast<T>(cfg.lambda));
  }
  return loss;
}

NetConfig student_config(const NetConfig& teacher) {
  if (!teacher.has_ctg()) throw ConfigError("distill: the teacher must be a two-branch (LIF or PLIF) network");
  NetConfig s = teacher;
  s.student = true;
  s.validate();
  return s;
}

void distill(const PlifNet<float>& teacher, PlifNet<float>& student, const TrainingData& data,
             const DistillConfig& cfg, const EpochHook& on_epoch) {
  cfg.md.validate();
  cfg.sgd.validate();
  if (!student.config().student) throw ConfigError("distill: the student network must take RGB on both branches");
  if (teacher.input_height() != student.input_height() || teacher.input_width() != student.input_width()) {
    throw ConfigError("distill: teacher and student input sizes differ");
  }
  std::map<std::size_t, std::array<Tensor<float>, 2>> cache;
  auto teacher_taps = [&](std::size_t idx) -> const std::array<Tensor<float>, 2>& {
    auto it = cache.find(idx);
    if (it != cache.end()) return it->second;
    NoGradGuard guard;
    const Batch b = make_batch(data, {idx});
    const auto out = teacher.forward(b.inputs);
    if (out.state.h.size() != kFusedStages || out.state.h.back().size() != 2) {
      throw ConfigError("distill: the teacher has no CTG modules to tap");
    }
    return cache.emplace(idx, std::array<Tensor<float>, 2>{out.state.h.back()[0], out.state.h.back()[1]})
        .first->second;
  };
  Sgd<float> opt(student.tensors(ParamGroup::kWeight), cfg.sgd);
  auto loss_fn = [&](const std::vector<std::size_t>& batch, std::size_t step) {
    std::vector<Tensor<float>> t1, t2;
    for (std::size_t idx : batch) {
      const auto& t = teacher_taps(idx);
      t1.push_back(t[0]);
      t2.push_back(t[1]);
    }
    Batch b = make_batch(data, batch);
    b.inputs.pl = Tensor<float>();
    b.inputs.depth = Tensor<float>();
    const auto out = student.forward(b.inputs);
    const auto taps = student_taps(out, stack_batch(t1), stack_batch(t2));
    return md_total(taps, out.logits, b.labels, cfg.md, step);
  };
  run_optimization({&opt}, data.train, {cfg.epochs, cfg.sgd.batch_size, cfg.sgd.seed, cfg.lr_power}, loss_fn, on_epoch);
}

DistilledStudent::DistilledStudent(PlifNet<float> net) : net_(std::move(net)) {
  if (net_.required_inputs() != std::vector<InputKind>{InputKind::kRgb}) {
    throw ConfigError("distilled student must need only the RGB input");
  }
}

Tensor<float> DistilledStudent::predict(const Tensor<float>& rgb) const {
  NetInputs<float> in;
  in.rgb = rgb;
  return net_.forward(in).logits;
}

#define PLROAD_INSTANTIATE(T)                                                                           \
  template Tensor<T> pixel_loss<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> ssim<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);                          \
  template Tensor<T> patch_loss<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);                    \
  template Tensor<T> image_loss<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::uint64_t);     \
  template FeatureTaps<T> student_taps<T>(const NetOutput<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> md_total<T>(const FeatureTaps<T>&, const Tensor<T>&, const Tensor<T>&, const MdConfig&, \
                                 std::uint64_t);

PLROAD_INSTANTIATE(float)
PLROAD_INSTANTIATE(double)

#undef PLROAD_INSTANTIATE

}  // namespace plroad
