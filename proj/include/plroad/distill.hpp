#pragma once

#include <cstdint>
#include <map>

#include "json.hpp"
#include "plroad/net.hpp"
#include "plroad/sgd.hpp"
#include "plroad/train.hpp"

namespace plroad {

struct MdConfig {
  double lambda = 1.0;
  std::size_t ssim_window = 11;
  std::size_t n_samples = 128;
  std::uint64_t seed = 1;
  bool pixel = true;
  bool patch = true;
  bool image = true;

  void validate() const;
};

nlohmann::ordered_json md_config_to_json(const MdConfig& cfg);
MdConfig md_config_from_json(const nlohmann::json& j);

inline constexpr double kSsimC1 = 1e-4;  // (0.01 L)^2, L = 1
inline constexpr double kSsimC2 = 9e-4;  // (0.03 L)^2
inline constexpr double kSsimFloor = 1e-4;

/// Mean squared difference of sigmoid(h) over every element of [N,C,H,W].
template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& h_t, const Tensor<T>& h_s);

/// Mean SSIM of two [N,C,H,W] maps with values in [0,1] over all valid
/// `window` x `window` uniform windows, channels and images.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, std::size_t window);

/// -log10 of the SSIM of the sigmoid-mapped features, SSIM clamped to
/// [1e-4, 1]; so the loss lies in [0, 4].
template <typename T>
Tensor<T> patch_loss(const Tensor<T>& h_t, const Tensor<T>& h_s, std::size_t window = 11);

/// Mean over `n` random location pairs of angle(h_t[p] - h_t[q], h_s[p] - h_s[q]) / pi,
/// with both locations in the same image. Pairs whose difference vectors have
/// zero norm are redrawn a bounded number of times, then skipped. The pairs
/// are a function of `seed` alone.
template <typename T>
Tensor<T> image_loss(const Tensor<T>& h_t, const Tensor<T>& h_s, std::size_t n, std::uint64_t seed);

/// Outputs of the last CTG module of each branch, teacher and student.
template <typename T>
struct FeatureTaps {
  Tensor<T> t1, t2, s1, s2;
};

template <typename T>
FeatureTaps<T> student_taps(const NetOutput<T>& student, const Tensor<T>& t1, const Tensor<T>& t2);

/// seg loss of the student plus lambda times the enabled terms over both
/// channel pairs. The patch term compares taps upsampled to the logits'
/// resolution so the SSIM window fits.
template <typename T>
Tensor<T> md_total(const FeatureTaps<T>& taps, const Tensor<T>& logits_s, const Tensor<T>& labels,
                   const MdConfig& cfg, std::uint64_t step);

/// Network architecture used for the student of `teacher`.
NetConfig student_config(const NetConfig& teacher);

struct DistillConfig {
  MdConfig md;
  SgdConfig sgd;
  std::size_t epochs = 0;
  double lr_power = 0.0;
};

/// Trains `student` against a frozen `teacher` on the train split.
/// Teacher taps are computed once per sample and reused.
void distill(const PlifNet<float>& teacher, PlifNet<float>& student, const TrainingData& data,
             const DistillConfig& cfg, const EpochHook& on_epoch = {});

/// RGB-only inference wrapper around a trained student.
class DistilledStudent {
 public:
  explicit DistilledStudent(PlifNet<float> net);

  /// [N,3,H,W] image to [N,2,H,W] logits.
  Tensor<float> predict(const Tensor<float>& rgb) const;
  const PlifNet<float>& net() const { return net_; }

 private:
  PlifNet<float> net_;
};

}  // namespace plroad
