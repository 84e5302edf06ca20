#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace plroad {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Road iff score >= threshold. Labels are 0 (background) or 1 (road).
ConfusionCounts confusion(std::span<const float> scores, std::span<const float> labels, double threshold);

/// Harmonic mean; 0 when both inputs are 0. Unit-agnostic (fractions or %).
double f_measure(double precision, double recall);

/// Ratios as fractions. A zero denominator yields 0 and a note.
struct Rates {
  double pre = 0, rec = 0, f = 0, fpr = 0, fnr = 0, acc = 0, iou = 0;
  std::vector<std::string> notes;
};
Rates rates(const ConfusionCounts& c);

inline constexpr std::size_t kThresholdSteps = 256;  // thresholds k / 255

/// Largest k in 0..255 with score >= k / 255 (exact comparison).
std::size_t threshold_bin(float score);

/// Pooled per-threshold counts over any number of images. Integer sums, so
/// the order in which images are added does not matter.
class ScoreAccumulator {
 public:
  void add(std::span<const float> scores, std::span<const float> labels);
  void merge(const ScoreAccumulator& other);

  /// Counts at threshold k / 255.
  ConfusionCounts at(std::size_t k) const;
  /// Counts at threshold 0.5.
  const ConfusionCounts& at_half() const { return half_; }
  std::size_t images() const { return images_; }
  std::uint64_t pixels() const { return pixels_; }

 private:
  std::array<std::uint64_t, kThresholdSteps> pos_{}, neg_{};
  ConfusionCounts half_;
  std::size_t images_ = 0;
  std::uint64_t pixels_ = 0;
};

struct SweepResult {
  double max_f = 0;          // fraction
  std::size_t best_k = 0;    // threshold = best_k / 255
};
/// Lowest threshold attaining the maximum F over the 256-step grid.
SweepResult max_f_sweep(const ScoreAccumulator& acc);

/// 11-point interpolated AP (fraction): mean over recall levels 0, 0.1, .., 1
/// of the best precision among grid thresholds with recall >= level.
double average_precision(const ScoreAccumulator& acc);

/// Percentages. PRE, REC, FPR, FNR at the MaxF threshold; ACC, F-score and
/// IoU of the hard prediction score >= 0.5.
struct EvalReport {
  double max_f = 0, ap = 0, pre = 0, rec = 0, fpr = 0, fnr = 0;
  double acc = 0, f_score = 0, iou = 0;
  double threshold = 0;
  std::size_t images = 0;
  std::uint64_t pixels = 0;
  std::vector<std::string> notes;

  std::string to_json() const;
  /// Aligned plain-text table, KITTI columns then R2D columns.
  std::string to_table(const std::string& title) const;
};

EvalReport make_report(const ScoreAccumulator& acc);

/// threshold,pre,rec rows for k = 0..255.
std::string pr_curve_csv(const ScoreAccumulator& acc);

}  // namespace plroad
