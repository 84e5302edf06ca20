#include "plroad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "plroad/errors.hpp"

namespace plroad {

namespace {

void check_inputs(std::span<const float> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) {
    throw ConfigError("metrics: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                      " labels");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0f && scores[i] <= 1.0f)) {
      throw ConfigError("metrics: score " + std::to_string(scores[i]) + " at pixel " + std::to_string(i) +
                        " is outside [0, 1]");
    }
    if (labels[i] != 0.0f && labels[i] != 1.0f) {
      throw ConfigError("metrics: label at pixel " + std::to_string(i) + " is not 0 or 1");
    }
  }
}

void tally(ConfusionCounts& c, bool predicted, bool road) {
  if (predicted) {
    (road ? c.tp : c.fp) += 1;
  } else {
    (road ? c.fn : c.tn) += 1;
  }
}

double ratio(std::uint64_t num, std::uint64_t den, const char* name, std::vector<std::string>& notes) {
  if (den == 0) {
    notes.push_back(std::string(name) + " undefined (zero denominator), reported as 0");
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion(std::span<const float> scores, std::span<const float> labels, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("confusion: threshold must lie in [0, 1]");
  check_inputs(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) tally(c, scores[i] >= threshold, labels[i] == 1.0f);
  return c;
}

double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

Rates rates(const ConfusionCounts& c) {
  Rates r;
  r.pre = ratio(c.tp, c.tp + c.fp, "PRE", r.notes);
  r.rec = ratio(c.tp, c.tp + c.fn, "REC", r.notes);
  r.f = f_measure(r.pre, r.rec);
  r.fpr = ratio(c.fp, c.fp + c.tn, "FPR", r.notes);
  r.fnr = ratio(c.fn, c.fn + c.tp, "FNR", r.notes);
  r.acc = ratio(c.tp + c.tn, c.total(), "ACC", r.notes);
  r.iou = ratio(c.tp, c.tp + c.fp + c.fn, "IoU", r.notes);
  return r;
}

std::size_t threshold_bin(float score) {
  const double s = score;
  long k = std::lround(std::floor(s * 255.0));
  k = std::clamp(k, 0L, 255L);
  while (k < 255 && s >= static_cast<double>(k + 1) / 255.0) ++k;
  while (k > 0 && s < static_cast<double>(k) / 255.0) --k;
  return static_cast<std::size_t>(k);
}

void ScoreAccumulator::add(std::span<const float> scores, std::span<const float> labels) {
  check_inputs(scores, labels);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool road = labels[i] == 1.0f;
    (road ? pos_ : neg_)[threshold_bin(scores[i])] += 1;
    tally(half_, scores[i] >= 0.5f, road);
  }
  ++images_;
  pixels_ += scores.size();
}

void ScoreAccumulator::merge(const ScoreAccumulator& other) {
  for (std::size_t b = 0; b < kThresholdSteps; ++b) {
    pos_[b] += other.pos_[b];
    neg_[b] += other.neg_[b];
  }
  half_.tp += other.half_.tp;
  half_.fp += other.half_.fp;
  half_.tn += other.half_.tn;
  half_.fn += other.half_.fn;
  images_ += other.images_;
  pixels_ += other.pixels_;
}

ConfusionCounts ScoreAccumulator::at(std::size_t k) const {
  if (k >= kThresholdSteps) throw ConfigError("threshold index out of range");
  ConfusionCounts c;
  for (std::size_t b = 0; b < kThresholdSteps; ++b) {
    if (b >= k) {
      c.tp += pos_[b];
      c.fp += neg_[b];
    } else {
      c.fn += pos_[b];
      c.tn += neg_[b];
    }
  }
  return c;
}

SweepResult max_f_sweep(const ScoreAccumulator& acc) {
  if (acc.pixels() == 0) throw ConfigError("max_f_sweep: empty dataset");
  SweepResult best;
  for (std::size_t k = 0; k < kThresholdSteps; ++k) {
    const double f = rates(acc.at(k)).f;
    if (f > best.max_f) best = {f, k};
  }
  return best;
}

double average_precision(const ScoreAccumulator& acc) {
  if (acc.pixels() == 0) throw ConfigError("average_precision: empty dataset");
  std::vector<Rates> sweep;
  for (std::size_t k = 0; k < kThresholdSteps; ++k) sweep.push_back(rates(acc.at(k)));
  double total = 0.0;
  for (int level = 0; level <= 10; ++level) {
    const double r = level / 10.0;
    double best = 0.0;
    for (const auto& s : sweep) {
      if (s.rec >= r) best = std::max(best, s.pre);
    }
    total += best;
  }
  return total / 11.0;
}

EvalReport make_report(const ScoreAccumulator& acc) {
  EvalReport rep;
  const SweepResult sweep = max_f_sweep(acc);
  const Rates at_best = rates(acc.at(sweep.best_k));
  const Rates hard = rates(acc.at_half());
  rep.max_f = 100.0 * sweep.max_f;
  rep.ap = 100.0 * average_precision(acc);
  rep.threshold = static_cast<double>(sweep.best_k) / 255.0;
  rep.pre = 100.0 * at_best.pre;
  rep.rec = 100.0 * at_best.rec;
  rep.fpr = 100.0 * at_best.fpr;
  rep.fnr = 100.0 - rep.rec;
  rep.acc = 100.0 * hard.acc;
  rep.f_score = 100.0 * hard.f;
  rep.iou = 100.0 * hard.iou;
  rep.images = acc.images();
  rep.pixels = acc.pixels();
  for (const auto& n : at_best.notes) rep.notes.push_back("at MaxF threshold: " + n);
  for (const auto& n : hard.notes) rep.notes.push_back("at threshold 0.5: " + n);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["MaxF"] = max_f;
  j["AP"] = ap;
  j["PRE"] = pre;
  j["REC"] = rec;
  j["FPR"] = fpr;
  j["FNR"] = fnr;
  j["ACC"] = acc;
  j["F-score"] = f_score;
  j["IoU"] = iou;
  j["threshold"] = threshold;
  j["images"] = images;
  j["pixels"] = pixels;
  j["conventions"] = {"image-space evaluation", "thresholds k/255, k = 0..255, pooled counts",
                      "AP: 11-point interpolated", "ACC, F-score, IoU at score >= 0.5"};
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table(const std::string& title) const {
  char buf[512];
  std::ostringstream out;
  out << title << "\n";
  std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s | %8s %8s %8s\n", "MaxF", "AP", "PRE", "REC", "FPR", "FNR",
                "ACC", "F-score", "IoU");
  out << buf;
  std::snprintf(buf, sizeof buf, "%8.2f %8.2f %8.2f %8.2f %8.2f %8.2f | %8.2f %8.2f %8.2f\n", max_f, ap, pre, rec, fpr,
                fnr, acc, f_score, iou);
  out << buf;
  for (const auto& n : notes) out << "note: " << n << "\n";
  return out.str();
}

std::string pr_curve_csv(const ScoreAccumulator& acc) {
  std::ostringstream out;
  out << "threshold,pre,rec\n";
  char buf[96];
  for (std::size_t k = 0; k < kThresholdSteps; ++k) {
    const Rates r = rates(acc.at(k));
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", static_cast<double>(k) / 255.0, r.pre, r.rec);
    out << buf;
  }
  return out.str();
}

}  // namespace plroad
