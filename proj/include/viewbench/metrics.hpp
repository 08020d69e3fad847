#pragma once

// Segmentation scores and the viewpoint-degradation analytics built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "viewbench/error.hpp"
#include "viewbench/featstore.hpp"

namespace viewbench {

/// C x C pixel counts indexed (ground truth, prediction). Merging is
/// associative and commutative, so partial accumulators can be combined in
/// any order.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::uint32_t num_classes = 0)
      : n_(num_classes), counts_(std::size_t{num_classes} * num_classes, 0) {}

  std::uint32_t num_classes() const { return n_; }
  std::uint64_t at(ClassId gt, ClassId pred) const { return counts_[std::size_t{gt} * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto c : counts_) t += c;
    return t;
  }

  void accumulate(const PixelMask& gt, const PixelMask& pred) {
    if (gt.height != pred.height || gt.width != pred.width) {
      throw DomainError("mask shapes differ: " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                        " vs " + std::to_string(pred.height) + "x" + std::to_string(pred.width));
    }
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      const ClassId g = gt.labels[i], p = pred.labels[i];
      if (g >= n_ || p >= n_) throw DomainError("class id exceeds confusion size " + std::to_string(n_));
      ++counts_[std::size_t{g} * n_ + p];
    }
  }

  void merge(const ConfusionAccumulator& other) {
    if (other.n_ != n_) throw DomainError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  friend bool operator==(const ConfusionAccumulator&, const ConfusionAccumulator&) = default;

 private:
  std::uint32_t n_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionAccumulator accumulate(ConfusionAccumulator confusion, const PixelMask& gt, const PixelMask& pred) {
  confusion.accumulate(gt, pred);
  return confusion;
}

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // nullopt: zero union
  double miou = 0.0;
  double std_dev = 0.0;  // population, over present classes
  std::size_t present() const {
    return static_cast<std::size_t>(std::count_if(per_class.begin(), per_class.end(), [](auto& v) { return v.has_value(); }));
  }
};

inline IoUReport iou_report(const ConfusionAccumulator& cm) {
  if (cm.total() == 0) throw DomainError("confusion matrix is empty");
  const auto n = cm.num_classes();
  IoUReport r;
  r.per_class.resize(n);
  std::vector<double> present;
  for (ClassId c = 0; c < n; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (ClassId o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
    present.push_back(*r.per_class[c]);
  }
  double sum = 0.0;
  for (const double v : present) sum += v;
  r.miou = sum / static_cast<double>(present.size());
  double sq = 0.0;
  for (const double v : present) sq += (v - r.miou) * (v - r.miou);
  r.std_dev = std::sqrt(sq / static_cast<double>(present.size()));
  return r;
}

// --- degradation ------------------------------------------------------------

inline constexpr double kBreakingThreshold = -0.1;

struct DegradationCurve {
  std::vector<double> bins;        // ascending, first is the 0 degree bin
  std::vector<double> miou;
  std::vector<double> normalized;  // miou / miou at 0 degrees
  std::vector<double> drops;       // drops[i] = normalized[i] - normalized[i-1]; drops[0] = 0
};

inline DegradationCurve degradation_curve(const std::map<double, double>& per_bin_miou) {
  const auto zero = per_bin_miou.find(0.0);
  if (zero == per_bin_miou.end()) throw DomainError("curve has no 0 degree bin");
  if (!(zero->second > 0.0)) throw DomainError("0 degree mIoU is zero; normalization undefined");
  if (per_bin_miou.begin()->first < 0.0) throw DomainError("negative bin angle");
  DegradationCurve c;
  for (const auto& [bin, m] : per_bin_miou) {
    c.bins.push_back(bin);
    c.miou.push_back(m);
    c.normalized.push_back(bin == 0.0 ? 1.0 : m / zero->second);
  }
  c.drops.push_back(0.0);
  for (std::size_t i = 1; i < c.normalized.size(); ++i) c.drops.push_back(c.normalized[i] - c.normalized[i - 1]);
  return c;
}

struct BreakingPoint {
  std::optional<double> bin;
  double biggest_drop = 0.0;
};

/// Earliest bin whose drop is at or below `threshold`.
inline BreakingPoint breaking_point(const DegradationCurve& curve, double threshold = kBreakingThreshold) {
  BreakingPoint bp;
  for (std::size_t i = 1; i < curve.drops.size(); ++i) {
    if (i == 1 || curve.drops[i] < bp.biggest_drop) bp.biggest_drop = curve.drops[i];
    if (!bp.bin && curve.drops[i] <= threshold) bp.bin = curve.bins[i];
  }
  return bp;
}

// --- memory gains -----------------------------------------------------------

/// model -> capacity -> difficulty -> mIoU
using CapacityResults = std::map<std::string, std::map<std::size_t, std::map<std::string, double>>>;

struct GainCell {
  std::string model;       // "Average" for the per-task row
  std::string difficulty;  // "Average" for the per-model column
  std::size_t from = 0;
  std::size_t to = 0;
  std::optional<double> gain;
};

struct GainTable {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::string> models;
  std::vector<std::string> difficulties;
  std::vector<GainCell> cells;

  std::optional<double> get(const std::string& model, const std::string& difficulty, std::size_t from,
                            std::size_t to) const {
    for (const auto& c : cells) {
      if (c.model == model && c.difficulty == difficulty && c.from == from && c.to == to) return c.gain;
    }
    return std::nullopt;
  }
};

inline const std::string kAverage = "Average";

/// Capacity pairs compared: every consecutive pair, plus smallest to
/// largest when there are more than two.
inline std::vector<std::pair<std::size_t, std::size_t>> capacity_pairs(std::vector<std::size_t> caps) {
  std::sort(caps.begin(), caps.end());
  caps.erase(std::unique(caps.begin(), caps.end()), caps.end());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 1; i < caps.size(); ++i) out.emplace_back(caps[i - 1], caps[i]);
  if (caps.size() > 2) out.emplace_back(caps.front(), caps.back());
  return out;
}

/// Absolute mIoU differences between capacities, per model and difficulty,
/// with per-model (across difficulties) and per-task (across models)
/// averages. Missing cells are reported absent and left out of averages.
inline GainTable memory_gains(const CapacityResults& results, const std::vector<std::string>& difficulty_order) {
  GainTable t;
  std::vector<std::size_t> caps;
  for (const auto& [model, by_cap] : results) {
    t.models.push_back(model);
    for (const auto& [cap, _] : by_cap) caps.push_back(cap);
  }
  t.pairs = capacity_pairs(caps);
  if (t.pairs.empty()) throw DomainError("memory gains need at least two capacities");
  t.difficulties = difficulty_order;

  auto lookup = [&](const std::string& m, std::size_t cap, const std::string& d) -> std::optional<double> {
    const auto& by_cap = results.at(m);
    const auto c = by_cap.find(cap);
    if (c == by_cap.end()) return std::nullopt;
    const auto v = c->second.find(d);
    if (v == c->second.end()) return std::nullopt;
    return v->second;
  };
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
  };

  for (const auto& [from, to] : t.pairs) {
    std::map<std::string, std::vector<double>> per_task;
    std::vector<double> all;
    for (const auto& m : t.models) {
      std::vector<double> row;
      for (const auto& d : t.difficulties) {
        const auto a = lookup(m, from, d), b = lookup(m, to, d);
        std::optional<double> g;
        if (a && b) {
          g = *b - *a;
          row.push_back(*g);
          per_task[d].push_back(*g);
          all.push_back(*g);
        }
        t.cells.push_back({m, d, from, to, g});
      }
      t.cells.push_back({m, kAverage, from, to, mean(row)});
    }
    for (const auto& d : t.difficulties) t.cells.push_back({kAverage, d, from, to, mean(per_task[d])});
    t.cells.push_back({kAverage, kAverage, from, to, mean(all)});
  }
  return t;
}

/// Rounds to three decimals for display.
inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

/// Fixed six-decimal formatting used in every CSV.
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s.erase(0, 1);
  return s;
}

}  // namespace viewbench
