#pragma once

// End-to-end runs: cross-viewpoint evaluation, breaking-point analysis, and
// the memory-size sweep, with their CSV outputs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "viewbench/binning.hpp"
#include "viewbench/config.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/membank.hpp"
#include "viewbench/metrics.hpp"
#include "viewbench/parallel.hpp"
#include "viewbench/segmenter.hpp"

namespace viewbench {

struct BinScore {
  std::string model;
  std::string difficulty;
  std::size_t capacity = 0;
  double bin = 0.0;
  bool reference = false;
  IoUReport report;
};

/// Aggregate over every validation image of one (model, difficulty, capacity).
struct CellScore {
  std::string model;
  std::string difficulty;
  std::size_t capacity = 0;
  IoUReport validation;
};

struct EvaluationResults {
  std::vector<BinScore> bins;
  std::vector<CellScore> cells;

  void append(const EvaluationResults& other) {
    bins.insert(bins.end(), other.bins.begin(), other.bins.end());
    cells.insert(cells.end(), other.cells.begin(), other.cells.end());
  }
};

inline std::filesystem::path prediction_path(const RunConfig& cfg, const std::string& model,
                                             const std::string& difficulty, std::size_t capacity,
                                             const std::string& key) {
  return cfg.output_root / "predictions" / model / difficulty / ("cap" + std::to_string(capacity)) / (key + ".png");
}

/// Scores one (model, difficulty, capacity): builds the bank from the
/// reference bins, then predicts every reference- and validation-bin image.
/// Images are processed `chunk_size` at a time; the result does not depend
/// on the chunking. k is capped at the bank size.
inline std::map<double, ConfusionAccumulator> evaluate_cell(const RunConfig& cfg, const SubsetManifest& manifest,
                                                            const ModelFeatures& model, const DifficultySpec& diff,
                                                            std::size_t capacity) {
  const DiskFrameSource source(manifest, model.feature_root);
  const MemoryBank full = build_bank(manifest, diff.reference_set(), source, {capacity, cfg.seed, cfg.sampling});
  const MemoryBank bank = full.sharded(std::min(cfg.shards, full.size()));
  const std::uint32_t nc = manifest.num_classes();

  std::set<double> bins(diff.reference_bins.begin(), diff.reference_bins.end());
  bins.insert(diff.validation_bins.begin(), diff.validation_bins.end());
  const auto frames = frames_in_bins(manifest, bins);

  std::map<double, ConfusionAccumulator> per_bin;
  for (const double b : bins) per_bin.emplace(b, ConfusionAccumulator(nc));

  SegmenterOptions seg{std::min(cfg.k, bank.size()), cfg.temperature, cfg.interpolation, 1};
  const unsigned threads = cfg.worker_threads();
  for (std::size_t start = 0; start < frames.size(); start += cfg.chunk_size) {
    const std::size_t n = std::min(cfg.chunk_size, frames.size() - start);
    std::vector<ConfusionAccumulator> partial(n, ConfusionAccumulator(nc));
    SegmenterOptions inner = seg;
    inner.threads = std::max(1u, threads / static_cast<unsigned>(n));
    parallel_for(
        n,
        [&](std::size_t i) {
          const auto& ref = frames[start + i];
          const auto query = source.features(ref);
          const auto gt = load_frame_mask(manifest, *ref.category, *ref.frame);
          const auto pred = predict_mask(query, bank, nc, gt.height, gt.width, inner);
          partial[i].accumulate(gt, pred.mask);
          if (cfg.write_predictions) {
            const auto path = prediction_path(cfg, model.name, diff.name, capacity, ref.key());
            write_mask(path, pred.mask);
            if (cfg.dump_distributions) {
              auto dist_path = path;
              dist_path.replace_extension(".dist.pfv");
              write_distribution_file(pred.patch_dist, dist_path);
            }
          }
        },
        std::min<unsigned>(threads, static_cast<unsigned>(n)));
    for (std::size_t i = 0; i < n; ++i) per_bin.at(frames[start + i].frame->center).merge(partial[i]);
  }
  return per_bin;
}

inline EvaluationResults evaluate_capacity(const RunConfig& cfg, const SubsetManifest& manifest, std::size_t capacity) {
  EvaluationResults out;
  for (const auto& model : cfg.models) {
    for (const auto& dname : cfg.difficulties) {
      const auto& diff = difficulty_by_name(dname);
      const auto per_bin = evaluate_cell(cfg, manifest, model, diff, capacity);
      ConfusionAccumulator validation(manifest.num_classes());
      for (const auto& [bin, cm] : per_bin) {
        const bool is_ref = diff.is_reference(bin);
        if (cm.total() == 0) continue;
        out.bins.push_back({model.name, diff.name, capacity, bin, is_ref, iou_report(cm)});
        if (!is_ref) validation.merge(cm);
      }
      if (validation.total() == 0) throw DomainError("no validation images for " + diff.name);
      out.cells.push_back({model.name, diff.name, capacity, iou_report(validation)});
    }
  }
  return out;
}

// --- CSV --------------------------------------------------------------------

inline std::string iou_csv(const EvaluationResults& r) {
  std::ostringstream s;
  s << "model,difficulty,capacity,bin_deg,class_id,iou\n";
  for (const auto& b : r.bins) {
    for (std::size_t c = 0; c < b.report.per_class.size(); ++c) {
      if (!b.report.per_class[c]) continue;
      s << b.model << ',' << b.difficulty << ',' << b.capacity << ',' << format_degrees(b.bin) << ',' << c << ','
        << fmt6(*b.report.per_class[c]) << '\n';
    }
  }
  return s.str();
}

inline std::string summary_csv(const EvaluationResults& r) {
  std::ostringstream s;
  s << "model,difficulty,capacity,miou,std\n";
  for (const auto& c : r.cells) {
    s << c.model << ',' << c.difficulty << ',' << c.capacity << ',' << fmt6(c.validation.miou) << ','
      << fmt6(c.validation.std_dev) << '\n';
  }
  return s.str();
}

/// Per-bin scores; `role` tells reference bins (stored in the bank) from
/// validation bins.
inline std::string bins_csv(const EvaluationResults& r) {
  std::ostringstream s;
  s << "model,difficulty,capacity,bin_deg,role,miou,std\n";
  for (const auto& b : r.bins) {
    s << b.model << ',' << b.difficulty << ',' << b.capacity << ',' << format_degrees(b.bin) << ','
      << (b.reference ? "reference" : "validation") << ',' << fmt6(b.report.miou) << ',' << fmt6(b.report.std_dev)
      << '\n';
  }
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_all_atomic(path, text);
}

inline void write_evaluation(const std::filesystem::path& dir, const EvaluationResults& r) {
  write_text(dir / "iou.csv", iou_csv(r));
  write_text(dir / "summary.csv", summary_csv(r));
  write_text(dir / "bins.csv", bins_csv(r));
}

/// Cross-viewpoint generalization at `cfg.capacity`.
inline EvaluationResults run_experiment_a(const RunConfig& cfg) {
  cfg.validate();
  const auto manifest = load_manifest(cfg.manifest);
  auto results = evaluate_capacity(cfg, manifest, cfg.capacity);
  write_evaluation(cfg.output_root, results);
  return results;
}

// --- breaking points --------------------------------------------------------

struct ModelCurve {
  std::string model;
  DegradationCurve curve;
  BreakingPoint breaking;
};

/// model -> bin -> mIoU, including the 0 degree bin.
using PerBinMiou = std::map<std::string, std::map<double, double>>;

inline std::vector<ModelCurve> breaking_point_analysis(const PerBinMiou& per_model,
                                                       double threshold = kBreakingThreshold) {
  std::vector<ModelCurve> out;
  for (const auto& [model, bins] : per_model) {
    try {
      auto curve = degradation_curve(bins);
      auto bp = breaking_point(curve, threshold);
      out.push_back({model, std::move(curve), bp});
    } catch (const DomainError& e) {
      throw DomainError(model + ": " + e.what());
    }
  }
  return out;
}

inline PerBinMiou per_bin_miou(const EvaluationResults& r, const std::string& difficulty, std::size_t capacity) {
  PerBinMiou out;
  for (const auto& b : r.bins) {
    if (b.difficulty == difficulty && b.capacity == capacity) out[b.model][b.bin] = b.report.miou;
  }
  return out;
}

inline std::string curve_csv(const std::vector<ModelCurve>& curves) {
  std::ostringstream s;
  s << "model,bin_deg,miou,normalized,drop\n";
  for (const auto& m : curves) {
    for (std::size_t i = 0; i < m.curve.bins.size(); ++i) {
      s << m.model << ',' << format_degrees(m.curve.bins[i]) << ',' << fmt6(m.curve.miou[i]) << ','
        << fmt6(m.curve.normalized[i]) << ',' << (i == 0 ? std::string() : fmt6(m.curve.drops[i])) << '\n';
    }
  }
  return s.str();
}

inline std::string breaking_points_csv(const std::vector<ModelCurve>& curves) {
  std::ostringstream s;
  s << "model,breaking_bin_deg,biggest_drop\n";
  for (const auto& m : curves) {
    s << m.model << ',' << (m.breaking.bin ? format_degrees(*m.breaking.bin) : std::string("None")) << ','
      << fmt6(m.breaking.biggest_drop) << '\n';
  }
  return s.str();
}

/// Wide plot data: one row per bin, one column per model.
inline std::string curve_plot_csv(const std::vector<ModelCurve>& curves, bool normalized) {
  std::set<double> bins;
  for (const auto& m : curves) bins.insert(m.curve.bins.begin(), m.curve.bins.end());
  std::ostringstream s;
  s << "bin_deg";
  for (const auto& m : curves) s << ',' << m.model;
  s << '\n';
  for (const double b : bins) {
    s << format_degrees(b);
    for (const auto& m : curves) {
      const auto it = std::find(m.curve.bins.begin(), m.curve.bins.end(), b);
      s << ',';
      if (it != m.curve.bins.end()) {
        const auto i = static_cast<std::size_t>(it - m.curve.bins.begin());
        s << fmt6(normalized ? m.curve.normalized[i] : m.curve.miou[i]);
      }
    }
    s << '\n';
  }
  return s.str();
}

inline void write_curves(const std::filesystem::path& dir, const std::vector<ModelCurve>& curves) {
  write_text(dir / "curve.csv", curve_csv(curves));
  write_text(dir / "breaking_points.csv", breaking_points_csv(curves));
  write_text(dir / "curve_raw.csv", curve_plot_csv(curves, false));
  write_text(dir / "curve_normalized.csv", curve_plot_csv(curves, true));
}

/// Breaking points under the single-reference-bin split.
inline std::vector<ModelCurve> run_experiment_b(const RunConfig& cfg) {
  RunConfig extreme = cfg;
  extreme.difficulties = {"Extreme"};
  extreme.validate();
  const auto manifest = load_manifest(cfg.manifest);
  const auto results = evaluate_capacity(extreme, manifest, cfg.capacity);
  write_evaluation(cfg.output_root / "extreme", results);
  const auto curves = breaking_point_analysis(per_bin_miou(results, "Extreme", cfg.capacity));
  write_curves(cfg.output_root, curves);
  return curves;
}

/// Reads `bins.csv` rows for one difficulty and capacity (all capacities
/// when `capacity` is 0).
inline PerBinMiou read_bins_csv(const std::filesystem::path& path, const std::string& difficulty,
                                std::size_t capacity = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  PerBinMiou out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 7) throw ParseError("expected 7 columns in bins.csv", lineno);
    if (f[1] != difficulty) continue;
    try {
      if (capacity && std::stoull(f[2]) != capacity) continue;
      out[f[0]][std::stod(f[3])] = std::stod(f[5]);
    } catch (const std::exception&) {
      throw ParseError("non-numeric field in bins.csv", lineno);
    }
  }
  return out;
}

// --- memory sweep -----------------------------------------------------------

inline CapacityResults capacity_results(const EvaluationResults& r) {
  CapacityResults out;
  for (const auto& c : r.cells) out[c.model][c.capacity][c.difficulty] = c.validation.miou;
  return out;
}

inline std::string gains_csv(const GainTable& t) {
  std::ostringstream s;
  s << "model,difficulty,pair,gain\n";
  for (const auto& c : t.cells) {
    s << c.model << ',' << c.difficulty << ',' << c.from << "->" << c.to << ',' << (c.gain ? fmt6(*c.gain) : "")
      << '\n';
  }
  return s.str();
}

struct SweepResults {
  EvaluationResults evaluation;
  GainTable gains;
};

inline SweepResults run_experiment_c(const RunConfig& cfg) {
  cfg.validate();
  if (capacity_pairs(cfg.capacities).empty()) throw DomainError("memory sweep needs at least two capacities");
  const auto manifest = load_manifest(cfg.manifest);
  SweepResults out;
  std::vector<std::size_t> caps = cfg.capacities;
  std::sort(caps.begin(), caps.end());
  caps.erase(std::unique(caps.begin(), caps.end()), caps.end());
  for (const auto cap : caps) out.evaluation.append(evaluate_capacity(cfg, manifest, cap));
  out.gains = memory_gains(capacity_results(out.evaluation), cfg.difficulties);
  write_evaluation(cfg.output_root, out.evaluation);
  write_text(cfg.output_root / "gains.csv", gains_csv(out.gains));
  return out;
}

}  // namespace viewbench
