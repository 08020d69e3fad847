#pragma once

// Retrieved neighbours -> per-patch class distributions -> pixel masks.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "viewbench/featstore.hpp"
#include "viewbench/membank.hpp"

namespace viewbench {

inline constexpr double kDefaultTemperature = 0.02;

/// Softmax of similarity / temperature over the neighbours, summed per label.
inline std::vector<double> aggregate_labels(const NeighborSet& neighbors, std::span<const ClassId> labels,
                                            std::uint32_t num_classes, double temperature = kDefaultTemperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  if (neighbors.empty()) throw DomainError("cannot aggregate an empty neighbour set");
  double top = neighbors.front().similarity;
  for (const auto& n : neighbors) top = std::max(top, n.similarity);
  std::vector<double> probs(num_classes, 0.0);
  double z = 0.0;
  for (const auto& n : neighbors) {
    const ClassId l = labels[n.index];
    if (l >= num_classes) throw DomainError("neighbour label " + std::to_string(l) + " exceeds class count");
    const double w = std::exp((n.similarity - top) / temperature);
    probs[l] += w;
    z += w;
  }
  for (auto& p : probs) p /= z;
  return probs;
}

struct SegmenterOptions {
  std::size_t k = kDefaultK;
  double temperature = kDefaultTemperature;
  Interpolation interpolation = Interpolation::Bilinear;
  unsigned threads = default_threads();
};

struct SegmentationPrediction {
  DistributionGrid patch_dist;
  PixelMask mask;
};

/// Per-patch distributions for a query feature map.
inline DistributionGrid predict_patches(const PatchFeatureMap& query, const MemoryBank& bank,
                                        std::uint32_t num_classes, const SegmenterOptions& opt = {}) {
  if (query.dim != bank.dim()) {
    throw StructuralError("query dim " + std::to_string(query.dim) + " != bank dim " + std::to_string(bank.dim()));
  }
  const auto hits = search(bank, query.data, opt.k, opt.threads);
  DistributionGrid dist(query.grid_h, query.grid_w, num_classes);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto p = aggregate_labels(hits[i], bank.labels(), num_classes, opt.temperature);
    std::copy(p.begin(), p.end(), dist.cell(i).begin());
  }
  return dist;
}

inline SegmentationPrediction predict_mask(const PatchFeatureMap& query, const MemoryBank& bank,
                                           std::uint32_t num_classes, std::uint32_t out_h, std::uint32_t out_w,
                                           const SegmenterOptions& opt = {}) {
  SegmentationPrediction pred;
  pred.patch_dist = predict_patches(query, bank, num_classes, opt);
  pred.mask = upsample_distribution(pred.patch_dist, out_h, out_w, opt.interpolation);
  return pred;
}

/// Argmax label per patch.
inline LabelGrid patch_labels(const DistributionGrid& dist) {
  LabelGrid g{dist.grid_h, dist.grid_w, std::vector<ClassId>(std::size_t{dist.grid_h} * dist.grid_w)};
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    const auto p = dist.cell(i);
    g.labels[i] = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return g;
}

}  // namespace viewbench
