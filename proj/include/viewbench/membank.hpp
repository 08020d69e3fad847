#pragma once

// Capacity-bounded memory of unit-normalized patch features with labels,
// answering exact top-k cosine queries over contiguous shards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "viewbench/binning.hpp"
#include "viewbench/error.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/parallel.hpp"
#include "viewbench/rng.hpp"

namespace viewbench {

inline constexpr std::size_t kDefaultK = 30;

struct EntrySource {
  std::string instance;  // "<class dir>/<instance id>"
  double bin_deg = 0.0;
  std::uint32_t cell = 0;

  friend bool operator==(const EntrySource&, const EntrySource&) = default;
};

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

using NeighborSet = std::vector<Neighbor>;

/// Search order: similarity descending, then entry index ascending.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
  return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
}

/// Scales `v` to unit length into `out`. Throws on zero or non-finite norm.
inline void normalize_into(std::span<const float> v, std::span<float> out, const std::string& what) {
  double sq = 0.0;
  for (const float x : v) sq += static_cast<double>(x) * x;
  const double n = std::sqrt(sq);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError(what + " has zero or non-finite norm");
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
}

class MemoryBank {
 public:
  struct Shard {
    std::size_t begin = 0;
    std::size_t end = 0;
    friend bool operator==(const Shard&, const Shard&) = default;
  };

  MemoryBank() = default;

  /// Takes ownership of row-major `features` (size = labels.size() * dim)
  /// and normalizes each row. The bank starts as a single shard.
  MemoryBank(std::uint32_t dim, std::size_t capacity, std::vector<float> features, std::vector<ClassId> labels,
             std::vector<EntrySource> sources = {})
      : dim_(dim), capacity_(capacity), features_(std::move(features)), labels_(std::move(labels)),
        sources_(std::move(sources)) {
    if (dim_ == 0) throw DomainError("bank dimension must be positive");
    if (capacity_ == 0) throw DomainError("bank capacity must be positive");
    if (features_.size() != labels_.size() * dim_) throw StructuralError("feature count does not match labels");
    if (!sources_.empty() && sources_.size() != labels_.size()) throw StructuralError("provenance count mismatch");
    if (labels_.size() > capacity_) throw DomainError("entries exceed capacity");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      auto row = std::span<float>(features_).subspan(i * dim_, dim_);
      normalize_into(row, row, "bank entry " + std::to_string(i));
    }
    shards_ = {{0, labels_.size()}};
  }

  std::uint32_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::span<const float> feature(std::size_t i) const { return std::span<const float>(features_).subspan(i * dim_, dim_); }
  ClassId label(std::size_t i) const { return labels_[i]; }
  const std::vector<ClassId>& labels() const { return labels_; }
  const std::vector<EntrySource>& sources() const { return sources_; }
  const std::vector<Shard>& shards() const { return shards_; }

  /// Same entries, partitioned into `n` contiguous shards whose sizes differ
  /// by at most one.
  MemoryBank sharded(std::size_t n) const {
    if (n < 1 || n > size()) {
      throw DomainError("shard count " + std::to_string(n) + " outside [1, " + std::to_string(size()) + "]");
    }
    MemoryBank out = *this;
    out.shards_.clear();
    for (std::size_t s = 0; s < n; ++s) out.shards_.push_back({size() * s / n, size() * (s + 1) / n});
    return out;
  }

 private:
  std::uint32_t dim_ = 0;
  std::size_t capacity_ = 0;
  std::vector<float> features_;
  std::vector<ClassId> labels_;
  std::vector<EntrySource> sources_;
  std::vector<Shard> shards_;
};

inline MemoryBank shard_bank(const MemoryBank& bank, std::size_t n_shards) { return bank.sharded(n_shards); }

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline void keep_top_k(std::vector<Neighbor>& v, std::size_t k) {
  if (v.size() > k) {
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), ranks_before);
    v.resize(k);
  } else {
    std::sort(v.begin(), v.end(), ranks_before);
  }
}

}  // namespace detail

/// Exact top-k for row-major `queries` (n x dim). Each shard is ranked on
/// its own and the per-shard lists are merged, which yields the same result
/// as one unsharded scan.
inline std::vector<NeighborSet> search(const MemoryBank& bank, std::span<const float> queries, std::size_t k,
                                       unsigned threads = default_threads()) {
  const std::size_t dim = bank.dim();
  if (dim == 0 || queries.size() % dim != 0) throw StructuralError("query length is not a multiple of bank dim");
  if (k == 0 || k > bank.size()) {
    throw DomainError("k = " + std::to_string(k) + " must be in [1, " + std::to_string(bank.size()) + "]");
  }
  const std::size_t nq = queries.size() / dim;
  std::vector<NeighborSet> results(nq);
  parallel_for(
      nq,
      [&](std::size_t q) {
        std::vector<float> unit(dim);
        normalize_into(queries.subspan(q * dim, dim), unit, "query " + std::to_string(q));
        NeighborSet merged;
        std::vector<Neighbor> local;
        for (const auto& shard : bank.shards()) {
          local.clear();
          for (std::size_t i = shard.begin; i < shard.end; ++i) {
            local.push_back({i, detail::dot(bank.feature(i), unit)});
          }
          detail::keep_top_k(local, k);
          merged.insert(merged.end(), local.begin(), local.end());
        }
        detail::keep_top_k(merged, k);
        results[q] = std::move(merged);
      },
      threads);
  return results;
}

// --- building from a manifest -----------------------------------------------

enum class SamplingPolicy { Uniform, ClassBalanced };

struct FrameRef {
  const ManifestCategory* category = nullptr;
  const ManifestInstance* instance = nullptr;
  const ManifestFrame* frame = nullptr;

  std::string key() const { return frame_key(*category, *instance, *frame); }
};

struct FeatureShape {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t dim = 0;
};

/// Supplies features and patch labels for manifest frames.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual FeatureShape shape(const FrameRef& ref) const = 0;
  virtual PatchFeatureMap features(const FrameRef& ref) const = 0;
  virtual LabelGrid labels(const FrameRef& ref, std::uint32_t grid_h, std::uint32_t grid_w) const = 0;
};

inline FeatureShape read_feature_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing feature file " + path.string());
  unsigned char head[kFeatureHeaderBytes];
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (in.gcount() != static_cast<std::streamsize>(sizeof head)) {
    throw FormatError(path.string() + ": truncated header", static_cast<std::size_t>(in.gcount()));
  }
  if (std::memcmp(head, kFeatureMagic.data(), 4) != 0) throw FormatError(path.string() + ": bad magic", 0);
  return {detail::get_u32(head + 4), detail::get_u32(head + 8), detail::get_u32(head + 12)};
}

/// Features at `<root>/<frame key>.pfv`; labels from the manifest's masks.
class DiskFrameSource final : public FrameSource {
 public:
  DiskFrameSource(const SubsetManifest& manifest, std::filesystem::path feature_root)
      : manifest_(&manifest), root_(std::move(feature_root)) {}

  std::filesystem::path feature_path(const FrameRef& ref) const { return root_ / (ref.key() + ".pfv"); }

  FeatureShape shape(const FrameRef& ref) const override { return read_feature_shape(feature_path(ref)); }

  PatchFeatureMap features(const FrameRef& ref) const override {
    const auto path = feature_path(ref);
    if (!std::filesystem::exists(path)) throw IoError("missing feature file " + path.string());
    return read_feature_file(path);
  }

  LabelGrid labels(const FrameRef& ref, std::uint32_t grid_h, std::uint32_t grid_w) const override {
    return downsample_mask(load_frame_mask(*manifest_, *ref.category, *ref.frame), grid_h, grid_w);
  }

 private:
  const SubsetManifest* manifest_;
  std::filesystem::path root_;
};

/// Every manifest frame whose bin is in `bins`, in manifest order.
inline std::vector<FrameRef> frames_in_bins(const SubsetManifest& manifest, const std::set<double>& bins) {
  std::vector<FrameRef> out;
  for (const auto& cat : manifest.categories) {
    for (const auto& inst : cat.instances) {
      for (const auto& f : inst.frames) {
        if (bins.count(f.center)) out.push_back({&cat, &inst, &f});
      }
    }
  }
  return out;
}

struct BankOptions {
  std::size_t capacity = 1024000;
  std::uint64_t seed = kDefaultSeed;
  SamplingPolicy policy = SamplingPolicy::Uniform;
};

namespace detail {

/// Per-class quotas summing to min(capacity, total): classes are filled
/// smallest-first with an equal share of what remains.
inline std::vector<std::size_t> balanced_quotas(const std::vector<std::size_t>& counts, std::size_t capacity) {
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] < counts[b]; });
  std::vector<std::size_t> quota(counts.size(), 0);
  std::size_t remaining = capacity, left = 0;
  for (const auto c : counts) left += c > 0;
  for (const auto c : order) {
    if (counts[c] == 0) continue;
    quota[c] = std::min(counts[c], remaining / left);
    remaining -= quota[c];
    --left;
  }
  return quota;
}

}  // namespace detail

/// Collects every patch of every frame in `reference_bins` and, when the
/// candidates exceed capacity, keeps a seeded random subset. Two passes: the
/// first reads only headers (and labels, for class-balanced sampling), the
/// second loads the selected cells.
inline MemoryBank build_bank(const SubsetManifest& manifest, const std::set<double>& reference_bins,
                             const FrameSource& source, const BankOptions& opt = {}) {
  if (opt.capacity == 0) throw DomainError("capacity must be positive");
  for (const double b : reference_bins) {
    if (std::find(manifest.bin_centers.begin(), manifest.bin_centers.end(), b) == manifest.bin_centers.end()) {
      throw DomainError("reference bin " + format_degrees(b) + " is not a manifest bin");
    }
  }
  const auto frames = frames_in_bins(manifest, reference_bins);

  std::vector<FeatureShape> shapes;
  std::vector<std::size_t> offsets{0};
  std::uint32_t dim = 0;
  for (const auto& ref : frames) {
    const auto s = source.shape(ref);
    if (dim == 0) dim = s.dim;
    if (s.dim != dim) {
      throw StructuralError("feature dim " + std::to_string(s.dim) + " of " + ref.key() + " differs from " +
                            std::to_string(dim));
    }
    shapes.push_back(s);
    offsets.push_back(offsets.back() + std::size_t{s.grid_h} * s.grid_w);
  }
  const std::size_t total = offsets.back();
  if (total == 0) throw DomainError("memory bank would be empty: no candidate patches in the reference bins");

  std::vector<std::size_t> keep;
  if (total <= opt.capacity) {
    keep.resize(total);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
  } else if (opt.policy == SamplingPolicy::Uniform) {
    keep = sample_without_replacement(total, opt.capacity, opt.seed);
  } else {
    std::vector<ClassId> all_labels;
    all_labels.reserve(total);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto g = source.labels(frames[f], shapes[f].grid_h, shapes[f].grid_w);
      all_labels.insert(all_labels.end(), g.labels.begin(), g.labels.end());
    }
    const std::size_t nc = *std::max_element(all_labels.begin(), all_labels.end()) + 1u;
    std::vector<std::vector<std::size_t>> by_class(nc);
    for (std::size_t i = 0; i < total; ++i) by_class[all_labels[i]].push_back(i);
    std::vector<std::size_t> counts(nc);
    for (std::size_t c = 0; c < nc; ++c) counts[c] = by_class[c].size();
    const auto quota = detail::balanced_quotas(counts, opt.capacity);
    for (std::size_t c = 0; c < nc; ++c) {
      for (const auto j : sample_without_replacement(counts[c], quota[c], opt.seed + c)) keep.push_back(by_class[c][j]);
    }
    std::sort(keep.begin(), keep.end());
  }

  std::vector<float> features;
  std::vector<ClassId> labels;
  std::vector<EntrySource> sources;
  features.reserve(keep.size() * dim);
  labels.reserve(keep.size());
  sources.reserve(keep.size());
  auto it = keep.begin();
  for (std::size_t f = 0; f < frames.size() && it != keep.end(); ++f) {
    if (*it >= offsets[f + 1]) continue;
    const auto& ref = frames[f];
    const auto map = source.features(ref);
    if (map.dim != dim || map.grid_h != shapes[f].grid_h || map.grid_w != shapes[f].grid_w) {
      throw StructuralError("feature file for " + ref.key() + " changed shape between passes");
    }
    const auto grid = source.labels(ref, map.grid_h, map.grid_w);
    const std::string instance = ref.category->dir + "/" + ref.instance->instance_id;
    for (; it != keep.end() && *it < offsets[f + 1]; ++it) {
      const auto cell = static_cast<std::uint32_t>(*it - offsets[f]);
      const auto row = map.cell(cell);
      features.insert(features.end(), row.begin(), row.end());
      labels.push_back(grid.labels[cell]);
      sources.push_back({instance, ref.frame->center, cell});
    }
  }
  return MemoryBank(dim, opt.capacity, std::move(features), std::move(labels), std::move(sources));
}

// --- snapshots --------------------------------------------------------------

inline constexpr std::array<char, 4> kBankMagic = {'M', 'B', 'K', '1'};

/// `MBK1`, u32 dim, u64 count, then per entry u16 label + dim f32.
/// Provenance goes to a sidecar `index<TAB>instance<TAB>bin_deg<TAB>cell`.
inline void save_bank(const MemoryBank& bank, const std::filesystem::path& path,
                      const std::filesystem::path& provenance_path = {}) {
  std::string out;
  out.reserve(16 + bank.size() * (2 + 4 * std::size_t{bank.dim()}));
  out.append(kBankMagic.data(), 4);
  detail::put_u32(out, bank.dim());
  detail::put_u64(out, bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    detail::put_u16(out, bank.label(i));
    for (const float v : bank.feature(i)) detail::put_f32(out, v);
  }
  detail::write_all_atomic(path, out);
  if (!provenance_path.empty()) {
    std::ostringstream s;
    for (std::size_t i = 0; i < bank.sources().size(); ++i) {
      const auto& src = bank.sources()[i];
      s << i << '\t' << src.instance << '\t' << format_degrees(src.bin_deg) << '\t' << src.cell << '\n';
    }
    detail::write_all_atomic(provenance_path, s.str());
  }
}

/// Capacity of a loaded bank defaults to its entry count.
inline MemoryBank load_bank(const std::filesystem::path& path, std::size_t capacity = 0) {
  const std::string bytes = detail::read_all(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16) throw FormatError(path.string() + ": truncated header", bytes.size());
  if (std::memcmp(p, kBankMagic.data(), 4) != 0) throw FormatError(path.string() + ": bad magic, expected MBK1", 0);
  const std::uint32_t dim = detail::get_u32(p + 4);
  const std::uint64_t count = detail::get_u64(p + 8);
  if (dim == 0) throw FormatError(path.string() + ": zero dim", 4);
  const std::uint64_t stride = 2 + 4ull * dim;
  if (bytes.size() != 16 + count * stride) {
    throw FormatError(path.string() + ": payload size does not match entry count", bytes.size());
  }
  std::vector<float> features(count * dim);
  std::vector<ClassId> labels(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto* e = p + 16 + i * stride;
    labels[i] = detail::get_u16(e);
    for (std::uint32_t d = 0; d < dim; ++d) {
      const float v = std::bit_cast<float>(detail::get_u32(e + 2 + 4 * d));
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value", 16 + i * stride + 2 + 4 * d);
      features[i * dim + d] = v;
    }
  }
  return MemoryBank(dim, capacity ? capacity : std::max<std::size_t>(count, 1), std::move(features),
                    std::move(labels));
}

}  // namespace viewbench
