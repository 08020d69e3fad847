#pragma once

// Patch-feature files (`PFV1`), pixel masks, and the conversions between
// pixel resolution and the patch grid.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "viewbench/error.hpp"
#include "viewbench/image_io.hpp"

namespace viewbench {

using ClassId = std::uint16_t;

/// grid_h x grid_w x dim floats, row-major by (row, col, channel).
struct PatchFeatureMap {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  PatchFeatureMap() = default;
  PatchFeatureMap(std::uint32_t h, std::uint32_t w, std::uint32_t d)
      : grid_h(h), grid_w(w), dim(d), data(static_cast<std::size_t>(h) * w * d, 0.0f) {}

  std::size_t cells() const { return static_cast<std::size_t>(grid_h) * grid_w; }
  std::span<float> cell(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const float> cell(std::size_t i) const { return {data.data() + i * dim, dim}; }

  friend bool operator==(const PatchFeatureMap&, const PatchFeatureMap&) = default;
};

struct LabelGrid {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::vector<ClassId> labels;

  ClassId at(std::uint32_t r, std::uint32_t c) const { return labels[static_cast<std::size_t>(r) * grid_w + c]; }
  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

struct PixelMask {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<ClassId> labels;

  PixelMask() = default;
  PixelMask(std::uint32_t h, std::uint32_t w, ClassId fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  ClassId& at(std::uint32_t y, std::uint32_t x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  ClassId at(std::uint32_t y, std::uint32_t x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

/// Per-cell class distributions on a patch grid, `num_classes` doubles per cell.
struct DistributionGrid {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t num_classes = 0;
  std::vector<double> probs;

  DistributionGrid() = default;
  DistributionGrid(std::uint32_t h, std::uint32_t w, std::uint32_t c)
      : grid_h(h), grid_w(w), num_classes(c), probs(static_cast<std::size_t>(h) * w * c, 0.0) {}

  std::span<double> cell(std::size_t i) { return {probs.data() + i * num_classes, num_classes}; }
  std::span<const double> cell(std::size_t i) const { return {probs.data() + i * num_classes, num_classes}; }
};

// --- PFV1 -------------------------------------------------------------------

inline constexpr std::array<char, 4> kFeatureMagic = {'P', 'F', 'V', '1'};
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 4 * 4;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFFu));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  return std::uint64_t{get_u32(p)} | std::uint64_t{get_u32(p + 4)} << 32;
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary sibling and renames, so readers never see a
/// partial file.
inline void write_all_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string encode_feature_map(const PatchFeatureMap& map) {
  const std::size_t expect = map.cells() * map.dim;
  if (map.grid_h == 0 || map.grid_w == 0 || map.dim == 0) {
    throw DomainError("feature map dimensions must be positive");
  }
  if (map.data.size() != expect) {
    throw StructuralError("feature map holds " + std::to_string(map.data.size()) + " values, shape needs " +
                          std::to_string(expect));
  }
  std::string out;
  out.reserve(kFeatureHeaderBytes + expect * 4);
  out.append(kFeatureMagic.data(), kFeatureMagic.size());
  detail::put_u32(out, map.grid_h);
  detail::put_u32(out, map.grid_w);
  detail::put_u32(out, map.dim);
  detail::put_u32(out, kDtypeFloat32);
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    if (!std::isfinite(map.data[i])) {
      throw FormatError("non-finite feature value", kFeatureHeaderBytes + 4 * i);
    }
    detail::put_f32(out, map.data[i]);
  }
  return out;
}

inline PatchFeatureMap decode_feature_map(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kFeatureHeaderBytes) throw FormatError("truncated header", bytes.size());
  if (std::memcmp(p, kFeatureMagic.data(), 4) != 0) throw FormatError("bad magic, expected PFV1", 0);
  PatchFeatureMap map;
  map.grid_h = detail::get_u32(p + 4);
  map.grid_w = detail::get_u32(p + 8);
  map.dim = detail::get_u32(p + 12);
  const std::uint32_t dtype = detail::get_u32(p + 16);
  if (dtype != kDtypeFloat32) throw FormatError("unsupported dtype_code " + std::to_string(dtype), 16);
  if (map.grid_h == 0 || map.grid_w == 0 || map.dim == 0) throw FormatError("zero dimension in header", 4);
  const std::uint64_t count = std::uint64_t{map.grid_h} * map.grid_w * map.dim;
  const std::uint64_t need = kFeatureHeaderBytes + count * 4;
  if (bytes.size() < need) throw FormatError("truncated payload, need " + std::to_string(need) + " bytes", bytes.size());
  if (bytes.size() > need) throw FormatError("trailing bytes after payload", need);
  map.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t off = kFeatureHeaderBytes + 4 * i;
    const float v = std::bit_cast<float>(detail::get_u32(p + off));
    if (!std::isfinite(v)) throw FormatError("non-finite feature value", off);
    map.data[i] = v;
  }
  return map;
}

inline void write_feature_file(const PatchFeatureMap& map, const std::filesystem::path& path) {
  detail::write_all_atomic(path, encode_feature_map(map));
}

inline PatchFeatureMap read_feature_file(const std::filesystem::path& path) {
  try {
    return decode_feature_map(detail::read_all(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Distribution dumps reuse PFV1 with dim = number of classes.
inline void write_distribution_file(const DistributionGrid& dist, const std::filesystem::path& path) {
  PatchFeatureMap map(dist.grid_h, dist.grid_w, dist.num_classes);
  std::transform(dist.probs.begin(), dist.probs.end(), map.data.begin(),
                 [](double v) { return static_cast<float>(v); });
  write_feature_file(map, path);
}

// --- sidecar index ----------------------------------------------------------

/// One line of the feature sidecar: `path<TAB>grid_h<TAB>grid_w<TAB>dim<TAB>class_file`.
struct FeatureIndexEntry {
  std::string path;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t dim = 0;
  std::string class_file;

  friend bool operator==(const FeatureIndexEntry&, const FeatureIndexEntry&) = default;
};

inline std::vector<FeatureIndexEntry> parse_feature_index(std::istream& in) {
  std::vector<FeatureIndexEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 5) throw ParseError("expected 5 tab-separated fields", lineno);
    FeatureIndexEntry e;
    e.path = f[0];
    try {
      e.grid_h = static_cast<std::uint32_t>(std::stoul(f[1]));
      e.grid_w = static_cast<std::uint32_t>(std::stoul(f[2]));
      e.dim = static_cast<std::uint32_t>(std::stoul(f[3]));
    } catch (const std::exception&) {
      throw ParseError("non-numeric grid field", lineno);
    }
    e.class_file = f[4];
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_feature_index(std::ostream& out, const std::vector<FeatureIndexEntry>& entries) {
  for (const auto& e : entries) {
    out << e.path << '\t' << e.grid_h << '\t' << e.grid_w << '\t' << e.dim << '\t' << e.class_file << '\n';
  }
}

// --- masks ------------------------------------------------------------------

/// Loads an 8-bit single-channel mask; the pixel value is the class id.
inline PixelMask read_mask(const std::filesystem::path& path) {
  const Image8 img = read_image(path);
  if (img.channels != 1) throw StructuralError("mask " + path.string() + " is not single-channel");
  PixelMask mask(static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width));
  std::copy(img.pixels.begin(), img.pixels.end(), mask.labels.begin());
  return mask;
}

inline void write_mask(const std::filesystem::path& path, const PixelMask& mask) {
  Image8 img(static_cast<int>(mask.width), static_cast<int>(mask.height), 1);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.labels[i] > 255) throw DomainError("class id does not fit an 8-bit mask");
    img.pixels[i] = static_cast<std::uint8_t>(mask.labels[i]);
  }
  write_png(path, img);
}

/// Pixel span [first, last) covered by grid cell `i` of `cells` over `extent`
/// pixels. Edge blocks round outward, so neighbouring cells may share a pixel
/// when the extent is not a multiple of the grid.
inline std::pair<std::uint32_t, std::uint32_t> cell_span(std::uint32_t i, std::uint32_t cells,
                                                          std::uint32_t extent) {
  const std::uint64_t first = std::uint64_t{i} * extent / cells;
  const std::uint64_t last = (std::uint64_t{i + 1} * extent + cells - 1) / cells;
  return {static_cast<std::uint32_t>(first), static_cast<std::uint32_t>(last)};
}

/// Majority class per cell; ties go to the smallest class id.
inline LabelGrid downsample_mask(const PixelMask& mask, std::uint32_t grid_h, std::uint32_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw DomainError("grid must be non-empty");
  if (grid_h > mask.height || grid_w > mask.width) {
    throw DomainError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " larger than mask " +
                      std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  LabelGrid grid{grid_h, grid_w, std::vector<ClassId>(static_cast<std::size_t>(grid_h) * grid_w)};
  std::vector<std::uint32_t> hist;
  for (std::uint32_t r = 0; r < grid_h; ++r) {
    const auto [y0, y1] = cell_span(r, grid_h, mask.height);
    for (std::uint32_t c = 0; c < grid_w; ++c) {
      const auto [x0, x1] = cell_span(c, grid_w, mask.width);
      std::fill(hist.begin(), hist.end(), 0u);
      for (std::uint32_t y = y0; y < y1; ++y) {
        for (std::uint32_t x = x0; x < x1; ++x) {
          const ClassId l = mask.at(y, x);
          if (l >= hist.size()) hist.resize(l + 1u, 0u);
          ++hist[l];
        }
      }
      grid.labels[static_cast<std::size_t>(r) * grid_w + c] =
          static_cast<ClassId>(std::max_element(hist.begin(), hist.end()) - hist.begin());
    }
  }
  return grid;
}

enum class Interpolation { Bilinear, Nearest };

namespace detail {

/// Source sample position for output index `o` with half-pixel centers,
/// clamped to the grid like align_corners=false resampling.
struct Tap {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
  double w_hi = 0.0;
};

inline Tap bilinear_tap(std::uint32_t o, std::uint32_t out_size, std::uint32_t in_size) {
  double s = (o + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
  s = std::max(s, 0.0);
  const auto lo = std::min(static_cast<std::uint32_t>(s), in_size - 1);
  const auto hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, hi == lo ? 0.0 : s - lo};
}

inline std::uint32_t nearest_tap(std::uint32_t o, std::uint32_t out_size, std::uint32_t in_size) {
  const auto s = static_cast<std::uint64_t>(std::floor((o + 0.5) * static_cast<double>(in_size) / out_size));
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(s, in_size - 1));
}

}  // namespace detail

/// Resamples per-cell distributions to pixel resolution and takes the
/// per-pixel argmax (smallest id on ties).
inline PixelMask upsample_distribution(const DistributionGrid& dist, std::uint32_t out_h, std::uint32_t out_w,
                                       Interpolation mode = Interpolation::Bilinear) {
  if (dist.grid_h == 0 || dist.grid_w == 0 || dist.num_classes == 0) throw DomainError("empty distribution grid");
  PixelMask mask(out_h, out_w);
  const std::uint32_t nc = dist.num_classes;
  std::vector<double> mix(nc);
  std::vector<detail::Tap> xtaps(out_w);
  for (std::uint32_t x = 0; x < out_w; ++x) xtaps[x] = detail::bilinear_tap(x, out_w, dist.grid_w);

  for (std::uint32_t y = 0; y < out_h; ++y) {
    const auto ty = detail::bilinear_tap(y, out_h, dist.grid_h);
    for (std::uint32_t x = 0; x < out_w; ++x) {
      if (mode == Interpolation::Nearest) {
        const auto r = detail::nearest_tap(y, out_h, dist.grid_h);
        const auto c = detail::nearest_tap(x, out_w, dist.grid_w);
        const auto p = dist.cell(std::size_t{r} * dist.grid_w + c);
        mask.at(y, x) = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
        continue;
      }
      const auto& tx = xtaps[x];
      const double w00 = (1 - ty.w_hi) * (1 - tx.w_hi), w01 = (1 - ty.w_hi) * tx.w_hi;
      const double w10 = ty.w_hi * (1 - tx.w_hi), w11 = ty.w_hi * tx.w_hi;
      const auto p00 = dist.cell(std::size_t{ty.lo} * dist.grid_w + tx.lo);
      const auto p01 = dist.cell(std::size_t{ty.lo} * dist.grid_w + tx.hi);
      const auto p10 = dist.cell(std::size_t{ty.hi} * dist.grid_w + tx.lo);
      const auto p11 = dist.cell(std::size_t{ty.hi} * dist.grid_w + tx.hi);
      for (std::uint32_t k = 0; k < nc; ++k) {
        mix[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
      }
      mask.at(y, x) = static_cast<ClassId>(std::max_element(mix.begin(), mix.end()) - mix.begin());
    }
  }
  return mask;
}

/// One-hot distribution grid of a label grid; handy for tests and for
/// upsampling hard labels.
inline DistributionGrid one_hot(const LabelGrid& grid, std::uint32_t num_classes) {
  DistributionGrid d(grid.grid_h, grid.grid_w, num_classes);
  for (std::size_t i = 0; i < grid.labels.size(); ++i) {
    if (grid.labels[i] >= num_classes) throw DomainError("label exceeds class count");
    d.cell(i)[grid.labels[i]] = 1.0;
  }
  return d;
}

}  // namespace viewbench
