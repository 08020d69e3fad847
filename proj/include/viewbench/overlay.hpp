#pragma once

// Qualitative outputs: mask overlays on the input image and three-colour
// difference maps between ground truth and prediction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "viewbench/binning.hpp"
#include "viewbench/config.hpp"
#include "viewbench/experiments.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/image_io.hpp"
#include "viewbench/membank.hpp"
#include "viewbench/rng.hpp"

namespace viewbench {

enum class DiffCategory : std::uint8_t { Agree, GtOnly, PredOnly };

/// Agree when labels match; otherwise pred-only when the prediction claims a
/// class, else gt-only (the prediction missed a labelled pixel).
inline DiffCategory classify_pixel(ClassId gt, ClassId pred) {
  if (gt == pred) return DiffCategory::Agree;
  return pred != 0 ? DiffCategory::PredOnly : DiffCategory::GtOnly;
}

struct DiffCounts {
  std::size_t agree = 0;
  std::size_t gt_only = 0;
  std::size_t pred_only = 0;
};

inline constexpr std::array<std::uint8_t, 3> kAgreeColor = {0, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kGtOnlyColor = {255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kPredOnlyColor = {0, 128, 255};

inline Image8 difference_map(const PixelMask& gt, const PixelMask& pred, DiffCounts* counts = nullptr) {
  if (gt.height != pred.height || gt.width != pred.width) throw DomainError("difference map needs equal mask shapes");
  Image8 img(static_cast<int>(gt.width), static_cast<int>(gt.height), 3);
  DiffCounts c;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto* color = &kAgreeColor;
    switch (classify_pixel(gt.labels[i], pred.labels[i])) {
      case DiffCategory::Agree: ++c.agree; break;
      case DiffCategory::GtOnly: ++c.gt_only; color = &kGtOnlyColor; break;
      case DiffCategory::PredOnly: ++c.pred_only; color = &kPredOnlyColor; break;
    }
    std::copy(color->begin(), color->end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  if (counts) *counts = c;
  return img;
}

/// Fixed colour per class id; background is never painted.
inline std::array<std::uint8_t, 3> class_color(ClassId c) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette = {{
      {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
  }};
  return palette[(c - 1u) % palette.size()];
}

inline Image8 to_rgb(const Image8& img) {
  if (img.channels == 3) return img;
  Image8 rgb(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    for (int k = 0; k < 3; ++k) rgb.pixels[3 * i + k] = img.pixels[i];
  }
  return rgb;
}

/// Nearest-neighbour resize of a mask to the image resolution.
inline PixelMask resize_nearest(const PixelMask& m, std::uint32_t h, std::uint32_t w) {
  if (m.height == h && m.width == w) return m;
  PixelMask out(h, w);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      out.at(y, x) = m.at(static_cast<std::uint32_t>(std::uint64_t{y} * m.height / h),
                          static_cast<std::uint32_t>(std::uint64_t{x} * m.width / w));
    }
  }
  return out;
}

/// Half-transparent class colours over the image.
inline Image8 overlay_mask(const Image8& image, const PixelMask& mask) {
  Image8 out = to_rgb(image);
  const PixelMask m = resize_nearest(mask, static_cast<std::uint32_t>(out.height), static_cast<std::uint32_t>(out.width));
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] == 0) continue;
    const auto col = class_color(m.labels[i]);
    for (int k = 0; k < 3; ++k) {
      auto& px = out.pixels[3 * i + k];
      px = static_cast<std::uint8_t>((px + col[k] + 1) / 2);
    }
  }
  return out;
}

struct OverlaySpec {
  std::string difficulty = "Extreme";
  std::size_t capacity = 0;  // 0: config capacity
  std::size_t per_model = 4;
  std::uint64_t seed = kDefaultSeed;
};

struct OverlayRecord {
  std::string model;
  std::string key;
  DiffCounts counts;
};

struct OverlayRun {
  std::vector<OverlayRecord> written;
  std::vector<std::string> skipped;  // "model<TAB>key<TAB>reason"
};

/// Samples validation-bin frames per model and writes `<key>_input.png`,
/// `_gt.png`, `_pred.png` and `_diff.png` under
/// `<out>/overlays/<model>/<difficulty>/`. Frames without a stored
/// prediction are skipped and logged.
inline OverlayRun emit_overlays(const RunConfig& cfg, const OverlaySpec& spec) {
  const auto manifest = load_manifest(cfg.manifest);
  const auto& diff = difficulty_by_name(spec.difficulty);
  const std::size_t capacity = spec.capacity ? spec.capacity : cfg.capacity;
  const auto frames = frames_in_bins(manifest, {diff.validation_bins.begin(), diff.validation_bins.end()});
  OverlayRun run;
  for (const auto& model : cfg.models) {
    const auto picks = sample_without_replacement(frames.size(), spec.per_model, spec.seed);
    for (const auto idx : picks) {
      const auto& ref = frames[idx];
      const std::string key = ref.key();
      const auto pred_path = prediction_path(cfg, model.name, diff.name, capacity, key);
      if (!std::filesystem::exists(pred_path)) {
        run.skipped.push_back(model.name + "\t" + key + "\tmissing prediction " + pred_path.string());
        continue;
      }
      const PixelMask pred = read_mask(pred_path);
      const PixelMask gt = load_frame_mask(manifest, *ref.category, *ref.frame);
      const Image8 input = to_rgb(read_image(manifest.resolve(ref.frame->image)));
      OverlayRecord rec{model.name, key, {}};
      const auto dir = cfg.output_root / "overlays" / model.name / diff.name;
      const auto base = dir / key;
      write_png(std::filesystem::path(base.string() + "_input.png"), input);
      write_png(std::filesystem::path(base.string() + "_gt.png"), overlay_mask(input, gt));
      write_png(std::filesystem::path(base.string() + "_pred.png"), overlay_mask(input, pred));
      write_png(std::filesystem::path(base.string() + "_diff.png"), difference_map(gt, pred, &rec.counts));
      run.written.push_back(rec);
    }
  }
  std::ostringstream log;
  for (const auto& s : run.skipped) log << s << '\n';
  write_text(cfg.output_root / "overlays" / "skipped.tsv", log.str());
  return run;
}

}  // namespace viewbench
