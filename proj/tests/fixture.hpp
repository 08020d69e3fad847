#pragma once

// Synthetic dataset for end-to-end tests: class-id masks, tiny PNG images,
// and PFV1 features laid out exactly like a real extraction run.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "viewbench/viewbench.hpp"

namespace viewbench::testing {

namespace fs = std::filesystem;

struct FixtureOptions {
  int classes = 3;
  int instances = 4;          // per class
  std::uint32_t grid = 8;     // patch grid is grid x grid
  std::uint32_t mask_px = 32; // masks and images are mask_px square
  std::uint32_t dim = 64;
  double view_noise = 0.0;    // 0: every bin repeats the 0 degree features
  std::uint64_t seed = 7;
};

struct Fixture {
  fs::path root;
  fs::path manifest_path;
  fs::path feature_root;
  SubsetManifest manifest;
};

/// Object rows of instance `i` of class `c`, in cell units. Full-width bands
/// keep bilinear upsampling exact at cell boundaries.
inline std::pair<std::uint32_t, std::uint32_t> object_rows(int c, int i, std::uint32_t grid) {
  const std::uint32_t r0 = 1 + static_cast<std::uint32_t>(i % 3);
  const std::uint32_t r1 = std::min(grid - 1, r0 + 3 + static_cast<std::uint32_t>(c % 2));
  return {r0, r1};
}

inline Fixture make_fixture(const fs::path& dir, const FixtureOptions& opt = {}) {
  fs::remove_all(dir);
  Fixture fx;
  fx.root = dir / "subset";
  fx.feature_root = dir / "features" / "synthetic";
  fx.manifest_path = dir / "manifest.json";
  fx.manifest.root = "subset";
  fx.manifest.bin_centers = BinSpec::standard().centers;
  fx.manifest.mask_encoding = MaskEncoding::ClassId;

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::uint32_t px_per_cell = opt.mask_px / opt.grid;

  for (int c = 0; c < opt.classes; ++c) {
    ManifestCategory cat;
    cat.class_number = 10 * (c + 1);
    cat.class_name = "class" + std::to_string(c + 1);
    cat.dir = std::to_string(cat.class_number) + "_" + cat.class_name;
    cat.label = static_cast<ClassId>(c + 1);
    for (int i = 0; i < opt.instances; ++i) {
      ManifestInstance inst;
      inst.instance_id = "inst" + std::to_string(i);
      const auto [r0, r1] = object_rows(c, i, opt.grid);

      PixelMask mask(opt.mask_px, opt.mask_px, 0);
      for (std::uint32_t y = r0 * px_per_cell; y < r1 * px_per_cell; ++y) {
        for (std::uint32_t x = 0; x < opt.mask_px; ++x) mask.at(y, x) = cat.label;
      }
      PatchFeatureMap base(opt.grid, opt.grid, opt.dim);
      for (auto& v : base.data) v = static_cast<float>(gauss(rng));

      for (std::size_t b = 0; b < fx.manifest.bin_centers.size(); ++b) {
        const double center = fx.manifest.bin_centers[b];
        ManifestFrame f;
        f.center = center;
        f.frame = static_cast<std::int64_t>(b + 1);
        f.error_deg = 0.1 * static_cast<double>((b % 3)) - 0.1;
        f.theta_deg = center + f.error_deg;
        const std::string key = cat.dir + "/" + format_degrees(center) + "/" + inst.instance_id + "_" +
                                std::to_string(f.frame);
        f.image = key + ".png";
        f.mask = key + "_mask.png";

        Image8 img(static_cast<int>(opt.mask_px), static_cast<int>(opt.mask_px), 3);
        for (std::size_t p = 0; p < mask.labels.size(); ++p) {
          img.pixels[3 * p] = static_cast<std::uint8_t>(40 * mask.labels[p]);
          img.pixels[3 * p + 1] = static_cast<std::uint8_t>(17 * b);
          img.pixels[3 * p + 2] = 90;
        }
        write_png(fx.root / f.image, img);
        write_mask(fx.root / f.mask, mask);

        PatchFeatureMap feats = base;
        if (b > 0 && opt.view_noise > 0.0) {
          for (auto& v : feats.data) v += static_cast<float>(opt.view_noise * static_cast<double>(b) * gauss(rng));
        }
        write_feature_file(feats, fx.feature_root / (key + ".pfv"));
        inst.frames.push_back(f);
      }
      cat.instances.push_back(std::move(inst));
    }
    fx.manifest.categories.push_back(std::move(cat));
  }
  save_manifest(fx.manifest, fx.manifest_path);
  fx.manifest = load_manifest(fx.manifest_path);
  return fx;
}

inline RunConfig fixture_config(const Fixture& fx, const fs::path& out, std::size_t capacity = 1024000) {
  RunConfig cfg;
  cfg.manifest = fx.manifest_path;
  cfg.models = {{"synthetic", fx.feature_root}};
  cfg.capacity = capacity;
  cfg.output_root = out;
  return cfg;
}

/// Fresh scratch directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("viewbench_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace viewbench::testing
