#pragma once

// Viewpoint binning: pick one frame per angular bin for every object
// instance, reject instances that do not cover the bins closely enough, and
// assemble the curated subset manifest.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viewbench/error.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/pose.hpp"

namespace viewbench {

namespace fs = std::filesystem;

inline constexpr double kDefaultToleranceDeg = 6.0;

struct BinSpec {
  std::vector<double> centers;

  static BinSpec standard() { return {{0, 15, 30, 45, 60, 75, 90}}; }

  void validate() const {
    if (centers.empty()) throw DomainError("bin spec has no centers");
    for (std::size_t i = 0; i < centers.size(); ++i) {
      if (!(centers[i] >= 0.0 && centers[i] <= 180.0)) throw DomainError("bin center outside [0, 180]");
      if (i > 0 && !(centers[i] > centers[i - 1])) throw DomainError("bin centers must be strictly increasing");
    }
  }
};

struct FrameChoice {
  std::int64_t frame = 0;
  double theta_deg = 0.0;
  double error_deg = 0.0;  // theta - center
};

struct BinSlot {
  double center = 0.0;
  std::optional<FrameChoice> choice;
};

struct BinAssignment {
  std::string instance_id;
  std::vector<BinSlot> bins;
};

struct InstanceValidity {
  std::string instance_id;
  bool valid = false;
  double max_abs_error_deg = 0.0;
  std::string reason;  // empty when valid
};

/// Greedy per-bin selection in ascending center order. Each bin takes the
/// unused frame closest to its center (lower image id on ties); a frame
/// never serves two bins.
inline BinAssignment assign_bins(const std::vector<RelativeAngle>& angles, const BinSpec& spec,
                                 std::string instance_id = {}) {
  spec.validate();
  if (angles.empty()) throw DomainError("no frames to bin");
  BinAssignment out{std::move(instance_id), {}};
  std::vector<bool> used(angles.size(), false);
  for (const double center : spec.centers) {
    BinSlot slot{center, std::nullopt};
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < angles.size(); ++i) {
      if (used[i]) continue;
      if (!best) {
        best = i;
        continue;
      }
      const double d = std::abs(angles[i].theta_deg - center);
      const double bd = std::abs(angles[*best].theta_deg - center);
      if (d < bd || (d == bd && angles[i].frame < angles[*best].frame)) best = i;
    }
    if (best) {
      used[*best] = true;
      const auto& a = angles[*best];
      slot.choice = FrameChoice{a.frame, a.theta_deg, a.theta_deg - center};
    }
    out.bins.push_back(slot);
  }
  return out;
}

inline InstanceValidity validate_instance(const BinAssignment& assignment,
                                          double tolerance_deg = kDefaultToleranceDeg) {
  if (!(tolerance_deg > 0.0)) throw DomainError("tolerance must be positive");
  InstanceValidity v{assignment.instance_id, true, 0.0, {}};
  std::ostringstream reason;
  for (const auto& slot : assignment.bins) {
    if (!slot.choice) {
      if (v.valid) reason << "bin " << slot.center << " unassigned";
      v.valid = false;
      continue;
    }
    v.max_abs_error_deg = std::max(v.max_abs_error_deg, std::abs(slot.choice->error_deg));
  }
  if (v.valid && v.max_abs_error_deg > tolerance_deg) {
    v.valid = false;
    reason << "max angular error " << v.max_abs_error_deg << " deg exceeds tolerance " << tolerance_deg;
  }
  v.reason = reason.str();
  return v;
}

// --- manifest ---------------------------------------------------------------

enum class MaskEncoding { Binary, ClassId };

struct ManifestFrame {
  double center = 0.0;
  std::int64_t frame = 0;
  double theta_deg = 0.0;
  double error_deg = 0.0;
  std::string image;  // relative to SubsetManifest::root
  std::string mask;
};

struct ManifestInstance {
  std::string instance_id;
  std::vector<ManifestFrame> frames;  // one per bin, ascending center
};

struct ManifestCategory {
  int class_number = 0;
  std::string class_name;
  std::string dir;  // directory name under the dataset root
  ClassId label = 0;
  std::vector<ManifestInstance> instances;
};

struct SubsetManifest {
  std::string root;
  std::vector<double> bin_centers;
  MaskEncoding mask_encoding = MaskEncoding::Binary;
  std::vector<ManifestCategory> categories;

  /// Background plus one label per category.
  std::uint32_t num_classes() const { return static_cast<std::uint32_t>(categories.size()) + 1; }
  fs::path resolve(const std::string& rel) const { return fs::path(root) / rel; }
};

struct Exclusion {
  std::string instance_id;
  std::string reason;
};

struct BuildResult {
  SubsetManifest manifest;
  std::vector<Exclusion> exclusions;
};

inline std::string format_degrees(double deg) {
  std::ostringstream s;
  s << deg;
  return s.str();
}

/// Layout key `<class>/<angle>/<instance>_<frame>` shared by subset images,
/// masks, features, and predictions.
inline std::string frame_key(const ManifestCategory& cat, const ManifestInstance& inst, const ManifestFrame& f) {
  return cat.dir + "/" + format_degrees(f.center) + "/" + inst.instance_id + "_" + std::to_string(f.frame);
}

struct ManifestBuildOptions {
  BinSpec spec = BinSpec::standard();
  double tolerance_deg = kDefaultToleranceDeg;
  /// Optional archive-size window in bytes per category; checked against
  /// `<root>/<class_dir>.zip` when present, else the directory's total size.
  std::optional<std::uintmax_t> min_category_bytes;
  std::optional<std::uintmax_t> max_category_bytes;
};

namespace detail {

inline std::pair<int, std::string> parse_category_dir(const std::string& name) {
  const auto us = name.find('_');
  const std::string num = name.substr(0, us);
  if (num.empty() || !std::all_of(num.begin(), num.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw StructuralError("category directory '" + name + "' must start with its class number");
  }
  return {std::stoi(num), us == std::string::npos ? num : name.substr(us + 1)};
}

inline std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::uintmax_t tree_size(const fs::path& dir) {
  std::uintmax_t total = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) total += e.file_size();
  }
  return total;
}

inline std::optional<fs::path> find_images_txt(const fs::path& instance_dir) {
  for (const auto* rel : {"sparse/0/images.txt", "sparse/images.txt", "images.txt"}) {
    if (fs::exists(instance_dir / rel)) return instance_dir / rel;
  }
  return std::nullopt;
}

inline std::optional<fs::path> find_mask(const fs::path& instance_dir, const std::string& image_name) {
  const fs::path name(image_name);
  for (const auto& cand : {instance_dir / "masks" / name.stem().concat(".png"),
                           instance_dir / "masks" / fs::path(image_name + ".png")}) {
    if (fs::exists(cand)) return cand;
  }
  return std::nullopt;
}

}  // namespace detail

/// Outcome of binning a single instance directory.
struct InstanceResult {
  std::optional<ManifestInstance> instance;
  std::string reason;
};

inline InstanceResult bin_instance(const fs::path& root, const fs::path& instance_dir,
                                   const ManifestBuildOptions& opt) {
  const std::string id = instance_dir.filename().string();
  const auto images_txt = detail::find_images_txt(instance_dir);
  if (!images_txt) return {std::nullopt, "no COLMAP images.txt"};
  std::vector<CameraPose> poses;
  try {
    std::ifstream in(*images_txt);
    if (!in) return {std::nullopt, "unreadable reconstruction"};
    poses = parse_colmap_images(in);
  } catch (const Error& e) {
    return {std::nullopt, std::string("unreadable reconstruction: ") + e.what()};
  }
  // Only frames whose image is on disk take part, including the reference.
  std::erase_if(poses, [&](const CameraPose& p) { return !fs::exists(instance_dir / "images" / p.image_name); });
  if (poses.empty()) return {std::nullopt, "no reconstructed frame has an image"};

  const auto& ref = reference_pose(poses);
  const auto angles = relative_angles(poses, ref);
  const auto assignment = assign_bins(angles, opt.spec, id);
  const auto validity = validate_instance(assignment, opt.tolerance_deg);
  if (!validity.valid) return {std::nullopt, validity.reason};

  std::map<std::int64_t, const CameraPose*> by_id;
  for (const auto& p : poses) by_id[p.image_id] = &p;

  ManifestInstance inst{id, {}};
  for (const auto& slot : assignment.bins) {
    const auto& choice = *slot.choice;
    const auto& pose = *by_id.at(choice.frame);
    const auto mask = detail::find_mask(instance_dir, pose.image_name);
    if (!mask) return {std::nullopt, "missing mask for frame " + std::to_string(choice.frame)};
    inst.frames.push_back({slot.center, choice.frame, choice.theta_deg, choice.error_deg,
                           fs::relative(instance_dir / "images" / pose.image_name, root).generic_string(),
                           fs::relative(*mask, root).generic_string()});
  }
  return {std::move(inst), {}};
}

/// Scans `<root>/<class_number>_<name>/<instance>/` trees, each holding
/// `images/`, `masks/` and a COLMAP `images.txt`, and keeps valid instances.
/// Ordering is class number, then instance id, then angle.
inline BuildResult build_manifest(const fs::path& root, const ManifestBuildOptions& opt = {}) {
  opt.spec.validate();
  BuildResult result;
  result.manifest.root = root.string();
  result.manifest.bin_centers = opt.spec.centers;
  result.manifest.mask_encoding = MaskEncoding::Binary;
  if (!fs::exists(root)) throw IoError("dataset root " + root.string() + " does not exist");

  std::vector<ManifestCategory> cats;
  for (const auto& cat_dir : detail::sorted_subdirs(root)) {
    ManifestCategory cat;
    std::tie(cat.class_number, cat.class_name) = detail::parse_category_dir(cat_dir.filename().string());
    cat.dir = cat_dir.filename().string();
    if (opt.min_category_bytes || opt.max_category_bytes) {
      auto zip = cat_dir;
      zip += ".zip";
      const auto size = fs::exists(zip) ? fs::file_size(zip) : detail::tree_size(cat_dir);
      if ((opt.min_category_bytes && size < *opt.min_category_bytes) ||
          (opt.max_category_bytes && size > *opt.max_category_bytes)) {
        result.exclusions.push_back({cat.dir, "category size " + std::to_string(size) + " bytes outside window"});
        continue;
      }
    }
    for (const auto& inst_dir : detail::sorted_subdirs(cat_dir)) {
      auto r = bin_instance(root, inst_dir, opt);
      if (r.instance) {
        cat.instances.push_back(std::move(*r.instance));
      } else {
        result.exclusions.push_back({cat.dir + "/" + inst_dir.filename().string(), r.reason});
      }
    }
    if (!cat.instances.empty()) cats.push_back(std::move(cat));
  }
  std::stable_sort(cats.begin(), cats.end(),
                   [](const auto& a, const auto& b) { return a.class_number < b.class_number; });
  for (std::size_t i = 0; i < cats.size(); ++i) cats[i].label = static_cast<ClassId>(i + 1);
  result.manifest.categories = std::move(cats);
  return result;
}

/// Copies images and class-id masks into `<out>/<class>/<angle>/<instance>_<frame>`
/// and returns the manifest rewritten to point at the copies.
inline SubsetManifest materialize_subset(const SubsetManifest& manifest, const fs::path& out_root) {
  SubsetManifest out = manifest;
  out.root = out_root.string();
  out.mask_encoding = MaskEncoding::ClassId;
  for (std::size_t c = 0; c < manifest.categories.size(); ++c) {
    const auto& cat = manifest.categories[c];
    for (std::size_t i = 0; i < cat.instances.size(); ++i) {
      const auto& inst = cat.instances[i];
      for (std::size_t f = 0; f < inst.frames.size(); ++f) {
        const auto& fr = inst.frames[f];
        const std::string key = frame_key(cat, inst, fr);
        const fs::path src_img = manifest.resolve(fr.image);
        const std::string img_rel = key + fs::path(fr.image).extension().string();
        const std::string mask_rel = key + "_mask.png";
        fs::create_directories((out_root / img_rel).parent_path());
        fs::copy_file(src_img, out_root / img_rel, fs::copy_options::overwrite_existing);

        PixelMask mask = read_mask(manifest.resolve(fr.mask));
        if (manifest.mask_encoding == MaskEncoding::Binary) {
          for (auto& l : mask.labels) l = l ? cat.label : ClassId{0};
        }
        write_mask(out_root / mask_rel, mask);
        out.categories[c].instances[i].frames[f].image = img_rel;
        out.categories[c].instances[i].frames[f].mask = mask_rel;
      }
    }
  }
  return out;
}

/// Loads the ground-truth mask of a manifest frame as class ids.
inline PixelMask load_frame_mask(const SubsetManifest& manifest, const ManifestCategory& cat,
                                 const ManifestFrame& frame) {
  PixelMask mask = read_mask(manifest.resolve(frame.mask));
  if (manifest.mask_encoding == MaskEncoding::Binary) {
    for (auto& l : mask.labels) l = l ? cat.label : ClassId{0};
  } else {
    for (const auto l : mask.labels) {
      if (l >= manifest.num_classes()) {
        throw StructuralError("mask " + frame.mask + " has class id " + std::to_string(l) + " >= " +
                              std::to_string(manifest.num_classes()));
      }
    }
  }
  return mask;
}

/// Throws if any referenced image or mask is missing.
inline void validate_manifest(const SubsetManifest& manifest) {
  for (const auto& cat : manifest.categories) {
    for (const auto& inst : cat.instances) {
      if (inst.frames.size() != manifest.bin_centers.size()) {
        throw StructuralError("instance " + inst.instance_id + " does not cover every bin");
      }
      for (const auto& f : inst.frames) {
        for (const auto* rel : {&f.image, &f.mask}) {
          if (!fs::exists(manifest.resolve(*rel))) {
            throw StructuralError("manifest references missing file " + manifest.resolve(*rel).string());
          }
        }
      }
    }
  }
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json manifest_to_json(const SubsetManifest& m) {
  using nlohmann::json;
  json cats = json::array();
  for (const auto& c : m.categories) {
    json insts = json::array();
    for (const auto& i : c.instances) {
      json frames = json::array();
      for (const auto& f : i.frames) {
        frames.push_back({{"center_deg", f.center},
                          {"frame", f.frame},
                          {"theta_deg", f.theta_deg},
                          {"error_deg", f.error_deg},
                          {"image", f.image},
                          {"mask", f.mask}});
      }
      insts.push_back({{"instance_id", i.instance_id}, {"frames", std::move(frames)}});
    }
    cats.push_back({{"class_number", c.class_number},
                    {"class_name", c.class_name},
                    {"dir", c.dir},
                    {"label", c.label},
                    {"instances", std::move(insts)}});
  }
  return {{"root", m.root},
          {"bin_centers_deg", m.bin_centers},
          {"mask_encoding", m.mask_encoding == MaskEncoding::Binary ? "binary" : "class_id"},
          {"categories", std::move(cats)}};
}

inline SubsetManifest manifest_from_json(const nlohmann::json& j) {
  SubsetManifest m;
  try {
    m.root = j.at("root").get<std::string>();
    m.bin_centers = j.at("bin_centers_deg").get<std::vector<double>>();
    const auto enc = j.at("mask_encoding").get<std::string>();
    if (enc != "binary" && enc != "class_id") throw StructuralError("unknown mask_encoding '" + enc + "'");
    m.mask_encoding = enc == "binary" ? MaskEncoding::Binary : MaskEncoding::ClassId;
    for (const auto& jc : j.at("categories")) {
      ManifestCategory c;
      c.class_number = jc.at("class_number").get<int>();
      c.class_name = jc.at("class_name").get<std::string>();
      c.dir = jc.at("dir").get<std::string>();
      c.label = jc.at("label").get<ClassId>();
      for (const auto& ji : jc.at("instances")) {
        ManifestInstance inst;
        inst.instance_id = ji.at("instance_id").get<std::string>();
        for (const auto& jf : ji.at("frames")) {
          inst.frames.push_back({jf.at("center_deg").get<double>(), jf.at("frame").get<std::int64_t>(),
                                 jf.at("theta_deg").get<double>(), jf.at("error_deg").get<double>(),
                                 jf.at("image").get<std::string>(), jf.at("mask").get<std::string>()});
        }
        c.instances.push_back(std::move(inst));
      }
      m.categories.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline void save_manifest(const SubsetManifest& m, const fs::path& path) {
  detail::write_all_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

/// Relative roots resolve against the manifest file's directory.
inline SubsetManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_all(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw StructuralError(path.string() + ": " + e.what());
  }
  SubsetManifest m = manifest_from_json(j);
  if (fs::path(m.root).is_relative()) m.root = (path.parent_path() / m.root).lexically_normal().string();
  return m;
}

inline void write_exclusions(std::ostream& out, const std::vector<Exclusion>& exclusions) {
  for (const auto& e : exclusions) out << e.instance_id << '\t' << e.reason << '\n';
}

// --- statistics -------------------------------------------------------------

struct ClassAngleStats {
  int class_number = 0;
  std::string class_name;
  double mean_error_deg = 0.0;
  double std_error_deg = 0.0;  // population
  std::size_t images_per_bin = 0;
};

using AngleStats = std::vector<ClassAngleStats>;

inline AngleStats angle_stats(const SubsetManifest& manifest) {
  if (manifest.categories.empty()) throw DomainError("manifest is empty");
  AngleStats out;
  for (const auto& cat : manifest.categories) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& inst : cat.instances) {
      for (const auto& f : inst.frames) {
        sum += f.error_deg;
        ++n;
      }
    }
    const double mean = n ? sum / n : 0.0;
    for (const auto& inst : cat.instances) {
      for (const auto& f : inst.frames) sum_sq += (f.error_deg - mean) * (f.error_deg - mean);
    }
    out.push_back({cat.class_number, cat.class_name, mean, n ? std::sqrt(sum_sq / n) : 0.0, cat.instances.size()});
  }
  return out;
}

/// Class numbers and names of the 15-category curated subset, in label order.
inline const std::vector<std::pair<int, std::string>>& reference_categories() {
  static const std::vector<std::pair<int, std::string>> cats = {
      {7, "stove"},       {8, "sofa"},          {19, "microwave"},     {46, "bed"},   {57, "toy cat"},
      {60, "toy cow"},    {70, "toy dragon"},   {99, "coat rack"},     {100, "guitar stand"},
      {113, "ceiling lamp"}, {125, "toilet"},   {126, "sink"},         {152, "strings"},
      {166, "broccoli"},  {196, "durian"}};
  return cats;
}

/// True when the manifest's categories are exactly the curated 15-class
/// scheme (matched by class number) with labels 1..15.
inline bool matches_reference_scheme(const SubsetManifest& m) {
  const auto& ref = reference_categories();
  if (m.categories.size() != ref.size()) return false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (m.categories[i].class_number != ref[i].first || m.categories[i].label != i + 1) return false;
  }
  return true;
}

}  // namespace viewbench
