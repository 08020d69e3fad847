// viewbench: command-line front end for the viewpoint-robustness benchmark.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "viewbench/viewbench.hpp"

namespace fs = std::filesystem;
using namespace viewbench;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_bin_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("bad bin angle '" + tok + "'");
    }
  }
  return out;
}

void write_or_print(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    detail::write_all_atomic(path, text);
  }
}

/// Flags shared by the config-driven subcommands. Unset flags leave the
/// config value alone.
struct RunFlags {
  std::string config;
  std::string manifest;
  std::vector<std::string> models;  // name=feature_root
  std::optional<std::size_t> capacity;
  std::vector<std::size_t> capacities;
  std::optional<std::size_t> k;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> difficulties;
  std::string out;
  std::optional<std::size_t> shards;
  std::optional<std::size_t> chunk_size;
  std::optional<unsigned> threads;
  std::string sampling;
  std::string interpolation;
  bool no_predictions = false;
  bool dump_distributions = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run configuration");
    app->add_option("--manifest", manifest, "Subset manifest (JSON)");
    app->add_option("--model", models, "Model features as NAME=FEATURE_ROOT (repeatable)");
    app->add_option("--capacity", capacity, "Memory bank capacity");
    app->add_option("--capacities", capacities, "Capacities for the memory sweep")->delimiter(',');
    app->add_option("-k,--k", k, "Nearest neighbours per patch");
    app->add_option("--temperature", temperature, "Softmax temperature for label aggregation");
    app->add_option("--seed", seed, "Sampling seed");
    app->add_option("--difficulties", difficulties, "Subset of Easy,Medium,Hard,Extreme")->delimiter(',');
    app->add_option("-o,--out", out, "Output root");
    app->add_option("--shards", shards, "Memory bank shards");
    app->add_option("--chunk-size", chunk_size, "Query images per processing chunk");
    app->add_option("--threads", threads, "Worker threads (0 = all cores)");
    app->add_option("--sampling", sampling, "uniform | class-balanced");
    app->add_option("--interpolation", interpolation, "bilinear | nearest");
    app->add_flag("--no-predictions", no_predictions, "Do not write predicted masks");
    app->add_flag("--dump-distributions", dump_distributions, "Write per-patch class distributions");
  }

  RunConfig resolve() const {
    try {
      RunConfig c = config.empty() ? RunConfig{} : load_config(config);
      apply_environment(c);
      if (!manifest.empty()) c.manifest = manifest;
      if (!models.empty()) {
        c.models.clear();
        for (const auto& m : models) {
          const auto eq = m.find('=');
          if (eq == std::string::npos || eq == 0) throw UsageError("--model expects NAME=FEATURE_ROOT, got '" + m + "'");
          c.models.push_back({m.substr(0, eq), m.substr(eq + 1)});
        }
        std::sort(c.models.begin(), c.models.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
      }
      if (capacity) c.capacity = *capacity;
      if (!capacities.empty()) c.capacities = capacities;
      if (k) c.k = *k;
      if (temperature) c.temperature = *temperature;
      if (seed) c.seed = *seed;
      if (!difficulties.empty()) c.difficulties = difficulties;
      if (!out.empty()) c.output_root = out;
      if (shards) c.shards = *shards;
      if (chunk_size) c.chunk_size = *chunk_size;
      if (threads) c.threads = *threads;
      if (!sampling.empty()) c.sampling = parse_sampling(sampling);
      if (!interpolation.empty()) c.interpolation = parse_interpolation(interpolation);
      if (no_predictions) c.write_predictions = false;
      if (dump_distributions) c.dump_distributions = true;
      if (c.manifest.empty()) throw UsageError("no manifest given (--manifest or config)");
      c.validate();
      return c;
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }
};

int cmd_bin_views(const std::string& images_txt, const std::string& image_dir, double tolerance,
                  const std::string& bins, const std::string& out) {
  std::ifstream in(images_txt);
  if (!in) throw IoError("cannot open " + images_txt);
  auto poses = parse_colmap_images(in);
  if (!image_dir.empty()) {
    std::erase_if(poses, [&](const CameraPose& p) { return !fs::exists(fs::path(image_dir) / p.image_name); });
  }
  if (poses.empty()) throw DomainError("no usable frames");
  BinSpec spec = bins.empty() ? BinSpec::standard() : BinSpec{parse_bin_list(bins)};
  const auto& ref = reference_pose(poses);
  const auto angles = relative_angles(poses, ref);
  const auto assignment = assign_bins(angles, spec);
  const auto validity = validate_instance(assignment, tolerance);

  std::map<std::int64_t, std::string> names;
  for (const auto& p : poses) names[p.image_id] = p.image_name;
  std::ostringstream s;
  s << "bin_deg,frame,image_name,theta_deg,error_deg\n";
  for (const auto& slot : assignment.bins) {
    s << format_degrees(slot.center) << ',';
    if (slot.choice) {
      s << slot.choice->frame << ',' << names[slot.choice->frame] << ',' << fmt6(slot.choice->theta_deg) << ','
        << fmt6(slot.choice->error_deg);
    } else {
      s << ",,,";
    }
    s << '\n';
  }
  write_or_print(s.str(), out);
  std::cerr << "reference frame " << ref.image_id << "; " << (validity.valid ? "valid" : "invalid")
            << ", max |error| " << validity.max_abs_error_deg << " deg"
            << (validity.reason.empty() ? "" : " (" + validity.reason + ")") << '\n';
  return validity.valid ? 0 : kExitData;
}

std::string stats_csv(const AngleStats& stats) {
  std::ostringstream s;
  s << "class_number,class_name,mean_error_deg,std_error_deg,images_per_bin\n";
  for (const auto& c : stats) {
    s << c.class_number << ',' << c.class_name << ',' << fmt6(c.mean_error_deg) << ',' << fmt6(c.std_error_deg)
      << ',' << c.images_per_bin << '\n';
  }
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Viewpoint-robustness benchmark for frozen dense features"};
  app.require_subcommand(1);

  // bin-views
  std::string bv_images, bv_dir, bv_bins, bv_out;
  double bv_tol = kDefaultToleranceDeg;
  auto* bin_views = app.add_subcommand("bin-views", "Bin one instance's COLMAP frames by relative angle");
  bin_views->add_option("images_txt", bv_images, "COLMAP images.txt")->required();
  bin_views->add_option("--image-dir", bv_dir, "Keep only frames whose image exists here");
  bin_views->add_option("--tolerance", bv_tol, "Max |angular error| per bin, degrees")->check(CLI::PositiveNumber);
  bin_views->add_option("--bins", bv_bins, "Comma-separated bin centers (default 0,15,...,90)");
  bin_views->add_option("-o,--out", bv_out, "Output CSV (default stdout)");

  // build-subset
  std::string bs_root, bs_manifest, bs_excl, bs_copy, bs_bins;
  double bs_tol = kDefaultToleranceDeg;
  std::optional<double> bs_min_gb, bs_max_gb;
  auto* build_subset = app.add_subcommand("build-subset", "Scan a dataset tree and write the subset manifest");
  build_subset->add_option("root", bs_root, "Dataset root: <class>/<instance>/{images,masks,sparse}")->required();
  build_subset->add_option("-m,--manifest", bs_manifest, "Manifest output path")->required();
  build_subset->add_option("--exclusions", bs_excl, "Exclusion log (default <manifest>.exclusions.tsv)");
  build_subset->add_option("--copy-to", bs_copy, "Copy images and class-id masks into this layout root");
  build_subset->add_option("--tolerance", bs_tol, "Max |angular error| per bin, degrees")->check(CLI::PositiveNumber);
  build_subset->add_option("--bins", bs_bins, "Comma-separated bin centers");
  build_subset->add_option("--min-gb", bs_min_gb, "Skip categories smaller than this (GB)")->check(CLI::NonNegativeNumber);
  build_subset->add_option("--max-gb", bs_max_gb, "Skip categories larger than this (GB)")->check(CLI::NonNegativeNumber);

  // stats
  std::string st_manifest, st_out;
  auto* stats = app.add_subcommand("stats", "Per-class angle selection statistics");
  stats->add_option("manifest", st_manifest, "Subset manifest")->required();
  stats->add_option("-o,--out", st_out, "Output CSV (default stdout)");

  // build-bank
  RunFlags bb_flags;
  std::string bb_difficulty = "Extreme", bb_bins, bb_model, bb_bank;
  auto* build_bank_cmd = app.add_subcommand("build-bank", "Build and save a memory bank snapshot");
  bb_flags.attach(build_bank_cmd);
  build_bank_cmd->add_option("--difficulty", bb_difficulty, "Take reference bins from this split");
  build_bank_cmd->add_option("--bins", bb_bins, "Explicit comma-separated reference bins");
  build_bank_cmd->add_option("--use-model", bb_model, "Configured model to build for (default: first)");
  build_bank_cmd->add_option("--bank", bb_bank, "Snapshot path (default <out>/<model>.mbk)");

  RunFlags ev_flags, bp_flags, ms_flags, ov_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Cross-viewpoint generalization per difficulty");
  ev_flags.attach(evaluate);

  std::string bp_from;
  auto* breaking = app.add_subcommand("breaking-point", "Normalized degradation curves and breaking points");
  bp_flags.attach(breaking);
  breaking->add_option("--from", bp_from, "Reuse an existing bins.csv instead of evaluating");

  auto* sweep = app.add_subcommand("memory-sweep", "Evaluate several bank capacities and tabulate gains");
  ms_flags.attach(sweep);

  OverlaySpec ov_spec;
  auto* overlays = app.add_subcommand("overlays", "Write overlay and difference images for sampled frames");
  ov_flags.attach(overlays);
  overlays->add_option("--difficulty", ov_spec.difficulty, "Split whose predictions to visualize");
  overlays->add_option("--per-model", ov_spec.per_model, "Frames sampled per model");
  overlays->add_option("--sample-seed", ov_spec.seed, "Sampling seed for frames");

  std::string rp_root, rp_out;
  auto* report = app.add_subcommand("report", "Render a Markdown report from result CSVs");
  report->add_option("out_root", rp_root, "Output root holding the CSVs (default $VIEWBENCH_OUTPUT_ROOT, then viewbench-out)");
  report->add_option("-o,--out", rp_out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*bin_views) return cmd_bin_views(bv_images, bv_dir, bv_tol, bv_bins, bv_out);

    if (*build_subset) {
      ManifestBuildOptions opt;
      if (!bs_bins.empty()) opt.spec = BinSpec{parse_bin_list(bs_bins)};
      opt.tolerance_deg = bs_tol;
      constexpr double kGB = 1e9;
      if (bs_min_gb) opt.min_category_bytes = static_cast<std::uintmax_t>(*bs_min_gb * kGB);
      if (bs_max_gb) opt.max_category_bytes = static_cast<std::uintmax_t>(*bs_max_gb * kGB);
      auto result = build_manifest(bs_root, opt);
      if (!bs_copy.empty()) result.manifest = materialize_subset(result.manifest, fs::absolute(bs_copy));
      save_manifest(result.manifest, bs_manifest);
      std::ostringstream log;
      write_exclusions(log, result.exclusions);
      detail::write_all_atomic(bs_excl.empty() ? bs_manifest + ".exclusions.tsv" : bs_excl, log.str());
      std::size_t n = 0;
      for (const auto& c : result.manifest.categories) n += c.instances.size();
      std::cerr << result.manifest.categories.size() << " categories, " << n << " instances kept, "
                << result.exclusions.size() << " excluded\n";
      return 0;
    }

    if (*stats) {
      write_or_print(stats_csv(angle_stats(load_manifest(st_manifest))), st_out);
      return 0;
    }

    if (*build_bank_cmd) {
      const RunConfig cfg = bb_flags.resolve();
      const auto manifest = load_manifest(cfg.manifest);
      const auto& model = [&]() -> const ModelFeatures& {
        if (bb_model.empty()) return cfg.models.front();
        for (const auto& m : cfg.models) {
          if (m.name == bb_model) return m;
        }
        throw UsageError("model '" + bb_model + "' not configured");
      }();
      std::set<double> bins;
      if (!bb_bins.empty()) {
        for (const double b : parse_bin_list(bb_bins)) bins.insert(b);
      } else {
        try {
          bins = difficulty_by_name(bb_difficulty).reference_set();
        } catch (const DomainError& e) {
          throw UsageError(e.what());
        }
      }
      const DiskFrameSource source(manifest, model.feature_root);
      const auto bank = build_bank(manifest, bins, source, {cfg.capacity, cfg.seed, cfg.sampling});
      const fs::path path = bb_bank.empty() ? cfg.output_root / (model.name + ".mbk") : fs::path(bb_bank);
      save_bank(bank, path, fs::path(path.string() + ".provenance.tsv"));
      std::cerr << "bank of " << bank.size() << " entries (dim " << bank.dim() << ") -> " << path.string() << '\n';
      return 0;
    }

    if (*evaluate) {
      const auto results = run_experiment_a(ev_flags.resolve());
      std::cout << summary_csv(results);
      return 0;
    }

    if (*breaking) {
      const RunConfig cfg = bp_flags.resolve();
      std::vector<ModelCurve> curves;
      if (!bp_from.empty()) {
        curves = breaking_point_analysis(read_bins_csv(bp_from, "Extreme", cfg.capacity));
        write_curves(cfg.output_root, curves);
      } else {
        curves = run_experiment_b(cfg);
      }
      std::cout << breaking_points_csv(curves);
      return 0;
    }

    if (*sweep) {
      const auto results = run_experiment_c(ms_flags.resolve());
      std::cout << gains_csv(results.gains);
      return 0;
    }

    if (*overlays) {
      const auto run = emit_overlays(ov_flags.resolve(), ov_spec);
      for (const auto& s : run.skipped) std::cerr << "skipped\t" << s << '\n';
      std::cerr << run.written.size() << " overlay sets written\n";
      return 0;
    }

    if (*report) {
      if (rp_root.empty()) {
        RunConfig defaults;
        apply_environment(defaults);
        rp_root = defaults.output_root.string();
      }
      write_or_print(render_report(rp_root), rp_out);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
