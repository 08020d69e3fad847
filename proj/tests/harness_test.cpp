#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fixture.hpp"
#include "viewbench/viewbench.hpp"

using namespace viewbench;
using namespace viewbench::testing;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

FixtureOptions small() {
  FixtureOptions o;
  o.classes = 2;
  o.instances = 2;
  return o;
}

}  // namespace

TEST(Config, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.k, 30u);
  EXPECT_EQ(c.temperature, 0.02);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.capacity, 1024000u);
  EXPECT_EQ(c.capacities, (std::vector<std::size_t>{320000, 640000, 1024000}));
  EXPECT_EQ(c.difficulties, (std::vector<std::string>{"Easy", "Medium", "Hard", "Extreme"}));
  EXPECT_EQ(c.interpolation, Interpolation::Bilinear);
  EXPECT_EQ(c.sampling, SamplingPolicy::Uniform);
}

TEST(Config, FromJsonResolvesRelativePaths) {
  const auto j = nlohmann::json::parse(R"({
    "manifest": "m.json", "models": {"B": "fb", "A": "/abs/fa"}, "output_root": "out",
    "memory": {"capacity": 100, "capacities": [10, 20], "seed": 3, "shards": 2, "sampling": "class-balanced"},
    "retrieval": {"k": 5, "temperature": 0.5, "interpolation": "nearest"},
    "evaluation": {"difficulties": ["Hard"], "chunk_size": 9, "threads": 2, "write_predictions": false}
  })");
  const auto c = config_from_json(j, "/base");
  EXPECT_EQ(c.manifest, fs::path("/base/m.json"));
  ASSERT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.models[0].name, "A");
  EXPECT_EQ(c.models[0].feature_root, fs::path("/abs/fa"));
  EXPECT_EQ(c.models[1].feature_root, fs::path("/base/fb"));
  EXPECT_EQ(c.output_root, fs::path("/base/out"));
  EXPECT_EQ(c.capacity, 100u);
  EXPECT_EQ(c.capacities, (std::vector<std::size_t>{10, 20}));
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.shards, 2u);
  EXPECT_EQ(c.sampling, SamplingPolicy::ClassBalanced);
  EXPECT_EQ(c.k, 5u);
  EXPECT_EQ(c.temperature, 0.5);
  EXPECT_EQ(c.interpolation, Interpolation::Nearest);
  EXPECT_EQ(c.difficulties, std::vector<std::string>{"Hard"});
  EXPECT_EQ(c.chunk_size, 9u);
  EXPECT_EQ(c.threads, 2u);
  EXPECT_FALSE(c.write_predictions);
}

TEST(Config, BadValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"retrieval": {"k": "many"}})")), DomainError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"memory": {"sampling": "greedy"}})")), DomainError);
  EXPECT_THROW(parse_interpolation("cubic"), DomainError);
  RunConfig c;
  EXPECT_THROW(c.validate(), DomainError);  // no models
  c.models = {{"m", "x"}};
  EXPECT_NO_THROW(c.validate());
  c.difficulties = {"Impossible"};
  EXPECT_THROW(c.validate(), DomainError);
  c.difficulties = {"Easy"};
  c.temperature = 0;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Config, EnvironmentOverridesOutputRoot) {
  const auto dir = scratch_dir("cfg_env");
  std::ofstream(dir / "c.json") << R"({"output_root": "from_config"})";
  auto c = load_config(dir / "c.json");
  EXPECT_EQ(c.output_root, dir / "from_config");
  ::setenv(kOutputRootEnv, "/tmp/from_env", 1);
  apply_environment(c);
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(c.output_root, fs::path("/tmp/from_env"));
  EXPECT_THROW(load_config(dir / "missing.json"), Error);
}

TEST(Difficulties, Splits) {
  const auto& easy = difficulty_by_name("Easy");
  EXPECT_EQ(easy.reference_bins, (std::vector<double>{0, 30, 60, 90}));
  for (const auto& d : standard_difficulties()) {
    EXPECT_TRUE(d.is_reference(0)) << d.name;
    std::set<double> all(d.reference_bins.begin(), d.reference_bins.end());
    for (const double b : d.validation_bins) EXPECT_TRUE(all.insert(b).second) << d.name << " " << b;
    EXPECT_EQ(all.size(), 7u);
  }
  EXPECT_THROW(difficulty_by_name("easy"), DomainError);
  EXPECT_EQ(difficulties_csv().substr(0, 42), "difficulty,reference_bins,validation_bins\n");
}

TEST(ExperimentA, SelfRetrievalIsPerfect) {
  const auto dir = scratch_dir("exp_a");
  const auto fx = make_fixture(dir / "data", small());
  const auto r = run_experiment_a(fixture_config(fx, dir / "out"));
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells) {
    EXPECT_NEAR(c.validation.miou, 1.0, 1e-9) << c.difficulty;
    EXPECT_EQ(c.validation.present(), 3u);
  }
  for (const auto& b : r.bins) EXPECT_NEAR(b.report.miou, 1.0, 1e-9);
  for (const auto* f : {"iou.csv", "summary.csv", "bins.csv"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  const auto summary = slurp(dir / "out" / "summary.csv");
  EXPECT_NE(summary.find("synthetic,Extreme,1024000,1.000000,0.000000"), std::string::npos) << summary;
  // Predictions land where the overlay step expects them.
  const auto frames = frames_in_bins(fx.manifest, {15.0});
  EXPECT_TRUE(fs::exists(prediction_path(fixture_config(fx, dir / "out"), "synthetic", "Easy", 1024000, frames.front().key())));
}

TEST(ExperimentA, ExtremeBankComesFromZeroDegreesOnly) {
  const auto dir = scratch_dir("exp_a_bank");
  const auto fx = make_fixture(dir / "data", small());
  const DiskFrameSource src(fx.manifest, fx.feature_root);
  const auto bank = build_bank(fx.manifest, difficulty_by_name("Extreme").reference_set(), src, {1000000, 42});
  EXPECT_EQ(bank.size(), 4u * 64u);
  for (const auto& s : bank.sources()) EXPECT_EQ(s.bin_deg, 0.0);
}

TEST(ExperimentA, MissingFeaturesIsDataError) {
  const auto dir = scratch_dir("exp_a_missing");
  const auto fx = make_fixture(dir / "data", small());
  auto cfg = fixture_config(fx, dir / "out");
  cfg.models[0].feature_root = dir / "nowhere";
  EXPECT_THROW(run_experiment_a(cfg), Error);
}

TEST(ExperimentB, Examples) {
  const auto none = breaking_point_analysis({{"m", {{0, 0.6}, {15, 0.6}, {30, 0.6}}}});
  EXPECT_FALSE(none[0].breaking.bin);
  EXPECT_NE(breaking_points_csv(none).find("m,None,0.000000"), std::string::npos);
  const auto broke = breaking_point_analysis({{"m", {{0, 0.5}, {15, 0.4}}}});
  EXPECT_EQ(broke[0].breaking.bin, 15.0);
  EXPECT_NE(breaking_points_csv(broke).find("m,15,-0.200000"), std::string::npos);
  EXPECT_THROW(breaking_point_analysis({{"m", {{15, 0.5}}}}), DomainError);
}

TEST(ExperimentB, SelfRetrievalNeverBreaks) {
  const auto dir = scratch_dir("exp_b");
  const auto fx = make_fixture(dir / "data", small());
  const auto curves = run_experiment_b(fixture_config(fx, dir / "out"));
  ASSERT_EQ(curves.size(), 1u);
  EXPECT_EQ(curves[0].curve.bins.size(), 7u);
  EXPECT_FALSE(curves[0].breaking.bin);
  for (const auto* f : {"curve.csv", "breaking_points.csv", "curve_raw.csv", "curve_normalized.csv",
                        "extreme/bins.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const auto from_csv = read_bins_csv(dir / "out" / "extreme" / "bins.csv", "Extreme");
  EXPECT_EQ(from_csv.at("synthetic").size(), 7u);
}

TEST(ExperimentB, NoisyViewsDegrade) {
  const auto dir = scratch_dir("exp_b_noise");
  auto opt = small();
  opt.view_noise = 0.6;
  const auto fx = make_fixture(dir / "data", opt);
  const auto curves = run_experiment_b(fixture_config(fx, dir / "out"));
  const auto& c = curves[0].curve;
  EXPECT_EQ(c.normalized.front(), 1.0);
  EXPECT_LT(c.normalized.back(), c.normalized.front());
}

TEST(ExperimentC, IdenticalBanksGiveZeroGain) {
  const auto dir = scratch_dir("exp_c");
  const auto fx = make_fixture(dir / "data", small());
  auto cfg = fixture_config(fx, dir / "out");
  cfg.capacities = {100000, 200000};  // both exceed the reference patch count
  cfg.difficulties = {"Easy", "Extreme"};
  const auto r = run_experiment_c(cfg);
  ASSERT_FALSE(r.gains.cells.empty());
  for (const auto& c : r.gains.cells) EXPECT_EQ(c.gain, 0.0) << c.model << " " << c.difficulty;
  const auto csv = slurp(dir / "out" / "gains.csv");
  EXPECT_NE(csv.find("synthetic,Easy,100000->200000,0.000000"), std::string::npos) << csv;
}

TEST(ExperimentC, SmallBanksAndSweepErrors) {
  const auto dir = scratch_dir("exp_c_small");
  auto opt = small();
  opt.view_noise = 0.3;
  const auto fx = make_fixture(dir / "data", opt);
  auto cfg = fixture_config(fx, dir / "out");
  cfg.capacities = {8, 16};
  cfg.difficulties = {"Extreme"};
  const auto r = run_experiment_c(cfg);
  EXPECT_TRUE(r.gains.get("synthetic", "Extreme", 8, 16).has_value());
  cfg.capacities = {8};
  EXPECT_THROW(run_experiment_c(cfg), DomainError);
}

TEST(Harness, ChunkSizeDoesNotChangeOutputs) {
  const auto dir = scratch_dir("chunks");
  auto opt = small();
  opt.view_noise = 0.4;
  const auto fx = make_fixture(dir / "data", opt);
  std::string baseline;
  for (const std::size_t chunk : {1, 4, 16}) {
    auto cfg = fixture_config(fx, dir / ("out" + std::to_string(chunk)), 300);
    cfg.chunk_size = chunk;
    cfg.difficulties = {"Hard"};
    run_experiment_a(cfg);
    const auto bytes = slurp(cfg.output_root / "iou.csv") + slurp(cfg.output_root / "bins.csv");
    if (baseline.empty()) baseline = bytes;
    EXPECT_EQ(bytes, baseline) << "chunk " << chunk;
  }
}

TEST(Harness, SameSeedSameBytes) {
  const auto dir = scratch_dir("determinism");
  auto opt = small();
  opt.view_noise = 0.4;
  const auto fx = make_fixture(dir / "data", opt);
  std::string first;
  for (int run = 0; run < 2; ++run) {
    auto cfg = fixture_config(fx, dir / ("out" + std::to_string(run)), 200);
    cfg.difficulties = {"Medium"};
    cfg.shards = run + 1;
    run_experiment_a(cfg);
    const auto bytes = slurp(cfg.output_root / "summary.csv") + slurp(cfg.output_root / "iou.csv");
    if (run == 0) first = bytes;
    EXPECT_EQ(bytes, first);
  }
}

TEST(Overlay, DifferenceMapCategories) {
  PixelMask gt(1, 4), pred(1, 4);
  gt.labels = {0, 1, 1, 2};
  pred.labels = {0, 1, 0, 1};
  DiffCounts counts;
  const auto img = difference_map(gt, pred, &counts);
  EXPECT_EQ(counts.agree, 2u);
  EXPECT_EQ(counts.gt_only, 1u);
  EXPECT_EQ(counts.pred_only, 1u);  // a wrong non-background class counts as pred-only
  EXPECT_EQ(img.pixels[6], kGtOnlyColor[0]);
  EXPECT_EQ(classify_pixel(0, 3), DiffCategory::PredOnly);
}

TEST(Overlay, SelfPredictionsAgreeAndMissingAreSkipped) {
  const auto dir = scratch_dir("overlays");
  const auto fx = make_fixture(dir / "data", small());
  auto cfg = fixture_config(fx, dir / "out");
  cfg.difficulties = {"Extreme"};
  run_experiment_a(cfg);
  OverlaySpec spec;
  spec.per_model = 3;
  auto run = emit_overlays(cfg, spec);
  ASSERT_EQ(run.written.size(), 3u);
  EXPECT_TRUE(run.skipped.empty());
  for (const auto& rec : run.written) {
    EXPECT_EQ(rec.counts.gt_only + rec.counts.pred_only, 0u);
    EXPECT_EQ(rec.counts.agree, 32u * 32u);
    EXPECT_TRUE(fs::exists(cfg.output_root / "overlays" / "synthetic" / "Extreme" / (rec.key + "_diff.png")));
  }

  // Replace one prediction by all-background: gt_only equals the object area.
  const auto target = run.written.front().key;
  const auto pred_path = prediction_path(cfg, "synthetic", "Extreme", cfg.capacity, target);
  write_mask(pred_path, PixelMask(32, 32, 0));
  // Remove another so it is skipped.
  fs::remove(prediction_path(cfg, "synthetic", "Extreme", cfg.capacity, run.written[1].key));
  run = emit_overlays(cfg, spec);
  EXPECT_EQ(run.written.size(), 2u);
  ASSERT_EQ(run.skipped.size(), 1u);
  EXPECT_NE(slurp(cfg.output_root / "overlays" / "skipped.tsv").find("missing prediction"), std::string::npos);
  for (const auto& rec : run.written) {
    if (rec.key != target) continue;
    const auto frames = frames_in_bins(fx.manifest, {15, 30, 45, 60, 75, 90});
    for (const auto& f : frames) {
      if (f.key() != target) continue;
      const auto gt = load_frame_mask(fx.manifest, *f.category, *f.frame);
      std::uint64_t object = 0;
      for (const auto l : gt.labels) object += l != 0;
      EXPECT_EQ(rec.counts.gt_only, object);
      EXPECT_EQ(rec.counts.agree, 32u * 32u - object);
    }
  }
}

TEST(Report, RendersAvailableTables) {
  const auto dir = scratch_dir("report");
  EXPECT_THROW(render_report(dir), IoError);
  std::ofstream(dir / "summary.csv") << "model,difficulty,capacity,miou,std\nA,Easy,10,0.5,0.1\nA,Hard,10,0.25,0\n";
  std::ofstream(dir / "breaking_points.csv") << "model,breaking_bin_deg,biggest_drop\nA,None,-0.020000\n";
  const auto md = render_report(dir);
  EXPECT_NE(md.find("0.500 +- 0.100"), std::string::npos) << md;
  EXPECT_NE(md.find("| A | None | -0.020000 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| Easy | 0;30;60;90 | 15;45;75 |"), std::string::npos) << md;
}
