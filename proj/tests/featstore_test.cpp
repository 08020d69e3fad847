#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fixture.hpp"
#include "viewbench/featstore.hpp"

using namespace viewbench;
namespace fs = std::filesystem;

namespace {

PatchFeatureMap random_map(std::mt19937_64& rng, std::uint32_t h, std::uint32_t w, std::uint32_t d) {
  std::normal_distribution<float> g(0.0f, 3.0f);
  PatchFeatureMap m(h, w, d);
  for (auto& v : m.data) v = g(rng);
  return m;
}

PixelMask random_mask(std::mt19937_64& rng, std::uint32_t h, std::uint32_t w, ClassId classes) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  PixelMask m(h, w);
  for (auto& l : m.labels) l = static_cast<ClassId>(u(rng));
  return m;
}

}  // namespace

TEST(FeatureFile, SmallestMapLayout) {
  PatchFeatureMap m(1, 1, 4);
  m.data = {1, 2, 3, 4};
  const std::string bytes = encode_feature_map(m);
  ASSERT_EQ(bytes.size(), 4u + 16u + 16u);
  EXPECT_EQ(bytes.substr(0, 4), "PFV1");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(detail::get_u32(p + 4), 1u);
  EXPECT_EQ(detail::get_u32(p + 8), 1u);
  EXPECT_EQ(detail::get_u32(p + 12), 4u);
  EXPECT_EQ(detail::get_u32(p + 16), 0u);
  // 1.0f little-endian
  EXPECT_EQ(detail::get_u32(p + 20), 0x3F800000u);
  EXPECT_EQ(decode_feature_map(bytes), m);
}

TEST(FeatureFile, PaperSizedPayload) {
  PatchFeatureMap m(32, 32, 768);
  EXPECT_EQ(encode_feature_map(m).size() - kFeatureHeaderBytes, 3145728u);
}

TEST(FeatureFile, DiskRoundTripIsBitExact) {
  const auto dir = viewbench::testing::scratch_dir("featfile_roundtrip");
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::uint32_t> side(1, 5), dim(1, 9);
  for (int i = 0; i < 10000; ++i) {
    const auto m = random_map(rng, side(rng), side(rng), dim(rng));
    if (i % 500 == 0) {
      write_feature_file(m, dir / "f.pfv");
      EXPECT_EQ(read_feature_file(dir / "f.pfv"), m);
    } else {
      ASSERT_EQ(decode_feature_map(encode_feature_map(m)), m);
    }
  }
  EXPECT_FALSE(fs::exists(dir / "f.pfv.tmp"));
}

TEST(FeatureFile, BadMagic) {
  PatchFeatureMap m(1, 1, 1);
  std::string bytes = encode_feature_map(m);
  bytes[3] = '2';
  try {
    decode_feature_map(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(FeatureFile, BadDtype) {
  std::string bytes = encode_feature_map(PatchFeatureMap(1, 1, 1));
  bytes[16] = 1;
  try {
    decode_feature_map(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
}

TEST(FeatureFile, TruncatedHeaderAndPayload) {
  const std::string bytes = encode_feature_map(PatchFeatureMap(2, 2, 3));
  EXPECT_THROW(decode_feature_map(bytes.substr(0, 10)), FormatError);
  try {
    decode_feature_map(bytes.substr(0, bytes.size() - 1));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), bytes.size() - 1);
  }
  EXPECT_THROW(decode_feature_map(bytes + "x"), FormatError);
}

TEST(FeatureFile, NonFiniteValueNamesOffset) {
  PatchFeatureMap m(1, 2, 2);
  std::string bytes = encode_feature_map(m);
  std::string nan;
  detail::put_f32(nan, std::numeric_limits<float>::quiet_NaN());
  bytes.replace(20 + 8, 4, nan);
  try {
    decode_feature_map(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 28u);
  }
  m.data[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(encode_feature_map(m), FormatError);
}

TEST(FeatureFile, ShapeMismatchOnWrite) {
  PatchFeatureMap m(2, 2, 2);
  m.data.pop_back();
  EXPECT_THROW(encode_feature_map(m), StructuralError);
  EXPECT_THROW(encode_feature_map(PatchFeatureMap{}), DomainError);
}

TEST(FeatureFile, MissingFileIsIoError) {
  EXPECT_THROW(read_feature_file("/nonexistent/viewbench.pfv"), IoError);
}

TEST(FeatureIndex, ParseAndWrite) {
  std::istringstream in("# sidecar\nDINO/7_stove/0/a_1.pfv\t32\t32\t768\t7_stove/0/a_1_mask.png\n\n"
                        "x.pfv\t36\t36\t768\tx_mask.png\r\n");
  const auto entries = parse_feature_index(in);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].path, "DINO/7_stove/0/a_1.pfv");
  EXPECT_EQ(entries[0].grid_h, 32u);
  EXPECT_EQ(entries[1].dim, 768u);
  EXPECT_EQ(entries[1].class_file, "x_mask.png");
  std::ostringstream out;
  write_feature_index(out, entries);
  std::istringstream again(out.str());
  EXPECT_EQ(parse_feature_index(again), entries);
}

TEST(FeatureIndex, Errors) {
  std::istringstream few("a\t1\t2\t3\n");
  try {
    parse_feature_index(few);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  std::istringstream bad("ok\t1\t1\t1\tm\nbad\tx\t1\t1\tm\n");
  try {
    parse_feature_index(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Mask, PngRoundTrip) {
  const auto dir = viewbench::testing::scratch_dir("mask_png");
  std::mt19937_64 rng(22);
  const auto m = random_mask(rng, 13, 17, 16);
  write_mask(dir / "m.png", m);
  EXPECT_EQ(read_mask(dir / "m.png"), m);
  PixelMask big(1, 1, 300);
  EXPECT_THROW(write_mask(dir / "big.png", big), DomainError);
  write_png(dir / "rgb.png", Image8(2, 2, 3));
  EXPECT_THROW(read_mask(dir / "rgb.png"), StructuralError);
}

TEST(Downsample, UniformMask) {
  const PixelMask m(20, 12, 3);
  const auto g = downsample_mask(m, 7, 5);
  for (const auto l : g.labels) EXPECT_EQ(l, 3);
}

TEST(Downsample, MajorityOfTwoByTwo) {
  PixelMask m(2, 2);
  m.labels = {0, 1, 1, 1};
  EXPECT_EQ(downsample_mask(m, 1, 1).labels, std::vector<ClassId>{1});
}

TEST(Downsample, TieGoesToSmallestId) {
  PixelMask m(2, 2);
  m.labels = {4, 2, 2, 4};
  EXPECT_EQ(downsample_mask(m, 1, 1).labels, std::vector<ClassId>{2});
}

TEST(Downsample, GridLargerThanMask) {
  EXPECT_THROW(downsample_mask(PixelMask(4, 4), 5, 2), DomainError);
  EXPECT_THROW(downsample_mask(PixelMask(4, 4), 0, 2), DomainError);
}

TEST(Downsample, RandomMatchesBlockHistogram) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mask(rng, 64, 64, 5);
    const auto g = downsample_mask(m, 8, 8);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        int hist[5] = {};
        for (int y = 8 * r; y < 8 * r + 8; ++y) {
          for (int x = 8 * c; x < 8 * c + 8; ++x) ++hist[m.at(y, x)];
        }
        int best = 0;
        for (int k = 1; k < 5; ++k) {
          if (hist[k] > hist[best]) best = k;
        }
        EXPECT_EQ(g.at(r, c), best);
      }
    }
  }
}

TEST(Downsample, UnevenBlocksCoverEdges) {
  // 5 pixels over 2 cells: spans [0,3) and [2,5).
  EXPECT_EQ(cell_span(0, 2, 5), std::make_pair(0u, 3u));
  EXPECT_EQ(cell_span(1, 2, 5), std::make_pair(2u, 5u));
  PixelMask m(1, 5);
  m.labels = {0, 0, 1, 1, 1};
  const auto g = downsample_mask(m, 1, 2);
  EXPECT_EQ(g.labels, (std::vector<ClassId>{0, 1}));
}

TEST(Upsample, UniformDistribution) {
  DistributionGrid d(3, 4, 5);
  for (std::size_t i = 0; i < 12; ++i) d.cell(i)[2] = 1.0;
  const auto m = upsample_distribution(d, 17, 11);
  EXPECT_EQ(m, PixelMask(17, 11, 2));
}

TEST(Upsample, SingleCellIsConstant) {
  DistributionGrid d(1, 1, 3);
  d.probs = {0.2, 0.5, 0.3};
  EXPECT_EQ(upsample_distribution(d, 9, 40), PixelMask(9, 40, 1));
  EXPECT_EQ(upsample_distribution(d, 9, 40, Interpolation::Nearest), PixelMask(9, 40, 1));
}

TEST(Upsample, OneHotCornersSplitAtMidlines) {
  DistributionGrid d(2, 2, 4);
  for (std::size_t i = 0; i < 4; ++i) d.cell(i)[i] = 1.0;
  const auto m = upsample_distribution(d, 8, 8);
  for (std::uint32_t y = 0; y < 8; ++y) {
    for (std::uint32_t x = 0; x < 8; ++x) {
      // Analytic bilinear weights at pixel centres.
      const double sy = std::clamp((y + 0.5) * 2 / 8 - 0.5, 0.0, 1.0);
      const double sx = std::clamp((x + 0.5) * 2 / 8 - 0.5, 0.0, 1.0);
      const double w[4] = {(1 - sy) * (1 - sx), (1 - sy) * sx, sy * (1 - sx), sy * sx};
      const auto best = static_cast<ClassId>(std::max_element(w, w + 4) - w);
      EXPECT_EQ(m.at(y, x), best) << y << "," << x;
      EXPECT_EQ(best, (y >= 4 ? 2 : 0) + (x >= 4 ? 1 : 0));
    }
  }
}

TEST(Upsample, OnlyClassesWithMassAppear) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DistributionGrid d(4, 5, 8);
  for (std::size_t i = 0; i < 20; ++i) {
    auto p = d.cell(i);
    p[1] = u(rng) / 2;
    p[5] = u(rng) / 2;
    p[6] = 1.0 - p[1] - p[5];
  }
  const auto m = upsample_distribution(d, 23, 31);
  for (const auto l : m.labels) EXPECT_TRUE(l == 1 || l == 5 || l == 6);
}

TEST(Upsample, DownsampleRecoversUniformBlocks) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    const auto grid_mask = random_mask(rng, 6, 6, 4);
    const LabelGrid g{6, 6, grid_mask.labels};
    for (const auto mode : {Interpolation::Nearest, Interpolation::Bilinear}) {
      const auto up = upsample_distribution(one_hot(g, 4), 6, 6, mode);
      EXPECT_EQ(downsample_mask(up, 6, 6), g);
    }
    const auto up = upsample_distribution(one_hot(g, 4), 24, 24, Interpolation::Nearest);
    EXPECT_EQ(downsample_mask(up, 6, 6), g);
  }
}

TEST(OneHot, RejectsOutOfRangeLabels) {
  EXPECT_THROW(one_hot(LabelGrid{1, 1, {3}}, 3), DomainError);
}
