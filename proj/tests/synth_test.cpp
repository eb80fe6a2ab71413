#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "hnet/dataset.hpp"
#include "hnet/png.hpp"
#include "hnet/synth.hpp"
#include "test_util.hpp"

namespace hnet {
namespace {

Plane ramp(Eigen::Index h, Eigen::Index w) {
  Plane p(h, w);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(i) / static_cast<float>(p.size());
  return p;
}

bool same(const Plane& a, const Plane& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; }

TEST(Patchify, EightByEightGivesSixteenTwoByTwoPatches) {
  const auto patches = patchify(ramp(8, 8));
  ASSERT_EQ(patches.size(), 16u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.rows(), 2);
    EXPECT_EQ(p.cols(), 2);
  }
  // Row-major grid: patch 5 is grid cell (1, 1).
  EXPECT_EQ(patches[5](0, 0), ramp(8, 8)(2, 2));
}

TEST(Patchify, ReassemblyIsIdentity) {
  const Plane r = ramp(12, 20);
  EXPECT_TRUE(same(assemble(patchify(r)), r));
}

TEST(Patchify, ConstantRegionGivesIdenticalPatches) {
  const Plane c = Plane::Constant(8, 8, 0.3f);
  for (const auto& p : patchify(c)) EXPECT_TRUE(same(p, patchify(c)[0]));
}

TEST(Patchify, IndivisibleRegionIsRejected) {
  EXPECT_THROW(patchify(ramp(10, 8)), ShapeError);
  EXPECT_THROW(patchify(ramp(8, 8), 15), ConfigError);
}

TEST(ComposeBackground, IdenticalPatchesIgnoreRng) {
  const std::vector<Plane> patches(16, Plane::Constant(3, 3, 0.4f));
  Rng r1(1), r2(99);
  EXPECT_TRUE(same(compose_background(patches, r1), compose_background(patches, r2)));
  EXPECT_EQ(compose_background(patches, r1).rows(), 12);
}

TEST(ComposeBackground, SeededDrawIsReproducible) {
  const auto patches = patchify(ramp(16, 16));
  Rng r1(7), r2(7);
  EXPECT_TRUE(same(compose_background(patches, r1), compose_background(patches, r2)));
}

TEST(ComposeBackground, EveryCellHoldsASourcePatch) {
  const auto patches = patchify(ramp(16, 16));
  Rng rng(3);
  const auto cells = patchify(compose_background(patches, rng));
  for (const auto& c : cells) {
    bool found = false;
    for (const auto& p : patches) found = found || same(c, p);
    EXPECT_TRUE(found);
  }
}

TEST(ComposeBackground, UnequalPatchesAreRejected) {
  std::vector<Plane> patches(16, Plane::Zero(2, 2));
  patches[3] = Plane::Zero(2, 3);
  Rng rng(0);
  EXPECT_THROW(assemble(patches), ShapeError);
}

TEST(ComposeBackground, SmoothSourceIsLessVariableThanMixed) {
  double stds[2];
  for (int k = 0; k < 2; ++k) {
    const Difficulty d = k == 0 ? Difficulty::smooth : Difficulty::mixed;
    SynthConfig c;
    c.difficulty = d;
    const Plane src = background_source(d, 64, 64);
    Rng rng(derive_seed(11, 0xB6));
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (int i = 0; i < 32; ++i) {
      const Plane bg = sample_background(src, c, rng);
      for (Eigen::Index j = 0; j < bg.size(); ++j) {
        s += bg.data()[j];
        s2 += static_cast<double>(bg.data()[j]) * bg.data()[j];
        ++n;
      }
    }
    const double m = s / static_cast<double>(n);
    stds[k] = std::sqrt(s2 / static_cast<double>(n) - m * m);
  }
  EXPECT_LT(stds[0], stds[1]);
  // Frozen regression values for the bundled sources.
  EXPECT_NEAR(stds[0], 0.0497512752, 1e-6);
  EXPECT_NEAR(stds[1], 0.167478946, 1e-6);
}

TEST(Superimpose, EmptyMaskReturnsBackground) {
  const Plane bg = ramp(4, 6);
  const auto img = superimpose(Plane::Zero(4, 6), bg, 0.15);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(img.at(0, y, x, c), bg(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)));
}

TEST(Superimpose, FullMaskGivesConstantImage) {
  const auto img = superimpose(Plane::Ones(4, 6), ramp(4, 6), 0.15);
  for (float v : img.data()) EXPECT_EQ(v, 0.15f);
}

TEST(Superimpose, SinglePixelMaskChangesOnlyThatPixel) {
  const Plane bg = ramp(5, 5);
  Plane mask = Plane::Zero(5, 5);
  mask(2, 3) = 1.0f;
  const auto img = superimpose(mask, bg, 0.9);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const float expect = (y == 2 && x == 3) ? 0.9f : bg(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
      EXPECT_EQ(img.at(0, y, x, 0), expect);
    }
}

TEST(Superimpose, DimensionMismatchIsRejected) {
  EXPECT_THROW(superimpose(Plane::Zero(4, 4), ramp(4, 5), 0.1), ShapeError);
}

SynthConfig small_config(Difficulty d = Difficulty::smooth) {
  SynthConfig c;
  c.difficulty = d;
  c.height = 32;
  c.width = 32;
  c.seed = 21;
  return c;
}

TEST(SimulateRecord, ZeroCurvatureIsStraightWithZeroLateralForce) {
  const SynthConfig c = small_config();
  const Plane src = background_source(c.difficulty, c.height, c.width);
  Rng rng(1);
  const auto r = simulate_record({0.0, 0.0, 0.0, 1.7}, c, src, rng);
  EXPECT_EQ(r.force[0], 0.0);
  EXPECT_EQ(r.force[1], 0.0);
  EXPECT_EQ(r.force[2], 0.0);
  // A straight vertical catheter is symmetric about the centre column.
  const Plane m = render_catheter(0.0, 1.7, 0.0, 32, 32);
  for (Eigen::Index y = 0; y < 32; ++y)
    for (Eigen::Index x = 0; x < 32; ++x) EXPECT_EQ(m(y, x), m(y, 31 - x));
}

TEST(SimulateRecord, ForceMapFollowsTheAnalyticFormula) {
  const SimCatheterParams p{0.4, -0.6, 0.02, 1.25};
  const auto f = analytic_force(p);
  EXPECT_DOUBLE_EQ(f[0], 0.15 * 0.4);
  EXPECT_DOUBLE_EQ(f[1], 0.15 * -0.6);
  EXPECT_DOUBLE_EQ(f[2], 0.05 * 1.25 * (0.16 + 0.36));
}

TEST(SimulateRecord, SwappingCurvaturesSwapsLateralForces) {
  const SimCatheterParams p{0.3, -0.8, 0.01, 1.4}, q{-0.8, 0.3, 0.01, 1.4};
  const auto fp = analytic_force(p), fq = analytic_force(q);
  EXPECT_EQ(fp[0], fq[1]);
  EXPECT_EQ(fp[1], fq[0]);
  EXPECT_EQ(fp[2], fq[2]);
}

TEST(SimulateRecord, ForceMagnitudesStayInTheClinicalRange) {
  Rng rng(5);
  double largest = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const auto f = analytic_force(SimCatheterParams::sample(rng));
    largest = std::max(largest, std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]));
  }
  EXPECT_LE(largest, 0.3);
  EXPECT_GT(largest, 0.2);
}

TEST(SimulateRecord, FixedSeedIsBitIdentical) {
  const SynthConfig c = small_config(Difficulty::mixed);
  const Plane src = background_source(c.difficulty, c.height, c.width);
  const auto a = generate_record(c, src, 17), b = generate_record(c, src, 17);
  EXPECT_EQ(a.view_a, b.view_a);
  EXPECT_EQ(a.view_b, b.view_b);
  EXPECT_EQ(a.mask_a, b.mask_a);
  EXPECT_EQ(a.force, b.force);
}

TEST(SimulateRecord, OutOfRangeParamsAreRejected) {
  const SynthConfig c = small_config();
  const Plane src = background_source(c.difficulty, c.height, c.width);
  Rng rng(0);
  EXPECT_THROW(simulate_record({1.5, 0.0, 0.0, 1.5}, c, src, rng), ConfigError);
  EXPECT_THROW(simulate_record({0.0, 0.0, 0.0, 2.5}, c, src, rng), ConfigError);
  EXPECT_THROW(simulate_record({0.0, 0.0, 0.5, 1.5}, c, src, rng), ConfigError);
}

TEST(SimulateRecord, CurveStaysInsideTheImageAtExtremes) {
  for (double k : {-1.0, 1.0})
    for (double t : {-0.1, 0.1}) {
      const Plane m = render_catheter(k, 2.0, t, 64, 64);
      EXPECT_GT(m.sum(), 0.0f);
      // The far end never reaches the side or bottom borders.
      EXPECT_EQ(m.col(0).sum(), 0.0f);
      EXPECT_EQ(m.col(63).sum(), 0.0f);
      EXPECT_EQ(m.row(63).sum(), 0.0f);
    }
}

TEST(SimulateRecord, MaskPixelsCarryCatheterIntensityExactly) {
  const SynthConfig c = small_config(Difficulty::mixed);
  for (const auto& r : generate_records(c, 8)) {
    double on = 0;
    for (std::size_t i = 0; i < r.mask_a.size(); ++i) {
      if (r.mask_a[i] == 1.0f) {
        ++on;
        for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(r.view_a[i * 3 + ch], static_cast<float>(c.catheter_intensity));
      }
      EXPECT_TRUE(r.mask_a[i] == 0.0f || r.mask_a[i] == 1.0f);
    }
    EXPECT_GT(on, 0);
    EXPECT_GT(std::count(r.mask_b.data().begin(), r.mask_b.data().end(), 1.0f), 0);
    for (float v : r.view_b.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(GenerateRecords, RecordsDependOnlyOnSeedAndIndex) {
  const SynthConfig c = small_config();
  const auto all = generate_records(c, 6);
  const Plane src = background_source(c.difficulty, c.height, c.width);
  const auto fifth = generate_record(c, src, 5);
  EXPECT_EQ(all[5].view_a, fifth.view_a);
  EXPECT_EQ(all[5].id, "r000005");
}

TEST(Config, InvalidSynthConfigsAreRejected) {
  SynthConfig c = small_config();
  c.grid_cells = 15;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.height = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.catheter_intensity = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_difficulty("hard"), ConfigError);
}

TEST(ImportForegrounds, CompositesExternalMasks) {
  const SynthConfig c = small_config();
  ForegroundRecord f{"ext1", Plane::Zero(32, 32), Plane::Zero(32, 32), {0.1, -0.2, 0.05}};
  f.mask_a(4, 4) = 1.0f;
  f.mask_b(10, 20) = 1.0f;
  const auto out = import_foregrounds({f}, c);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, "ext1");
  EXPECT_EQ(out[0].force, f.force);
  EXPECT_EQ(out[0].view_a.at(0, 4, 4, 1), 0.15f);
  EXPECT_EQ(out[0].mask_b.at(0, 10, 20, 0), 1.0f);
  f.mask_a = Plane::Zero(16, 16);
  EXPECT_THROW(import_foregrounds({f}, c), ShapeError);
}

std::vector<DatasetRecord> dummy_records(std::size_t n) {
  std::vector<DatasetRecord> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i].id = record_id(i);
  return v;
}

TEST(SplitDataset, PublishedCountsUseSeventyFifteenFifteen) {
  EXPECT_EQ(split_sizes(19500, {0.70, 0.15, 0.15}), (SplitSizes{13650, 2925, 2925}));
}

TEST(SplitDataset, RemainderGoesToTrain) {
  EXPECT_EQ(split_sizes(10, {0.8, 0.1, 0.1}), (SplitSizes{8, 1, 1}));
  // round(76.8) = 77 for val and test; train takes 512 - 154.
  EXPECT_EQ(split_sizes(512, {0.70, 0.15, 0.15}), (SplitSizes{358, 77, 77}));
}

TEST(SplitDataset, SeededMembershipIsDisjointAndReproducible) {
  const auto a = split_dataset(dummy_records(50), {0.7, 0.15, 0.15}, 4);
  const auto b = split_dataset(dummy_records(50), {0.7, 0.15, 0.15}, 4);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    ASSERT_EQ(a[k].size(), b[k].size());
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      EXPECT_EQ(a[k][i].id, b[k][i].id);
      EXPECT_TRUE(seen.insert(a[k][i].id).second);
    }
    total += a[k].size();
  }
  EXPECT_EQ(total, 50u);
  EXPECT_EQ(a[1].front().split, "val");
}

TEST(SplitDataset, BadInputsAreRejected) {
  EXPECT_THROW(split_dataset({}, {0.7, 0.15, 0.15}, 0), ContractError);
  EXPECT_THROW(split_sizes(10, {0.7, 0.2, 0.2}), ConfigError);
}

TEST(DatasetIo, RoundTripKeepsIdsForcesAndQuantizedImages) {
  test::TempDir dir("dsio");
  auto parts = split_dataset(generate_records(small_config(Difficulty::mixed), 10), {0.6, 0.2, 0.2}, 1);
  std::vector<DatasetRecord> all;
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  write_dataset(all, dir.path);
  for (const char* f : {"r000000_a.png", "r000000_b.png", "r000000_a_mask.png", "r000000_b_mask.png", "manifest.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir.path / f)) << f;
  const auto back = read_dataset(dir.path);
  ASSERT_EQ(back.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(back[i].id, all[i].id);
    EXPECT_EQ(back[i].force, all[i].force);
    EXPECT_EQ(back[i].split, all[i].split);
    EXPECT_EQ(back[i].mask_a, all[i].mask_a);
    for (std::size_t j = 0; j < all[i].view_b.size(); ++j)
      EXPECT_LE(std::abs(back[i].view_b[j] - all[i].view_b[j]), 0.5f / 255.0f + 1e-6f);
  }
  EXPECT_EQ(read_dataset(dir.path, "test").size(), 2u);
}

TEST(DatasetIo, CorruptManifestLineNamesTheLine) {
  test::TempDir dir("dscorrupt");
  write_dataset(generate_records(small_config(), 2), dir.path);
  {
    std::ofstream out(dir.path / "manifest.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    read_dataset(dir.path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.jsonl:3"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingFileNamesTheRecord) {
  test::TempDir dir("dsmissing");
  write_dataset(generate_records(small_config(), 2), dir.path);
  std::filesystem::remove(dir.path / "r000001_b_mask.png");
  try {
    read_dataset(dir.path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("r000001"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, ChecksumIsStableAndContentSensitive) {
  test::TempDir a("cksa"), b("cksb");
  const auto recs = generate_records(small_config(), 3);
  write_dataset(recs, a.path);
  write_dataset(recs, b.path);
  EXPECT_EQ(dataset_checksum(a.path), dataset_checksum(b.path));
  auto other = recs;
  other[1].force[2] += 1e-3;
  write_dataset(other, b.path);
  EXPECT_NE(dataset_checksum(a.path), dataset_checksum(b.path));
  EXPECT_EQ(hex64(0xABCULL), "0000000000000abc");
}

TEST(Png, GrayRoundTripIsExact) {
  test::TempDir dir("png");
  GrayImage img{3, 5, {}};
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_png(dir.path / "g.png", img);
  const GrayImage back = read_png(dir.path / "g.png");
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_THROW(read_png(dir.path / "missing.png"), IoError);
}

TEST(Png, RgbInputIsReadAsGray) {
  test::TempDir dir("pngrgb");
  write_png_raw(dir.path / "c.png", 1, 2, 3, {10, 10, 10, 200, 200, 200});
  const GrayImage back = read_png(dir.path / "c.png");
  EXPECT_EQ(back.pixels, (std::vector<std::uint8_t>{10, 200}));
}

}  // namespace
}  // namespace hnet
