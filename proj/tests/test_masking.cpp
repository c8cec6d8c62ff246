#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "svq/masking.hpp"
#include "svq/rng.hpp"
#include "svq/util.hpp"

using namespace svq;

namespace {

const MaskGrid kClip{4, 4, 4};

Array ramp_frames(std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
  Array a(Shape{t, h, w, c});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.25 + static_cast<double>(i % 97) / 200.0;
  return a;
}

}  // namespace

TEST(BlockMask, ZeroRatioIsEmpty) {
  Rng rng(1);
  EXPECT_TRUE(blockwise_mask(kClip, 0.0, rng).video_positions.empty());
}

TEST(BlockMask, FortyPercentOfSixtyFourIsTwentySix) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    EXPECT_EQ(blockwise_mask(kClip, 0.4, rng).video_positions.size(), 26u);
  }
}

TEST(BlockMask, PositionsUniqueSortedAndInRange) {
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(s);
    const auto spec = blockwise_mask(kClip, 0.4, rng);
    std::set<PatchCoord> seen(spec.video_positions.begin(), spec.video_positions.end());
    ASSERT_EQ(seen.size(), spec.video_positions.size());
    ASSERT_TRUE(std::is_sorted(spec.video_positions.begin(), spec.video_positions.end()));
    for (const auto& p : spec.video_positions) {
      ASSERT_LT(p.frame, 4u);
      ASSERT_LT(p.row, 4u);
      ASSERT_LT(p.col, 4u);
    }
  }
}

TEST(BlockMask, SizeLawAcrossRatiosAndGrids) {
  Rng rng(3);
  for (std::size_t t = 1; t <= 8; t += 3) {
    for (std::size_t r = 1; r <= 8; r += 2) {
      for (std::size_t c = 1; c <= 8; c += 3) {
        const MaskGrid g{t, r, c};
        for (int k = 0; k <= 9; ++k) {
          const double ratio = k / 10.0;
          EXPECT_EQ(blockwise_mask(g, ratio, rng).video_positions.size(), ceil_count(ratio, g.total()))
              << t << "x" << r << "x" << c << " ratio " << ratio;
        }
      }
    }
  }
}

TEST(BlockMask, QuotaSpreadEvenlyOverFrames) {
  Rng rng(4);
  const auto spec = blockwise_mask(kClip, 0.4, rng);
  std::array<int, 4> per{};
  for (const auto& p : spec.video_positions) ++per[p.frame];
  for (int n : per) {
    EXPECT_GE(n, 6);
    EXPECT_LE(n, 7);
  }
}

TEST(BlockMask, Deterministic) {
  Rng a(9), b(9);
  EXPECT_EQ(blockwise_mask(kClip, 0.4, a).video_positions, blockwise_mask(kClip, 0.4, b).video_positions);
}

TEST(BlockMask, FewerComponentsThanUniform) {
  const MaskGrid g{4, 8, 8};
  double block = 0.0, uniform = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng r1(s), r2(s + 1000);
    block += mean_components_per_frame(blockwise_mask(g, 0.4, r1), g);
    uniform += mean_components_per_frame(uniform_mask(g, 0.4, r2), g);
  }
  EXPECT_LT(block, uniform);
}

TEST(BlockMask, FlatRowsMatchTokenizerOrder) {
  MaskSpec spec;
  spec.video_positions = {{0, 0, 0}, {1, 2, 3}, {3, 3, 3}};
  EXPECT_EQ(spec.video_rows(kClip), (std::vector<std::size_t>{0, 16 + 11, 63}));
}

TEST(UniformMask, SameCount) {
  Rng rng(5);
  EXPECT_EQ(uniform_mask(kClip, 0.4, rng).video_positions.size(), 26u);
}

TEST(ApplyMask, EmptySpecLeavesFramesUnchanged) {
  const Array f = ramp_frames(4, 16, 16, 3);
  EXPECT_TRUE(bitwise_equal(apply_video_mask(f, MaskSpec{}, 4, 4), f));
}

TEST(ApplyMask, FullSpecZeroesEverything) {
  const Array f = ramp_frames(4, 16, 16, 3);
  Rng rng(6);
  MaskSpec all;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) all.video_positions.push_back({t, r, c});
  for (double v : apply_video_mask(f, all, 4, 4).data()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMask, ZeroInsideUnchangedOutside) {
  const Array f = ramp_frames(4, 16, 16, 3);
  Rng rng(7);
  const auto spec = blockwise_mask(kClip, 0.4, rng);
  const Array m = apply_video_mask(f, spec, 4, 4);
  const std::set<PatchCoord> masked(spec.video_positions.begin(), spec.video_positions.end());
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t i = ((t * 16 + y) * 16 + x) * 3 + c;
          if (masked.count({t, y / 4, x / 4})) {
            ASSERT_EQ(m[i], 0.0);
          } else {
            ASSERT_EQ(m[i], f[i]);
          }
        }
}

TEST(ApplyMask, Idempotent) {
  const Array f = ramp_frames(4, 16, 16, 3);
  Rng rng(8);
  const auto spec = blockwise_mask(kClip, 0.4, rng);
  const Array once = apply_video_mask(f, spec, 4, 4);
  EXPECT_TRUE(bitwise_equal(apply_video_mask(once, spec, 4, 4), once));
}

TEST(Mlm, SingleWordGetsOnePosition) {
  Rng rng(1);
  EXPECT_EQ(mlm_positions(1, 0.15, rng), std::vector<std::size_t>{0});
}

TEST(Mlm, TwelveWordsGetTwo) {
  Rng rng(2);
  EXPECT_EQ(mlm_positions(12, 0.15, rng).size(), 2u);
}

TEST(Mlm, CountLawForLengthsOneToForty) {
  Rng rng(3);
  for (std::size_t len = 1; len <= 40; ++len) {
    const auto pos = mlm_positions(len, 0.15, rng);
    EXPECT_EQ(pos.size(), std::max<std::size_t>(1, ceil_count(0.15, len)));
    EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
    EXPECT_EQ(std::set<std::size_t>(pos.begin(), pos.end()).size(), pos.size());
    for (auto p : pos) EXPECT_LT(p, len);
  }
}

TEST(Mlm, PositionsUniform) {
  Rng rng(4);
  std::array<int, 10> counts{};
  for (int i = 0; i < 1000; ++i)
    for (auto p : mlm_positions(10, 0.15, rng)) ++counts[p];
  for (int c : counts) EXPECT_NEAR(c / 1000.0, 0.2, 0.05);
}

TEST(Components, CountsFourConnectedRegions) {
  const MaskGrid g{1, 3, 3};
  MaskSpec spec;
  spec.video_positions = {{0, 0, 0}, {0, 0, 1}, {0, 1, 1}, {0, 2, 2}, {0, 2, 0}};
  EXPECT_DOUBLE_EQ(mean_components_per_frame(spec, g), 3.0);
}
