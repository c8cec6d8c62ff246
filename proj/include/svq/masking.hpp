#pragma once

// Block-wise video patch masking and MLM word selection.

#include <compare>
#include <cstddef>
#include <vector>

#include "svq/array.hpp"
#include "svq/rng.hpp"

namespace svq {

struct PatchCoord {
  std::size_t frame = 0, row = 0, col = 0;
  auto operator<=>(const PatchCoord&) const = default;
};

struct MaskGrid {
  std::size_t frames = 0, rows = 0, cols = 0;
  std::size_t total() const { return frames * rows * cols; }
  std::size_t flat(const PatchCoord& p) const { return (p.frame * rows + p.row) * cols + p.col; }
};

struct MaskSpec {
  std::vector<PatchCoord> video_positions;  // sorted, unique
  std::vector<std::size_t> text_positions;  // sorted, unique
  double video_ratio = 0.0;
  double text_ratio = 0.0;

  // Flat patch-row indices in the tokenizer's frame-major raster order.
  std::vector<std::size_t> video_rows(const MaskGrid& grid) const;
};

struct BlockMaskConfig {
  double min_aspect = 0.5;
  double max_aspect = 2.0;
};

// Masks exactly ceil(ratio * total) patches. The quota is spread over frames
// as evenly as possible (frames receiving the remainder are drawn at random)
// and each frame is filled with random rectangles, then trimmed at random back
// to its quota.
MaskSpec blockwise_mask(const MaskGrid& grid, double ratio, Rng& rng, const BlockMaskConfig& config = {});

// Independent uniform choice of the same number of patches; the baseline
// block-wise masking is compared against.
MaskSpec uniform_mask(const MaskGrid& grid, double ratio, Rng& rng);

// Pixels of every masked patch set to 0; everything else untouched.
// frames: T x H x W x C.
Array apply_video_mask(const Array& frames, const MaskSpec& spec, std::size_t patch_h, std::size_t patch_w);

// ceil(ratio * len) (at least one) distinct word positions, uniform without
// replacement, sorted.
std::vector<std::size_t> mlm_positions(std::size_t caption_len, double ratio, Rng& rng);

// Mean number of 4-connected masked components per frame.
double mean_components_per_frame(const MaskSpec& spec, const MaskGrid& grid);

}  // namespace svq
