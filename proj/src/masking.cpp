#include "svq/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "svq/util.hpp"

namespace svq {

std::vector<std::size_t> MaskSpec::video_rows(const MaskGrid& grid) const {
  std::vector<std::size_t> rows;
  rows.reserve(video_positions.size());
  for (const auto& p : video_positions) rows.push_back(grid.flat(p));
  return rows;
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("mask ratio must be in [0, 1), got " + std::to_string(ratio));
  }
}

// Per-frame quotas summing to ceil(ratio * total).
std::vector<std::size_t> frame_quotas(const MaskGrid& grid, double ratio, Rng& rng) {
  const std::size_t target = ceil_count(ratio, grid.total());
  std::vector<std::size_t> quota(grid.frames, target / grid.frames);
  std::vector<std::size_t> order(grid.frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = grid.frames; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < target % grid.frames; ++i) ++quota[order[i]];
  return quota;
}

void trim_to(std::vector<char>& cells, std::size_t& count, std::size_t quota, Rng& rng) {
  while (count > quota) {
    std::size_t pick = rng.below(count);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!cells[i]) continue;
      if (pick-- == 0) {
        cells[i] = 0;
        --count;
        break;
      }
    }
  }
}

void fill_random(std::vector<char>& cells, std::size_t& count, std::size_t quota, Rng& rng) {
  while (count < quota) {
    std::size_t pick = rng.below(cells.size() - count);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i]) continue;
      if (pick-- == 0) {
        cells[i] = 1;
        ++count;
        break;
      }
    }
  }
}

MaskSpec collect(const MaskGrid& grid, const std::vector<std::vector<char>>& frames, double ratio) {
  MaskSpec spec;
  spec.video_ratio = ratio;
  for (std::size_t t = 0; t < grid.frames; ++t) {
    for (std::size_t r = 0; r < grid.rows; ++r) {
      for (std::size_t c = 0; c < grid.cols; ++c) {
        if (frames[t][r * grid.cols + c]) spec.video_positions.push_back({t, r, c});
      }
    }
  }
  return spec;
}

}  // namespace

MaskSpec blockwise_mask(const MaskGrid& grid, double ratio, Rng& rng, const BlockMaskConfig& config) {
  check_ratio(ratio);
  if (grid.total() == 0) throw std::invalid_argument("blockwise_mask: empty grid");
  const auto quotas = frame_quotas(grid, ratio, rng);
  const std::size_t cells_per_frame = grid.rows * grid.cols;
  std::vector<std::vector<char>> frames(grid.frames, std::vector<char>(cells_per_frame, 0));
  for (std::size_t t = 0; t < grid.frames; ++t) {
    auto& cells = frames[t];
    std::size_t count = 0;
    std::size_t attempts = 0;
    while (count < quotas[t]) {
      if (++attempts > 10000) {
        fill_random(cells, count, quotas[t], rng);
        break;
      }
      const double remaining = static_cast<double>(quotas[t] - count);
      const double area = rng.uniform(1.0, std::max(1.0, remaining));
      const double aspect = rng.uniform(config.min_aspect, config.max_aspect);
      const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1,
                                             grid.rows);
      const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area / aspect))), 1,
                                             grid.cols);
      const std::size_t top = rng.below(grid.rows - h + 1);
      const std::size_t left = rng.below(grid.cols - w + 1);
      for (std::size_t r = top; r < top + h; ++r) {
        for (std::size_t c = left; c < left + w; ++c) {
          char& cell = cells[r * grid.cols + c];
          if (!cell) {
            cell = 1;
            ++count;
          }
        }
      }
    }
    trim_to(cells, count, quotas[t], rng);
  }
  return collect(grid, frames, ratio);
}

MaskSpec uniform_mask(const MaskGrid& grid, double ratio, Rng& rng) {
  check_ratio(ratio);
  const auto quotas = frame_quotas(grid, ratio, rng);
  std::vector<std::vector<char>> frames(grid.frames, std::vector<char>(grid.rows * grid.cols, 0));
  for (std::size_t t = 0; t < grid.frames; ++t) {
    std::size_t count = 0;
    fill_random(frames[t], count, quotas[t], rng);
  }
  return collect(grid, frames, ratio);
}

Array apply_video_mask(const Array& frames, const MaskSpec& spec, std::size_t patch_h, std::size_t patch_w) {
  if (frames.rank() != 4) throw ShapeError("apply_video_mask: expected T x H x W x C, got " + shape_str(frames.shape()));
  const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  if (patch_h == 0 || patch_w == 0 || H % patch_h || W % patch_w) {
    throw ShapeError("apply_video_mask: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " does not tile " + shape_str(frames.shape()));
  }
  Array out = frames;
  for (const auto& p : spec.video_positions) {
    if (p.frame >= T || p.row >= H / patch_h || p.col >= W / patch_w) {
      throw std::out_of_range("mask position (" + std::to_string(p.frame) + ", " + std::to_string(p.row) + ", " +
                              std::to_string(p.col) + ") outside a " + std::to_string(T) + "x" +
                              std::to_string(H / patch_h) + "x" + std::to_string(W / patch_w) + " patch grid");
    }
    for (std::size_t y = p.row * patch_h; y < (p.row + 1) * patch_h; ++y) {
      for (std::size_t x = p.col * patch_w; x < (p.col + 1) * patch_w; ++x) {
        std::fill_n(&out[((p.frame * H + y) * W + x) * C], C, 0.0);
      }
    }
  }
  return out;
}

std::vector<std::size_t> mlm_positions(std::size_t caption_len, double ratio, Rng& rng) {
  if (caption_len == 0) return {};
  const std::size_t k = std::min(caption_len, std::max<std::size_t>(1, ceil_count(ratio, caption_len)));
  std::vector<std::size_t> idx(caption_len);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(caption_len - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double mean_components_per_frame(const MaskSpec& spec, const MaskGrid& grid) {
  if (grid.frames == 0) return 0.0;
  std::vector<char> cells(grid.total(), 0);
  for (const auto& p : spec.video_positions) cells[grid.flat(p)] = 1;
  std::size_t components = 0;
  std::vector<std::size_t> stack;
  for (std::size_t t = 0; t < grid.frames; ++t) {
    for (std::size_t start = 0; start < grid.rows * grid.cols; ++start) {
      const std::size_t base = t * grid.rows * grid.cols;
      if (cells[base + start] != 1) continue;
      ++components;
      stack.push_back(start);
      cells[base + start] = 2;
      while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const std::size_t r = cur / grid.cols, c = cur % grid.cols;
        const auto visit = [&](std::size_t rr, std::size_t cc) {
          const std::size_t k = rr * grid.cols + cc;
          if (cells[base + k] == 1) {
            cells[base + k] = 2;
            stack.push_back(k);
          }
        };
        if (r > 0) visit(r - 1, c);
        if (r + 1 < grid.rows) visit(r + 1, c);
        if (c > 0) visit(r, c - 1);
        if (c + 1 < grid.cols) visit(r, c + 1);
      }
    }
  }
  return static_cast<double>(components) / static_cast<double>(grid.frames);
}

}  // namespace svq
