#include "svq/quantizer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace svq {

Codebook::Codebook(Array codes) : codes_(std::move(codes)) {
  if (codes_.rank() != 2 || codes_.rows() < 2 || codes_.cols() < 1) {
    throw ShapeError("codebook needs at least 2 codes of dimension >= 1, got " + shape_str(codes_.shape()));
  }
  if (!codes_.all_finite()) throw std::invalid_argument("codebook contains non-finite entries");
}

Codebook Codebook::random(std::size_t count, std::size_t dim, Rng& rng) {
  Array codes(Shape{count, dim});
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& v : codes.data()) v = rng.uniform(-bound, bound);
  return Codebook(normalize_rows(codes));
}

Array normalize_rows(const Array& x) {
  if (x.rank() != 2) throw ShapeError("normalize_rows expects a matrix, got " + shape_str(x.shape()));
  Array out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    const double norm = std::sqrt(s);
    if (norm < 1e-12) {
      throw std::invalid_argument("normalize_rows: row " + std::to_string(r) + " has norm " + std::to_string(norm));
    }
    for (auto& v : out.row(r)) v /= norm;
  }
  return out;
}

QuantizationResult nearest_code(const Array& z, const Array& codes) {
  if (z.rank() != 2 || codes.rank() != 2 || z.cols() != codes.cols()) {
    throw ShapeError("nearest_code: inputs " + shape_str(z.shape()) + " do not match codebook " +
                     shape_str(codes.shape()));
  }
  const std::size_t n = z.rows(), m = codes.rows(), d = z.cols();
  QuantizationResult result;
  result.indices.resize(n);
  result.distances.resize(n);
  result.quantized = Array(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = z(i, c) - codes(j, c);
        s += diff * diff;
      }
      if (s < best_dist) {
        best_dist = s;
        best = j;
      }
    }
    result.indices[i] = best;
    result.distances[i] = best_dist;
    for (std::size_t c = 0; c < d; ++c) result.quantized(i, c) = codes(best, c);
  }
  return result;
}

VqLosses vq_losses(const Var& z, const Var& q) {
  if (z.shape() != q.shape()) {
    throw ShapeError("vq_losses: shape mismatch " + shape_str(z.shape()) + " vs " + shape_str(q.shape()));
  }
  const Var d_codes = sub(stop_gradient(z), q);
  const Var d_enc = sub(z, stop_gradient(q));
  return {mean_all(mul(d_codes, d_codes)), mean_all(mul(d_enc, d_enc))};
}

std::vector<std::size_t> code_histogram(std::span<const std::size_t> indices, std::size_t count) {
  std::vector<std::size_t> h(count, 0);
  for (auto i : indices) {
    if (i >= count) throw std::out_of_range("code index " + std::to_string(i) + " >= " + std::to_string(count));
    ++h[i];
  }
  return h;
}

double utilization_rate(std::span<const std::size_t> histogram) {
  if (histogram.empty()) return 0.0;
  std::size_t used = 0;
  for (auto c : histogram) used += c > 0 ? 1 : 0;
  return static_cast<double>(used) / static_cast<double>(histogram.size());
}

}  // namespace svq
