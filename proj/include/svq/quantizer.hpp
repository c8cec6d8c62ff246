#pragma once

// Learnable codebook, nearest-code lookup, and the two stop-gradient
// regression losses that train codes and encoder towards each other.

#include <cstddef>
#include <span>
#include <vector>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"
#include "svq/rng.hpp"

namespace svq {

// M x D_c prototype vectors, M >= 2, D_c >= 1, all entries finite.
class Codebook {
 public:
  explicit Codebook(Array codes);

  // Entries uniform in [-1/sqrt(D_c), 1/sqrt(D_c)], then rows normalised.
  static Codebook random(std::size_t count, std::size_t dim, Rng& rng);

  const Array& codes() const { return codes_; }
  std::size_t count() const { return codes_.rows(); }
  std::size_t dim() const { return codes_.cols(); }

 private:
  Array codes_;
};

struct QuantizationResult {
  std::vector<std::size_t> indices;  // one code id per input row
  Array quantized;                   // row i == codes[indices[i]] exactly
  std::vector<double> distances;     // squared Euclidean distance to the chosen code
};

// Unit-L2 rows; a row with norm < 1e-12 is rejected by index.
Array normalize_rows(const Array& x);

// argmin_j ||z_i - c_j||^2 with ties going to the lowest j. Inputs are used
// as given; normalisation is the caller's job.
QuantizationResult nearest_code(const Array& z, const Array& codes);
inline QuantizationResult nearest_code(const Array& z, const Codebook& cb) { return nearest_code(z, cb.codes()); }

struct VqLosses {
  Var codebook;    // mean (sg(z) - q)^2, reaches the codes only
  Var commitment;  // mean (z - sg(q))^2, reaches the encoder only
};
VqLosses vq_losses(const Var& z, const Var& q);

std::vector<std::size_t> code_histogram(std::span<const std::size_t> indices, std::size_t count);

// Fraction of codes selected at least once.
double utilization_rate(std::span<const std::size_t> histogram);

}  // namespace svq
