#pragma once

// Semantic vector-quantized video tokenizer.
//
// Patches are encoded per frame, l2-normalised, snapped to the nearest
// (normalised) code, decoded with full attention, mean-pooled, and scored as
// a multi-label prediction of the caption's words. After training only the
// encoder and codebook are kept; they turn clips into one code id per patch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"
#include "svq/data.hpp"
#include "svq/nn.hpp"
#include "svq/quantizer.hpp"

namespace svq {

// Non-finite loss during training; the message carries the step and terms.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PatchGrid {
  Array patches;  // (T * rows * cols) x (patch_h * patch_w * C), frame-major then raster
  std::size_t frames = 0, rows = 0, cols = 0;
  std::size_t patch_h = 0, patch_w = 0, channels = 0;

  std::size_t patches_per_frame() const { return rows * cols; }
};

// Non-overlapping h x w tiling of T x H x W x C frames.
PatchGrid patchify(const Array& frames, std::size_t patch_h, std::size_t patch_w);
Array unpatchify(const PatchGrid& grid);

struct TokenizerConfig {
  ClipGeometry geometry;
  std::size_t patch = 4;
  std::size_t codebook_size = 64;  // M
  std::size_t code_dim = 16;       // D_c
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t vocab_size = 0;      // K, content words only
  double focal_gamma = 1.0;
  double codebook_weight = 1.0;
  double commitment_weight = 1.0;

  std::size_t grid_rows() const { return geometry.height / patch; }
  std::size_t grid_cols() const { return geometry.width / patch; }
  std::size_t patches_per_frame() const { return grid_rows() * grid_cols(); }
  std::size_t num_patches() const { return geometry.frames * patches_per_frame(); }
  std::size_t patch_dim() const { return patch * patch * geometry.channels; }
  void validate() const;
};

struct TokenizerModel {
  TokenizerConfig config;
  ParamStore params;

  static TokenizerModel create(const TokenizerConfig& config, std::uint64_t seed);
};

// Encoder output before normalisation: num_patches x D_c.
Var encode(Binding& b, const TokenizerConfig& config, const PatchGrid& grid);

struct EncodeOutput {
  Var z;       // normalised encoder output
  Var codes;   // normalised codebook
  Var q;       // selected rows of codes (differentiable w.r.t. the codebook)
  QuantizationResult result;
};
EncodeOutput encode_and_quantize(Binding& b, const TokenizerConfig& config, const PatchGrid& grid);

Var decode(Binding& b, const TokenizerConfig& config, const Var& quantized);   // N x hidden
Var semantic_head(Binding& b, const Var& decoded);                            // K probabilities
// Decoder over straight_through(z, q), mean over positions, head, sigmoid.
Var semantic_probs(Binding& b, const TokenizerConfig& config, const EncodeOutput& enc);

// -(1/K) sum_k [ y_k log p_k + (1 - y_k) p_k^gamma log(1 - p_k) ], p clamped
// to [1e-7, 1 - 1e-7].
Var token_loss(const Var& probs, std::span<const double> labels, double gamma = 1.0);

struct SvqTerms {
  Var total;  // token + codebook + commitment (weighted), batch means
  Var token;
  Var codebook;
  Var commitment;
  std::vector<std::size_t> indices;  // all code ids of the batch
};

struct SvqExample {
  const Array* frames = nullptr;
  std::span<const double> labels;
};

SvqTerms svq_objective(Binding& b, const TokenizerConfig& config, std::span<const SvqExample> batch);

struct SvqMetrics {
  long step = 0;
  double total = 0.0;
  double token = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double utilization = 0.0;  // over the batch's code assignments
};

class SvqTrainer {
 public:
  SvqTrainer(TokenizerModel model, const AdamWConfig& optimizer);

  SvqMetrics step(std::span<const SvqExample> batch);

  const TokenizerModel& model() const { return model_; }
  const AdamW& optimizer() const { return optimizer_; }
  long steps_taken() const { return step_; }

 private:
  TokenizerModel model_;
  AdamW optimizer_;
  long step_ = 0;
};

// Encoder + codebook only; serves labels for masked video modeling.
class FrozenTokenizer {
 public:
  static constexpr const char* kEncoderPrefix = "enc.";
  static constexpr const char* kCodebookName = "codebook";

  FrozenTokenizer(TokenizerConfig config, ParamStore params);
  static FrozenTokenizer from_model(const TokenizerModel& model);

  // One code id per patch of the (unmasked) clip. No gradients recorded.
  std::vector<std::size_t> tokenize(const Array& frames) const;
  EncodeOutput encode(Tape& tape, const Array& frames) const;

  const TokenizerConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }

 private:
  TokenizerConfig config_;
  ParamStore params_;
};

}  // namespace svq
