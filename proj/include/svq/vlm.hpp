#pragma once

// Video-language model: per-frame video encoder, small text encoder, and a
// fusion decoder over [CLS] ++ text ++ video with three pretraining heads
// (masked video modeling, masked language modeling, video-text matching).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "svq/autodiff.hpp"
#include "svq/data.hpp"
#include "svq/masking.hpp"
#include "svq/nn.hpp"
#include "svq/tokenizer.hpp"

namespace svq {

struct VlmConfig {
  ClipGeometry geometry;
  std::size_t patch = 4;
  std::size_t video_hidden = 32;
  std::size_t text_hidden = 32;
  std::size_t fusion_hidden = 64;
  std::size_t heads = 4;
  std::size_t video_layers = 2;
  std::size_t text_layers = 2;
  std::size_t fusion_layers = 2;
  std::size_t max_caption = 12;
  std::size_t vocab_size = 0;      // including the 4 specials
  std::size_t codebook_size = 64;  // M, classes of the masked-video head

  std::size_t grid_rows() const { return geometry.height / patch; }
  std::size_t grid_cols() const { return geometry.width / patch; }
  std::size_t patches_per_frame() const { return grid_rows() * grid_cols(); }
  std::size_t num_patches() const { return geometry.frames * patches_per_frame(); }
  std::size_t patch_dim() const { return patch * patch * geometry.channels; }
  MaskGrid mask_grid() const { return {geometry.frames, grid_rows(), grid_cols()}; }
  void validate() const;
};

// Label alignment needs identical clip geometry, patch size and code count.
void check_compatible(const TokenizerConfig& tokenizer, const VlmConfig& vlm);

struct VlmModel {
  VlmConfig config;
  ParamStore params;

  // The matching head starts at zero, so an untrained model scores 0.5.
  static VlmModel create(const VlmConfig& config, std::uint64_t seed);
};

Var encode_video(Binding& b, const VlmConfig& config, const Array& frames);               // N x fusion
Var encode_text(Binding& b, const VlmConfig& config, std::span<const std::size_t> ids);  // L x fusion

struct Fused {
  Var cls;    // 1 x F
  Var text;   // L x F
  Var video;  // N x F
  Var all;    // (1 + L + N) x F
};
Fused fuse(Binding& b, const VlmConfig& config, const Var& text, const Var& video);

Var mvm_logits(Binding& b, const Var& video_rows);  // rows x M
Var mlm_logits(Binding& b, const Var& text_rows);   // rows x vocab
Var vtm_logit(Binding& b, const Var& cls);          // 1 x 1

// Mean cross-entropy over the given rows only.
Var mvm_loss(const Var& logits, std::span<const std::size_t> labels);
Var mlm_loss(const Var& logits, std::span<const std::size_t> targets);
// Binary cross-entropy on a logit, computed as softplus(s) - y s.
Var vtm_loss(const Var& logit, int match_label);

struct PretrainOptions {
  double mvm_weight = 1.0;  // 0 drops masked video modeling (and video masking)
  double video_mask_ratio = 0.4;
  double mlm_ratio = 0.15;
  double mismatch_probability = 0.5;
  std::uint64_t seed = 0;
};

struct PretrainItem {
  const Array* frames = nullptr;
  std::span<const std::size_t> caption;      // word ids, no specials
  std::span<const std::size_t> code_labels;  // tokenizer output on the unmasked clip
};

struct PretrainMetrics {
  long step = 0;
  double total = 0.0;
  double mvm = 0.0;
  double mlm = 0.0;
  double vtm = 0.0;
  bool mvm_enabled = true;
  std::size_t masked_patches = 0;
  std::size_t masked_words = 0;
  std::size_t mismatched = 0;
  bool degenerate_mvm = false;  // MVM enabled but no masked patch in the batch
};

struct PretrainTerms {
  Var total, mvm, mlm, vtm;  // mvm invalid when disabled
  PretrainMetrics metrics;
};

// Builds the pretraining objective for one batch; item streams are derived
// from (seed, step, item index).
PretrainTerms pretrain_objective(Binding& b, const VlmConfig& config, const PretrainOptions& options, long step,
                                 std::span<const PretrainItem> batch);

class PretrainTrainer {
 public:
  PretrainTrainer(VlmModel model, const AdamWConfig& optimizer, const PretrainOptions& options);

  PretrainMetrics step(std::span<const PretrainItem> batch);

  const VlmModel& model() const { return model_; }
  long steps_taken() const { return step_; }

 private:
  VlmModel model_;
  AdamW optimizer_;
  PretrainOptions options_;
  long step_ = 0;
};

// Matching probability from a full unmasked forward pass.
double score_pair(const VlmModel& model, const Array& frames, std::span<const std::size_t> caption);

}  // namespace svq
