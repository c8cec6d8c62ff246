#pragma once

// Run configuration: a flat "key = value" text file. Writing is canonical
// (fixed key order, shortest round-trip numbers), so write -> read -> write is
// byte-identical.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "svq/nn.hpp"
#include "svq/tokenizer.hpp"
#include "svq/vlm.hpp"

namespace svq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t corpus_size = 2000;
  std::uint64_t corpus_seed = 11;
  std::size_t eval_size = 500;
  std::uint64_t eval_seed = 1001;

  std::size_t frames = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t patch = 4;

  std::size_t codebook_size = 64;
  std::size_t code_dim = 16;
  std::size_t tokenizer_hidden = 32;
  std::size_t tokenizer_heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  double focal_gamma = 1.0;
  double codebook_weight = 1.0;
  double commitment_weight = 0.0;

  std::size_t video_hidden = 32;
  std::size_t text_hidden = 32;
  std::size_t fusion_hidden = 64;
  std::size_t vlm_heads = 4;
  std::size_t video_layers = 2;
  std::size_t text_layers = 2;
  std::size_t fusion_layers = 2;
  std::size_t max_caption = 12;

  double video_mask_ratio = 0.4;
  double mlm_ratio = 0.15;
  double vocab_keep = 0.3;
  double mismatch_probability = 0.5;
  double mvm_weight = 1.0;

  double tokenizer_lr = 1e-3;
  std::size_t tokenizer_steps = 2000;
  std::size_t tokenizer_batch = 8;
  double pretrain_lr = 5e-4;
  std::size_t pretrain_steps = 300;
  std::size_t pretrain_batch = 8;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::string tokenizer_checkpoint = "runs/tokenizer.ckpt";
  std::string tokenizer_metrics = "runs/tokenizer_metrics.csv";
  std::string vlm_checkpoint = "runs/vlm.ckpt";
  std::string pretrain_metrics = "runs/pretrain_metrics.csv";

  ClipGeometry geometry() const { return {frames, height, width, channels}; }
  TokenizerConfig tokenizer_config(std::size_t vocab_content_size) const;
  VlmConfig vlm_config(std::size_t vocab_total_size) const;
  AdamWConfig tokenizer_optimizer() const;
  AdamWConfig pretrain_optimizer() const;
  PretrainOptions pretrain_options() const;

  // Throws ConfigError naming the offending key.
  void validate() const;

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  // Applies one "key=value" override.
  void set(const std::string& key, const std::string& value);
};

}  // namespace svq
