#include "svq/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <variant>
#include <vector>

#include "svq/util.hpp"

namespace svq {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed fields share the size_t entry type");
using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, std::string RunConfig::*>;

struct Entry {
  const char* key;
  Field field;
};

// Canonical order of the text form.
const std::vector<Entry>& entries() {
  static const std::vector<Entry> table{
      {"seed", &RunConfig::seed},
      {"corpus_size", &RunConfig::corpus_size},
      {"corpus_seed", &RunConfig::corpus_seed},
      {"eval_size", &RunConfig::eval_size},
      {"eval_seed", &RunConfig::eval_seed},
      {"frames", &RunConfig::frames},
      {"height", &RunConfig::height},
      {"width", &RunConfig::width},
      {"channels", &RunConfig::channels},
      {"patch", &RunConfig::patch},
      {"codebook_size", &RunConfig::codebook_size},
      {"code_dim", &RunConfig::code_dim},
      {"tokenizer_hidden", &RunConfig::tokenizer_hidden},
      {"tokenizer_heads", &RunConfig::tokenizer_heads},
      {"encoder_layers", &RunConfig::encoder_layers},
      {"decoder_layers", &RunConfig::decoder_layers},
      {"focal_gamma", &RunConfig::focal_gamma},
      {"codebook_weight", &RunConfig::codebook_weight},
      {"commitment_weight", &RunConfig::commitment_weight},
      {"video_hidden", &RunConfig::video_hidden},
      {"text_hidden", &RunConfig::text_hidden},
      {"fusion_hidden", &RunConfig::fusion_hidden},
      {"vlm_heads", &RunConfig::vlm_heads},
      {"video_layers", &RunConfig::video_layers},
      {"text_layers", &RunConfig::text_layers},
      {"fusion_layers", &RunConfig::fusion_layers},
      {"max_caption", &RunConfig::max_caption},
      {"video_mask_ratio", &RunConfig::video_mask_ratio},
      {"mlm_ratio", &RunConfig::mlm_ratio},
      {"vocab_keep", &RunConfig::vocab_keep},
      {"mismatch_probability", &RunConfig::mismatch_probability},
      {"mvm_weight", &RunConfig::mvm_weight},
      {"tokenizer_lr", &RunConfig::tokenizer_lr},
      {"tokenizer_steps", &RunConfig::tokenizer_steps},
      {"tokenizer_batch", &RunConfig::tokenizer_batch},
      {"pretrain_lr", &RunConfig::pretrain_lr},
      {"pretrain_steps", &RunConfig::pretrain_steps},
      {"pretrain_batch", &RunConfig::pretrain_batch},
      {"weight_decay", &RunConfig::weight_decay},
      {"beta1", &RunConfig::beta1},
      {"beta2", &RunConfig::beta2},
      {"adam_eps", &RunConfig::adam_eps},
      {"tokenizer_checkpoint", &RunConfig::tokenizer_checkpoint},
      {"tokenizer_metrics", &RunConfig::tokenizer_metrics},
      {"vlm_checkpoint", &RunConfig::vlm_checkpoint},
      {"pretrain_metrics", &RunConfig::pretrain_metrics},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument("negative");
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (key != e.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            this->*member = value;
          } else if constexpr (std::is_same_v<T, double>) {
            try {
              this->*member = parse_double(value);
            } catch (const std::exception&) {
              throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
            }
          } else {
            this->*member = static_cast<T>(parse_unsigned(key, value));
          }
        },
        e.field);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& e : entries()) {
    os << e.key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cv_t<std::remove_reference_t<decltype(this->*member)>>;
          if constexpr (std::is_same_v<T, double>) {
            os << format_double(this->*member);
          } else {
            os << this->*member;
          }
        },
        e.field);
    os << '\n';
  }
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return from_text(os.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_text();
}

void RunConfig::validate() const {
  const auto ratio = [](const char* key, double v) {
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("config key '") + key + "' must be in [0, 1)");
  };
  ratio("video_mask_ratio", video_mask_ratio);
  ratio("mlm_ratio", mlm_ratio);
  ratio("mismatch_probability", mismatch_probability);
  if (!(vocab_keep > 0.0 && vocab_keep <= 1.0)) throw ConfigError("config key 'vocab_keep' must be in (0, 1]");
  if (!(tokenizer_lr > 0.0)) throw ConfigError("config key 'tokenizer_lr' must be > 0");
  if (!(pretrain_lr > 0.0)) throw ConfigError("config key 'pretrain_lr' must be > 0");
  if (mvm_weight < 0.0) throw ConfigError("config key 'mvm_weight' must be >= 0");
  if (corpus_size == 0 || eval_size == 0) throw ConfigError("corpus sizes must be >= 1");
  if (tokenizer_batch == 0 || pretrain_batch == 0) throw ConfigError("batch sizes must be >= 1");
  if (patch == 0 || height % patch || width % patch) {
    throw ConfigError("config key 'patch': " + std::to_string(patch) + " does not tile " + std::to_string(height) +
                      "x" + std::to_string(width) + " frames");
  }
  if (codebook_size < 2 || code_dim < 1) throw ConfigError("config keys 'codebook_size'/'code_dim' too small");
  if (tokenizer_heads == 0 || tokenizer_hidden % tokenizer_heads) {
    throw ConfigError("config key 'tokenizer_hidden' must be divisible by 'tokenizer_heads'");
  }
  if (vlm_heads == 0 || video_hidden % vlm_heads || text_hidden % vlm_heads || fusion_hidden % vlm_heads) {
    throw ConfigError("config keys 'video_hidden'/'text_hidden'/'fusion_hidden' must be divisible by 'vlm_heads'");
  }
}

TokenizerConfig RunConfig::tokenizer_config(std::size_t vocab_content_size) const {
  TokenizerConfig c;
  c.geometry = geometry();
  c.patch = patch;
  c.codebook_size = codebook_size;
  c.code_dim = code_dim;
  c.hidden = tokenizer_hidden;
  c.heads = tokenizer_heads;
  c.encoder_layers = encoder_layers;
  c.decoder_layers = decoder_layers;
  c.vocab_size = vocab_content_size;
  c.focal_gamma = focal_gamma;
  c.codebook_weight = codebook_weight;
  c.commitment_weight = commitment_weight;
  return c;
}

VlmConfig RunConfig::vlm_config(std::size_t vocab_total_size) const {
  VlmConfig c;
  c.geometry = geometry();
  c.patch = patch;
  c.video_hidden = video_hidden;
  c.text_hidden = text_hidden;
  c.fusion_hidden = fusion_hidden;
  c.heads = vlm_heads;
  c.video_layers = video_layers;
  c.text_layers = text_layers;
  c.fusion_layers = fusion_layers;
  c.max_caption = max_caption;
  c.vocab_size = vocab_total_size;
  c.codebook_size = codebook_size;
  return c;
}

AdamWConfig RunConfig::tokenizer_optimizer() const {
  return {tokenizer_lr, beta1, beta2, adam_eps, weight_decay};
}

AdamWConfig RunConfig::pretrain_optimizer() const { return {pretrain_lr, beta1, beta2, adam_eps, weight_decay}; }

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.mvm_weight = mvm_weight;
  o.video_mask_ratio = video_mask_ratio;
  o.mlm_ratio = mlm_ratio;
  o.mismatch_probability = mismatch_probability;
  o.seed = derive_seed(seed, {0x9e7});
  return o;
}

}  // namespace svq
