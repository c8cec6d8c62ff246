#pragma once

// Self-describing text checkpoints: kind, model config, vocabulary with its
// hash, and named parameters written with shortest round-trip decimals.
//
//   svq-checkpoint 1
//   kind <tokenizer|vlm>
//   meta <key> <value>          (repeated)
//   vocab_hash <16 hex digits>
//   vocab <K>                   followed by K words, one per line
//   params <count>
//   param <name> <rank> <dims...>   followed by one line of values
//   end

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "svq/data.hpp"
#include "svq/nn.hpp"
#include "svq/tokenizer.hpp"
#include "svq/vlm.hpp"

namespace svq {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> vocabulary;  // content words in id order
  ParamStore params;

  const std::string& get(const std::string& key) const;
  std::uint64_t vocabulary_hash() const;
};

std::string to_text(const Checkpoint& ckpt);
// Verifies the stored vocabulary hash against the stored words.
Checkpoint checkpoint_from_text(const std::string& text);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Geometry + vocabulary identity of a tokenizer, printed on mismatches.
std::string tokenizer_fingerprint(const TokenizerConfig& config, std::uint64_t vocab_hash);

Checkpoint make_tokenizer_checkpoint(const FrozenTokenizer& tokenizer, const Vocabulary& vocab);
FrozenTokenizer load_tokenizer(const Checkpoint& ckpt);

Checkpoint make_vlm_checkpoint(const VlmModel& model, const Vocabulary& vocab, const std::string& tokenizer_fp);
VlmModel load_vlm(const Checkpoint& ckpt);

}  // namespace svq
