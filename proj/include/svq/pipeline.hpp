#pragma once

// The two training stages and the evaluations, as library calls. The CLI and
// the acceptance suite are thin wrappers around these.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "svq/checkpoint.hpp"
#include "svq/config.hpp"
#include "svq/data.hpp"
#include "svq/metrics.hpp"
#include "svq/tokenizer.hpp"
#include "svq/vlm.hpp"

namespace svq {

// Stage 1 inputs shared by every command: the training corpus and its
// truncated vocabulary.
struct TrainingData {
  std::vector<SyntheticClip> corpus;
  Vocabulary vocab;
};
TrainingData make_training_data(const RunConfig& config);
std::vector<SyntheticClip> make_eval_corpus(const RunConfig& config);

struct TokenizerRun {
  TokenizerModel model;
  FrozenTokenizer tokenizer;
  Vocabulary vocab;
  MetricsLog log;
  double final_utilization = 0.0;  // over every clip of the training corpus
};

// The untrained stage-1 model a run with this configuration starts from.
TokenizerModel initial_tokenizer(const RunConfig& config, const TrainingData& data);

// progress (optional) receives human-readable lines including wall time.
TokenizerRun train_tokenizer(const RunConfig& config, const TrainingData& data, std::ostream* progress = nullptr);

// Fraction of codes used when tokenizing every clip.
double corpus_utilization(const FrozenTokenizer& tokenizer, const std::vector<SyntheticClip>& corpus);

struct PretrainRun {
  VlmModel model;
  MetricsLog log;
};

// Refuses (CheckpointError) when the tokenizer's geometry or vocabulary does
// not match the configuration; the message carries both fingerprints.
void check_tokenizer_compatible(const RunConfig& config, const FrozenTokenizer& tokenizer, const Vocabulary& vocab,
                                const Vocabulary& tokenizer_vocab);

PretrainRun pretrain(const RunConfig& config, const TrainingData& data, const FrozenTokenizer& tokenizer,
                     bool with_mvm, std::ostream* progress = nullptr);

struct EvalReport {
  std::string task;
  std::size_t n = 0;
  double accuracy = 0.0;
  std::uint64_t seed = 0;

  std::string to_text() const;
};

// Five captions for a clip: the true one plus four distractors whose
// (shape, color, motion) differ from the true scene and from each other.
// The true caption's position is returned through `answer`.
std::vector<std::vector<std::string>> multichoice_candidates(const Scene& scene, Rng& rng, std::size_t& answer,
                                                             std::size_t count = 5);

// Top-1 over the candidates, scored with score_pair.
EvalReport evaluate_multichoice(const VlmModel& model, const Vocabulary& vocab,
                                const std::vector<SyntheticClip>& clips, std::uint64_t seed);
// Balanced accuracy of score_pair >= 0.5 over an exact half/half split of
// true and swapped pairs.
EvalReport evaluate_matching(const VlmModel& model, const Vocabulary& vocab, const std::vector<SyntheticClip>& clips,
                             std::uint64_t seed);

// Caption ids for the model: encoded and clipped to max_caption words.
std::vector<std::size_t> caption_ids(const std::vector<std::string>& caption, const Vocabulary& vocab,
                                     std::size_t max_caption);

// Plug-in mutual information (nats) between two discrete label sequences.
double plugin_mutual_information(std::span<const std::size_t> x, std::span<const std::size_t> y);

// MI between the code at the patch holding the shape centroid (every frame)
// and the clip's (shape, color) class.
double semantic_code_mi(const FrozenTokenizer& tokenizer, const std::vector<SyntheticClip>& clips);

}  // namespace svq
