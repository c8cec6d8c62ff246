#include "svq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "svq/quantizer.hpp"
#include "svq/rng.hpp"
#include "svq/util.hpp"

namespace svq {

namespace {

enum : std::uint64_t {
  kTokenizerInit = 1,
  kTokenizerBatches = 2,
  kVlmInit = 3,
  kVlmBatches = 4,
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool same_content(const Scene& a, const Scene& b) {
  return a.shape == b.shape && a.color == b.color && a.motion == b.motion;
}

std::size_t progress_interval(std::size_t steps) { return std::max<std::size_t>(1, steps / 20); }

}  // namespace

TrainingData make_training_data(const RunConfig& config) {
  TrainingData d;
  d.corpus = generate_corpus(config.corpus_size, config.corpus_seed, config.geometry());
  d.vocab = Vocabulary::build(d.corpus, config.vocab_keep);
  return d;
}

std::vector<SyntheticClip> make_eval_corpus(const RunConfig& config) {
  return generate_corpus(config.eval_size, config.eval_seed, config.geometry());
}

double corpus_utilization(const FrozenTokenizer& tokenizer, const std::vector<SyntheticClip>& corpus) {
  std::vector<std::size_t> all;
  for (const auto& clip : corpus) {
    const auto ids = tokenizer.tokenize(clip.frames);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  return utilization_rate(code_histogram(all, tokenizer.config().codebook_size));
}

TokenizerModel initial_tokenizer(const RunConfig& config, const TrainingData& data) {
  return TokenizerModel::create(config.tokenizer_config(data.vocab.content_size()),
                                derive_seed(config.seed, {kTokenizerInit}));
}

TokenizerRun train_tokenizer(const RunConfig& config, const TrainingData& data, std::ostream* progress) {
  config.validate();
  std::vector<std::vector<double>> labels;
  labels.reserve(data.corpus.size());
  for (const auto& clip : data.corpus) labels.push_back(caption_to_multihot(clip.caption, data.vocab));

  SvqTrainer trainer(initial_tokenizer(config, data), config.tokenizer_optimizer());
  BatchStream batches(data.corpus.size(), config.tokenizer_batch, derive_seed(config.seed, {kTokenizerBatches}));
  MetricsLog log = MetricsLog::tokenizer();
  const auto start = Clock::now();
  const std::size_t every = progress_interval(config.tokenizer_steps);
  std::vector<SvqExample> batch;
  for (std::size_t s = 0; s < config.tokenizer_steps; ++s) {
    batch.clear();
    for (std::size_t i : batches.next()) batch.push_back({&data.corpus[i].frames, labels[i]});
    const SvqMetrics m = trainer.step(batch);
    log.append(m.step, {m.total, m.token, m.codebook, m.commitment, m.utilization});
    if (progress && (m.step % static_cast<long>(every) == 0 || s + 1 == config.tokenizer_steps)) {
      *progress << "tokenizer step " << m.step << "/" << config.tokenizer_steps << " L_SVQ=" << m.total
                << " L_TOKEN=" << m.token << " utilization=" << m.utilization << " wall=" << seconds_since(start)
                << "s\n";
    }
  }
  TokenizerRun run{trainer.model(), FrozenTokenizer::from_model(trainer.model()), data.vocab, std::move(log), 0.0};
  run.final_utilization = corpus_utilization(run.tokenizer, data.corpus);
  if (progress) *progress << "final corpus utilization " << run.final_utilization << "\n";
  return run;
}

void check_tokenizer_compatible(const RunConfig& config, const FrozenTokenizer& tokenizer, const Vocabulary& vocab,
                                const Vocabulary& tokenizer_vocab) {
  const TokenizerConfig expected = config.tokenizer_config(vocab.content_size());
  const TokenizerConfig& actual = tokenizer.config();
  const bool geometry_ok = actual.geometry == expected.geometry && actual.patch == expected.patch &&
                           actual.codebook_size == expected.codebook_size;
  if (!geometry_ok || tokenizer_vocab.hash() != vocab.hash()) {
    throw CheckpointError("tokenizer checkpoint is incompatible with this configuration\n  tokenizer: " +
                          tokenizer_fingerprint(actual, tokenizer_vocab.hash()) +
                          "\n  config:    " + tokenizer_fingerprint(expected, vocab.hash()));
  }
}

std::vector<std::size_t> caption_ids(const std::vector<std::string>& caption, const Vocabulary& vocab,
                                     std::size_t max_caption) {
  auto ids = vocab.encode(caption);
  if (ids.size() > max_caption) ids.resize(max_caption);
  return ids;
}

PretrainRun pretrain(const RunConfig& config, const TrainingData& data, const FrozenTokenizer& tokenizer,
                     bool with_mvm, std::ostream* progress) {
  config.validate();
  const VlmConfig vcfg = config.vlm_config(data.vocab.size());
  check_compatible(tokenizer.config(), vcfg);

  std::vector<std::vector<std::size_t>> captions, codes;
  captions.reserve(data.corpus.size());
  codes.reserve(data.corpus.size());
  for (const auto& clip : data.corpus) {
    captions.push_back(caption_ids(clip.caption, data.vocab, vcfg.max_caption));
    codes.push_back(tokenizer.tokenize(clip.frames));
  }

  PretrainOptions options = config.pretrain_options();
  if (!with_mvm) options.mvm_weight = 0.0;
  PretrainTrainer trainer(VlmModel::create(vcfg, derive_seed(config.seed, {kVlmInit})), config.pretrain_optimizer(),
                          options);
  BatchStream batches(data.corpus.size(), config.pretrain_batch, derive_seed(config.seed, {kVlmBatches}));
  MetricsLog log = MetricsLog::pretrain(with_mvm);
  const auto start = Clock::now();
  const std::size_t every = progress_interval(config.pretrain_steps);
  std::vector<PretrainItem> batch;
  for (std::size_t s = 0; s < config.pretrain_steps; ++s) {
    batch.clear();
    for (std::size_t i : batches.next()) batch.push_back({&data.corpus[i].frames, captions[i], codes[i]});
    const PretrainMetrics m = trainer.step(batch);
    if (with_mvm) {
      log.append(m.step, {m.total, m.mvm, m.mlm, m.vtm});
    } else {
      log.append(m.step, {m.total, m.mlm, m.vtm});
    }
    if (progress && (m.step % static_cast<long>(every) == 0 || s + 1 == config.pretrain_steps)) {
      *progress << "pretrain step " << m.step << "/" << config.pretrain_steps << " L=" << m.total;
      if (with_mvm) *progress << " L_MVM=" << m.mvm;
      *progress << " L_MLM=" << m.mlm << " L_VTM=" << m.vtm << " wall=" << seconds_since(start) << "s\n";
    }
  }
  return {trainer.model(), std::move(log)};
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "task=" << task << " n=" << n << " accuracy=" << format_double(accuracy) << " seed=" << seed;
  return os.str();
}

std::vector<std::vector<std::string>> multichoice_candidates(const Scene& scene, Rng& rng, std::size_t& answer,
                                                             std::size_t count) {
  const std::size_t distinct = kShapes.size() * kColors.size() * kMotions.size();
  if (count < 1 || count > distinct) throw std::invalid_argument("multichoice: unsupported candidate count");
  std::vector<Scene> chosen{scene};
  while (chosen.size() < count) {
    Scene d = scene;
    d.shape = kShapes[rng.below(kShapes.size())];
    d.color = kColors[rng.below(kColors.size())];
    d.motion = kMotions[rng.below(kMotions.size())];
    const bool taken = std::any_of(chosen.begin(), chosen.end(), [&](const Scene& s) { return same_content(s, d); });
    if (!taken) chosen.push_back(d);
  }
  answer = rng.below(count);
  std::swap(chosen[0], chosen[answer]);
  std::vector<std::vector<std::string>> out;
  out.reserve(count);
  for (const auto& s : chosen) out.push_back(caption_for(s));
  return out;
}

EvalReport evaluate_multichoice(const VlmModel& model, const Vocabulary& vocab,
                                const std::vector<SyntheticClip>& clips, std::uint64_t seed) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    std::size_t answer = 0;
    const auto candidates = multichoice_candidates(clips[i].scene, rng, answer);
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double s = score_pair(model, clips[i].frames, caption_ids(candidates[c], vocab, model.config.max_caption));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    correct += best == answer;
  }
  const double n = static_cast<double>(clips.size());
  return {"multichoice", clips.size(), clips.empty() ? 0.0 : static_cast<double>(correct) / n, seed};
}

EvalReport evaluate_matching(const VlmModel& model, const Vocabulary& vocab, const std::vector<SyntheticClip>& clips,
                             std::uint64_t seed) {
  if (clips.size() < 2) throw std::invalid_argument("matching evaluation needs at least two clips");
  const auto order = epoch_permutation(clips.size(), seed, 0);
  std::vector<bool> swapped(clips.size(), false);
  for (std::size_t k = 0; k < clips.size() / 2; ++k) swapped[order[k]] = true;

  std::size_t pos = 0, neg = 0, true_pos = 0, true_neg = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::vector<std::string>* caption = &clips[i].caption;
    if (swapped[i]) {
      Rng rng(derive_seed(seed, {i, 1}));
      std::size_t j = i;
      for (int attempt = 0; attempt < 1000 && (j == i || same_content(clips[j].scene, clips[i].scene)); ++attempt) {
        j = rng.below(clips.size());
      }
      if (j == i || same_content(clips[j].scene, clips[i].scene)) {
        throw std::runtime_error("matching evaluation: no clip with a different scene to swap in");
      }
      caption = &clips[j].caption;
    }
    const bool predicted = score_pair(model, clips[i].frames, caption_ids(*caption, vocab, model.config.max_caption)) >= 0.5;
    if (swapped[i]) {
      ++neg;
      true_neg += !predicted;
    } else {
      ++pos;
      true_pos += predicted;
    }
  }
  const double tpr = static_cast<double>(true_pos) / static_cast<double>(pos);
  const double tnr = static_cast<double>(true_neg) / static_cast<double>(neg);
  return {"matching", clips.size(), 0.5 * (tpr + tnr), seed};
}

double plugin_mutual_information(std::span<const std::size_t> x, std::span<const std::size_t> y) {
  if (x.size() != y.size()) throw std::invalid_argument("mutual information: sequences differ in length");
  if (x.empty()) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> px, py;
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[{x[i], y[i]}] += 1.0;
    px[x[i]] += 1.0;
    py[y[i]] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += (c / n) * std::log(c * n / (px[key.first] * py[key.second]));
  return std::max(0.0, mi);
}

double semantic_code_mi(const FrozenTokenizer& tokenizer, const std::vector<SyntheticClip>& clips) {
  const TokenizerConfig& cfg = tokenizer.config();
  std::vector<std::size_t> codes, classes;
  for (const auto& clip : clips) {
    const auto ids = tokenizer.tokenize(clip.frames);
    for (std::size_t t = 0; t < cfg.geometry.frames; ++t) {
      codes.push_back(ids[centroid_patch(clip.scene, t, cfg.geometry, cfg.patch)]);
      classes.push_back(clip.scene.shape_color_class());
    }
  }
  return plugin_mutual_information(codes, classes);
}

}  // namespace svq
