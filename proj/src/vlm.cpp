#include "svq/vlm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace svq {

namespace {

std::string block_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

std::string geometry_str(const ClipGeometry& g, std::size_t patch, std::size_t codes) {
  std::ostringstream os;
  os << g.frames << "x" << g.height << "x" << g.width << "x" << g.channels << " patch " << patch << " codes " << codes;
  return os.str();
}

Var stack_scalars(const std::vector<Var>& xs) {
  std::vector<Var> flat;
  flat.reserve(xs.size());
  for (const auto& x : xs) flat.push_back(reshape(x, Shape{1}));
  return concat(std::span<const Var>(flat), 0);
}

}  // namespace

void VlmConfig::validate() const {
  if (patch == 0 || geometry.height % patch || geometry.width % patch) {
    throw std::invalid_argument("vlm: patch " + std::to_string(patch) + " does not tile the frames");
  }
  if (heads == 0 || video_hidden % heads || text_hidden % heads || fusion_hidden % heads) {
    throw std::invalid_argument("vlm: hidden widths must be divisible by the head count");
  }
  if (vocab_size <= 4) throw std::invalid_argument("vlm: vocabulary has no content words");
  if (codebook_size < 2) throw std::invalid_argument("vlm: need at least 2 code classes");
  if (max_caption == 0) throw std::invalid_argument("vlm: max caption length must be >= 1");
}

void check_compatible(const TokenizerConfig& tok, const VlmConfig& vlm) {
  if (!(tok.geometry == vlm.geometry) || tok.patch != vlm.patch || tok.codebook_size != vlm.codebook_size) {
    throw std::invalid_argument("tokenizer geometry [" + geometry_str(tok.geometry, tok.patch, tok.codebook_size) +
                                "] does not match model geometry [" +
                                geometry_str(vlm.geometry, vlm.patch, vlm.codebook_size) + "]");
  }
}

VlmModel VlmModel::create(const VlmConfig& config, std::uint64_t seed) {
  config.validate();
  VlmModel m;
  m.config = config;
  Rng rng(derive_seed(seed, {0x71}));
  auto& p = m.params;
  const std::size_t F = config.fusion_hidden;

  init_linear(p, "venc.embed", config.patch_dim(), config.video_hidden, rng);
  p.add("venc.pos", random_normal(Shape{config.patches_per_frame(), config.video_hidden}, 0.02, rng));
  for (std::size_t i = 0; i < config.video_layers; ++i) init_transformer_block(p, block_name("venc.block", i), config.video_hidden, rng);
  init_layer_norm(p, "venc.ln", config.video_hidden);
  init_linear(p, "venc.proj", config.video_hidden, F, rng);

  p.add("tenc.word", random_normal(Shape{config.vocab_size, config.text_hidden}, 0.02, rng));
  p.add("tenc.pos", random_normal(Shape{config.max_caption, config.text_hidden}, 0.02, rng));
  for (std::size_t i = 0; i < config.text_layers; ++i) init_transformer_block(p, block_name("tenc.block", i), config.text_hidden, rng);
  init_layer_norm(p, "tenc.ln", config.text_hidden);
  init_linear(p, "tenc.proj", config.text_hidden, F, rng);

  p.add("fuse.cls", random_normal(Shape{1, F}, 0.02, rng));
  p.add("fuse.type_text", random_normal(Shape{F}, 0.02, rng));
  p.add("fuse.type_video", random_normal(Shape{F}, 0.02, rng));
  p.add("fuse.video_pos", random_normal(Shape{config.num_patches(), F}, 0.02, rng));
  for (std::size_t i = 0; i < config.fusion_layers; ++i) init_transformer_block(p, block_name("fuse.block", i), F, rng);
  init_layer_norm(p, "fuse.ln", F);

  init_linear(p, "head.mvm", F, config.codebook_size, rng);
  init_linear(p, "head.mlm", F, config.vocab_size, rng);
  init_linear(p, "head.vtm", F, 1, rng, 0.0);
  return m;
}

Var encode_video(Binding& b, const VlmConfig& config, const Array& frames) {
  const PatchGrid grid = patchify(frames, config.patch, config.patch);
  if (grid.frames != config.geometry.frames || grid.rows != config.grid_rows() || grid.cols != config.grid_cols() ||
      grid.channels != config.geometry.channels) {
    throw ShapeError("encode_video: frames " + shape_str(frames.shape()) + " do not match configured geometry");
  }
  Var x = linear(b, "venc.embed", b.tape().constant(grid.patches));
  std::vector<Var> pos(grid.frames, b("venc.pos"));
  x = add(x, concat(std::span<const Var>(pos), 0));
  Segments seg(grid.patches.rows());
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<int>(i / grid.patches_per_frame());
  for (std::size_t i = 0; i < config.video_layers; ++i) {
    x = transformer_block(b, block_name("venc.block", i), x, config.heads, seg);
  }
  return linear(b, "venc.proj", layer_norm(b, "venc.ln", x));
}

Var encode_text(Binding& b, const VlmConfig& config, std::span<const std::size_t> ids) {
  if (ids.empty() || ids.size() > config.max_caption) {
    throw ShapeError("encode_text: caption of " + std::to_string(ids.size()) + " words, limit " +
                     std::to_string(config.max_caption));
  }
  Var x = add(gather_rows(b("tenc.word"), ids), slice_rows(b("tenc.pos"), 0, ids.size()));
  for (std::size_t i = 0; i < config.text_layers; ++i) x = transformer_block(b, block_name("tenc.block", i), x, config.heads);
  return linear(b, "tenc.proj", layer_norm(b, "tenc.ln", x));
}

Fused fuse(Binding& b, const VlmConfig& config, const Var& text, const Var& video) {
  const Var t = add_bias(text, b("fuse.type_text"));
  const Var v = add(add_bias(video, b("fuse.type_video")), b("fuse.video_pos"));
  Var x = concat({b("fuse.cls"), t, v}, 0);
  for (std::size_t i = 0; i < config.fusion_layers; ++i) x = transformer_block(b, block_name("fuse.block", i), x, config.heads);
  x = layer_norm(b, "fuse.ln", x);
  const std::size_t L = text.shape()[0], N = video.shape()[0];
  return Fused{slice_rows(x, 0, 1), slice_rows(x, 1, 1 + L), slice_rows(x, 1 + L, 1 + L + N), x};
}

Var mvm_logits(Binding& b, const Var& video_rows) { return linear(b, "head.mvm", video_rows); }
Var mlm_logits(Binding& b, const Var& text_rows) { return linear(b, "head.mlm", text_rows); }
Var vtm_logit(Binding& b, const Var& cls) { return linear(b, "head.vtm", cls); }

Var mvm_loss(const Var& logits, std::span<const std::size_t> labels) { return cross_entropy(logits, labels); }
Var mlm_loss(const Var& logits, std::span<const std::size_t> targets) { return cross_entropy(logits, targets); }

Var vtm_loss(const Var& logit, int match_label) {
  if (match_label != 0 && match_label != 1) throw std::invalid_argument("vtm_loss: label must be 0 or 1");
  const Var s = reshape(logit, Shape{});
  return sub(softplus(s), scale(s, static_cast<double>(match_label)));
}

PretrainTerms pretrain_objective(Binding& b, const VlmConfig& config, const PretrainOptions& options, long step,
                                 std::span<const PretrainItem> batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain_objective: empty batch");
  Tape& tape = b.tape();
  const bool mvm_on = options.mvm_weight != 0.0;
  const MaskGrid grid = config.mask_grid();

  PretrainTerms terms;
  terms.metrics.step = step + 1;
  terms.metrics.mvm_enabled = mvm_on;

  std::vector<Var> vtm_terms, mvm_rows, mlm_rows;
  std::vector<std::size_t> mvm_labels, mlm_targets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PretrainItem& item = batch[i];
    Rng rng(derive_seed(options.seed, {static_cast<std::uint64_t>(step), i}));

    std::size_t caption_from = i;
    if (rng.bernoulli(options.mismatch_probability)) {
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (j != i && !std::equal(batch[j].caption.begin(), batch[j].caption.end(), item.caption.begin(),
                                  item.caption.end())) {
          candidates.push_back(j);
        }
      }
      if (!candidates.empty()) caption_from = candidates[rng.below(candidates.size())];
    }
    const bool matched = caption_from == i;
    const auto caption = batch[caption_from].caption;
    std::vector<std::size_t> ids(caption.begin(), caption.end());

    Array frames = *item.frames;
    std::vector<std::size_t> masked_rows, word_positions;
    if (matched) {
      if (mvm_on) {
        const MaskSpec spec = blockwise_mask(grid, options.video_mask_ratio, rng);
        frames = apply_video_mask(frames, spec, config.patch, config.patch);
        masked_rows = spec.video_rows(grid);
      }
      word_positions = mlm_positions(ids.size(), options.mlm_ratio, rng);
      for (auto pos : word_positions) {
        const double r = rng.uniform();
        if (r < 0.8) {
          ids[pos] = Vocabulary::kMask;
        } else if (r < 0.9 && config.vocab_size > Vocabulary::kSpecials) {
          ids[pos] = Vocabulary::kSpecials + rng.below(config.vocab_size - Vocabulary::kSpecials);
        }
      }
    } else {
      ++terms.metrics.mismatched;
    }

    const Fused fused = fuse(b, config, encode_text(b, config, ids), encode_video(b, config, frames));
    vtm_terms.push_back(vtm_loss(vtm_logit(b, fused.cls), matched ? 1 : 0));
    if (!masked_rows.empty()) {
      mvm_rows.push_back(gather_rows(fused.video, masked_rows));
      for (auto r : masked_rows) mvm_labels.push_back(item.code_labels[r]);
    }
    if (!word_positions.empty()) {
      mlm_rows.push_back(gather_rows(fused.text, word_positions));
      for (auto p : word_positions) mlm_targets.push_back(caption[p]);
    }
  }

  terms.vtm = mean_all(stack_scalars(vtm_terms));
  terms.mlm = mlm_rows.empty() ? tape.constant(Array::scalar(0.0))
                               : mlm_loss(mlm_logits(b, concat(std::span<const Var>(mlm_rows), 0)), mlm_targets);
  terms.total = add(terms.vtm, terms.mlm);
  if (mvm_on) {
    if (mvm_rows.empty()) {
      terms.mvm = tape.constant(Array::scalar(0.0));
      terms.metrics.degenerate_mvm = true;
    } else {
      terms.mvm = mvm_loss(mvm_logits(b, concat(std::span<const Var>(mvm_rows), 0)), mvm_labels);
    }
    terms.total = add(terms.total, scale(terms.mvm, options.mvm_weight));
    terms.metrics.mvm = terms.mvm.value().item();
  }
  terms.metrics.total = terms.total.value().item();
  terms.metrics.mlm = terms.mlm.value().item();
  terms.metrics.vtm = terms.vtm.value().item();
  terms.metrics.masked_patches = mvm_labels.size();
  terms.metrics.masked_words = mlm_targets.size();
  return terms;
}

PretrainTrainer::PretrainTrainer(VlmModel model, const AdamWConfig& optimizer, const PretrainOptions& options)
    : model_(std::move(model)), optimizer_(optimizer, model_.params), options_(options) {}

PretrainMetrics PretrainTrainer::step(std::span<const PretrainItem> batch) {
  Tape tape;
  Binding b(tape, model_.params);
  PretrainTerms terms;
  try {
    terms = pretrain_objective(b, model_.config, options_, step_, batch);
  } catch (const std::logic_error&) {
    const std::string bad = model_.params.first_non_finite();
    if (bad.empty()) throw;
    throw TrainingError("pretrain step " + std::to_string(step_ + 1) + ": non-finite parameter '" + bad + "'");
  }
  if (!std::isfinite(terms.metrics.total)) {
    std::ostringstream os;
    os << "pretrain step " << terms.metrics.step << ": non-finite loss (L_MVM=" << terms.metrics.mvm
       << ", L_MLM=" << terms.metrics.mlm << ", L_VTM=" << terms.metrics.vtm << ")";
    throw TrainingError(os.str());
  }
  tape.backward(terms.total);
  optimizer_.step(model_.params, b.gradients(), &b.bound());
  ++step_;
  return terms.metrics;
}

double score_pair(const VlmModel& model, const Array& frames, std::span<const std::size_t> caption) {
  Tape tape;
  Binding b(tape, model.params, false);
  const Fused fused = fuse(b, model.config, encode_text(b, model.config, caption), encode_video(b, model.config, frames));
  return sigmoid(vtm_logit(b, fused.cls)).value().item();
}

}  // namespace svq
