#include "svq/tokenizer.hpp"

#include <cmath>
#include <sstream>

#include "svq/util.hpp"

namespace svq {

namespace {

std::string divisors_of(std::size_t n) {
  std::ostringstream os;
  bool first = true;
  for (std::size_t d = 1; d <= n; ++d) {
    if (n % d) continue;
    os << (first ? "" : ", ") << d;
    first = false;
  }
  return os.str();
}

std::string block_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

Segments frame_segments(std::size_t frames, std::size_t per_frame) {
  Segments seg(frames * per_frame);
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<int>(i / per_frame);
  return seg;
}

// Repeats a per-frame positional table for every frame.
Var tile_rows(const Var& table, std::size_t times) {
  std::vector<Var> parts(times, table);
  return concat(std::span<const Var>(parts), 0);
}

}  // namespace

PatchGrid patchify(const Array& frames, std::size_t patch_h, std::size_t patch_w) {
  if (frames.rank() != 4) throw ShapeError("patchify: expected T x H x W x C frames, got " + shape_str(frames.shape()));
  const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  if (patch_h == 0 || patch_w == 0 || H % patch_h != 0 || W % patch_w != 0) {
    throw ShapeError("patchify: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " does not tile frames " + shape_str(frames.shape()) + "; valid patch heights: " +
                     divisors_of(H) + "; valid patch widths: " + divisors_of(W));
  }
  PatchGrid g;
  g.frames = T;
  g.rows = H / patch_h;
  g.cols = W / patch_w;
  g.patch_h = patch_h;
  g.patch_w = patch_w;
  g.channels = C;
  const std::size_t dim = patch_h * patch_w * C;
  g.patches = Array(Shape{T * g.rows * g.cols, dim});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        double* out = &g.patches((t * g.rows + r) * g.cols + c, 0);
        for (std::size_t y = 0; y < patch_h; ++y) {
          const double* in = &frames[((t * H + r * patch_h + y) * W + c * patch_w) * C];
          std::copy_n(in, patch_w * C, out + y * patch_w * C);
        }
      }
    }
  }
  return g;
}

Array unpatchify(const PatchGrid& g) {
  const std::size_t H = g.rows * g.patch_h, W = g.cols * g.patch_w, C = g.channels;
  Array frames(Shape{g.frames, H, W, C});
  for (std::size_t t = 0; t < g.frames; ++t) {
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        const double* in = &g.patches((t * g.rows + r) * g.cols + c, 0);
        for (std::size_t y = 0; y < g.patch_h; ++y) {
          std::copy_n(in + y * g.patch_w * C, g.patch_w * C, &frames[((t * H + r * g.patch_h + y) * W + c * g.patch_w) * C]);
        }
      }
    }
  }
  return frames;
}

void TokenizerConfig::validate() const {
  if (patch == 0 || geometry.height % patch || geometry.width % patch) {
    throw std::invalid_argument("tokenizer: patch " + std::to_string(patch) + " does not tile " +
                                std::to_string(geometry.height) + "x" + std::to_string(geometry.width) + " frames");
  }
  if (codebook_size < 2 || code_dim < 1) throw std::invalid_argument("tokenizer: need M >= 2 and D_c >= 1");
  if (heads == 0 || hidden % heads) throw std::invalid_argument("tokenizer: hidden width not divisible by heads");
  if (vocab_size == 0) throw std::invalid_argument("tokenizer: empty vocabulary");
}

TokenizerModel TokenizerModel::create(const TokenizerConfig& config, std::uint64_t seed) {
  config.validate();
  TokenizerModel m;
  m.config = config;
  Rng rng(derive_seed(seed, {0x70c}));
  auto& p = m.params;
  init_linear(p, "enc.embed", config.patch_dim(), config.hidden, rng);
  // Unit-scale positions keep background patches apart at init.
  p.add("enc.pos", random_normal(Shape{config.patches_per_frame(), config.hidden}, 1.0, rng));
  for (std::size_t i = 0; i < config.encoder_layers; ++i) init_transformer_block(p, block_name("enc.block", i), config.hidden, rng);
  init_layer_norm(p, "enc.ln", config.hidden);
  init_linear(p, "enc.out", config.hidden, config.code_dim, rng);
  p.add(FrozenTokenizer::kCodebookName, Codebook::random(config.codebook_size, config.code_dim, rng).codes());
  init_linear(p, "dec.in", config.code_dim, config.hidden, rng);
  p.add("dec.pos", random_normal(Shape{config.num_patches(), config.hidden}, 0.02, rng));
  for (std::size_t i = 0; i < config.decoder_layers; ++i) init_transformer_block(p, block_name("dec.block", i), config.hidden, rng);
  init_layer_norm(p, "dec.ln", config.hidden);
  init_linear(p, "head", config.hidden, config.vocab_size, rng);
  return m;
}

Var encode(Binding& b, const TokenizerConfig& config, const PatchGrid& grid) {
  if (grid.frames != config.geometry.frames || grid.rows != config.grid_rows() || grid.cols != config.grid_cols() ||
      grid.patch_h != config.patch || grid.patch_w != config.patch || grid.channels != config.geometry.channels) {
    throw ShapeError("tokenizer: patch grid " + std::to_string(grid.frames) + "x" + std::to_string(grid.rows) + "x" +
                     std::to_string(grid.cols) + " does not match configured geometry " +
                     std::to_string(config.geometry.frames) + "x" + std::to_string(config.grid_rows()) + "x" +
                     std::to_string(config.grid_cols()));
  }
  Tape& tape = b.tape();
  Var x = linear(b, "enc.embed", tape.constant(grid.patches));
  x = add(x, tile_rows(b("enc.pos"), grid.frames));
  const Segments seg = frame_segments(grid.frames, grid.patches_per_frame());
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    x = transformer_block(b, block_name("enc.block", i), x, config.heads, seg);
  }
  return linear(b, "enc.out", layer_norm(b, "enc.ln", x));
}

EncodeOutput encode_and_quantize(Binding& b, const TokenizerConfig& config, const PatchGrid& grid) {
  EncodeOutput out;
  out.z = normalize_rows(encode(b, config, grid));
  out.codes = normalize_rows(b(FrozenTokenizer::kCodebookName));
  out.result = nearest_code(out.z.value(), out.codes.value());
  out.q = gather_rows(out.codes, out.result.indices);
  return out;
}

Var decode(Binding& b, const TokenizerConfig& config, const Var& quantized) {
  Var x = add(linear(b, "dec.in", quantized), b("dec.pos"));
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    x = transformer_block(b, block_name("dec.block", i), x, config.heads);
  }
  return layer_norm(b, "dec.ln", x);
}

Var semantic_head(Binding& b, const Var& decoded) {
  const Var pooled = mean(decoded, 0);
  const std::size_t width = pooled.shape()[0];
  const Var logits = linear(b, "head", reshape(pooled, Shape{1, width}));
  return sigmoid(reshape(logits, Shape{logits.shape()[1]}));
}

Var semantic_probs(Binding& b, const TokenizerConfig& config, const EncodeOutput& enc) {
  return semantic_head(b, decode(b, config, straight_through(enc.z, enc.q)));
}

Var token_loss(const Var& probs, std::span<const double> labels, double gamma) {
  if (probs.value().rank() != 1 || probs.value().size() != labels.size()) {
    throw ShapeError("token_loss: probabilities " + shape_str(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  Tape& tape = probs.tape();
  const std::size_t K = labels.size();
  Array pos(Shape{K}), neg(Shape{K});
  for (std::size_t k = 0; k < K; ++k) {
    if (labels[k] != 0.0 && labels[k] != 1.0) throw std::invalid_argument("token_loss: labels must be 0 or 1");
    pos[k] = labels[k];
    neg[k] = 1.0 - labels[k];
  }
  const Var p = clamp(probs, 1e-7, 1.0 - 1e-7);
  const Var positive = mul(tape.constant(std::move(pos)), log(p));
  const Var modulated = gamma == 1.0 ? p : powc(p, gamma);
  const Var negative = mul(tape.constant(std::move(neg)), mul(modulated, log(affine(p, -1.0, 1.0))));
  return scale(mean_all(add(positive, negative)), -1.0);
}

SvqTerms svq_objective(Binding& b, const TokenizerConfig& config, std::span<const SvqExample> batch) {
  if (batch.empty()) throw std::invalid_argument("svq_objective: empty batch");
  std::vector<Var> token, codebook, commitment;
  SvqTerms terms;
  for (const auto& ex : batch) {
    const PatchGrid grid = patchify(*ex.frames, config.patch, config.patch);
    const EncodeOutput enc = encode_and_quantize(b, config, grid);
    token.push_back(token_loss(semantic_probs(b, config, enc), ex.labels, config.focal_gamma));
    const VqLosses vq = vq_losses(enc.z, enc.q);
    codebook.push_back(vq.codebook);
    commitment.push_back(vq.commitment);
    terms.indices.insert(terms.indices.end(), enc.result.indices.begin(), enc.result.indices.end());
  }
  const auto average = [](const std::vector<Var>& xs) {
    std::vector<Var> flat;
    flat.reserve(xs.size());
    for (const auto& x : xs) flat.push_back(reshape(x, Shape{1}));
    return mean_all(concat(std::span<const Var>(flat), 0));
  };
  terms.token = average(token);
  terms.codebook = average(codebook);
  terms.commitment = average(commitment);
  terms.total = add(add(terms.token, scale(terms.codebook, config.codebook_weight)),
                    scale(terms.commitment, config.commitment_weight));
  return terms;
}

SvqTrainer::SvqTrainer(TokenizerModel model, const AdamWConfig& optimizer)
    : model_(std::move(model)), optimizer_(optimizer, model_.params) {}

SvqMetrics SvqTrainer::step(std::span<const SvqExample> batch) {
  Tape tape;
  Binding b(tape, model_.params);
  SvqTerms terms;
  try {
    terms = svq_objective(b, model_.config, batch);
  } catch (const std::logic_error&) {
    const std::string bad = model_.params.first_non_finite();
    if (bad.empty()) throw;
    throw TrainingError("tokenizer step " + std::to_string(step_ + 1) + ": non-finite parameter '" + bad + "'");
  }
  SvqMetrics m;
  m.step = step_ + 1;
  m.total = terms.total.value().item();
  m.token = terms.token.value().item();
  m.codebook = terms.codebook.value().item();
  m.commitment = terms.commitment.value().item();
  m.utilization = utilization_rate(code_histogram(terms.indices, model_.config.codebook_size));
  if (!std::isfinite(m.total)) {
    std::ostringstream os;
    os << "tokenizer step " << m.step << ": non-finite loss (L_TOKEN=" << m.token << ", codebook=" << m.codebook
       << ", commitment=" << m.commitment << ")";
    throw TrainingError(os.str());
  }
  tape.backward(terms.total);
  optimizer_.step(model_.params, b.gradients());
  ++step_;
  return m;
}

FrozenTokenizer::FrozenTokenizer(TokenizerConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (!params_.contains(kCodebookName)) throw std::invalid_argument("frozen tokenizer: missing codebook");
  const Array& codes = params_.get(kCodebookName);
  if (codes.rank() != 2 || codes.rows() != config_.codebook_size || codes.cols() != config_.code_dim) {
    throw ShapeError("frozen tokenizer: codebook " + shape_str(codes.shape()) + " does not match config");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& n = params_.name(i);
    if (n != kCodebookName && n.rfind(kEncoderPrefix, 0) != 0) {
      throw std::invalid_argument("frozen tokenizer: unexpected parameter '" + n + "'");
    }
  }
}

FrozenTokenizer FrozenTokenizer::from_model(const TokenizerModel& model) {
  return FrozenTokenizer(model.config, model.params.subset({kEncoderPrefix, kCodebookName}));
}

EncodeOutput FrozenTokenizer::encode(Tape& tape, const Array& frames) const {
  Binding b(tape, params_, false);
  return encode_and_quantize(b, config_, patchify(frames, config_.patch, config_.patch));
}

std::vector<std::size_t> FrozenTokenizer::tokenize(const Array& frames) const {
  Tape tape;
  return encode(tape, frames).result.indices;
}

}  // namespace svq
