#include <gtest/gtest.h>

#include <cmath>

#include "svq/autodiff.hpp"
#include "svq/data.hpp"
#include "svq/nn.hpp"
#include "svq/rng.hpp"
#include "svq/tokenizer.hpp"
#include "svq/verify.hpp"

using namespace svq;

namespace {

TokenizerConfig small_config(std::size_t vocab = 6) {
  TokenizerConfig c;
  c.geometry = {2, 8, 8, 3};
  c.patch = 4;
  c.codebook_size = 8;
  c.code_dim = 4;
  c.hidden = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.vocab_size = vocab;
  return c;
}

Array random_frames(const ClipGeometry& g, std::uint64_t seed) {
  Rng rng(seed);
  Array a(Shape{g.frames, g.height, g.width, g.channels});
  for (auto& v : a.data()) v = rng.uniform();
  return a;
}

double loss_of(const Var& v) { return v.value().item(); }

}  // namespace

TEST(Patchify, RasterOrderOnTinyFrame) {
  const Array f(Shape{1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const PatchGrid g = patchify(f, 1, 1);
  EXPECT_EQ(g.patches.shape(), (Shape{4, 1}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.patches[i], static_cast<double>(i + 1));
}

TEST(Patchify, WholeFramePatch) {
  const Array f = random_frames({3, 8, 8, 3}, 1);
  const PatchGrid g = patchify(f, 8, 8);
  EXPECT_EQ(g.patches.shape(), (Shape{3, 192}));
}

TEST(Patchify, RoundTripIsBitwise) {
  const Array f = random_frames({2, 8, 8, 3}, 2);
  EXPECT_TRUE(bitwise_equal(unpatchify(patchify(f, 4, 4)), f));
  EXPECT_TRUE(bitwise_equal(unpatchify(patchify(f, 2, 4)), f));
}

TEST(Patchify, FrameMajorThenRaster) {
  Array f(Shape{2, 4, 4, 1});
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) f[(t * 4 + y) * 4 + x] = static_cast<double>(t * 100 + (y / 2) * 10 + x / 2);
  const PatchGrid g = patchify(f, 2, 2);
  const std::vector<double> expect{0, 1, 10, 11, 100, 101, 110, 111};
  for (std::size_t r = 0; r < 8; ++r) EXPECT_EQ(g.patches(r, 0), expect[r]);
}

TEST(Patchify, NonDividingPatchListsDivisors) {
  try {
    patchify(random_frames({1, 6, 6, 1}, 3), 4, 4);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("1, 2, 3, 6"), std::string::npos) << e.what();
  }
}

TEST(TokenizerModel, OutputDimensions) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 1);
  Tape t;
  Binding b(t, m.params);
  const auto grid = patchify(random_frames(cfg.geometry, 4), cfg.patch, cfg.patch);
  EXPECT_EQ(encode(b, cfg, grid).shape(), (Shape{cfg.num_patches(), cfg.code_dim}));
  const auto enc = encode_and_quantize(b, cfg, grid);
  EXPECT_EQ(enc.result.indices.size(), cfg.num_patches());
  EXPECT_EQ(semantic_probs(b, cfg, enc).shape(), (Shape{cfg.vocab_size}));
}

TEST(TokenizerModel, RejectsBadConfig) {
  auto cfg = small_config();
  cfg.patch = 3;
  EXPECT_THROW(TokenizerModel::create(cfg, 1), std::invalid_argument);
  cfg = small_config();
  cfg.hidden = 7;
  EXPECT_THROW(TokenizerModel::create(cfg, 1), std::invalid_argument);
}

TEST(Quantize, PlantedCodeIsSelected) {
  const auto cfg = small_config();
  auto m = TokenizerModel::create(cfg, 2);
  const Array frames = random_frames(cfg.geometry, 5);
  Array z;
  {
    Tape t;
    Binding b(t, m.params);
    z = normalize_rows(encode(b, cfg, patchify(frames, cfg.patch, cfg.patch)).value());
  }
  Array& codes = m.params.get(FrozenTokenizer::kCodebookName);
  for (std::size_t c = 0; c < cfg.code_dim; ++c) codes(6, c) = z(3, c);
  Tape t;
  Binding b(t, m.params);
  EXPECT_EQ(encode_and_quantize(b, cfg, patchify(frames, cfg.patch, cfg.patch)).result.indices[3], 6u);
}

TEST(Quantize, IdenticalPatchesGetIdenticalCodes) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 3);
  // Frame 1 is a copy of frame 0, so each patch has an identical twin.
  Array frames = random_frames(cfg.geometry, 6);
  const std::size_t per = 8 * 8 * 3;
  for (std::size_t i = 0; i < per; ++i) frames[per + i] = frames[i];
  const auto ids = FrozenTokenizer::from_model(m).tokenize(frames);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ids[i], ids[4 + i]);
}

TEST(Quantize, MatchesIndependentRecomputation) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 4);
  const Array frames = random_frames(cfg.geometry, 7);
  Tape t;
  Binding b(t, m.params, false);
  const Array z = normalize_rows(encode(b, cfg, patchify(frames, cfg.patch, cfg.patch)).value());
  const Array codes = normalize_rows(m.params.get(FrozenTokenizer::kCodebookName));
  const auto ids = FrozenTokenizer::from_model(m).tokenize(frames);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t j = 0; j < codes.rows(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) d += (z(i, c) - codes(j, c)) * (z(i, c) - codes(j, c));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    EXPECT_EQ(ids[i], best);
  }
}

TEST(SemanticHead, ZeroWeightsGiveOneHalf) {
  const auto cfg = small_config();
  auto m = TokenizerModel::create(cfg, 5);
  for (auto& v : m.params.get("head.w").data()) v = 0.0;
  Tape t;
  Binding b(t, m.params);
  const auto enc = encode_and_quantize(b, cfg, patchify(random_frames(cfg.geometry, 8), cfg.patch, cfg.patch));
  for (double p : semantic_probs(b, cfg, enc).value().data()) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(SemanticHead, ConstantRowsAverageToThatConstant) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 6);
  for (std::size_t n : {1u, 5u, 12u}) {
    Tape t;
    Binding b(t, m.params);
    Array rows(Shape{n, cfg.hidden});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < cfg.hidden; ++c) rows(r, c) = 0.1 * static_cast<double>(c);
    Tape t1;
    Binding b1(t1, m.params);
    Array one(Shape{1, cfg.hidden});
    for (std::size_t c = 0; c < cfg.hidden; ++c) one(0, c) = 0.1 * static_cast<double>(c);
    EXPECT_LT(max_abs_diff(semantic_head(b, t.constant(rows)).value(), semantic_head(b1, t1.constant(one)).value()),
              1e-15);
  }
}

TEST(SemanticHead, MatchesStagedComputation) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 7);
  Rng rng(9);
  Array rows(Shape{5, cfg.hidden});
  for (auto& v : rows.data()) v = rng.uniform(-1, 1);
  Tape t;
  Binding b(t, m.params);
  const Array p = semantic_head(b, t.constant(rows)).value();
  const Array& w = m.params.get("head.w");
  const Array& bias = m.params.get("head.b");
  for (std::size_t k = 0; k < cfg.vocab_size; ++k) {
    double logit = bias[k];
    for (std::size_t c = 0; c < cfg.hidden; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 5; ++r) mean += rows(r, c);
      logit += (mean / 5.0) * w(c, k);
    }
    EXPECT_NEAR(p[k], 1.0 / (1.0 + std::exp(-logit)), 1e-12);
  }
}

TEST(TokenLoss, HandValue) {
  Tape t;
  const std::vector<double> y{1, 0};
  EXPECT_NEAR(loss_of(token_loss(t.constant(Array::vector({0.8, 0.3})), y)), 0.16507301724791, 1e-6);
}

TEST(TokenLoss, PerfectPredictionApproachesZero) {
  Tape t;
  const std::vector<double> y{1, 0};
  EXPECT_LT(loss_of(token_loss(t.constant(Array::vector({1 - 1e-9, 1e-9})), y)), 1e-6);
}

TEST(TokenLoss, AllNegativeAtOneHalf) {
  Tape t;
  const std::vector<double> y{0, 0, 0};
  EXPECT_NEAR(loss_of(token_loss(t.constant(Array::vector({0.5, 0.5, 0.5})), y)), 0.5 * std::log(2.0), 1e-12);
}

TEST(TokenLoss, GammaTwoHandValue) {
  Tape t;
  const std::vector<double> y{1, 0};
  const double expect = (-std::log(0.8) - 0.09 * std::log(0.7)) / 2.0;
  EXPECT_NEAR(loss_of(token_loss(t.constant(Array::vector({0.8, 0.3})), y, 2.0)), expect, 1e-12);
}

TEST(TokenLoss, ExtremesStayFinite) {
  Tape t;
  const std::vector<double> y{1, 0};
  const Var p = t.parameter(Array::vector({0.0, 1.0}));
  const Var l = token_loss(p, y);
  EXPECT_TRUE(std::isfinite(loss_of(l)));
  t.backward(l);
  EXPECT_TRUE(t.grad(p).all_finite());
}

TEST(TokenLoss, RejectsNonBinaryLabelsAndSizeMismatch) {
  Tape t;
  const std::vector<double> half{0.5, 0};
  EXPECT_THROW(token_loss(t.constant(Array::vector({0.5, 0.5})), half), std::invalid_argument);
  const std::vector<double> three{1, 0, 0};
  EXPECT_THROW(token_loss(t.constant(Array::vector({0.5, 0.5})), three), ShapeError);
}

TEST(SvqObjective, GradientMatchesFiniteDifferences) {
  const CheckResult r = check_svq_objective_gradient(11);
  EXPECT_TRUE(r.pass) << r.detail << " max_error=" << r.max_error;
}

TEST(SvqObjective, EncoderGetsTokenGradientThroughQuantizer) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 8);
  const Array frames = random_frames(cfg.geometry, 10);
  const std::vector<double> y{1, 0, 1, 0, 0, 1};
  Tape t;
  Binding b(t, m.params);
  const auto enc = encode_and_quantize(b, cfg, patchify(frames, cfg.patch, cfg.patch));
  t.backward(token_loss(semantic_probs(b, cfg, enc), y));
  const auto grads = b.gradients();
  double enc_norm = 0.0, code_norm = 0.0;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    double n = 0.0;
    for (double g : grads[i].data()) n += g * g;
    if (m.params.name(i) == FrozenTokenizer::kCodebookName) code_norm = n;
    else if (m.params.name(i).rfind("enc.", 0) == 0) enc_norm += n;
  }
  EXPECT_GT(enc_norm, 0.0);
  EXPECT_EQ(code_norm, 0.0);
}

TEST(SvqObjective, CodebookGradientComesOnlyFromCodebookLoss) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 9);
  const Array frames = random_frames(cfg.geometry, 11);
  const std::vector<double> y{1, 0, 1, 0, 0, 1};
  const SvqExample ex{&frames, y};
  const auto codebook_grad = [&](auto pick) {
    Tape t;
    Binding b(t, m.params);
    const SvqTerms terms = svq_objective(b, cfg, std::span<const SvqExample>(&ex, 1));
    t.backward(pick(terms));
    return b.gradients()[m.params.index_of(FrozenTokenizer::kCodebookName)];
  };
  const Array total = codebook_grad([](const SvqTerms& s) { return s.total; });
  const Array only = codebook_grad([&](const SvqTerms& s) { return scale(s.codebook, cfg.codebook_weight); });
  EXPECT_LT(max_abs_diff(total, only), 1e-15);
  const Array token = codebook_grad([](const SvqTerms& s) { return s.token; });
  for (double g : token.data()) EXPECT_EQ(g, 0.0);
  const Array commit = codebook_grad([](const SvqTerms& s) { return s.commitment; });
  for (double g : commit.data()) EXPECT_EQ(g, 0.0);
}

TEST(SvqTrainer, ZeroLearningRateLeavesParametersUnchanged) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 10);
  AdamWConfig opt;
  opt.lr = 0.0;
  SvqTrainer tr(m, opt);
  const Array frames = random_frames(cfg.geometry, 12);
  const std::vector<double> y{1, 0, 0, 0, 0, 1};
  const SvqExample ex{&frames, y};
  tr.step(std::span<const SvqExample>(&ex, 1));
  EXPECT_TRUE(tr.model().params == m.params);
  EXPECT_EQ(tr.steps_taken(), 1);
}

TEST(SvqTrainer, OverfitsOneExample) {
  RenderConfig render;
  const auto corpus = generate_corpus(1, 13);
  auto cfg = small_config();
  cfg.geometry = ClipGeometry{};
  const auto vocab = Vocabulary::build(corpus, 1.0);
  cfg.vocab_size = vocab.content_size();
  cfg.hidden = 16;
  const auto y = caption_to_multihot(corpus[0].caption, vocab);
  const SvqExample ex{&corpus[0].frames, y};
  AdamWConfig opt;
  opt.lr = 1e-3;
  SvqTrainer tr(TokenizerModel::create(cfg, 11), opt);
  const double first = tr.step(std::span<const SvqExample>(&ex, 1)).token;
  double last = first;
  for (int i = 1; i < 200; ++i) last = tr.step(std::span<const SvqExample>(&ex, 1)).token;
  EXPECT_LT(last, 0.25 * first) << "first " << first << " last " << last;
}

TEST(SvqTrainer, SameSeedSameCurve) {
  const auto cfg = small_config();
  const Array frames = random_frames(cfg.geometry, 14);
  const std::vector<double> y{1, 0, 0, 1, 0, 0};
  const SvqExample ex{&frames, y};
  SvqTrainer a(TokenizerModel::create(cfg, 12), AdamWConfig{}), b(TokenizerModel::create(cfg, 12), AdamWConfig{});
  for (int i = 0; i < 5; ++i) {
    const auto ma = a.step(std::span<const SvqExample>(&ex, 1)), mb = b.step(std::span<const SvqExample>(&ex, 1));
    EXPECT_EQ(ma.total, mb.total);
    EXPECT_EQ(ma.utilization, mb.utilization);
  }
  EXPECT_TRUE(a.model().params == b.model().params);
}

TEST(SvqTrainer, NonFiniteLossAbortsWithStep) {
  const auto cfg = small_config();
  auto m = TokenizerModel::create(cfg, 13);
  m.params.get("head.b")[0] = std::nan("");
  SvqTrainer tr(m, AdamWConfig{});
  const Array frames = random_frames(cfg.geometry, 15);
  const std::vector<double> y{1, 0, 0, 1, 0, 0};
  const SvqExample ex{&frames, y};
  try {
    tr.step(std::span<const SvqExample>(&ex, 1));
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Frozen, KeepsEncoderAndCodebookOnly) {
  const auto m = TokenizerModel::create(small_config(), 14);
  const auto f = FrozenTokenizer::from_model(m);
  for (std::size_t i = 0; i < f.params().size(); ++i) {
    const auto& n = f.params().name(i);
    EXPECT_TRUE(n == "codebook" || n.rfind("enc.", 0) == 0) << n;
  }
  EXPECT_LT(f.params().size(), m.params.size());
}

TEST(Frozen, SameClipSameLabels) {
  const auto cfg = small_config();
  const auto f = FrozenTokenizer::from_model(TokenizerModel::create(cfg, 15));
  const Array frames = random_frames(cfg.geometry, 16);
  EXPECT_EQ(f.tokenize(frames), f.tokenize(frames));
}

TEST(Frozen, SwappingFramesSwapsLabelBlocks) {
  const auto cfg = small_config();
  const auto f = FrozenTokenizer::from_model(TokenizerModel::create(cfg, 16));
  const Array frames = random_frames(cfg.geometry, 17);
  Array swapped(frames.shape());
  const std::size_t per = 8 * 8 * 3;
  for (std::size_t i = 0; i < per; ++i) {
    swapped[i] = frames[per + i];
    swapped[per + i] = frames[i];
  }
  const auto a = f.tokenize(frames), b = f.tokenize(swapped);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i], b[4 + i]);
    EXPECT_EQ(a[4 + i], b[i]);
  }
}

TEST(Frozen, LabelsEqualEncodeAndQuantize) {
  const auto cfg = small_config();
  const auto m = TokenizerModel::create(cfg, 17);
  const Array frames = random_frames(cfg.geometry, 18);
  Tape t;
  Binding b(t, m.params);
  EXPECT_EQ(FrozenTokenizer::from_model(m).tokenize(frames),
            encode_and_quantize(b, cfg, patchify(frames, cfg.patch, cfg.patch)).result.indices);
}

TEST(Frozen, RejectsForeignParameters) {
  const auto m = TokenizerModel::create(small_config(), 18);
  EXPECT_THROW(FrozenTokenizer(m.config, m.params), std::invalid_argument);
}
