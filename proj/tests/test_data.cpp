#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

#include "svq/data.hpp"
#include "svq/rng.hpp"

using namespace svq;

TEST(Corpus, SameSeedIsBitwiseIdentical) {
  const auto a = generate_corpus(20, 7), b = generate_corpus(20, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a[i].frames, b[i].frames));
    EXPECT_EQ(a[i].caption, b[i].caption);
    EXPECT_EQ(a[i].scene, b[i].scene);
  }
}

TEST(Corpus, DifferentSeedsDiffer) {
  const auto a = generate_corpus(5, 1), b = generate_corpus(5, 2);
  bool any = false;
  for (std::size_t i = 0; i < 5; ++i) any |= !bitwise_equal(a[i].frames, b[i].frames);
  EXPECT_TRUE(any);
}

TEST(Corpus, FramesHaveDeclaredShapeAndQuantizedRange) {
  const auto c = generate_corpus(3, 3);
  for (const auto& clip : c) {
    EXPECT_EQ(clip.frames.shape(), (Shape{4, 16, 16, 3}));
    for (double v : clip.frames.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      EXPECT_DOUBLE_EQ(std::round(v * 255.0) / 255.0, v);
    }
  }
}

TEST(Corpus, RejectsEmpty) { EXPECT_THROW(generate_corpus(0, 1), std::invalid_argument); }

TEST(Caption, TemplateForRedSquareMovingLeft) {
  Scene s;
  s.shape = ShapeKind::square;
  s.color = Color::red;
  s.motion = Motion::left;
  EXPECT_EQ(join_caption(caption_for(s)), "a red square moving left");
}

TEST(Caption, FlourishWordAppended) {
  Scene s;
  s.flourish = 3;
  const auto c = caption_for(s);
  ASSERT_EQ(c.size(), 6u);
  EXPECT_EQ(c.back(), flourish_word(3));
}

TEST(Caption, EveryContentWordRecoverableFromScene) {
  for (const auto& clip : generate_corpus(300, 11)) {
    EXPECT_EQ(scene_from_caption(clip.caption).shape, clip.scene.shape);
    EXPECT_EQ(scene_from_caption(clip.caption).color, clip.scene.color);
    EXPECT_EQ(scene_from_caption(clip.caption).motion, clip.scene.motion);
    EXPECT_EQ(scene_from_caption(clip.caption).flourish, clip.scene.flourish);
    EXPECT_EQ(caption_for(clip.scene), clip.caption);
  }
}

TEST(Caption, MalformedRejected) {
  EXPECT_THROW(scene_from_caption({"a", "red"}), std::invalid_argument);
  EXPECT_THROW(scene_from_caption({"a", "mauve", "square", "moving", "left"}), std::invalid_argument);
}

TEST(Render, PureFunctionOfSceneAndSeed) {
  Rng rng(4);
  const Scene s = random_scene(rng, ClipGeometry{});
  EXPECT_TRUE(bitwise_equal(render_scene(s, 9, ClipGeometry{}), render_scene(s, 9, ClipGeometry{})));
  EXPECT_FALSE(bitwise_equal(render_scene(s, 9, ClipGeometry{}), render_scene(s, 10, ClipGeometry{})));
}

TEST(Render, ShapeStaysInsideFrameAndMovesTwoPixelsPerFrame) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Scene s = random_scene(rng, ClipGeometry{});
    for (std::size_t t = 0; t < 4; ++t) {
      const auto [x, y] = box_position(s, t);
      EXPECT_GE(x, 0);
      EXPECT_GE(y, 0);
      EXPECT_LE(x + 6, 16);
      EXPECT_LE(y + 6, 16);
      if (t > 0) {
        const auto [px, py] = box_position(s, t - 1);
        EXPECT_EQ(std::abs(x - px) + std::abs(y - py), s.motion == Motion::still ? 0 : 2);
      }
    }
  }
}

TEST(Render, CentroidPatchHoldsShapePixels) {
  for (const auto& clip : generate_corpus(50, 6)) {
    for (std::size_t t = 0; t < 4; ++t) {
      const std::size_t flat = centroid_patch(clip.scene, t, ClipGeometry{}, 4);
      ASSERT_GE(flat, t * 16);
      ASSERT_LT(flat, (t + 1) * 16);
      const std::size_t row = (flat % 16) / 4, col = flat % 4;
      double brightest = 0.0;
      for (std::size_t y = row * 4; y < row * 4 + 4; ++y)
        for (std::size_t x = col * 4; x < col * 4 + 4; ++x)
          for (std::size_t c = 0; c < 3; ++c) brightest = std::max(brightest, clip.frames[((t * 16 + y) * 16 + x) * 3 + c]);
      EXPECT_GT(brightest, 0.5);
    }
  }
}

TEST(Scenes, ShapeMarginalIsUniform) {
  Rng rng(12);
  std::array<int, 4> counts{};
  const int n = 4000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(random_scene(rng, ClipGeometry{}).shape)];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.03);
}

TEST(Vocabulary, SpecialsFirstAndIdsContiguous) {
  const auto v = Vocabulary::build(generate_corpus(50, 1), 1.0);
  EXPECT_EQ(v.word(Vocabulary::kPad), "[PAD]");
  EXPECT_EQ(v.word(Vocabulary::kUnk), "[UNK]");
  EXPECT_EQ(v.word(Vocabulary::kCls), "[CLS]");
  EXPECT_EQ(v.word(Vocabulary::kMask), "[MASK]");
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.word(i)), i);
}

TEST(Vocabulary, KeepsTopThirdByFrequency) {
  const std::vector<std::vector<std::string>> caps{{"a", "a", "a", "a", "a", "b", "b", "b", "c"}};
  const auto v = Vocabulary::build(caps, 1.0 / 3.0);
  EXPECT_EQ(v.content_size(), 1u);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_FALSE(v.contains("c"));
}

TEST(Vocabulary, TiesBrokenLexicographically) {
  const std::vector<std::vector<std::string>> caps{{"zeta", "alpha", "mid"}};
  const auto v = Vocabulary::build(caps, 0.5);
  EXPECT_EQ(v.content_size(), 2u);
  EXPECT_TRUE(v.contains("alpha"));
  EXPECT_TRUE(v.contains("mid"));
  EXPECT_FALSE(v.contains("zeta"));
}

TEST(Vocabulary, FullKeepRoundTripsWithoutUnk) {
  const auto corpus = generate_corpus(200, 2);
  const auto v = Vocabulary::build(corpus, 1.0);
  for (const auto& clip : corpus) {
    const auto ids = v.encode(clip.caption);
    EXPECT_EQ(std::count(ids.begin(), ids.end(), Vocabulary::kUnk), 0);
    EXPECT_EQ(v.decode(ids), clip.caption);
  }
}

TEST(Vocabulary, TruncationMapsOnlyDroppedWordsToUnk) {
  const auto corpus = generate_corpus(300, 3);
  const auto v = Vocabulary::build(corpus, 0.3);
  for (const auto& clip : corpus) {
    const auto back = v.decode(v.encode(clip.caption));
    ASSERT_EQ(back.size(), clip.caption.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      EXPECT_EQ(back[i], v.contains(clip.caption[i]) ? clip.caption[i] : "[UNK]");
    }
  }
}

TEST(Vocabulary, ContentWordsAllSurviveDefaultTruncation) {
  const auto v = Vocabulary::build(generate_corpus(2000, 1), 0.3);
  for (auto s : kShapes) EXPECT_TRUE(v.contains(std::string(to_string(s))));
  for (auto c : kColors) EXPECT_TRUE(v.contains(std::string(to_string(c))));
  for (auto m : kMotions) EXPECT_TRUE(v.contains(std::string(to_string(m))));
}

TEST(Vocabulary, HashTracksWordList) {
  const auto a = Vocabulary::from_words({"x", "y"}), b = Vocabulary::from_words({"x", "y"}),
             c = Vocabulary::from_words({"y", "x"});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Multihot, EmptyCaptionIsZero) {
  const auto v = Vocabulary::from_words({"a", "red"});
  for (double x : caption_to_multihot({}, v)) EXPECT_EQ(x, 0.0);
}

TEST(Multihot, RepeatedWordCountsOnce) {
  const auto v = Vocabulary::from_words({"a", "red"});
  EXPECT_EQ(caption_to_multihot({"red", "red"}, v), caption_to_multihot({"red"}, v));
}

TEST(Multihot, FiveOnesAtCaptionWords) {
  const auto corpus = generate_corpus(300, 4);
  const auto v = Vocabulary::build(corpus, 1.0);
  const std::vector<std::string> cap{"a", "red", "square", "moving", "left"};
  const auto h = caption_to_multihot(cap, v);
  ASSERT_EQ(h.size(), v.content_size());
  EXPECT_EQ(std::count(h.begin(), h.end(), 1.0), 5);
  for (const auto& w : cap) EXPECT_EQ(h[v.id(w) - Vocabulary::kSpecials], 1.0);
}

TEST(Multihot, UnknownWordsAddNothing) {
  const auto v = Vocabulary::from_words({"a"});
  const auto h = caption_to_multihot({"a", "zzz"}, v);
  EXPECT_EQ(h, std::vector<double>{1.0});
}

TEST(Batching, FullBatchIsPermutation) {
  const auto b = epoch_batches(17, 17, 3, 0);
  ASSERT_EQ(b.size(), 1u);
  auto sorted = b[0];
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 17; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Batching, PartialLastBatchKept) {
  const auto b = epoch_batches(10, 4, 3, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2].size(), 2u);
}

TEST(Batching, EpochsDifferInOrderButCoverSameSet) {
  const auto a = epoch_permutation(50, 8, 0), b = epoch_permutation(50, 8, 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(std::multiset<std::size_t>(a.begin(), a.end()), std::multiset<std::size_t>(b.begin(), b.end()));
}

TEST(Batching, MatchesIndependentFisherYates) {
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const std::size_t n = 37;
    Rng rng(derive_seed(seed, {4, 0xba7c4}));
    std::vector<std::size_t> oracle;
    for (std::size_t i = 0; i < n; ++i) oracle.push_back(i);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const std::size_t top = n - 1 - k;
      const std::size_t j = static_cast<std::size_t>(rng.below(top + 1));
      const std::size_t tmp = oracle[top];
      oracle[top] = oracle[j];
      oracle[j] = tmp;
    }
    EXPECT_EQ(epoch_permutation(n, seed, 4), oracle);
  }
}

TEST(Batching, StreamWalksEpochs) {
  BatchStream s(5, 2, 1);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 3; ++i)
    for (auto x : s.next()) seen.insert(x);
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4}));
  s.next();
  EXPECT_EQ(s.epoch(), 1u);
}

TEST(CorpusFile, RoundTripsBitwise) {
  const auto corpus = generate_corpus(4, 5);
  const auto path = (std::filesystem::temp_directory_path() / "svq_corpus_rt.jsonl").string();
  write_corpus(path, corpus);
  const auto back = read_corpus(path);
  std::remove(path.c_str());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(back[i].frames, corpus[i].frames));
    EXPECT_EQ(back[i].caption, corpus[i].caption);
    EXPECT_EQ(back[i].scene, corpus[i].scene);
  }
}

TEST(CaptionText, NormalizesCaseAndPunctuation) {
  EXPECT_EQ(normalize_caption("A Red, square moving LEFT."),
            (std::vector<std::string>{"a", "red", "square", "moving", "left"}));
}
