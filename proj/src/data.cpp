#include "svq/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "svq/util.hpp"

namespace svq {

namespace {

constexpr std::array<std::string_view, 4> kShapeNames{"square", "circle", "triangle", "cross"};
constexpr std::array<std::string_view, 4> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, 5> kMotionNames{"left", "right", "up", "down", "still"};

constexpr std::array<std::array<double, 3>, 4> kRgb{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}}};

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::pair<int, int> motion_delta(Motion m) {
  switch (m) {
    case Motion::left: return {-1, 0};
    case Motion::right: return {1, 0};
    case Motion::up: return {0, -1};
    case Motion::down: return {0, 1};
    case Motion::still: return {0, 0};
  }
  return {0, 0};
}

bool inside_shape(ShapeKind shape, std::size_t u, std::size_t v, std::size_t box) {
  const double c = (static_cast<double>(box) - 1.0) / 2.0;
  const double du = static_cast<double>(u) - c, dv = static_cast<double>(v) - c;
  switch (shape) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: return du * du + dv * dv <= c * c + 2.0;
    case ShapeKind::triangle: return std::abs(du) <= (static_cast<double>(v) + 1.0) / 2.0;
    case ShapeKind::cross: {
      const double arm = static_cast<double>(box) / 6.0;
      return std::abs(du) <= arm || std::abs(dv) <= arm;
    }
  }
  return false;
}

std::vector<std::string> make_flourish_words(std::size_t n) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::vector<std::string> syllables;
  for (char c : consonants) {
    for (char v : vowels) syllables.push_back(std::string{c, v});
  }
  const std::size_t s = syllables.size();
  std::vector<std::string> words;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t block = k / s;
    words.push_back(syllables[k % s] + syllables[(k * 29 + block * 17 + 5) % s] +
                    (block >= 4 ? syllables[block % s] : std::string{}));
  }
  return words;
}

const std::vector<std::string>& flourish_table() {
  static const std::vector<std::string> table = make_flourish_words(4096);
  return table;
}

std::pair<int, int> position_range(int delta, const ClipGeometry& geometry, const RenderConfig& render,
                                   std::size_t extent) {
  const int span = static_cast<int>(extent) - static_cast<int>(render.box);
  const int travel = static_cast<int>(render.step * (geometry.frames - 1));
  if (span < 0 || (delta != 0 && span < travel)) {
    throw std::invalid_argument("frame too small for a moving " + std::to_string(render.box) + "px shape");
  }
  if (delta < 0) return {travel, span};
  if (delta > 0) return {0, span - travel};
  return {0, span};
}

}  // namespace

std::string_view to_string(ShapeKind s) { return kShapeNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(Motion m) { return kMotionNames[static_cast<std::size_t>(m)]; }
ShapeKind parse_shape(std::string_view s) { return parse_enum<ShapeKind>(s, kShapeNames, "shape"); }
Color parse_color(std::string_view s) { return parse_enum<Color>(s, kColorNames, "color"); }
Motion parse_motion(std::string_view s) { return parse_enum<Motion>(s, kMotionNames, "motion"); }

const std::string& flourish_word(std::size_t index) { return flourish_table().at(index); }

std::vector<std::string> caption_for(const Scene& scene, const RenderConfig& render) {
  std::vector<std::string> words{"a", std::string(to_string(scene.color)), std::string(to_string(scene.shape))};
  if (scene.motion == Motion::still) {
    words.insert(words.end(), {"staying", "still"});
  } else {
    words.insert(words.end(), {"moving", std::string(to_string(scene.motion))});
  }
  if (scene.flourish >= 0) {
    if (static_cast<std::size_t>(scene.flourish) >= render.flourish_words) {
      throw std::invalid_argument("flourish index " + std::to_string(scene.flourish) + " out of range");
    }
    words.push_back(flourish_word(static_cast<std::size_t>(scene.flourish)));
  }
  return words;
}

Scene scene_from_caption(const std::vector<std::string>& caption, const RenderConfig& render) {
  if (caption.size() < 5 || caption.size() > 6 || caption[0] != "a") {
    throw std::invalid_argument("caption does not follow the scene template: '" + join_caption(caption) + "'");
  }
  Scene s;
  s.color = parse_color(caption[1]);
  s.shape = parse_shape(caption[2]);
  if (caption[3] == "staying" && caption[4] == "still") {
    s.motion = Motion::still;
  } else if (caption[3] == "moving" && caption[4] != "still") {
    s.motion = parse_motion(caption[4]);
  } else {
    throw std::invalid_argument("bad motion phrase in '" + join_caption(caption) + "'");
  }
  if (caption.size() == 6) {
    const auto& table = flourish_table();
    const auto it = std::find(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(render.flourish_words),
                              caption[5]);
    if (it == table.begin() + static_cast<std::ptrdiff_t>(render.flourish_words)) {
      throw std::invalid_argument("unknown trailing word '" + caption[5] + "'");
    }
    s.flourish = static_cast<int>(it - table.begin());
  }
  return s;
}

Scene random_scene(Rng& rng, const ClipGeometry& geometry, const RenderConfig& render) {
  Scene s;
  s.shape = kShapes[rng.below(kShapes.size())];
  s.color = kColors[rng.below(kColors.size())];
  s.motion = kMotions[rng.below(kMotions.size())];
  const auto [dx, dy] = motion_delta(s.motion);
  const auto [x_lo, x_hi] = position_range(dx, geometry, render, geometry.width);
  const auto [y_lo, y_hi] = position_range(dy, geometry, render, geometry.height);
  s.x = x_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(x_hi - x_lo + 1)));
  s.y = y_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(y_hi - y_lo + 1)));
  if (render.flourish_words > 0 && rng.bernoulli(render.flourish_probability)) {
    double total = 0.0;
    for (std::size_t k = 0; k < render.flourish_words; ++k) total += 1.0 / static_cast<double>(k + 1);
    double u = rng.uniform() * total;
    std::size_t k = 0;
    for (; k + 1 < render.flourish_words; ++k) {
      u -= 1.0 / static_cast<double>(k + 1);
      if (u < 0.0) break;
    }
    s.flourish = static_cast<int>(k);
  }
  return s;
}

std::pair<int, int> box_position(const Scene& scene, std::size_t frame, const RenderConfig& render) {
  const auto [dx, dy] = motion_delta(scene.motion);
  const int shift = static_cast<int>(render.step * frame);
  return {scene.x + dx * shift, scene.y + dy * shift};
}

std::size_t centroid_patch(const Scene& scene, std::size_t frame, const ClipGeometry& geometry, std::size_t patch,
                           const RenderConfig& render) {
  const auto [x, y] = box_position(scene, frame, render);
  const double half = (static_cast<double>(render.box) - 1.0) / 2.0;
  const auto col = static_cast<std::size_t>(std::floor((x + half) / static_cast<double>(patch)));
  const auto row = static_cast<std::size_t>(std::floor((y + half) / static_cast<double>(patch)));
  const std::size_t grid_cols = geometry.width / patch, grid_rows = geometry.height / patch;
  return frame * grid_rows * grid_cols + row * grid_cols + col;
}

Array render_scene(const Scene& scene, std::uint64_t seed, const ClipGeometry& g, const RenderConfig& render) {
  Rng rng(seed);
  Array frames(Shape{g.frames, g.height, g.width, g.channels});
  const auto& rgb = kRgb[static_cast<std::size_t>(scene.color)];
  for (std::size_t t = 0; t < g.frames; ++t) {
    const auto [bx, by] = box_position(scene, t, render);
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const int u = static_cast<int>(x) - bx, v = static_cast<int>(y) - by;
        const bool in_box = u >= 0 && v >= 0 && u < static_cast<int>(render.box) && v < static_cast<int>(render.box);
        const bool on = in_box && inside_shape(scene.shape, static_cast<std::size_t>(u), static_cast<std::size_t>(v),
                                               render.box);
        const double gain = rng.uniform(0.85, 1.0);
        for (std::size_t c = 0; c < g.channels; ++c) {
          const double noise = rng.uniform(0.0, render.background_noise);
          double value = on ? (rgb[c % 3] > 0.0 ? gain * rgb[c % 3] : noise) : noise;
          value = std::round(std::clamp(value, 0.0, 1.0) * 255.0) / 255.0;
          frames[((t * g.height + y) * g.width + x) * g.channels + c] = value;
        }
      }
    }
  }
  return frames;
}

std::vector<SyntheticClip> generate_corpus(std::size_t n, std::uint64_t seed, const ClipGeometry& geometry,
                                           const RenderConfig& render) {
  if (n == 0) throw std::invalid_argument("generate_corpus: n must be >= 1");
  std::vector<SyntheticClip> corpus;
  corpus.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {i, 1}));
    Scene scene = random_scene(rng, geometry, render);
    corpus.push_back(SyntheticClip{render_scene(scene, derive_seed(seed, {i, 2}), geometry, render),
                                   caption_for(scene, render), scene});
  }
  return corpus;
}

std::vector<std::string> normalize_caption(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    cleaned += static_cast<char>(std::tolower(c));
  }
  std::istringstream is(cleaned);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

std::string join_caption(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& captions, double keep_fraction) {
  if (captions.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("build_vocabulary: keep fraction must be in (0, 1]");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : captions) {
    for (const auto& w : caption) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), ceil_count(keep_fraction, ranked.size()));
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < keep; ++i) kept.push_back(ranked[i].first);
  Vocabulary v = from_words(std::move(kept));
  v.counts_ = std::move(counts);
  return v;
}

Vocabulary Vocabulary::build(const std::vector<SyntheticClip>& corpus, double keep_fraction) {
  std::vector<std::vector<std::string>> captions;
  captions.reserve(corpus.size());
  for (const auto& clip : corpus) captions.push_back(clip.caption);
  return build(captions, keep_fraction);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  Vocabulary v;
  v.words_ = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
  for (auto& w : words) {
    if (w.empty() || w.front() == '[') throw std::invalid_argument("invalid vocabulary word '" + w + "'");
    v.words_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary word '" + v.words_[i] + "'");
    }
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::size_t id) const { return words_.at(id); }

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& caption) const {
  std::vector<std::size_t> ids;
  ids.reserve(caption.size());
  for (const auto& w : caption) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (auto i : ids) words.push_back(word(i));
  return words;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("svq-vocabulary");
  for (const auto& w : words_) {
    h = fnv1a64(w, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

std::vector<double> caption_to_multihot(const std::vector<std::string>& caption, const Vocabulary& vocab) {
  std::vector<double> y(vocab.content_size(), 0.0);
  for (const auto& w : caption) {
    const std::size_t id = vocab.id(w);
    if (id >= Vocabulary::kSpecials) y[id - Vocabulary::kSpecials] = 1.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// batching

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {epoch, 0xba7c4}));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  const auto perm = epoch_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

BatchStream::BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), seed_(seed) {
  if (n == 0) throw std::invalid_argument("BatchStream over an empty corpus");
  batches_ = epoch_batches(n_, batch_size_, seed_, epoch_);
}

const std::vector<std::size_t>& BatchStream::next() {
  if (cursor_ == batches_.size()) {
    ++epoch_;
    batches_ = epoch_batches(n_, batch_size_, seed_, epoch_);
    cursor_ = 0;
  }
  return batches_[cursor_++];
}

// ---------------------------------------------------------------------------
// record file

void write_corpus(const std::string& path, const std::vector<SyntheticClip>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path);
  for (const auto& clip : corpus) {
    std::vector<std::uint8_t> bytes(clip.frames.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(std::lround(clip.frames[i] * 255.0));
    }
    nlohmann::ordered_json j;
    j["scene"] = {{"shape", to_string(clip.scene.shape)}, {"color", to_string(clip.scene.color)},
                  {"motion", to_string(clip.scene.motion)}, {"x", clip.scene.x},
                  {"y", clip.scene.y},                      {"flourish", clip.scene.flourish}};
    j["caption"] = join_caption(clip.caption);
    j["shape"] = clip.frames.shape();
    j["frames"] = base64_encode(bytes);
    out << j.dump() << '\n';
  }
}

std::vector<SyntheticClip> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file " + path);
  std::vector<SyntheticClip> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SyntheticClip clip;
      const auto& s = j.at("scene");
      clip.scene.shape = parse_shape(s.at("shape").get<std::string>());
      clip.scene.color = parse_color(s.at("color").get<std::string>());
      clip.scene.motion = parse_motion(s.at("motion").get<std::string>());
      clip.scene.x = s.at("x").get<int>();
      clip.scene.y = s.at("y").get<int>();
      clip.scene.flourish = s.at("flourish").get<int>();
      clip.caption = normalize_caption(j.at("caption").get<std::string>());
      const auto bytes = base64_decode(j.at("frames").get<std::string>());
      clip.frames = Array(j.at("shape").get<Shape>());
      if (bytes.size() != clip.frames.size()) throw std::invalid_argument("frame byte count does not match shape");
      for (std::size_t i = 0; i < bytes.size(); ++i) clip.frames[i] = static_cast<double>(bytes[i]) / 255.0;
      corpus.push_back(std::move(clip));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace svq
