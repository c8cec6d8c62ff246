#pragma once

// Procedural video-caption corpus. Every clip shows one coloured shape
// translating across T frames; its caption is a template over the scene, with
// an optional rare trailing word that the pictures do not show.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "svq/array.hpp"
#include "svq/rng.hpp"

namespace svq {

enum class ShapeKind { square, circle, triangle, cross };
enum class Color { red, green, blue, yellow };
enum class Motion { left, right, up, down, still };

inline constexpr std::array<ShapeKind, 4> kShapes{ShapeKind::square, ShapeKind::circle, ShapeKind::triangle,
                                                  ShapeKind::cross};
inline constexpr std::array<Color, 4> kColors{Color::red, Color::green, Color::blue, Color::yellow};
inline constexpr std::array<Motion, 5> kMotions{Motion::left, Motion::right, Motion::up, Motion::down, Motion::still};

std::string_view to_string(ShapeKind s);
std::string_view to_string(Color c);
std::string_view to_string(Motion m);
ShapeKind parse_shape(std::string_view s);
Color parse_color(std::string_view s);
Motion parse_motion(std::string_view s);

struct ClipGeometry {
  std::size_t frames = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;

  bool operator==(const ClipGeometry&) const = default;
};

struct RenderConfig {
  std::size_t box = 6;               // side of the shape's bounding box, pixels
  std::size_t step = 2;              // translation per frame, pixels
  double background_noise = 0.1;     // background pixels uniform in [0, noise]
  double flourish_probability = 0.5;
  std::size_t flourish_words = 150;  // Zipf-distributed tail vocabulary
};

struct Scene {
  ShapeKind shape = ShapeKind::square;
  Color color = Color::red;
  Motion motion = Motion::still;
  int x = 0;           // bounding box top-left at frame 0
  int y = 0;
  int flourish = -1;   // index of the trailing rare word, -1 for none

  bool operator==(const Scene&) const = default;
  // Index in [0, 16) of the (shape, color) pair.
  std::size_t shape_color_class() const {
    return static_cast<std::size_t>(shape) * kColors.size() + static_cast<std::size_t>(color);
  }
};

struct SyntheticClip {
  Array frames;  // T x H x W x C, values k/255 in [0, 1]
  std::vector<std::string> caption;
  Scene scene;
};

const std::string& flourish_word(std::size_t index);
std::vector<std::string> caption_for(const Scene& scene, const RenderConfig& render = {});
// Inverse of caption_for on the content words; flourish read from the last word.
Scene scene_from_caption(const std::vector<std::string>& caption, const RenderConfig& render = {});

Scene random_scene(Rng& rng, const ClipGeometry& geometry, const RenderConfig& render = {});
Array render_scene(const Scene& scene, std::uint64_t seed, const ClipGeometry& geometry,
                   const RenderConfig& render = {});

// Top-left of the bounding box at frame t.
std::pair<int, int> box_position(const Scene& scene, std::size_t frame, const RenderConfig& render = {});
// Row of the patch grid (frame-major, raster within frame) that holds the
// shape's centroid in frame t.
std::size_t centroid_patch(const Scene& scene, std::size_t frame, const ClipGeometry& geometry, std::size_t patch,
                           const RenderConfig& render = {});

std::vector<SyntheticClip> generate_corpus(std::size_t n, std::uint64_t seed, const ClipGeometry& geometry = {},
                                           const RenderConfig& render = {});

// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> normalize_caption(std::string_view text);
std::string join_caption(const std::vector<std::string>& words);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kMask = 3;
  static constexpr std::size_t kSpecials = 4;

  // Keeps the top ceil(keep_fraction * distinct) words by count, ties broken
  // lexicographically.
  static Vocabulary build(const std::vector<std::vector<std::string>>& captions, double keep_fraction = 0.3);
  static Vocabulary build(const std::vector<SyntheticClip>& corpus, double keep_fraction = 0.3);
  // Kept words in id order (without specials).
  static Vocabulary from_words(std::vector<std::string> words);

  std::size_t id(const std::string& word) const;
  const std::string& word(std::size_t id) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  std::size_t size() const { return words_.size(); }                  // including specials
  std::size_t content_size() const { return words_.size() - kSpecials; }  // K
  const std::vector<std::string>& words() const { return words_; }
  const std::map<std::string, std::size_t>& counts() const { return counts_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& caption) const;
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;

  // FNV-1a over the id-ordered word list.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> counts_;
};

// K-length 0/1 vector over the non-special words; UNK-mapped words add nothing.
std::vector<double> caption_to_multihot(const std::vector<std::string>& caption, const Vocabulary& vocab);

// Fisher-Yates permutation of [0, n) seeded by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

// Endless stream of batches; a new permutation each epoch, partial last
// batch kept.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  const std::vector<std::size_t>& next();
  std::uint64_t epoch() const { return epoch_; }

 private:
  std::size_t n_, batch_size_;
  std::uint64_t seed_, epoch_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
};

// One JSON object per line: scene, caption text, frame shape, base64 bytes.
void write_corpus(const std::string& path, const std::vector<SyntheticClip>& corpus);
std::vector<SyntheticClip> read_corpus(const std::string& path);

}  // namespace svq
