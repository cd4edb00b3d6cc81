#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "umm/rng.hpp"

namespace umm {

enum class TaskKind { Understanding, Generation, TextOnly };
const char* task_name(TaskKind t);

enum class ShapeKind { Circle, Square, Triangle };
enum class Color { Black, White, Red, Green, Blue, Yellow, Cyan, Magenta };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 8;
inline constexpr int kNumCells = 4;

const char* shape_word(ShapeKind s);
const char* shape_plural(ShapeKind s);
const char* color_word(Color c);
std::array<float, 3> color_rgb(Color c);
// Cells scan the 2x2 grid row-major: 0 top left, 1 top right, 2 bottom left,
// 3 bottom right.
std::string cell_phrase(int cell);
const char* count_word(int n);

struct SceneObject {
  ShapeKind shape;
  Color color;
  int cell;
  bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
  std::vector<SceneObject> objects;  // sorted by cell
  Color background = Color::White;
  bool operator==(const SceneSpec&) const = default;
};

// Throws std::invalid_argument when an invariant is violated.
void validate(const SceneSpec& spec);
std::string describe(const SceneSpec& spec);

/// HWC float image, values nominally in [0, 1].
struct Image {
  int height = 0, width = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}
  float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

inline constexpr int kImageSize = 32;

Image render(const SceneSpec& spec, int size = kImageSize);

struct DetectorConfig {
  double quant_radius = 0.3;  // max RGB distance to a palette colour
  int min_area = 8;           // smaller components are noise
  double square_fill = 0.89;  // fill ratio above which a blob is a square
  double circle_fill = 0.64;  // fill ratio above which a blob is a circle
};

SceneSpec detect(const Image& image, const DetectorConfig& cfg = {});

struct ScenePrior {
  std::vector<Color> backgrounds{Color::White};
};

SceneSpec random_scene(Rng& rng, const ScenePrior& prior = {});

// --- captions and their parser ------------------------------------------

std::string caption(const SceneSpec& spec, Rng& rng);

enum class Relation { LeftOf, RightOf, Above, Below };

struct ObjectConstraint {
  std::optional<ShapeKind> shape;
  std::optional<Color> color;
  std::optional<int> cell;
};

/// Constraints a scene must meet: exactly one object per constraint, plus an
/// optional spatial relation between constraints 0 and 1.
struct SceneQuery {
  std::vector<ObjectConstraint> objects;
  std::optional<Relation> relation;
};

// Throws std::invalid_argument on text outside the caption grammar.
SceneQuery parse_caption(std::string_view text);
bool satisfies(const SceneQuery& query, const SceneSpec& scene);

// --- evaluation prompts ----------------------------------------------------

enum class GenCategory { SingleObject, TwoObject, Counting, Colors, Position, ColorAttr };
inline constexpr std::array<GenCategory, 6> kGenCategories{GenCategory::SingleObject, GenCategory::TwoObject,
                                                           GenCategory::Counting,     GenCategory::Colors,
                                                           GenCategory::Position,     GenCategory::ColorAttr};
const char* category_name(GenCategory c);
std::string category_prompt(GenCategory c, Rng& rng, const ScenePrior& prior = {});

// --- understanding -----------------------------------------------------------

struct QaPair {
  std::string question, answer;
};
QaPair make_qa(const SceneSpec& spec, Rng& rng);

/// Case- and whitespace-normalized comparison used for exact-match scoring.
std::string normalize_answer(std::string_view s);

// 5x7 bitmap digits, scaled by 2.
Image render_glyph(int digit, int top, int left, int size = kImageSize);
const char* digit_word(int d);

// --- vocabulary --------------------------------------------------------------

class Vocab {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kNullCond = 3, kImgStart = 4, kImgEnd = 5;

  // The closed word list of every template in this module.
  static Vocab standard();
  explicit Vocab(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view word) const;  // -1 when absent
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Throws std::invalid_argument listing every unknown word.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;
  std::vector<std::string> unknown_words(std::string_view text) const;

  std::string serialize() const;  // one token per line
  static Vocab parse(std::string_view text);

  bool operator==(const Vocab&) const = default;

 private:
  std::vector<std::string> tokens_;
};

std::vector<std::string> split_words(std::string_view text);

// --- samples and streams -------------------------------------------------------

struct Sample {
  TaskKind task = TaskKind::Generation;
  std::optional<Image> image;
  std::vector<int> cond;    // condition tokens (caption or question)
  std::vector<int> target;  // answer tokens, without BOS/EOS
  std::optional<SceneSpec> spec;
  std::optional<int> digit;
};

struct TaskMix {
  int understanding = 3, generation = 6, text = 1;
  static TaskMix parse(std::string_view s);  // "u:g:t" or "u:g"
  std::string str() const;
  int period() const { return understanding + generation + text; }
};

// Per-batch task kinds over one period, spread evenly.
std::vector<TaskKind> task_schedule(const TaskMix& mix);

struct DataOptions {
  ScenePrior prior;
  double qa_fraction = 0.7;     // remaining understanding samples are captions
  double glyph_fraction = 0.0;  // understanding samples replaced by digit glyphs
};

Sample make_sample(TaskKind task, Rng& rng, const Vocab& vocab, const DataOptions& opts = {});
Sample make_glyph_sample(Rng& rng, const Vocab& vocab);

struct Batch {
  TaskKind task;
  std::uint64_t index;
  std::vector<Sample> samples;
};

/// Infinite seeded stream; batch k depends only on (seed, tag, k).
class DataStream {
 public:
  DataStream(TaskMix mix, std::uint64_t seed, int batch_size, const Vocab& vocab, DataOptions opts = {},
             std::string tag = "stream");
  Batch batch(std::uint64_t k) const;
  TaskKind task_of(std::uint64_t k) const;

 private:
  std::vector<TaskKind> schedule_;
  std::uint64_t seed_;
  int batch_size_;
  const Vocab* vocab_;
  DataOptions opts_;
  std::string tag_;
};

}  // namespace umm
