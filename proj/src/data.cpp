#include "umm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace umm {

const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::Understanding: return "understanding";
    case TaskKind::Generation: return "generation";
    case TaskKind::TextOnly: return "text";
  }
  return "?";
}

const char* shape_word(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

const char* shape_plural(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circles";
    case ShapeKind::Square: return "squares";
    case ShapeKind::Triangle: return "triangles";
  }
  return "?";
}

const char* color_word(Color c) {
  static const char* names[] = {"black", "white", "red", "green", "blue", "yellow", "cyan", "magenta"};
  return names[static_cast<int>(c)];
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Black: return {0, 0, 0};
    case Color::White: return {1, 1, 1};
    case Color::Red: return {1, 0, 0};
    case Color::Green: return {0, 1, 0};
    case Color::Blue: return {0, 0, 1};
    case Color::Yellow: return {1, 1, 0};
    case Color::Cyan: return {0, 1, 1};
    case Color::Magenta: return {1, 0, 1};
  }
  return {0, 0, 0};
}

std::string cell_phrase(int cell) {
  std::string s = cell < 2 ? "top" : "bottom";
  s += cell % 2 == 0 ? " left" : " right";
  return s;
}

const char* count_word(int n) {
  static const char* words[] = {"zero", "one", "two", "three"};
  if (n < 0 || n > 3) throw std::out_of_range("count word for " + std::to_string(n));
  return words[n];
}

const char* digit_word(int d) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  if (d < 0 || d > 9) throw std::out_of_range("digit " + std::to_string(d));
  return words[d];
}

void validate(const SceneSpec& spec) {
  if (spec.objects.empty() || spec.objects.size() > 3) {
    throw std::invalid_argument("scene must hold 1-3 objects, got " + std::to_string(spec.objects.size()));
  }
  std::array<bool, kNumCells> used{};
  for (const auto& o : spec.objects) {
    if (o.cell < 0 || o.cell >= kNumCells) throw std::invalid_argument("object cell out of range");
    if (used[o.cell]) throw std::invalid_argument("two objects share cell " + std::to_string(o.cell));
    used[o.cell] = true;
    if (o.color == spec.background) throw std::invalid_argument("object colour equals background");
  }
}

std::string describe(const SceneSpec& spec) {
  std::ostringstream os;
  os << "bg=" << color_word(spec.background);
  for (const auto& o : spec.objects) os << " " << color_word(o.color) << "-" << shape_word(o.shape) << "@" << o.cell;
  return os.str();
}

namespace {

bool inside_shape(ShapeKind shape, double x, double y, double cx, double cy, double cell) {
  switch (shape) {
    case ShapeKind::Circle: {
      double r = 0.34 * cell;
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
    }
    case ShapeKind::Square: {
      double h = 0.3125 * cell;
      return std::abs(x - cx) <= h && std::abs(y - cy) <= h;
    }
    case ShapeKind::Triangle: {
      // Apex up, base down.
      double half_h = 0.34 * cell, half_w = 0.375 * cell;
      double top = cy - half_h, bottom = cy + half_h;
      if (y < top || y > bottom) return false;
      double frac = (y - top) / (bottom - top);
      return std::abs(x - cx) <= frac * half_w;
    }
  }
  return false;
}

}  // namespace

Image render(const SceneSpec& spec, int size) {
  validate(spec);
  if (size % 2 != 0) throw std::invalid_argument("render size must be even");
  Image img(size, size);
  auto bg = color_rgb(spec.background);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
  const double cell = size / 2.0;
  constexpr int kSuper = 4;
  for (const auto& o : spec.objects) {
    const double cx = (o.cell % 2) * cell + cell / 2, cy = (o.cell / 2) * cell + cell / 2;
    auto fg = color_rgb(o.color);
    const int x0 = static_cast<int>((o.cell % 2) * cell), y0 = static_cast<int>((o.cell / 2) * cell);
    for (int y = y0; y < y0 + static_cast<int>(cell); ++y)
      for (int x = x0; x < x0 + static_cast<int>(cell); ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx)
            hits += inside_shape(o.shape, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper, cx, cy, cell);
        if (hits == 0) continue;
        float cov = static_cast<float>(hits) / (kSuper * kSuper);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = cov * fg[c] + (1 - cov) * img.at(y, x, c);
      }
  }
  return img;
}

SceneSpec detect(const Image& image, const DetectorConfig& cfg) {
  const int h = image.height, w = image.width;
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::array<int, kNumColors> freq{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = -1;
      double best_d = cfg.quant_radius;
      for (int k = 0; k < kNumColors; ++k) {
        auto p = color_rgb(static_cast<Color>(k));
        double d = 0;
        for (int c = 0; c < 3; ++c) {
          double v = std::clamp(static_cast<double>(image.at(y, x, c)), 0.0, 1.0) - p[c];
          d += v * v;
        }
        d = std::sqrt(d);
        if (d <= best_d) {
          best_d = d;
          best = k;
        }
      }
      label[static_cast<std::size_t>(y) * w + x] = best;
      if (best >= 0) ++freq[best];
    }
  SceneSpec out;
  const int bg = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  out.background = static_cast<Color>(bg);

  std::vector<char> seen(label.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    int col = label[start];
    if (col < 0 || col == bg || seen[start]) continue;
    int area = 0, minx = w, maxx = -1, miny = h, maxy = -1;
    double sx = 0, sy = 0;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      int y = p / w, x = p % w;
      ++area;
      sx += x + 0.5;
      sy += y + 0.5;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
      const int nbr[4][2] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}};
      for (const auto& d : nbr) {
        int ny = y + d[0], nx = x + d[1];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        int q = ny * w + nx;
        if (!seen[q] && label[q] == col) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (area < cfg.min_area) continue;
    double fill = static_cast<double>(area) / ((maxx - minx + 1) * (maxy - miny + 1));
    ShapeKind shape = fill >= cfg.square_fill   ? ShapeKind::Square
                      : fill >= cfg.circle_fill ? ShapeKind::Circle
                                                : ShapeKind::Triangle;
    double cx = sx / area, cy = sy / area;
    int cell = (cy >= h / 2.0 ? 2 : 0) + (cx >= w / 2.0 ? 1 : 0);
    out.objects.push_back({shape, static_cast<Color>(col), cell});
  }
  std::stable_sort(out.objects.begin(), out.objects.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  return out;
}

namespace {

template <typename E, std::size_t N>
E pick(Rng& rng, const std::array<E, N>& options) {
  return options[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(N) - 1))];
}

Color pick_color(Rng& rng, Color background) {
  for (;;) {
    auto c = static_cast<Color>(rng.uniform_int(0, kNumColors - 1));
    if (c != background) return c;
  }
}

ShapeKind pick_shape(Rng& rng) { return static_cast<ShapeKind>(rng.uniform_int(0, kNumShapes - 1)); }

}  // namespace

SceneSpec random_scene(Rng& rng, const ScenePrior& prior) {
  if (prior.backgrounds.empty()) throw std::invalid_argument("scene prior needs at least one background");
  SceneSpec spec;
  spec.background = prior.backgrounds[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(prior.backgrounds.size()) - 1))];
  double u = rng.uniform();
  int n = u < 0.4 ? 1 : (u < 0.8 ? 2 : 3);
  std::array<int, kNumCells> cells{0, 1, 2, 3};
  std::shuffle(cells.begin(), cells.end(), rng.engine());
  bool same_shape = n > 1 && rng.bernoulli(0.3);
  bool same_color = same_shape && rng.bernoulli(0.5);
  ShapeKind shape0 = pick_shape(rng);
  Color color0 = pick_color(rng, spec.background);
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = same_shape ? shape0 : pick_shape(rng);
    o.color = same_color ? color0 : pick_color(rng, spec.background);
    o.cell = cells[i];
    spec.objects.push_back(o);
  }
  std::sort(spec.objects.begin(), spec.objects.end(),
            [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  return spec;
}

namespace {

std::string object_phrase(const SceneObject& o, bool with_color, bool with_cell) {
  std::string s = "a ";
  if (with_color) s += std::string(color_word(o.color)) + " ";
  s += shape_word(o.shape);
  if (with_cell) s += " in the " + cell_phrase(o.cell);
  return s;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

const char* relation_phrase(Relation r) {
  switch (r) {
    case Relation::LeftOf: return "to the left of";
    case Relation::RightOf: return "to the right of";
    case Relation::Above: return "above";
    case Relation::Below: return "below";
  }
  return "?";
}

bool relation_holds(Relation r, int cell_a, int cell_b) {
  int ra = cell_a / 2, ca = cell_a % 2, rb = cell_b / 2, cb = cell_b % 2;
  switch (r) {
    case Relation::LeftOf: return ca < cb;
    case Relation::RightOf: return ca > cb;
    case Relation::Above: return ra < rb;
    case Relation::Below: return ra > rb;
  }
  return false;
}

}  // namespace

std::string caption(const SceneSpec& spec, Rng& rng) {
  validate(spec);
  const auto& objs = spec.objects;
  if (objs.size() == 1) {
    bool color = rng.bernoulli(0.5), cell = rng.bernoulli(0.5);
    return object_phrase(objs[0], color, cell);
  }
  enum Form { Full, Colored, Plain, Grouped, Related };
  std::vector<Form> forms{Full, Colored, Plain, Grouped};
  if (objs.size() == 2) forms.push_back(Related);
  Form form = forms[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(forms.size()) - 1))];
  std::vector<std::string> parts;
  switch (form) {
    case Full:
    case Colored:
    case Plain:
      for (const auto& o : objs) parts.push_back(object_phrase(o, form != Plain, form == Full));
      return join(parts, " and ");
    case Grouped: {
      std::vector<ShapeKind> order;
      for (const auto& o : objs)
        if (std::find(order.begin(), order.end(), o.shape) == order.end()) order.push_back(o.shape);
      for (ShapeKind s : order) {
        std::vector<const SceneObject*> group;
        for (const auto& o : objs)
          if (o.shape == s) group.push_back(&o);
        bool uniform_color = std::all_of(group.begin(), group.end(),
                                         [&](const SceneObject* o) { return o->color == group[0]->color; });
        bool with_color = uniform_color && rng.bernoulli(0.5);
        if (group.size() == 1) {
          parts.push_back(object_phrase(*group[0], with_color, false));
        } else {
          std::string p = count_word(static_cast<int>(group.size()));
          if (with_color) p += std::string(" ") + color_word(group[0]->color);
          parts.push_back(p + " " + shape_plural(s));
        }
      }
      return join(parts, " and ");
    }
    case Related: {
      std::vector<Relation> valid;
      for (Relation r : {Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below})
        if (relation_holds(r, objs[0].cell, objs[1].cell)) valid.push_back(r);
      Relation r = valid[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(valid.size()) - 1))];
      bool color = rng.bernoulli(0.5);
      return object_phrase(objs[0], color, false) + " " + relation_phrase(r) + " " + object_phrase(objs[1], color, false);
    }
  }
  return {};
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::optional<ShapeKind> shape_from(const std::string& w, bool plural) {
  for (int i = 0; i < kNumShapes; ++i) {
    auto s = static_cast<ShapeKind>(i);
    if (w == (plural ? shape_plural(s) : shape_word(s))) return s;
  }
  return std::nullopt;
}

std::optional<Color> color_from(const std::string& w) {
  for (int i = 0; i < kNumColors; ++i)
    if (w == color_word(static_cast<Color>(i))) return static_cast<Color>(i);
  return std::nullopt;
}

[[noreturn]] void grammar_error(const std::vector<std::string>& words, std::size_t at) {
  std::string text = join(words, " ");
  throw std::invalid_argument("caption outside grammar near word " + std::to_string(at) + ": \"" + text + "\"");
}

// Parses one phrase in words[begin, end) into constraints.
void parse_phrase(const std::vector<std::string>& w, std::size_t begin, std::size_t end,
                  std::vector<ObjectConstraint>& out) {
  std::size_t i = begin;
  if (i >= end) grammar_error(w, i);
  int count = 1;
  bool plural = false;
  if (w[i] == "a") {
    ++i;
  } else if (w[i] == "two" || w[i] == "three") {
    count = w[i] == "two" ? 2 : 3;
    plural = true;
    ++i;
  } else {
    grammar_error(w, i);
  }
  ObjectConstraint c;
  if (i < end) {
    if (auto col = color_from(w[i])) {
      c.color = col;
      ++i;
    }
  }
  if (i >= end) grammar_error(w, i);
  auto shape = shape_from(w[i], plural);
  if (!shape) grammar_error(w, i);
  c.shape = shape;
  ++i;
  if (i < end) {
    if (plural || end - i != 4 || w[i] != "in" || w[i + 1] != "the") grammar_error(w, i);
    int row = w[i + 2] == "top" ? 0 : (w[i + 2] == "bottom" ? 1 : -1);
    int col = w[i + 3] == "left" ? 0 : (w[i + 3] == "right" ? 1 : -1);
    if (row < 0 || col < 0) grammar_error(w, i + 2);
    c.cell = row * 2 + col;
    i = end;
  }
  for (int k = 0; k < count; ++k) out.push_back(c);
}

}  // namespace

SceneQuery parse_caption(std::string_view text) {
  auto w = split_words(text);
  SceneQuery q;
  // Relation captions: "<phrase> <relation> <phrase>".
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::optional<Relation> rel;
    std::size_t len = 0;
    if (w[i] == "above") {
      rel = Relation::Above;
      len = 1;
    } else if (w[i] == "below") {
      rel = Relation::Below;
      len = 1;
    } else if (w[i] == "to" && i + 3 < w.size() && w[i + 1] == "the" && w[i + 3] == "of") {
      if (w[i + 2] == "left") rel = Relation::LeftOf;
      if (w[i + 2] == "right") rel = Relation::RightOf;
      len = 4;
    }
    if (!rel) continue;
    parse_phrase(w, 0, i, q.objects);
    parse_phrase(w, i + len, w.size(), q.objects);
    if (q.objects.size() != 2) grammar_error(w, i);
    q.relation = rel;
    return q;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i <= w.size(); ++i) {
    if (i == w.size() || w[i] == "and") {
      parse_phrase(w, start, i, q.objects);
      start = i + 1;
    }
  }
  if (q.objects.empty() || q.objects.size() > 3) grammar_error(w, 0);
  return q;
}

bool satisfies(const SceneQuery& query, const SceneSpec& scene) {
  const auto& objs = scene.objects;
  if (objs.size() != query.objects.size()) return false;
  std::vector<int> perm(objs.size());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < perm.size() && ok; ++i) {
      const auto& c = query.objects[i];
      const auto& o = objs[static_cast<std::size_t>(perm[i])];
      ok = (!c.shape || *c.shape == o.shape) && (!c.color || *c.color == o.color) && (!c.cell || *c.cell == o.cell);
    }
    if (ok && query.relation) ok = relation_holds(*query.relation, objs[perm[0]].cell, objs[perm[1]].cell);
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

const char* category_name(GenCategory c) {
  switch (c) {
    case GenCategory::SingleObject: return "single_object";
    case GenCategory::TwoObject: return "two_object";
    case GenCategory::Counting: return "counting";
    case GenCategory::Colors: return "colors";
    case GenCategory::Position: return "position";
    case GenCategory::ColorAttr: return "color_attr";
  }
  return "?";
}

std::string category_prompt(GenCategory c, Rng& rng, const ScenePrior& prior) {
  const Color bg = prior.backgrounds.empty() ? Color::White : prior.backgrounds.front();
  auto two_shapes = [&] {
    ShapeKind a = pick_shape(rng), b;
    do b = pick_shape(rng);
    while (b == a);
    return std::pair{a, b};
  };
  switch (c) {
    case GenCategory::SingleObject: return std::string("a ") + shape_word(pick_shape(rng));
    case GenCategory::TwoObject: {
      auto [a, b] = two_shapes();
      return std::string("a ") + shape_word(a) + " and a " + shape_word(b);
    }
    case GenCategory::Counting: {
      int n = rng.uniform_int(2, 3);
      return std::string(count_word(n)) + " " + shape_plural(pick_shape(rng));
    }
    case GenCategory::Colors:
      return std::string("a ") + color_word(pick_color(rng, bg)) + " " + shape_word(pick_shape(rng));
    case GenCategory::Position: {
      auto [a, b] = two_shapes();
      static constexpr std::array<Relation, 4> rels{Relation::LeftOf, Relation::RightOf, Relation::Above,
                                                    Relation::Below};
      return std::string("a ") + shape_word(a) + " " + relation_phrase(pick(rng, rels)) + " a " + shape_word(b);
    }
    case GenCategory::ColorAttr: {
      auto [a, b] = two_shapes();
      Color ca = pick_color(rng, bg), cb;
      do cb = pick_color(rng, bg);
      while (cb == ca);
      return std::string("a ") + color_word(ca) + " " + shape_word(a) + " and a " + color_word(cb) + " " +
             shape_word(b);
    }
  }
  return {};
}

QaPair make_qa(const SceneSpec& spec, Rng& rng) {
  validate(spec);
  const auto& objs = spec.objects;
  for (;;) {
    switch (rng.uniform_int(0, 4)) {
      case 0: {  // colour of a uniquely present shape
        const auto& o = objs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(objs.size()) - 1))];
        auto same = std::count_if(objs.begin(), objs.end(), [&](const SceneObject& x) { return x.shape == o.shape; });
        if (same != 1) continue;
        return {std::string("what color is the ") + shape_word(o.shape), color_word(o.color)};
      }
      case 1: {
        const auto& o = objs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(objs.size()) - 1))];
        return {"what shape is in the " + cell_phrase(o.cell), shape_word(o.shape)};
      }
      case 2: {
        const auto& o = objs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(objs.size()) - 1))];
        return {"what color is the object in the " + cell_phrase(o.cell), color_word(o.color)};
      }
      case 3:
        return {"how many objects are there", count_word(static_cast<int>(objs.size()))};
      default: {
        ShapeKind s = pick_shape(rng);
        auto n = std::count_if(objs.begin(), objs.end(), [&](const SceneObject& x) { return x.shape == s; });
        return {std::string("how many ") + shape_plural(s) + " are there", count_word(static_cast<int>(n))};
      }
    }
  }
}

std::string normalize_answer(std::string_view s) { return join(split_words(s), " "); }

namespace {

constexpr std::array<std::array<const char*, 7>, 10> kFont{{
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
}};
constexpr int kGlyphScale = 2;

}  // namespace

Image render_glyph(int digit, int top, int left, int size) {
  if (digit < 0 || digit > 9) throw std::invalid_argument("digit out of range");
  if (top < 0 || left < 0 || top + 7 * kGlyphScale > size || left + 5 * kGlyphScale > size) {
    throw std::invalid_argument("glyph does not fit the canvas");
  }
  Image img(size, size, 1.0f);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c) {
      if (kFont[digit][r][c] != '1') continue;
      for (int dy = 0; dy < kGlyphScale; ++dy)
        for (int dx = 0; dx < kGlyphScale; ++dx)
          for (int ch = 0; ch < 3; ++ch) img.at(top + r * kGlyphScale + dy, left + c * kGlyphScale + dx, ch) = 0.0f;
    }
  return img;
}

Vocab Vocab::standard() {
  std::vector<std::string> words{
      "a",      "above", "and",      "are",   "below", "black",   "blue",      "bottom",    "circle",
      "circles", "color", "cyan",    "digit", "eight", "five",    "four",      "green",     "how",
      "in",     "is",    "left",     "magenta", "many", "nine",   "object",    "objects",   "of",
      "one",    "red",   "right",    "seven", "shape", "six",     "square",    "squares",   "the",
      "there",  "this",  "three",    "to",    "top",   "triangle", "triangles", "two",      "what",
      "white",  "yellow", "zero"};
  std::sort(words.begin(), words.end());
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<nullcond>", "<img_start>", "<img_end>"};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocab(std::move(tokens));
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 6) throw std::invalid_argument("vocab must contain the six reserved specials");
}

int Vocab::id(std::string_view word) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == word) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> Vocab::unknown_words(std::string_view text) const {
  std::vector<std::string> out;
  for (auto& w : split_words(text))
    if (id(w) < 0 && std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  return out;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  auto unknown = unknown_words(text);
  if (!unknown.empty()) throw std::invalid_argument("unknown words: " + join(unknown, ","));
  std::vector<int> ids;
  for (auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i == kEos) break;
    if (i < 6) continue;
    words.push_back(token(i));
  }
  return join(words, " ");
}

std::string Vocab::serialize() const {
  std::string s;
  for (const auto& t : tokens_) s += t + "\n";
  return s;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    if (end > start) tokens.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return Vocab(std::move(tokens));
}

TaskMix TaskMix::parse(std::string_view s) {
  std::vector<int> parts;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(':', start);
    if (end == std::string_view::npos) end = s.size();
    auto piece = std::string(s.substr(start, end - start));
    try {
      std::size_t used = 0;
      int v = std::stoi(piece, &used);
      if (used != piece.size() || v < 0) throw std::invalid_argument(piece);
      parts.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("invalid task mix \"" + std::string(s) + "\"");
    }
    start = end + 1;
  }
  if (parts.size() < 2 || parts.size() > 3) throw std::invalid_argument("task mix needs 2 or 3 ratios");
  TaskMix m{parts[0], parts[1], parts.size() == 3 ? parts[2] : 0};
  if (m.period() == 0) throw std::invalid_argument("task mix ratios are all zero");
  return m;
}

std::string TaskMix::str() const {
  return std::to_string(understanding) + ":" + std::to_string(generation) + ":" + std::to_string(text);
}

std::vector<TaskKind> task_schedule(const TaskMix& mix) {
  const int p = mix.period();
  const std::array<std::pair<TaskKind, int>, 3> kinds{
      {{TaskKind::Generation, mix.generation}, {TaskKind::Understanding, mix.understanding}, {TaskKind::TextOnly, mix.text}}};
  std::array<int, 3> used{};
  std::vector<TaskKind> out;
  for (int slot = 1; slot <= p; ++slot) {
    // Largest deficit against the ideal cumulative count wins.
    int best = -1;
    double best_deficit = -1e9;
    for (int k = 0; k < 3; ++k) {
      if (used[k] >= kinds[k].second) continue;
      double deficit = static_cast<double>(kinds[k].second) * slot / p - used[k];
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = k;
      }
    }
    ++used[best];
    out.push_back(kinds[best].first);
  }
  return out;
}

Sample make_sample(TaskKind task, Rng& rng, const Vocab& vocab, const DataOptions& opts) {
  Sample s;
  s.task = task;
  switch (task) {
    case TaskKind::Generation: {
      SceneSpec spec = random_scene(rng, opts.prior);
      s.image = render(spec);
      s.cond = vocab.encode(caption(spec, rng));
      s.spec = spec;
      break;
    }
    case TaskKind::Understanding: {
      if (opts.glyph_fraction > 0 && rng.bernoulli(opts.glyph_fraction)) return make_glyph_sample(rng, vocab);
      SceneSpec spec = random_scene(rng, opts.prior);
      s.image = render(spec);
      if (rng.bernoulli(opts.qa_fraction)) {
        QaPair qa = make_qa(spec, rng);
        s.cond = vocab.encode(qa.question);
        s.target = vocab.encode(qa.answer);
      } else {
        s.target = vocab.encode(caption(spec, rng));
      }
      s.spec = spec;
      break;
    }
    case TaskKind::TextOnly: {
      SceneSpec spec = random_scene(rng, opts.prior);
      std::string text;
      switch (rng.uniform_int(0, 2)) {
        case 0: text = caption(spec, rng); break;
        case 1: {
          const auto& o = spec.objects.front();
          text = std::string("the ") + shape_word(o.shape) + " is " + color_word(o.color);
          break;
        }
        default: text = std::string("there are ") + count_word(static_cast<int>(spec.objects.size())) + " objects";
      }
      s.target = vocab.encode(text);
      break;
    }
  }
  return s;
}

Sample make_glyph_sample(Rng& rng, const Vocab& vocab) {
  Sample s;
  s.task = TaskKind::Understanding;
  int digit = rng.uniform_int(0, 9);
  int top = rng.uniform_int(0, kImageSize - 7 * kGlyphScale);
  int left = rng.uniform_int(0, kImageSize - 5 * kGlyphScale);
  s.image = render_glyph(digit, top, left);
  s.cond = vocab.encode("what digit is this");
  s.target = vocab.encode(digit_word(digit));
  s.digit = digit;
  return s;
}

DataStream::DataStream(TaskMix mix, std::uint64_t seed, int batch_size, const Vocab& vocab, DataOptions opts,
                       std::string tag)
    : schedule_(task_schedule(mix)), seed_(seed), batch_size_(batch_size), vocab_(&vocab), opts_(std::move(opts)),
      tag_(std::move(tag)) {
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
}

TaskKind DataStream::task_of(std::uint64_t k) const { return schedule_[k % schedule_.size()]; }

Batch DataStream::batch(std::uint64_t k) const {
  Batch b{task_of(k), k, {}};
  Rng rng = Rng::stream(seed_, tag_, k);
  b.samples.reserve(static_cast<std::size_t>(batch_size_));
  for (int i = 0; i < batch_size_; ++i) b.samples.push_back(make_sample(b.task, rng, *vocab_, opts_));
  return b;
}

}  // namespace umm
