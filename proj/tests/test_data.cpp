#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "umm/data.hpp"

using namespace umm;

namespace {

SceneSpec one(ShapeKind s, Color c, int cell) { return SceneSpec{{{s, c, cell}}, Color::White}; }

}  // namespace

TEST(Render, RedCircleRoundTrip) {
  auto spec = one(ShapeKind::Circle, Color::Red, 0);
  EXPECT_EQ(detect(render(spec)), spec);
}

TEST(Render, ColorChangesPixels) {
  auto a = render(one(ShapeKind::Square, Color::Red, 1));
  auto b = render(one(ShapeKind::Square, Color::Blue, 1));
  EXPECT_NE(a.rgb, b.rgb);
}

TEST(Render, Deterministic) {
  auto spec = one(ShapeKind::Triangle, Color::Green, 3);
  EXPECT_EQ(render(spec).rgb, render(spec).rgb);
}

TEST(Render, EmptySceneRejected) {
  SceneSpec s;
  EXPECT_THROW(render(s), std::invalid_argument);
  SceneSpec bg{{{ShapeKind::Circle, Color::White, 0}}, Color::White};
  EXPECT_THROW(render(bg), std::invalid_argument);
  SceneSpec clash{{{ShapeKind::Circle, Color::Red, 0}, {ShapeKind::Square, Color::Blue, 0}}, Color::White};
  EXPECT_THROW(render(clash), std::invalid_argument);
}

TEST(Detector, RoundTripThousandScenes) {
  Rng rng(7);
  int exact = 0;
  for (int i = 0; i < 1000; ++i) {
    auto spec = random_scene(rng);
    auto got = detect(render(spec));
    if (got == spec) ++exact;
    else ADD_FAILURE() << describe(spec) << " -> " << describe(got);
  }
  EXPECT_EQ(exact, 1000);
}

TEST(Detector, EveryShapeColorCellCombination) {
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c)
      for (int cell = 0; cell < kNumCells; ++cell) {
        if (static_cast<Color>(c) == Color::White) continue;
        auto spec = one(static_cast<ShapeKind>(s), static_cast<Color>(c), cell);
        EXPECT_EQ(detect(render(spec)), spec) << describe(spec);
      }
}

TEST(Detector, AllBlackImageHasNoObjects) {
  Image img(kImageSize, kImageSize, 0.0f);
  EXPECT_TRUE(detect(img).objects.empty());
}

TEST(Detector, ColorPerturbationInsideRadius) {
  Rng rng(11);
  DetectorConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    auto spec = random_scene(rng);
    Image img = render(spec);
    // Perturb only fully covered pixels; each RGB offset has norm < radius/2.
    Image clean = img;
    const double amp = cfg.quant_radius / 2 / std::sqrt(3.0);
    for (float& v : img.rgb) {
      bool edge = v > 0.01f && v < 0.99f;
      if (!edge) v += static_cast<float>((2 * rng.uniform() - 1) * amp);
    }
    EXPECT_EQ(detect(img, cfg), detect(clean, cfg)) << describe(spec);
  }
}

TEST(Caption, Examples) {
  auto red = one(ShapeKind::Circle, Color::Red, 0);
  bool saw = false;
  Rng rng(3);
  for (int i = 0; i < 200 && !saw; ++i) saw = caption(red, rng) == "a red circle in the top left";
  EXPECT_TRUE(saw);

  SceneSpec blue{{{ShapeKind::Square, Color::Blue, 0}, {ShapeKind::Square, Color::Blue, 3}}, Color::White};
  saw = false;
  for (int i = 0; i < 400 && !saw; ++i) saw = caption(blue, rng) == "two blue squares";
  EXPECT_TRUE(saw);
}

TEST(Caption, ParsesBackConsistentWithScene) {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    auto spec = random_scene(rng);
    auto text = caption(spec, rng);
    auto q = parse_caption(text);
    EXPECT_EQ(q.objects.size(), spec.objects.size()) << text;
    EXPECT_TRUE(satisfies(q, spec)) << text << " / " << describe(spec);
  }
}

TEST(Caption, ParserRejectsOutsideGrammar) {
  EXPECT_THROW(parse_caption("a purple circle"), std::invalid_argument);
  EXPECT_THROW(parse_caption("two circle"), std::invalid_argument);
  EXPECT_THROW(parse_caption(""), std::invalid_argument);
  EXPECT_THROW(parse_caption("a circle in the middle"), std::invalid_argument);
}

TEST(Caption, ParserOracleByHand) {
  auto q = parse_caption("a red circle in the top left");
  ASSERT_EQ(q.objects.size(), 1u);
  EXPECT_EQ(*q.objects[0].shape, ShapeKind::Circle);
  EXPECT_EQ(*q.objects[0].color, Color::Red);
  EXPECT_EQ(*q.objects[0].cell, 0);

  q = parse_caption("two blue squares and a triangle");
  ASSERT_EQ(q.objects.size(), 3u);
  EXPECT_FALSE(q.objects[2].color.has_value());

  q = parse_caption("a circle to the left of a square");
  ASSERT_TRUE(q.relation.has_value());
  EXPECT_EQ(*q.relation, Relation::LeftOf);
  SceneSpec ok{{{ShapeKind::Circle, Color::Red, 2}, {ShapeKind::Square, Color::Blue, 3}}, Color::White};
  SceneSpec bad{{{ShapeKind::Square, Color::Red, 2}, {ShapeKind::Circle, Color::Blue, 3}}, Color::White};
  EXPECT_TRUE(satisfies(q, ok));
  EXPECT_FALSE(satisfies(q, bad));
}

TEST(Caption, SatisfiesNeedsExactCount) {
  auto q = parse_caption("a circle");
  SceneSpec two{{{ShapeKind::Circle, Color::Red, 0}, {ShapeKind::Circle, Color::Red, 1}}, Color::White};
  EXPECT_FALSE(satisfies(q, two));
  EXPECT_TRUE(satisfies(q, one(ShapeKind::Circle, Color::Green, 2)));
}

TEST(Vocab, GrammarClosure) {
  Vocab v = Vocab::standard();
  Rng rng(9);
  for (int i = 0; i < 3000; ++i) {
    auto spec = random_scene(rng);
    EXPECT_TRUE(v.unknown_words(caption(spec, rng)).empty());
    auto qa = make_qa(spec, rng);
    EXPECT_TRUE(v.unknown_words(qa.question).empty()) << qa.question;
    EXPECT_TRUE(v.unknown_words(qa.answer).empty()) << qa.answer;
  }
  for (auto cat : kGenCategories)
    for (int i = 0; i < 50; ++i) EXPECT_TRUE(v.unknown_words(category_prompt(cat, rng)).empty());
  for (int d = 0; d < 10; ++d) EXPECT_GE(v.id(digit_word(d)), 0);
  EXPECT_GE(v.id("digit"), 0);
}

TEST(Vocab, SpecialsAndRoundTrip) {
  Vocab v = Vocab::standard();
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kNullCond), "<nullcond>");
  EXPECT_EQ(v.token(Vocab::kImgEnd), "<img_end>");
  EXPECT_EQ(Vocab::parse(v.serialize()), v);
  auto ids = v.encode("A red  Circle");
  EXPECT_EQ(v.decode(ids), "a red circle");
  try {
    v.encode("a mauve blob");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("mauve,blob"), std::string::npos);
  }
}

TEST(Answers, NormalizedMatch) {
  EXPECT_EQ(normalize_answer("  Red \t"), "red");
  EXPECT_EQ(normalize_answer("Top   LEFT"), "top left");
}

TEST(Glyph, DigitSevenTarget) {
  Vocab v = Vocab::standard();
  Rng rng(1);
  bool seen = false;
  for (int i = 0; i < 200; ++i) {
    auto s = make_glyph_sample(rng, v);
    ASSERT_TRUE(s.digit.has_value());
    EXPECT_EQ(v.decode(s.target), digit_word(*s.digit));
    if (*s.digit == 7) {
      EXPECT_EQ(v.decode(s.target), "seven");
      seen = true;
    }
  }
  EXPECT_TRUE(seen);
}

TEST(Glyph, InkSpansAtLeastSixByTen) {
  for (int d = 0; d < 10; ++d) {
    Image img = render_glyph(d, 4, 5);
    int minx = 99, maxx = -1, miny = 99, maxy = -1;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(y, x, 0) < 0.5f) {
          minx = std::min(minx, x);
          maxx = std::max(maxx, x);
          miny = std::min(miny, y);
          maxy = std::max(maxy, y);
        }
    EXPECT_GE(maxx - minx + 1, 6) << d;
    EXPECT_GE(maxy - miny + 1, 10) << d;
  }
  EXPECT_THROW(render_glyph(3, 20, 0), std::invalid_argument);
}

TEST(Glyph, DigitsDistinct) {
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b) EXPECT_NE(render_glyph(a, 0, 0).rgb, render_glyph(b, 0, 0).rgb);
}

TEST(Stream, SameSeedSameBatches) {
  Vocab v = Vocab::standard();
  DataStream a(TaskMix{3, 6, 1}, 42, 4, v), b(TaskMix{3, 6, 1}, 42, 4, v);
  for (std::uint64_t k = 0; k < 100; ++k) {
    auto x = a.batch(k), y = b.batch(k);
    ASSERT_EQ(x.task, y.task);
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
      EXPECT_EQ(x.samples[i].cond, y.samples[i].cond);
      EXPECT_EQ(x.samples[i].target, y.samples[i].target);
      EXPECT_EQ(x.samples[i].image.has_value(), y.samples[i].image.has_value());
      if (x.samples[i].image) EXPECT_EQ(x.samples[i].image->rgb, y.samples[i].image->rgb);
    }
  }
  // Random access agrees with sequential access.
  auto late = a.batch(57);
  EXPECT_EQ(late.samples[0].cond, b.batch(57).samples[0].cond);
}

TEST(Stream, RatioOverThousandBatches) {
  Vocab v = Vocab::standard();
  DataStream s(TaskMix{3, 6, 1}, 1, 1, v);
  std::map<TaskKind, int> n;
  for (std::uint64_t k = 0; k < 1000; ++k) ++n[s.task_of(k)];
  EXPECT_LE(std::abs(n[TaskKind::Understanding] - 300), 1);
  EXPECT_LE(std::abs(n[TaskKind::Generation] - 600), 1);
  EXPECT_LE(std::abs(n[TaskKind::TextOnly] - 100), 1);
}

TEST(Stream, EveryWindowOfTenIsExact) {
  Vocab v = Vocab::standard();
  DataStream s(TaskMix{3, 6, 1}, 1, 1, v);
  for (std::uint64_t start = 0; start < 50; ++start) {
    std::map<TaskKind, int> n;
    for (std::uint64_t k = start; k < start + 10; ++k) ++n[s.task_of(k)];
    EXPECT_EQ(n[TaskKind::Understanding], 3);
    EXPECT_EQ(n[TaskKind::Generation], 6);
    EXPECT_EQ(n[TaskKind::TextOnly], 1);
  }
}

TEST(Stream, SampleShapes) {
  Vocab v = Vocab::standard();
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto t = make_sample(TaskKind::TextOnly, rng, v);
    EXPECT_FALSE(t.image.has_value());
    EXPECT_EQ(t.task, TaskKind::TextOnly);
    EXPECT_FALSE(t.target.empty());
    auto g = make_sample(TaskKind::Generation, rng, v);
    EXPECT_TRUE(g.image.has_value());
    EXPECT_FALSE(g.cond.empty());
    EXPECT_TRUE(g.target.empty());
    auto u = make_sample(TaskKind::Understanding, rng, v);
    EXPECT_TRUE(u.image.has_value());
    EXPECT_FALSE(u.target.empty());
  }
}

TEST(TaskMixParse, Forms) {
  auto m = TaskMix::parse("3:6:1");
  EXPECT_EQ(m.understanding, 3);
  EXPECT_EQ(m.generation, 6);
  EXPECT_EQ(m.text, 1);
  EXPECT_EQ(TaskMix::parse("1:1").text, 0);
  EXPECT_EQ(m.str(), "3:6:1");
  EXPECT_THROW(TaskMix::parse("0:0:0"), std::invalid_argument);
  EXPECT_THROW(TaskMix::parse("a:b"), std::invalid_argument);
  EXPECT_THROW(TaskMix::parse("3"), std::invalid_argument);
}

TEST(Prompts, CategoriesParseAndAreSatisfiable) {
  Rng rng(4);
  for (auto cat : kGenCategories) {
    for (int i = 0; i < 50; ++i) {
      auto p = category_prompt(cat, rng);
      EXPECT_NO_THROW(parse_caption(p)) << p;
    }
  }
  EXPECT_STREQ(category_name(GenCategory::ColorAttr), "color_attr");
}
