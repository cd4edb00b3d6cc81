#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "test_util.hpp"
#include "umm/image_io.hpp"
#include "umm/pipeline.hpp"

using namespace umm;
using umm::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("umm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string what(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

// --- config ------------------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
  RunConfig cfg;
  std::string text = cfg.serialize();
  RunConfig back = RunConfig::parse(text);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(back.digest(), cfg.digest());
}

TEST(Config, NonDefaultRoundTrip) {
  RunConfig cfg = tiny_config();
  cfg.train.lambda = 0.1 + 0.2;
  cfg.stage_b.mix = TaskMix{2, 5, 1};
  cfg.tokenizer.mode = TokenizerMode::LatentDirect;
  cfg.data.backgrounds = {Color::White, Color::Black};
  cfg.head.hfi = false;
  RunConfig back = RunConfig::parse(cfg.serialize());
  EXPECT_EQ(back.train.lambda, cfg.train.lambda);
  EXPECT_EQ(back.stage_b.mix.str(), "2:5:1");
  EXPECT_EQ(back.tokenizer.mode, TokenizerMode::LatentDirect);
  EXPECT_EQ(back.data.backgrounds, cfg.data.backgrounds);
  EXPECT_FALSE(back.head.hfi);
  EXPECT_EQ(back.serialize(), cfg.serialize());
}

TEST(Config, CommentsAndBlanks) {
  auto cfg = RunConfig::parse("# header\n\n  backbone.width = 64   # narrower\nvae.steps=10\n");
  EXPECT_EQ(cfg.backbone.width, 64);
  EXPECT_EQ(cfg.vae.steps, 10);
  EXPECT_EQ(cfg.backbone.blocks, RunConfig{}.backbone.blocks);
}

TEST(Config, Rejections) {
  EXPECT_NE(what([] { RunConfig::parse("backbone.widht = 64\n"); }).find("backbone.widht"), std::string::npos);
  EXPECT_NE(what([] { RunConfig::parse("vae.steps = 1\nvae.steps = 2\n"); }).find("duplicate"), std::string::npos);
  EXPECT_THROW(RunConfig::parse("vae.steps 10\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("vae.steps = ten\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("vae.steps = 10x\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("head.hfi = maybe\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("backbone.width = 30\nbackbone.heads = 4\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::load("/nonexistent/umm.cfg"), std::runtime_error);
}

TEST(Config, DigestCoversTrainingKeysOnly) {
  RunConfig a;
  RunConfig b = a;
  b.sampler.cfg_scale = 7.0;
  b.sampler.steps = 50;
  b.eval.seeds = 3;
  b.run.out_dir = "elsewhere";
  b.run.seed = 99;
  EXPECT_EQ(a.digest(), b.digest());
  b.train.lambda = 0.5;
  EXPECT_NE(a.digest(), b.digest());
  RunConfig c = a;
  c.head.hfi = false;
  EXPECT_NE(a.digest(), c.digest());
}

TEST(Config, SeedFromEnvironment) {
  RunConfig cfg;
  ::unsetenv("UMM_SEED");
  apply_env_overrides(cfg);
  EXPECT_EQ(cfg.run.seed, RunConfig{}.run.seed);
  ::setenv("UMM_SEED", "12345", 1);
  apply_env_overrides(cfg);
  EXPECT_EQ(cfg.run.seed, 12345u);
  ::setenv("UMM_SEED", "abc", 1);
  EXPECT_THROW(apply_env_overrides(cfg), std::invalid_argument);
  ::unsetenv("UMM_SEED");
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  auto cfg = RunConfig::load(UMM_SOURCE_DIR "/configs/default.cfg");
  EXPECT_EQ(cfg.serialize(), RunConfig{}.serialize());
}

// --- checkpoint ----------------------------------------------------------------

namespace {

void randomize(Model<float>& m, std::uint64_t seed) {
  m.store.randomize(seed, 0.3);
  m.stats = {{0.25, -0.5}, {1.5, 0.75}};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto dir = scratch("ckpt");
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 3);
  save_checkpoint(m, "B", (dir / "a.ummd").string());

  Model<float> fresh(cfg, Vocab::standard());
  auto info = load_checkpoint(fresh, (dir / "a.ummd").string());
  EXPECT_EQ(info.stage, "B");
  EXPECT_EQ(info.version, kCheckpointVersion);
  EXPECT_EQ(info.digest, cfg.digest());
  EXPECT_EQ(fresh.stats.mean, m.stats.mean);
  EXPECT_EQ(fresh.stats.std, m.stats.std);
  for (std::size_t i = 0; i < m.store.entries().size(); ++i)
    EXPECT_TRUE(m.store.entries()[i].tensor.vec() == fresh.store.entries()[i].tensor.vec());

  save_checkpoint(fresh, "B", (dir / "b.ummd").string());
  EXPECT_EQ(slurp(dir / "a.ummd"), slurp(dir / "b.ummd"));
  EXPECT_EQ(serialize_checkpoint(m, "B").size(), slurp(dir / "a.ummd").size());
}

TEST(Checkpoint, IndexListsEveryParameterOnce) {
  auto dir = scratch("ckpt_index");
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 4);
  save_checkpoint(m, "A", (dir / "a.ummd").string());
  auto info = read_checkpoint_info((dir / "a.ummd").string());
  ASSERT_EQ(info.tensors.size(), m.store.entries().size());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < info.tensors.size(); ++i) {
    EXPECT_EQ(info.tensors[i].name, m.store.entries()[i].name);
    EXPECT_EQ(info.tensors[i].offset, offset);
    offset += m.store.entries()[i].tensor.size();
  }
  EXPECT_EQ(RunConfig::parse(info.config_text).digest(), cfg.digest());
  EXPECT_EQ(Vocab::parse(info.vocab_text), Vocab::standard());
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  auto dir = scratch("ckpt_bad");
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 5);
  auto path = (dir / "a.ummd").string();
  save_checkpoint(m, "A", path);

  RunConfig other = cfg;
  other.train.lambda = 0.5;
  Model<float> wrong(other, Vocab::standard());
  EXPECT_NE(what([&] { load_checkpoint(wrong, path); }).find("digest"), std::string::npos);

  auto bytes = slurp(path);
  {
    std::ofstream f(dir / "magic.ummd", std::ios::binary);
    auto b = bytes;
    b[0] = 'X';
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  }
  {
    std::ofstream f(dir / "short.ummd", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  Model<float> fresh(cfg, Vocab::standard());
  EXPECT_NE(what([&] { load_checkpoint(fresh, (dir / "magic.ummd").string()); }).find("magic"), std::string::npos);
  EXPECT_THROW(load_checkpoint(fresh, (dir / "short.ummd").string()), std::runtime_error);
  EXPECT_THROW(read_checkpoint_info((dir / "missing.ummd").string()), std::runtime_error);
}

TEST(Checkpoint, LoadModelRebuildsFromEmbeddedConfig) {
  auto dir = scratch("ckpt_load");
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 6);
  save_checkpoint(m, "B", (dir / "a.ummd").string());
  CheckpointInfo info;
  auto loaded = load_model((dir / "a.ummd").string(), &info);
  EXPECT_EQ(info.stage, "B");
  EXPECT_EQ(loaded->cfg.serialize(), cfg.serialize());
  EXPECT_EQ(loaded->store.parameter_count(), m.store.parameter_count());
}

// --- image files ------------------------------------------------------------------

TEST(Ppm, RoundTripOnQuantizedValues) {
  auto dir = scratch("ppm");
  Image img(5, 7);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  write_ppm((dir / "a.ppm").string(), img);
  Image back = read_ppm((dir / "a.ppm").string());
  ASSERT_EQ(back.height, 5);
  ASSERT_EQ(back.width, 7);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(back.rgb[i], img.rgb[i], 1e-6);
}

TEST(Ppm, HeaderAndClamping) {
  Image img(1, 2);
  img.rgb = {-0.5f, 0.0f, 0.5f, 1.0f, 2.0f, 0.25f};
  auto bytes = encode_ppm(img);
  std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  std::vector<int> px(bytes.begin() + static_cast<long>(header.size()), bytes.end());
  EXPECT_EQ(px, (std::vector<int>{0, 0, 128, 255, 255, 64}));
}

TEST(Ppm, RenderedSceneSurvivesRoundTrip) {
  auto dir = scratch("ppm_scene");
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    auto spec = random_scene(rng);
    write_ppm((dir / "s.ppm").string(), render(spec));
    EXPECT_EQ(detect(read_ppm((dir / "s.ppm").string())), spec);
  }
}

TEST(Heatmap, ShapeAndValues) {
  Image h = heatmap({0.0f, 1.0f, 0.5f, 0.25f}, 2, 3);
  EXPECT_EQ(h.height, 6);
  EXPECT_EQ(h.width, 6);
  EXPECT_EQ(h.at(0, 0, 0), 0.0f);
  EXPECT_EQ(h.at(2, 5, 1), 1.0f);
  EXPECT_EQ(h.at(5, 5, 2), 0.25f);
  EXPECT_THROW(heatmap({0.0f, 1.0f}, 2), std::invalid_argument);
}

// --- pipeline ------------------------------------------------------------------------

TEST(Pipeline, StageOrderAndNames) {
  RunConfig cfg;
  EXPECT_EQ(stage_order(cfg), (std::vector<std::string>{"vae", "A", "B"}));
  cfg.stage_c.steps = 5;
  EXPECT_EQ(stage_order(cfg).back(), "C");
  EXPECT_EQ(stage_checkpoint_name("A"), "ckpt_A.ummd");
  EXPECT_EQ(digest_hex(0xabc), "0000000000000abc");
}

TEST(Pipeline, RunDirNamedByDigest) {
  RunConfig cfg = tiny_config();
  cfg.run.out_dir = scratch("rundir").string();
  auto dir = make_run_dir(cfg);
  EXPECT_TRUE(fs::is_directory(dir));
  EXPECT_EQ(fs::path(dir).filename().string().rfind(digest_hex(cfg.digest()) + "-", 0), 0u);
}

namespace {

RunConfig small_pipeline_config() {
  RunConfig cfg = tiny_config();
  cfg.vae.steps = 6;
  cfg.vae.batch = 4;
  cfg.train.batch = 4;
  cfg.stage_a.steps = 4;
  cfg.stage_b.steps = 6;
  return cfg;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Pipeline, WritesStageCheckpointsAndMetrics) {
  auto dir = scratch("pipe");
  RunConfig cfg = small_pipeline_config();
  auto model = train_pipeline(cfg, dir.string());
  for (auto s : {"vae", "A", "B"}) EXPECT_TRUE(fs::exists(dir / stage_checkpoint_name(s))) << s;
  EXPECT_EQ(read_checkpoint_info((dir / "ckpt_B.ummd").string()).stage, "B");
  EXPECT_EQ(RunConfig::load((dir / "config.txt").string()).serialize(), cfg.serialize());

  auto rows = lines(dir / "metrics.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0].rfind("stage,step,", 0), 0u) << rows[0];
  EXPECT_EQ(rows.size(), 1u + cfg.vae.steps + cfg.stage_a.steps + cfg.stage_b.steps);
}

TEST(Pipeline, ResumeReproducesUninterruptedRun) {
  RunConfig cfg = small_pipeline_config();
  auto full = scratch("pipe_full"), part = scratch("pipe_part");
  train_pipeline(cfg, full.string());
  fs::copy_file(full / "ckpt_A.ummd", part / "resume_from.ummd");
  train_pipeline(cfg, part.string(), (part / "resume_from.ummd").string());
  EXPECT_EQ(slurp(full / "ckpt_B.ummd"), slurp(part / "ckpt_B.ummd"));

  // an existing run dir continues after its latest checkpoint
  fs::remove(full / "ckpt_B.ummd");
  train_pipeline(cfg, full.string());
  EXPECT_EQ(slurp(full / "ckpt_B.ummd"), slurp(part / "ckpt_B.ummd"));
}

TEST(Pipeline, ResumeRejectsForeignCheckpoint) {
  RunConfig cfg = small_pipeline_config();
  auto dir = scratch("pipe_foreign");
  RunConfig other = cfg;
  other.train.lambda = 0.25;
  Model<float> m(other, Vocab::standard());
  randomize(m, 1);
  save_checkpoint(m, "A", (dir / "x.ummd").string());
  EXPECT_THROW(train_pipeline(cfg, (dir / "run").string(), (dir / "x.ummd").string()), std::runtime_error);
}

TEST(Pipeline, SmokeConfigUnderFiveMinutes) {
  auto cfg = RunConfig::load(UMM_SOURCE_DIR "/configs/smoke.cfg");
  EXPECT_EQ(cfg.backbone.width, 32);
  auto dir = scratch("smoke");
  auto t0 = std::chrono::steady_clock::now();
  train_pipeline(cfg, dir.string());
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 300.0);
  EXPECT_TRUE(fs::exists(dir / "ckpt_B.ummd"));
}

// --- evaluation ----------------------------------------------------------------------

TEST(EvalGen, CategoriesAndCsv) {
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 8);
  SamplerConfig sc{2, 3.0, 4.0};
  auto r = eval_gen(m, 2, sc, 0);
  ASSERT_EQ(r.accuracy.size(), kGenCategories.size());
  double sum = 0;
  for (auto c : kGenCategories) {
    ASSERT_TRUE(r.accuracy.count(c));
    EXPECT_GE(r.accuracy.at(c), 0.0);
    EXPECT_LE(r.accuracy.at(c), 1.0);
    sum += r.accuracy.at(c);
  }
  EXPECT_DOUBLE_EQ(r.overall, sum / 6.0);
  EXPECT_EQ(r.traces.size(), 12u);
  auto csv = r.csv();
  std::istringstream in(csv);
  std::vector<std::string> keys;
  for (std::string l; std::getline(in, l);) keys.push_back(l.substr(0, l.find(',')));
  EXPECT_EQ(keys, (std::vector<std::string>{"category", "single_object", "two_object", "counting", "colors",
                                            "position", "color_attr", "overall"}));

  auto again = eval_gen(m, 2, sc, 0);
  EXPECT_EQ(again.csv(), csv);
}

TEST(EvalGen, UntrainedModelScoresNearZero) {
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 9);
  auto r = eval_gen(m, 4, SamplerConfig{3, 3.0, 4.0}, 1);
  EXPECT_LT(r.overall, 0.2);
}

TEST(EvalUnd, UntrainedModelScoresNearZeroAndIsDeterministic) {
  RunConfig cfg = tiny_config();
  Model<float> m(cfg, Vocab::standard());
  randomize(m, 10);
  double a = eval_und(m, 20, 3);
  EXPECT_LT(a, 0.2);
  EXPECT_EQ(a, eval_und(m, 20, 3));
  EXPECT_LT(eval_glyph(m, 20, 3), 0.3);
}
