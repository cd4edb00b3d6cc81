#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "test_util.hpp"
#include "umm/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

const fs::path kRoot = fs::temp_directory_path() / "umm_cli";

Result run(const std::string& args, const std::string& env = "") {
  fs::path err_path = kRoot / "stderr.txt";
  std::string cmd = env + " " UMM_BIN " " + args + " 2>" + err_path.string();
  FILE* p = popen(cmd.c_str(), "r");
  Result r{};
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream e(err_path);
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  static inline fs::path ckpt, cfg_path;

  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    umm::RunConfig cfg = umm::testing::tiny_config();
    cfg.vae.steps = 4;
    cfg.vae.batch = 4;
    cfg.train.batch = 4;
    cfg.stage_a.steps = 2;
    cfg.stage_b.steps = 3;
    cfg.sampler.steps = 5;
    cfg.eval.qa_items = 4;
    cfg_path = kRoot / "tiny.cfg";
    std::ofstream(cfg_path) << cfg.serialize();
    Result r = run("train " + cfg_path.string() + " --run-dir " + (kRoot / "run").string());
    ASSERT_EQ(r.code, 0) << r.err;
    ckpt = kRoot / "run" / "ckpt_B.ummd";
  }
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_NE(run("").code, 0);
  EXPECT_EQ(run("frobnicate").code, 2);
  Result r = run("sample /nonexistent.ummd \"a red circle\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
}

TEST_F(Cli, RuntimeErrorsAreOneLine) {
  fs::path bad = kRoot / "bad.cfg";
  std::ofstream(bad) << "backbone.widht = 3\n";
  Result r = run("train " + bad.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "error: unknown config key: backbone.widht\n");

  r = run("sample " + ckpt.string() + " \"a purple blob\" --out " + (kRoot / "s").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("purple"), std::string::npos);
  EXPECT_NE(r.err.find("blob"), std::string::npos);
  EXPECT_EQ(count_lines(r.err), 1);
}

TEST_F(Cli, SampleRepeatsBitIdentical) {
  auto a = kRoot / "sa", b = kRoot / "sb";
  ASSERT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --seed 7 --out " + a.string()).code, 0);
  ASSERT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --seed 7 --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "out_7.ppm"), slurp(b / "out_7.ppm"));
  EXPECT_EQ(slurp(a / "trace_7.csv"), slurp(b / "trace_7.csv"));
  EXPECT_FALSE(slurp(a / "out_7.ppm").empty());
}

TEST_F(Cli, SampleTraceAndGateDumps) {
  auto d = kRoot / "sg";
  Result r = run("sample " + ckpt.string() + " \"a blue square\" --seed 2 --steps 6 --dump-gates --out " + d.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (int k = 0; k < 6; ++k) EXPECT_TRUE(fs::exists(d / ("gate_2_" + std::to_string(k) + ".ppm"))) << k;
  EXPECT_FALSE(fs::exists(d / "gate_2_6.ppm"));
  std::ifstream f(d / "trace_2.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "step,t,raw_intensity,normalized_intensity");
  int rows = 0;
  for (std::string l; std::getline(f, l);) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST_F(Cli, SampleDefaultsComeFromConfig) {
  auto a = kRoot / "def", b = kRoot / "exp";
  ASSERT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --out " + a.string()).code, 0);
  ASSERT_EQ(run("sample " + ckpt.string() +
                " \"a red circle\" --seed 0 --steps 5 --alpha 3 --cfg-scale 4 --out " + b.string())
                .code,
            0);
  EXPECT_EQ(slurp(a / "out_0.ppm"), slurp(b / "out_0.ppm"));
}

TEST_F(Cli, SeedFromEnvironment) {
  auto d = kRoot / "env";
  ASSERT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --out " + d.string(), "UMM_SEED=42").code, 0);
  EXPECT_TRUE(fs::exists(d / "out_42.ppm"));
  ASSERT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --seed 3 --out " + d.string(), "UMM_SEED=42").code,
            0);
  EXPECT_TRUE(fs::exists(d / "out_3.ppm"));
  EXPECT_EQ(run("sample " + ckpt.string() + " \"a red circle\"", "UMM_SEED=x1").code, 1);
}

TEST_F(Cli, ConfigDigestMismatch) {
  fs::path other = kRoot / "other.cfg";
  std::ofstream(other) << "train.lambda = 0.5\n";
  Result r = run("sample " + ckpt.string() + " \"a red circle\" --config " + other.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("digest"), std::string::npos) << r.err;
  EXPECT_EQ(run("sample " + ckpt.string() + " \"a red circle\" --out " + (kRoot / "ok").string() + " --config " +
                cfg_path.string())
                .code,
            0);
}

TEST_F(Cli, EvalCommands) {
  Result g = run("eval-gen " + ckpt.string() + " --seeds 1");
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(g.out.rfind("category,accuracy\n", 0), 0u);
  EXPECT_EQ(count_lines(g.out), 8);
  Result u = run("eval-und " + ckpt.string() + " --items 3");
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_EQ(u.out.rfind("qa_exact_match,", 0), 0u);
}

TEST_F(Cli, InspectCheckpoint) {
  Result r = run("inspect-checkpoint " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("stage B\n"), std::string::npos);
  EXPECT_NE(r.out.find("head.out.weight [head]"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\nparameters "), std::string::npos);
}

TEST_F(Cli, ExportCorpus) {
  auto a = kRoot / "ca", b = kRoot / "cb";
  ASSERT_EQ(run("export-corpus " + a.string() + " --count 5 --seed 3").code, 0);
  ASSERT_EQ(run("export-corpus " + b.string() + " --count 5 --seed 3").code, 0);
  EXPECT_EQ(slurp(a / "corpus.jsonl"), slurp(b / "corpus.jsonl"));
  std::ifstream f(a / "corpus.jsonl");
  int n = 0;
  for (std::string l; std::getline(f, l); ++n) {
    auto j = nlohmann::json::parse(l);
    for (auto key : {"image", "spec", "caption", "question", "answer"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(fs::exists(a / j["image"].get<std::string>()));
  }
  EXPECT_EQ(n, 5);
}
