#include "umm/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace umm {

const char* mode_name(TokenizerMode m) {
  return m == TokenizerMode::PixelReconstruct ? "pixel" : "latent";
}

void RunConfig::visit(const std::function<void(const std::string&, Field)>& fn) {
  fn("run.seed", &run.seed);
  fn("run.out_dir", &run.out_dir);

  fn("vae.image_size", &vae.image_size);
  fn("vae.stride", &vae.stride);
  fn("vae.latent_dim", &vae.latent_dim);
  fn("vae.hidden", &vae.hidden);
  fn("vae.beta", &vae.beta);
  fn("vae.steps", &vae.steps);
  fn("vae.lr", &vae.lr);
  fn("vae.batch", &vae.batch);

  fn("tokenizer.mode", &tokenizer.mode);
  fn("tokenizer.width", &tokenizer.width);
  fn("tokenizer.blocks", &tokenizer.blocks);
  fn("tokenizer.heads", &tokenizer.heads);

  fn("backbone.width", &backbone.width);
  fn("backbone.blocks", &backbone.blocks);
  fn("backbone.heads", &backbone.heads);
  fn("backbone.mlp_ratio", &backbone.mlp_ratio);
  fn("backbone.max_text", &backbone.max_text);

  fn("head.stage1_blocks", &head.stage1_blocks);
  fn("head.stage2_blocks", &head.stage2_blocks);
  fn("head.stage1_heads", &head.stage1_heads);
  fn("head.stage2_heads", &head.stage2_heads);
  fn("head.t_dim", &head.t_dim);
  fn("head.hfi", &head.hfi);

  fn("train.lambda", &train.lambda);
  fn("train.warmup_ratio", &train.warmup_ratio);
  fn("train.grad_clip", &train.grad_clip);
  fn("train.beta1", &train.beta1);
  fn("train.beta2", &train.beta2);
  fn("train.weight_decay", &train.weight_decay);
  fn("train.cfg_dropout", &train.cfg_dropout);
  fn("train.batch", &train.batch);
  fn("train.qa_fraction", &train.qa_fraction);
  fn("train.glyph_fraction", &train.glyph_fraction);

  for (auto [name, st] : {std::pair{"stage_a", &stage_a}, {"stage_b", &stage_b}, {"stage_c", &stage_c}}) {
    std::string p = name;
    fn(p + ".steps", &st->steps);
    fn(p + ".lr", &st->lr);
    fn(p + ".schedule", &st->schedule);
    fn(p + ".mix", &st->mix);
  }

  fn("sampler.steps", &sampler.steps);
  fn("sampler.alpha", &sampler.alpha);
  fn("sampler.cfg_scale", &sampler.cfg_scale);
  fn("sampler.seed", &sampler.seed);

  fn("eval.seeds", &eval.seeds);
  fn("eval.qa_items", &eval.qa_items);
  fn("eval.glyph_items", &eval.glyph_items);
  fn("eval.probe_steps", &eval.probe_steps);

  fn("data.backgrounds", &data.backgrounds);
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    N out;
    if constexpr (std::is_same_v<N, int>) out = std::stoi(v, &used);
    else if constexpr (std::is_same_v<N, double>) out = std::stod(v, &used);
    else out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for " + key + ": \"" + v + "\"");
  }
}

std::string format(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Setter {
  const std::string& key;
  const std::string& value;
  void operator()(int* p) const { *p = parse_number<int>(key, value); }
  void operator()(double* p) const { *p = parse_number<double>(key, value); }
  void operator()(std::uint64_t* p) const { *p = parse_number<std::uint64_t>(key, value); }
  void operator()(std::string* p) const { *p = value; }
  void operator()(bool* p) const {
    if (value == "true" || value == "on" || value == "1") *p = true;
    else if (value == "false" || value == "off" || value == "0") *p = false;
    else throw std::invalid_argument("bad value for " + key + ": \"" + value + "\"");
  }
  void operator()(TokenizerMode* p) const {
    if (value == "pixel") *p = TokenizerMode::PixelReconstruct;
    else if (value == "latent") *p = TokenizerMode::LatentDirect;
    else throw std::invalid_argument("bad value for " + key + ": \"" + value + "\" (pixel|latent)");
  }
  void operator()(LrSchedule* p) const {
    if (value == "constant") *p = LrSchedule::Constant;
    else if (value == "cosine") *p = LrSchedule::Cosine;
    else throw std::invalid_argument("bad value for " + key + ": \"" + value + "\" (constant|cosine)");
  }
  void operator()(TaskMix* p) const {
    try {
      *p = TaskMix::parse(value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("bad value for " + key + ": " + e.what());
    }
  }
  void operator()(std::vector<Color>* p) const {
    p->clear();
    std::string v = value;
    for (char& ch : v)
      if (ch == ',') ch = ' ';
    for (const auto& w : split_words(v)) {
      bool found = false;
      for (int c = 0; c < kNumColors; ++c) {
        if (w == color_word(static_cast<Color>(c))) {
          p->push_back(static_cast<Color>(c));
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("bad value for " + key + ": unknown colour \"" + w + "\"");
    }
  }
};

struct Printer {
  std::string operator()(int* p) const { return std::to_string(*p); }
  std::string operator()(double* p) const { return format(*p); }
  std::string operator()(std::uint64_t* p) const { return std::to_string(*p); }
  std::string operator()(std::string* p) const { return *p; }
  std::string operator()(bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(TokenizerMode* p) const { return mode_name(*p); }
  std::string operator()(LrSchedule* p) const { return *p == LrSchedule::Constant ? "constant" : "cosine"; }
  std::string operator()(TaskMix* p) const { return p->str(); }
  std::string operator()(std::vector<Color>* p) const {
    std::string s;
    for (std::size_t i = 0; i < p->size(); ++i) s += (i ? "," : "") + std::string(color_word((*p)[i]));
    return s;
  }
};

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  std::map<std::string, std::string> values;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq)), value = trim(std::string_view(t).substr(eq + 1));
    if (values.count(key)) throw std::invalid_argument("duplicate config key: " + key);
    values[key] = value;
  }
  RunConfig cfg;
  cfg.visit([&](const std::string& key, Field f) {
    auto it = values.find(key);
    if (it == values.end()) return;
    std::visit(Setter{key, it->second}, f);
    values.erase(it);
  });
  if (!values.empty()) throw std::invalid_argument("unknown config key: " + values.begin()->first);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  RunConfig copy = *this;
  std::string out;
  copy.visit([&](const std::string& key, Field f) { out += key + " = " + std::visit(Printer{}, f) + "\n"; });
  return out;
}

std::uint64_t RunConfig::digest() const {
  RunConfig copy = *this;
  std::uint64_t h = fnv1a("umm-config");
  copy.visit([&](const std::string& key, Field f) {
    if (key.rfind("sampler.", 0) == 0 || key.rfind("eval.", 0) == 0 || key.rfind("run.", 0) == 0) return;
    h = fnv1a(key + "=" + std::visit(Printer{}, f) + ";", h);
  });
  return h;
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  need(vae.stride > 0 && vae.image_size % vae.stride == 0, "vae.image_size must be divisible by vae.stride");
  need(latent_side() % 2 == 0, "latent grid side must be even");
  need(vae.latent_dim > 0 && vae.hidden > 0, "vae widths must be positive");
  need(vae.beta >= 0, "vae.beta must be >= 0");
  need(vae.steps >= 0 && vae.batch > 0, "vae.steps >= 0 and vae.batch > 0");
  need(tokenizer.width > 0 && tokenizer.heads > 0 && tokenizer.width % tokenizer.heads == 0,
       "tokenizer.width must be divisible by tokenizer.heads");
  need(tokenizer.blocks >= 0, "tokenizer.blocks >= 0");
  need(backbone.width > 0 && backbone.heads > 0 && backbone.width % backbone.heads == 0,
       "backbone.width must be divisible by backbone.heads");
  need(backbone.blocks >= 0 && backbone.mlp_ratio > 0, "backbone.blocks >= 0, mlp_ratio > 0");
  need(backbone.max_text >= 3, "backbone.max_text >= 3");
  need(backbone.width % head.stage1_heads == 0, "backbone.width must be divisible by head.stage1_heads");
  need(tokenizer.width % head.stage2_heads == 0, "tokenizer.width must be divisible by head.stage2_heads");
  need(head.stage1_blocks >= 0 && head.stage2_blocks >= 0, "head depths >= 0");
  need(head.t_dim > 0 && head.t_dim % 2 == 0, "head.t_dim must be positive and even");
  need(train.lambda >= 0, "train.lambda >= 0");
  need(train.warmup_ratio >= 0 && train.warmup_ratio < 1, "train.warmup_ratio in [0, 1)");
  need(train.grad_clip > 0, "train.grad_clip > 0");
  need(train.cfg_dropout >= 0 && train.cfg_dropout < 1, "train.cfg_dropout in [0, 1)");
  need(train.batch > 0, "train.batch > 0");
  need(train.qa_fraction >= 0 && train.qa_fraction <= 1, "train.qa_fraction in [0, 1]");
  need(train.glyph_fraction >= 0 && train.glyph_fraction <= 1, "train.glyph_fraction in [0, 1]");
  for (const auto* st : {&stage_a, &stage_b, &stage_c}) need(st->steps >= 0 && st->lr >= 0, "stage steps and lr >= 0");
  need(sampler.steps >= 1, "sampler.steps >= 1");
  need(sampler.alpha > 0, "sampler.alpha > 0");
  need(sampler.cfg_scale >= 0, "sampler.cfg_scale >= 0");
  need(eval.seeds > 0 && eval.qa_items > 0 && eval.glyph_items > 0, "eval counts > 0");
  need(!data.backgrounds.empty(), "data.backgrounds must not be empty");
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("UMM_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      cfg.run.seed = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("bad UMM_SEED: \"") + s + "\"");
    }
  }
}

}  // namespace umm
