#include "umm/eval.hpp"

#include <sstream>

namespace umm {

std::string GenEvalResult::csv() const {
  std::ostringstream os;
  os << "category,accuracy\n";
  for (const auto& [cat, acc] : accuracy) os << category_name(cat) << "," << acc << "\n";
  os << "overall," << overall << "\n";
  return os.str();
}

namespace {

constexpr int kChunk = 50;

}  // namespace

template <typename T>
GenEvalResult eval_gen(const Model<T>& model, int seeds, const SamplerConfig& sampler, std::uint64_t base_seed,
                       const std::vector<GenCategory>& categories) {
  GenEvalResult res;
  const ScenePrior prior{model.cfg.data.backgrounds};
  for (GenCategory cat : categories) {
    std::vector<std::string> texts;
    std::vector<std::vector<int>> prompts;
    std::vector<std::uint64_t> noise_seeds;
    for (int i = 0; i < seeds; ++i) {
      Rng rng = Rng::stream(base_seed, std::string("eval-prompt-") + category_name(cat), static_cast<std::uint64_t>(i));
      texts.push_back(category_prompt(cat, rng, prior));
      prompts.push_back(model.vocab.encode(texts.back()));
      noise_seeds.push_back(Rng::stream(base_seed, std::string("eval-noise-") + category_name(cat), i).next());
    }
    int hits = 0;
    for (int start = 0; start < seeds; start += kChunk) {
      const int end = std::min(seeds, start + kChunk);
      std::vector<std::vector<int>> p(prompts.begin() + start, prompts.begin() + end);
      std::vector<std::uint64_t> s(noise_seeds.begin() + start, noise_seeds.begin() + end);
      auto out = sample_images(model, p, s, sampler);
      for (int i = start; i < end; ++i) {
        if (satisfies(parse_caption(texts[i]), detect(out.images[i - start]))) ++hits;
      }
      for (auto& tr : out.traces) res.traces.push_back(std::move(tr));
    }
    res.accuracy[cat] = static_cast<double>(hits) / seeds;
  }
  double s = 0;
  for (const auto& [cat, acc] : res.accuracy) s += acc;
  res.overall = res.accuracy.empty() ? 0 : s / res.accuracy.size();
  return res;
}

namespace {

template <typename T>
double exact_match(const Model<T>& model, const std::vector<Sample>& items) {
  int hits = 0;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    const std::size_t end = std::min(items.size(), start + kChunk);
    std::vector<const Image*> images;
    std::vector<std::vector<int>> questions;
    int longest = 0;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&*items[i].image);
      questions.push_back(items[i].cond);
      longest = std::max(longest, static_cast<int>(items[i].cond.size()));
    }
    Tensor<T> z1 = model.encode_latent(images, nullptr);
    const int max_new = std::min(8, model.cfg.backbone.max_text - longest - 1);
    auto answers = model.answer(z1, questions, max_new);
    for (std::size_t i = start; i < end; ++i) {
      if (normalize_answer(model.vocab.decode(answers[i - start])) ==
          normalize_answer(model.vocab.decode(items[i].target))) {
        ++hits;
      }
    }
  }
  return items.empty() ? 0.0 : static_cast<double>(hits) / items.size();
}

}  // namespace

template <typename T>
double eval_und(const Model<T>& model, int items, std::uint64_t seed) {
  DataOptions opts;
  opts.prior.backgrounds = model.cfg.data.backgrounds;
  opts.qa_fraction = 1.0;
  std::vector<Sample> set;
  for (int i = 0; i < items; ++i) {
    Rng rng = Rng::stream(seed, "heldout-qa", static_cast<std::uint64_t>(i));
    set.push_back(make_sample(TaskKind::Understanding, rng, model.vocab, opts));
  }
  return exact_match(model, set);
}

template <typename T>
double eval_glyph(const Model<T>& model, int items, std::uint64_t seed) {
  std::vector<Sample> set;
  for (int i = 0; i < items; ++i) {
    Rng rng = Rng::stream(seed, "heldout-glyph", static_cast<std::uint64_t>(i));
    set.push_back(make_glyph_sample(rng, model.vocab));
  }
  return exact_match(model, set);
}

template GenEvalResult eval_gen(const Model<float>&, int, const SamplerConfig&, std::uint64_t,
                                const std::vector<GenCategory>&);
template GenEvalResult eval_gen(const Model<double>&, int, const SamplerConfig&, std::uint64_t,
                                const std::vector<GenCategory>&);
template double eval_und(const Model<float>&, int, std::uint64_t);
template double eval_und(const Model<double>&, int, std::uint64_t);
template double eval_glyph(const Model<float>&, int, std::uint64_t);
template double eval_glyph(const Model<double>&, int, std::uint64_t);

}  // namespace umm
