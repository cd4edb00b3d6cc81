#pragma once

#include <map>
#include <string>
#include <vector>

#include "umm/model.hpp"
#include "umm/sampling.hpp"

namespace umm {

struct GenEvalResult {
  std::map<GenCategory, double> accuracy;
  double overall = 0;  // mean over categories
  std::vector<HfiTrace> traces;
  std::string csv() const;
};

// `seeds` images per category; prompt i of a category and its noise depend
// only on (base_seed, category, i).
template <typename T>
GenEvalResult eval_gen(const Model<T>& model, int seeds, const SamplerConfig& sampler, std::uint64_t base_seed,
                       const std::vector<GenCategory>& categories = {kGenCategories.begin(), kGenCategories.end()});

// Held-out scene QA, greedy decoding, normalized exact match.
template <typename T>
double eval_und(const Model<T>& model, int items, std::uint64_t seed);
// Digit glyph probe ("what digit is this").
template <typename T>
double eval_glyph(const Model<T>& model, int items, std::uint64_t seed);

}  // namespace umm
