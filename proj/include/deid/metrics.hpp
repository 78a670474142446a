#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "deid/corpus.hpp"

namespace deid::metrics {

// category -> counts toward the binary metric
using HipaaMap = std::array<bool, corpus::kNumPhiCategories>;

inline HipaaMap all_hipaa() {
  HipaaMap m;
  m.fill(true);
  return m;
}

HipaaMap load_hipaa_map(const std::string& path);
std::string default_hipaa_map_text();

struct Counts {
  size_t tp = 0, fp = 0, fn = 0;

  // 0/0 counts as 0 throughout
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct EvalReport {
  Counts binary;
  std::map<corpus::PhiCategory, Counts> per_category;
  double precision = 0, recall = 0, f1 = 0;
};

// Token-based binary F1: a token is positive iff its category maps true; a
// true positive needs both sides positive, regardless of category agreement.
// Tokens that are negative on both sides do not enter the score.
EvalReport binary_hipaa_f1(const std::vector<corpus::Sentence>& gold,
                           const std::vector<corpus::Sentence>& pred,
                           const HipaaMap& hipaa = all_hipaa());

struct CategoryReport {
  std::map<corpus::PhiCategory, Counts> per_category;  // exact category match
  Counts micro;
  double macro_f1 = 0;
};

CategoryReport category_report(const std::vector<corpus::Sentence>& gold,
                               const std::vector<corpus::Sentence>& pred);

}  // namespace deid::metrics
