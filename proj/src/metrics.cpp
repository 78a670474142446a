#include "deid/metrics.hpp"

#include <fstream>
#include <sstream>

#include "deid/util.hpp"

namespace deid::metrics {

using corpus::BioLabel;
using corpus::Sentence;

namespace {

void check_aligned(const std::vector<Sentence>& gold, const std::vector<Sentence>& pred) {
  if (gold.size() != pred.size()) {
    throw std::invalid_argument(cat("token streams not aligned: ", gold.size(), " vs ",
                                    pred.size(), " sentences"));
  }
  size_t position = 0;
  for (size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].labels.size() != gold[s].tokens.size() ||
        pred[s].labels.size() != pred[s].tokens.size()) {
      throw std::invalid_argument(cat("sentence ", s, " is not labeled"));
    }
    if (gold[s].tokens.size() != pred[s].tokens.size()) {
      throw std::invalid_argument(cat("token streams diverge at sentence ", s, " (token position ",
                                      position, "): ", gold[s].tokens.size(), " vs ",
                                      pred[s].tokens.size(), " tokens"));
    }
    position += gold[s].tokens.size();
  }
}

}  // namespace

HipaaMap load_hipaa_map(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open hipaa map: " + path);
  HipaaMap map;
  map.fill(false);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream fields(line);
    std::string category, flag;
    if (!(fields >> category)) continue;
    if (!(fields >> flag) || (flag != "true" && flag != "false")) {
      throw std::runtime_error(cat(path, ":", line_no, ": expected '<CATEGORY> true|false'"));
    }
    const auto cat_id = corpus::phi_category_from_string(category);
    if (!cat_id) throw std::runtime_error(cat(path, ":", line_no, ": unknown category ", category));
    map[static_cast<size_t>(*cat_id)] = flag == "true";
  }
  return map;
}

std::string default_hipaa_map_text() {
  std::string out = "# category -> counts toward the binary HIPAA metric\n";
  for (int c = 0; c < corpus::kNumPhiCategories; ++c) {
    out += cat(corpus::to_string(static_cast<corpus::PhiCategory>(c)), " true\n");
  }
  return out;
}

EvalReport binary_hipaa_f1(const std::vector<Sentence>& gold, const std::vector<Sentence>& pred,
                           const HipaaMap& hipaa) {
  check_aligned(gold, pred);
  EvalReport report;
  auto positive = [&](const BioLabel& l) {
    return l.is_phi() && hipaa[static_cast<size_t>(l.category)];
  };
  for (size_t s = 0; s < gold.size(); ++s) {
    for (size_t t = 0; t < gold[s].labels.size(); ++t) {
      const BioLabel& g = gold[s].labels[t];
      const BioLabel& p = pred[s].labels[t];
      const bool gp = positive(g), pp = positive(p);
      if (gp && pp) {
        ++report.binary.tp;
      } else if (!gp && pp) {
        ++report.binary.fp;
      } else if (gp && !pp) {
        ++report.binary.fn;
      }
      if (gp) {
        Counts& c = report.per_category[g.category];
        if (pp && p.category == g.category) {
          ++c.tp;
        } else {
          ++c.fn;
        }
      }
      if (pp && (!gp || p.category != g.category)) ++report.per_category[p.category].fp;
    }
  }
  report.precision = report.binary.precision();
  report.recall = report.binary.recall();
  report.f1 = report.binary.f1();
  return report;
}

CategoryReport category_report(const std::vector<Sentence>& gold,
                               const std::vector<Sentence>& pred) {
  check_aligned(gold, pred);
  CategoryReport report;
  for (size_t s = 0; s < gold.size(); ++s) {
    for (size_t t = 0; t < gold[s].labels.size(); ++t) {
      const BioLabel& g = gold[s].labels[t];
      const BioLabel& p = pred[s].labels[t];
      const bool match = g.is_phi() && p.is_phi() && g.category == p.category;
      if (match) {
        ++report.per_category[g.category].tp;
        ++report.micro.tp;
        continue;
      }
      if (g.is_phi()) {
        ++report.per_category[g.category].fn;
        ++report.micro.fn;
      }
      if (p.is_phi()) {
        ++report.per_category[p.category].fp;
        ++report.micro.fp;
      }
    }
  }
  double f1_sum = 0;
  for (const auto& [category, counts] : report.per_category) f1_sum += counts.f1();
  report.macro_f1 =
      report.per_category.empty() ? 0.0 : f1_sum / static_cast<double>(report.per_category.size());
  return report;
}

}  // namespace deid::metrics
