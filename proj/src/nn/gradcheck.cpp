#include "deid/nn/gradcheck.hpp"

#include <cmath>

namespace deid::nn {

GradCheckReport finite_diff_check(ParamSet& params, const std::function<double()>& loss_fn,
                                  const std::function<double()>& grad_fn, double tolerance,
                                  double h, size_t samples_per_block, uint64_t sample_seed) {
  const double l0 = loss_fn();
  const double l1 = loss_fn();
  if (!(l0 == l1)) {
    throw std::runtime_error(
        cat("finite_diff_check: forward pass is not deterministic (", l0, " vs ", l1, ")"));
  }

  grad_fn();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.count());
  for (const Param& p : params) analytic.push_back(p.grad);

  GradCheckReport report;
  report.tolerance = tolerance;
  report.pass = true;
  Rng rng(sample_seed);

  for (size_t bi = 0; bi < params.count(); ++bi) {
    Param& p = params.at(bi);
    BlockCheck check;
    check.name = p.name;

    std::vector<size_t> idx;
    if (samples_per_block == 0 || p.size() <= samples_per_block) {
      idx.resize(p.size());
      for (size_t i = 0; i < p.size(); ++i) idx[i] = i;
    } else {
      for (size_t k = 0; k < samples_per_block; ++k) idx.push_back(rng.below(p.size()));
    }

    for (size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double lp = loss_fn();
      p.value[i] = saved - h;
      const double lm = loss_fn();
      p.value[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[bi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-3});
      check.max_abs_err = std::max(check.max_abs_err, abs_err);
      check.max_rel_err = std::max(check.max_rel_err, rel_err);
      ++check.checked;
    }
    check.pass = check.max_rel_err <= tolerance;
    report.pass = report.pass && check.pass;
    report.blocks.push_back(std::move(check));
  }
  return report;
}

}  // namespace deid::nn
