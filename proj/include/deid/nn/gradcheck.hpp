#pragma once

#include <functional>

#include "deid/nn/core.hpp"

namespace deid::nn {

struct BlockCheck {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t checked = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;
  bool pass = false;

  double max_rel_err() const {
    double m = 0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_err);
    return m;
  }
};

// Central finite differences against analytic gradients, per parameter block.
//
// loss_fn must be a pure, deterministic forward pass (any noise or dropout
// seeded identically on every call); grad_fn must zero the grads, run forward
// + backward and return the loss. Non-determinism (two forward runs that
// differ bitwise) is reported as an error.
//
// samples_per_block == 0 checks every coordinate.
GradCheckReport finite_diff_check(ParamSet& params, const std::function<double()>& loss_fn,
                                  const std::function<double()>& grad_fn, double tolerance,
                                  double h = 1e-5, size_t samples_per_block = 0,
                                  uint64_t sample_seed = 0);

}  // namespace deid::nn
