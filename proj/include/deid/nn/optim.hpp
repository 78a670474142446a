#pragma once

#include "deid/nn/core.hpp"

namespace deid::nn {

struct OptimConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Nesterov-Adam (Dozat) over one or more parameter sets. The gradient norm is
// computed jointly over everything registered here; clipping rescales all
// gradients by the same factor before the update.
class Nadam {
 public:
  Nadam(std::vector<ParamSet*> sets, const OptimConfig& config);

  void step();
  long steps_taken() const { return t_; }

  // norm over all registered grads; exposed for tests and the clip audit
  double gradient_norm() const;

 private:
  std::vector<ParamSet*> sets_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace deid::nn
