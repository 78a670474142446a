#include "deid/nn/optim.hpp"

#include <cmath>

namespace deid::nn {

Nadam::Nadam(std::vector<ParamSet*> sets, const OptimConfig& config)
    : sets_(std::move(sets)), cfg_(config) {
  for (ParamSet* ps : sets_) {
    for (Param& p : *ps) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
}

double Nadam::gradient_norm() const {
  double sq = 0;
  for (ParamSet* ps : sets_) {
    for (const Param& p : *ps) {
      for (double g : p.grad) sq += g * g;
    }
  }
  return std::sqrt(sq);
}

void Nadam::step() {
  for (ParamSet* ps : sets_) {
    for (const Param& p : *ps) {
      for (double g : p.grad) {
        if (!std::isfinite(g)) {
          throw std::runtime_error("Nadam: non-finite gradient in parameter '" + p.name + "'");
        }
      }
    }
  }

  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = gradient_norm();
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }

  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double b1_t = std::pow(b1, static_cast<double>(t_));
  const double b1_t1 = b1_t * b1;
  const double b2_t = std::pow(b2, static_cast<double>(t_));

  size_t slot = 0;
  for (ParamSet* ps : sets_) {
    for (Param& p : *ps) {
      auto& m = m_[slot];
      auto& v = v_[slot];
      ++slot;
      for (size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i] * scale;
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double v_hat = v[i] / (1.0 - b2_t);
        // Nesterov momentum: look-ahead blend of m and the current gradient
        const double m_bar = b1 * m[i] / (1.0 - b1_t1) + (1.0 - b1) * g / (1.0 - b1_t);
        p.value[i] -= cfg_.lr * m_bar / (std::sqrt(v_hat) + cfg_.epsilon);
      }
    }
  }
}

}  // namespace deid::nn
