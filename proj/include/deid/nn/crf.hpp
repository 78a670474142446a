#pragma once

#include "deid/nn/core.hpp"

namespace deid::nn {

// Linear-chain CRF over L labels with virtual start/stop states. The
// transition matrix is (L+2)x(L+2), row = from, column = to; start = L,
// stop = L+1.
class Crf {
 public:
  Crf(ParamSet& ps, const std::string& prefix, int n_labels);

  int n_labels() const { return labels_; }
  int start_state() const { return labels_; }
  int stop_state() const { return labels_ + 1; }

  double transition(int from, int to) const {
    return trans_->value[static_cast<size_t>(from) * static_cast<size_t>(labels_ + 2) +
                         static_cast<size_t>(to)];
  }
  void set_transition(int from, int to, double v) {
    trans_->value[static_cast<size_t>(from) * static_cast<size_t>(labels_ + 2) +
                  static_cast<size_t>(to)] = v;
  }
  Param& transitions() { return *trans_; }

  // -(gold path score) + log Z. When d_emissions is non-null, emission and
  // transition gradients scaled by grad_scale are accumulated.
  double neg_log_likelihood(const Matrix& emissions, const std::vector<int>& labels,
                            double grad_scale, Matrix* d_emissions) const;

  double log_partition(const Matrix& emissions) const;

  // argmax path and its additive score; ties resolve to the lowest label index
  std::pair<std::vector<int>, double> viterbi(const Matrix& emissions) const;

  double path_score(const Matrix& emissions, const std::vector<int>& labels) const;

 private:
  Param* trans_;
  int labels_;
};

}  // namespace deid::nn
