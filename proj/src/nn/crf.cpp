#include "deid/nn/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deid::nn {

namespace {

double logsumexp(const double* v, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace

Crf::Crf(ParamSet& ps, const std::string& prefix, int n_labels) : labels_(n_labels) {
  trans_ = &ps.add(prefix + ".transitions", {n_labels + 2, n_labels + 2});
}

double Crf::path_score(const Matrix& emissions, const std::vector<int>& labels) const {
  const int T = emissions.rows;
  double s = transition(start_state(), labels[0]) + emissions.at(0, labels[0]);
  for (int t = 1; t < T; ++t) {
    s += transition(labels[static_cast<size_t>(t) - 1], labels[static_cast<size_t>(t)]) +
         emissions.at(t, labels[static_cast<size_t>(t)]);
  }
  return s + transition(labels.back(), stop_state());
}

double Crf::log_partition(const Matrix& emissions) const {
  const int T = emissions.rows;
  const int L = labels_;
  std::vector<double> alpha(static_cast<size_t>(L)), next(static_cast<size_t>(L)),
      work(static_cast<size_t>(L));
  for (int j = 0; j < L; ++j) {
    alpha[static_cast<size_t>(j)] = transition(start_state(), j) + emissions.at(0, j);
  }
  for (int t = 1; t < T; ++t) {
    for (int j = 0; j < L; ++j) {
      for (int i = 0; i < L; ++i) {
        work[static_cast<size_t>(i)] = alpha[static_cast<size_t>(i)] + transition(i, j);
      }
      next[static_cast<size_t>(j)] = logsumexp(work.data(), L) + emissions.at(t, j);
    }
    alpha.swap(next);
  }
  for (int j = 0; j < L; ++j) alpha[static_cast<size_t>(j)] += transition(j, stop_state());
  return logsumexp(alpha.data(), L);
}

double Crf::neg_log_likelihood(const Matrix& emissions, const std::vector<int>& labels,
                               double grad_scale, Matrix* d_emissions) const {
  const int T = emissions.rows;
  const int L = labels_;
  if (static_cast<int>(labels.size()) != T) {
    throw std::invalid_argument("Crf: label/emission length mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= L) throw std::invalid_argument("Crf: label index out of range");
  }

  // forward (alpha) and backward (beta) tables in log space
  Matrix alpha(T, L), beta(T, L);
  std::vector<double> work(static_cast<size_t>(L));
  for (int j = 0; j < L; ++j) alpha.at(0, j) = transition(start_state(), j) + emissions.at(0, j);
  for (int t = 1; t < T; ++t) {
    for (int j = 0; j < L; ++j) {
      for (int i = 0; i < L; ++i) work[static_cast<size_t>(i)] = alpha.at(t - 1, i) + transition(i, j);
      alpha.at(t, j) = logsumexp(work.data(), L) + emissions.at(t, j);
    }
  }
  for (int i = 0; i < L; ++i) beta.at(T - 1, i) = transition(i, stop_state());
  for (int t = T - 2; t >= 0; --t) {
    for (int i = 0; i < L; ++i) {
      for (int j = 0; j < L; ++j) {
        work[static_cast<size_t>(j)] = transition(i, j) + emissions.at(t + 1, j) + beta.at(t + 1, j);
      }
      beta.at(t, i) = logsumexp(work.data(), L);
    }
  }

  for (int j = 0; j < L; ++j) work[static_cast<size_t>(j)] = alpha.at(T - 1, j) + transition(j, stop_state());
  const double log_z = logsumexp(work.data(), L);
  const double nll = log_z - path_score(emissions, labels);

  if (d_emissions) {
    auto& tg = trans_->grad;
    const int S = L + 2;
    auto add_t = [&](int from, int to, double v) {
      tg[static_cast<size_t>(from) * static_cast<size_t>(S) + static_cast<size_t>(to)] +=
          grad_scale * v;
    };

    // unary marginals -> emission grads; gold path subtracted
    for (int t = 0; t < T; ++t) {
      for (int j = 0; j < L; ++j) {
        const double m = std::exp(alpha.at(t, j) + beta.at(t, j) - log_z);
        d_emissions->at(t, j) += grad_scale * m;
      }
      d_emissions->at(t, labels[static_cast<size_t>(t)]) -= grad_scale;
    }
    // start transitions: marginal at t=0
    for (int j = 0; j < L; ++j) {
      add_t(start_state(), j, std::exp(alpha.at(0, j) + beta.at(0, j) - log_z));
    }
    add_t(start_state(), labels[0], -1.0);
    // stop transitions: marginal at t=T-1
    for (int i = 0; i < L; ++i) {
      add_t(i, stop_state(), std::exp(alpha.at(T - 1, i) + beta.at(T - 1, i) - log_z));
    }
    add_t(labels.back(), stop_state(), -1.0);
    // pairwise marginals
    for (int t = 0; t + 1 < T; ++t) {
      for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
          const double m = std::exp(alpha.at(t, i) + transition(i, j) + emissions.at(t + 1, j) +
                                    beta.at(t + 1, j) - log_z);
          add_t(i, j, m);
        }
      }
      add_t(labels[static_cast<size_t>(t)], labels[static_cast<size_t>(t) + 1], -1.0);
    }
  }
  return nll;
}

std::pair<std::vector<int>, double> Crf::viterbi(const Matrix& emissions) const {
  const int T = emissions.rows;
  const int L = labels_;
  Matrix delta(T, L);
  std::vector<std::vector<int>> back(static_cast<size_t>(T), std::vector<int>(static_cast<size_t>(L), 0));

  for (int j = 0; j < L; ++j) delta.at(0, j) = transition(start_state(), j) + emissions.at(0, j);
  for (int t = 1; t < T; ++t) {
    for (int j = 0; j < L; ++j) {
      double best = delta.at(t - 1, 0) + transition(0, j);
      int arg = 0;
      for (int i = 1; i < L; ++i) {
        const double s = delta.at(t - 1, i) + transition(i, j);
        if (s > best) {  // strict: ties keep the lowest predecessor index
          best = s;
          arg = i;
        }
      }
      delta.at(t, j) = best + emissions.at(t, j);
      back[static_cast<size_t>(t)][static_cast<size_t>(j)] = arg;
    }
  }

  double best = delta.at(T - 1, 0) + transition(0, stop_state());
  int arg = 0;
  for (int j = 1; j < L; ++j) {
    const double s = delta.at(T - 1, j) + transition(j, stop_state());
    if (s > best) {
      best = s;
      arg = j;
    }
  }
  std::vector<int> path(static_cast<size_t>(T));
  path[static_cast<size_t>(T) - 1] = arg;
  for (int t = T - 1; t > 0; --t) {
    arg = back[static_cast<size_t>(t)][static_cast<size_t>(arg)];
    path[static_cast<size_t>(t) - 1] = arg;
  }
  return {path, best};
}

}  // namespace deid::nn
