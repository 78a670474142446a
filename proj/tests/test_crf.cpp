#include <doctest.h>

#include <cmath>

#include "deid/nn/crf.hpp"
#include "deid/nn/gradcheck.hpp"
#include "deid/util.hpp"

using namespace deid;
using namespace deid::nn;

namespace {

// brute-force oracle: enumerate all L^T label paths
struct Enumerated {
  double log_z;
  std::vector<int> best_path;
  double best_score;
};

Enumerated enumerate_paths(const Crf& crf, const Matrix& emissions) {
  const int T = emissions.rows;
  const int L = crf.n_labels();
  Enumerated out{-std::numeric_limits<double>::infinity(), {}, -std::numeric_limits<double>::infinity()};
  std::vector<int> path(static_cast<size_t>(T), 0);
  std::vector<double> scores;
  for (;;) {
    const double s = crf.path_score(emissions, path);
    scores.push_back(s);
    if (s > out.best_score) {
      out.best_score = s;
      out.best_path = path;
    }
    int pos = T - 1;
    while (pos >= 0 && ++path[static_cast<size_t>(pos)] == L) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) mx = std::max(mx, s);
  double sum = 0;
  for (double s : scores) sum += std::exp(s - mx);
  out.log_z = mx + std::log(sum);
  return out;
}

void randomize_instance(Crf& crf, Matrix& emissions, Rng& rng) {
  for (double& v : crf.transitions().value) v = rng.normal();
  for (double& v : emissions.a) v = rng.normal();
}

}  // namespace

TEST_SUITE("nn.crf") {
  TEST_CASE("uniform single step: loss is log 2") {
    ParamSet ps;
    Crf crf(ps, "crf", 2);
    Matrix emissions(1, 2);
    const double nll = crf.neg_log_likelihood(emissions, {0}, 0.0, nullptr);
    CHECK(nll == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("log partition matches explicit enumeration over 27 paths") {
    Rng rng(31);
    ParamSet ps;
    Crf crf(ps, "crf", 3);
    Matrix emissions(3, 3);
    randomize_instance(crf, emissions, rng);
    const auto oracle = enumerate_paths(crf, emissions);
    CHECK(std::abs(crf.log_partition(emissions) - oracle.log_z) <= 1e-8);
  }

  TEST_CASE("random instances T<=4 L<=4 match enumeration") {
    Rng rng(32);
    for (int iter = 0; iter < 250; ++iter) {
      const int T = 1 + static_cast<int>(rng.below(4));
      const int L = 1 + static_cast<int>(rng.below(4));
      ParamSet ps;
      Crf crf(ps, "crf", L);
      Matrix emissions(T, L);
      randomize_instance(crf, emissions, rng);
      const auto oracle = enumerate_paths(crf, emissions);

      CHECK(std::abs(crf.log_partition(emissions) - oracle.log_z) <= 1e-8);

      const auto [path, score] = crf.viterbi(emissions);
      CHECK(score == doctest::Approx(oracle.best_score).epsilon(1e-10));
      CHECK(path == oracle.best_path);
      CHECK(score == doctest::Approx(crf.path_score(emissions, path)).epsilon(1e-10));
      CHECK(score <= oracle.log_z + 1e-9);
    }
  }

  TEST_CASE("path probabilities normalize to one") {
    Rng rng(33);
    for (int iter = 0; iter < 50; ++iter) {
      const int T = 1 + static_cast<int>(rng.below(4));
      const int L = 1 + static_cast<int>(rng.below(4));
      ParamSet ps;
      Crf crf(ps, "crf", L);
      Matrix emissions(T, L);
      randomize_instance(crf, emissions, rng);
      const double log_z = crf.log_partition(emissions);

      double total = 0;
      std::vector<int> path(static_cast<size_t>(T), 0);
      for (;;) {
        total += std::exp(crf.path_score(emissions, path) - log_z);
        int pos = T - 1;
        while (pos >= 0 && ++path[static_cast<size_t>(pos)] == L) {
          path[static_cast<size_t>(pos)] = 0;
          --pos;
        }
        if (pos < 0) break;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
    }
  }

  TEST_CASE("nll gradient matches central differences (T=4, L=3)") {
    Rng rng(34);
    ParamSet ps;
    Crf crf(ps, "crf", 3);
    Matrix emissions(4, 3);
    randomize_instance(crf, emissions, rng);
    const std::vector<int> labels{0, 2, 1, 2};

    auto loss = [&] { return crf.neg_log_likelihood(emissions, labels, 0.0, nullptr); };
    auto grad = [&] {
      ps.zero_grad();
      Matrix d_em(4, 3);
      return crf.neg_log_likelihood(emissions, labels, 1.0, &d_em);
    };
    const auto report = finite_diff_check(ps, loss, grad, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err() < 1e-7);
  }

  TEST_CASE("emission gradient matches central differences") {
    Rng rng(35);
    ParamSet ps;
    Crf crf(ps, "crf", 3);
    Matrix emissions(4, 3);
    randomize_instance(crf, emissions, rng);
    const std::vector<int> labels{1, 0, 2, 2};

    Matrix d_em(4, 3);
    crf.neg_log_likelihood(emissions, labels, 1.0, &d_em);
    const double h = 1e-6;
    for (int t = 0; t < 4; ++t) {
      for (int j = 0; j < 3; ++j) {
        const double saved = emissions.at(t, j);
        emissions.at(t, j) = saved + h;
        const double lp = crf.neg_log_likelihood(emissions, labels, 0.0, nullptr);
        emissions.at(t, j) = saved - h;
        const double lm = crf.neg_log_likelihood(emissions, labels, 0.0, nullptr);
        emissions.at(t, j) = saved;
        CHECK(d_em.at(t, j) == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("strongly favored labels win with zero transitions") {
    ParamSet ps;
    Crf crf(ps, "crf", 3);
    Matrix emissions(4, 3);
    const std::vector<int> want{2, 0, 1, 1};
    for (int t = 0; t < 4; ++t) emissions.at(t, want[static_cast<size_t>(t)]) = 50.0;
    CHECK(crf.viterbi(emissions).first == want);
  }

  TEST_CASE("all-zero scores break ties toward label zero") {
    ParamSet ps;
    Crf crf(ps, "crf", 3);
    Matrix emissions(3, 3);
    const auto [path, score] = crf.viterbi(emissions);
    CHECK(path == std::vector<int>{0, 0, 0});
    CHECK(score == 0.0);
  }

  TEST_CASE("single step viterbi is the argmax of emission plus boundary transitions") {
    Rng rng(36);
    ParamSet ps;
    Crf crf(ps, "crf", 4);
    Matrix emissions(1, 4);
    randomize_instance(crf, emissions, rng);
    int best = 0;
    double best_score = -1e18;
    for (int j = 0; j < 4; ++j) {
      const double s =
          crf.transition(crf.start_state(), j) + emissions.at(0, j) + crf.transition(j, crf.stop_state());
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    const auto [path, score] = crf.viterbi(emissions);
    CHECK(path == std::vector<int>{best});
    CHECK(score == doctest::Approx(best_score));
  }

  TEST_CASE("label length mismatch and bad indices are rejected") {
    ParamSet ps;
    Crf crf(ps, "crf", 2);
    Matrix emissions(2, 2);
    CHECK_THROWS(crf.neg_log_likelihood(emissions, {0}, 0.0, nullptr));
    CHECK_THROWS(crf.neg_log_likelihood(emissions, {0, 5}, 0.0, nullptr));
  }
}
