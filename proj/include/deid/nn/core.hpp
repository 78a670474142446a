#pragma once

#include <cassert>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "deid/util.hpp"

namespace deid::nn {

// Row-major 2-D array used for activations and sequences (rows = timesteps).
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c)) {}

  double* row(int i) { return a.data() + static_cast<size_t>(i) * static_cast<size_t>(cols); }
  const double* row(int i) const {
    return a.data() + static_cast<size_t>(i) * static_cast<size_t>(cols);
  }
  double& at(int i, int j) { return a[static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j)]; }
  double at(int i, int j) const {
    return a[static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j)];
  }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Trainable tensor: named values with a gradient slot of the same shape.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  size_t size() const { return value.size(); }
};

// Owns the parameters of one model. Addresses stay stable after add(), so
// layers can hold Param pointers.
class ParamSet {
 public:
  Param& add(const std::string& name, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    params_.push_back(Param{name, std::move(shape), std::vector<double>(n, 0.0),
                            std::vector<double>(n, 0.0)});
    return params_.back();
  }

  void zero_grad() {
    for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const Param& p : params_) {
      h = fnv1a64(p.name.data(), p.name.size(), h);
      h = checksum_doubles(p.value, h);
    }
    return h;
  }

  size_t total_size() const {
    size_t n = 0;
    for (const Param& p : params_) n += p.size();
    return n;
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(params_.size());
    for (const Param& p : params_) out.push_back(p.value);
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != params_.size()) throw std::logic_error("ParamSet::restore: size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) params_[i].value = snap[i];
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t count() const { return params_.size(); }
  Param& at(size_t i) { return params_[i]; }
  const Param& at(size_t i) const { return params_[i]; }

  Param* find(const std::string& name) {
    for (Param& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

 private:
  std::deque<Param> params_;
};

inline void glorot_init(Param& p, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : p.value) x = (2.0 * rng.uniform() - 1.0) * limit;
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace deid::nn
