#include "deid/nn/layers.hpp"

#include <cmath>

namespace deid::nn {

// --- dense ------------------------------------------------------------------

Dense::Dense(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng)
    : in_(in), out_(out) {
  w_ = &ps.add(prefix + ".w", {in, out});
  b_ = &ps.add(prefix + ".b", {out});
  glorot_init(*w_, in, out, rng);
}

Matrix Dense::forward(const Matrix& x, Cache* cache) const {
  if (x.cols != in_) throw std::invalid_argument("Dense: input width mismatch");
  Matrix y(x.rows, out_);
  for (int t = 0; t < x.rows; ++t) {
    const double* xt = x.row(t);
    double* yt = y.row(t);
    for (int j = 0; j < out_; ++j) yt[j] = b_->value[static_cast<size_t>(j)];
    for (int i = 0; i < in_; ++i) {
      const double xi = xt[i];
      if (xi == 0.0) continue;
      const double* wrow = w_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(out_);
      for (int j = 0; j < out_; ++j) yt[j] += xi * wrow[j];
    }
  }
  if (cache) cache->x = x;
  return y;
}

Matrix Dense::backward(const Cache& cache, const Matrix& d_out) const {
  const Matrix& x = cache.x;
  Matrix dx(x.rows, in_);
  for (int t = 0; t < x.rows; ++t) {
    const double* xt = x.row(t);
    const double* dyt = d_out.row(t);
    double* dxt = dx.row(t);
    for (int j = 0; j < out_; ++j) b_->grad[static_cast<size_t>(j)] += dyt[j];
    for (int i = 0; i < in_; ++i) {
      const double* wrow = w_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(out_);
      double* gwrow = w_->grad.data() + static_cast<size_t>(i) * static_cast<size_t>(out_);
      double acc = 0;
      for (int j = 0; j < out_; ++j) {
        acc += wrow[j] * dyt[j];
        gwrow[j] += xt[i] * dyt[j];
      }
      dxt[i] = acc;
    }
  }
  return dx;
}

// --- LSTM -------------------------------------------------------------------

LstmCell::LstmCell(ParamSet& ps, const std::string& prefix, int input_dim, int hidden, Rng& rng)
    : in_(input_dim), hidden_(hidden) {
  w_ = &ps.add(prefix + ".w", {input_dim, 4 * hidden});
  u_ = &ps.add(prefix + ".u", {hidden, 4 * hidden});
  b_ = &ps.add(prefix + ".b", {4 * hidden});
  glorot_init(*w_, input_dim, 4 * hidden, rng);
  glorot_init(*u_, hidden, 4 * hidden, rng);
  for (int k = 0; k < hidden; ++k) b_->value[static_cast<size_t>(hidden + k)] = 1.0;
}

Matrix LstmCell::forward(const Matrix& x, bool reversed, Cache* cache) const {
  if (x.cols != in_) throw std::invalid_argument("LstmCell: input width mismatch");
  const int T = x.rows;
  const int H = hidden_;
  Matrix h(T, H), c(T, H), gates(T, 4 * H);

  std::vector<double> h_prev(static_cast<size_t>(H), 0.0);
  std::vector<double> c_prev(static_cast<size_t>(H), 0.0);
  std::vector<double> z(static_cast<size_t>(4 * H));

  for (int step = 0; step < T; ++step) {
    const int t = reversed ? T - 1 - step : step;
    const double* xt = x.row(t);
    for (int k = 0; k < 4 * H; ++k) z[static_cast<size_t>(k)] = b_->value[static_cast<size_t>(k)];
    for (int i = 0; i < in_; ++i) {
      const double xi = xt[i];
      if (xi == 0.0) continue;
      const double* wrow = w_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
      for (int k = 0; k < 4 * H; ++k) z[static_cast<size_t>(k)] += xi * wrow[k];
    }
    for (int i = 0; i < H; ++i) {
      const double hi = h_prev[static_cast<size_t>(i)];
      if (hi == 0.0) continue;
      const double* urow = u_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
      for (int k = 0; k < 4 * H; ++k) z[static_cast<size_t>(k)] += hi * urow[k];
    }
    double* gt = gates.row(t);
    double* ct = c.row(t);
    double* ht = h.row(t);
    for (int k = 0; k < H; ++k) {
      const double ig = sigmoid(z[static_cast<size_t>(k)]);
      const double fg = sigmoid(z[static_cast<size_t>(H + k)]);
      const double gg = std::tanh(z[static_cast<size_t>(2 * H + k)]);
      const double og = sigmoid(z[static_cast<size_t>(3 * H + k)]);
      gt[k] = ig;
      gt[H + k] = fg;
      gt[2 * H + k] = gg;
      gt[3 * H + k] = og;
      ct[k] = fg * c_prev[static_cast<size_t>(k)] + ig * gg;
      ht[k] = og * std::tanh(ct[k]);
    }
    std::copy(ct, ct + H, c_prev.begin());
    std::copy(ht, ht + H, h_prev.begin());
  }

  if (cache) {
    cache->x = x;
    cache->gates = std::move(gates);
    cache->c = c;
    cache->h = h;
    cache->reversed = reversed;
  }
  return h;
}

Matrix LstmCell::backward(const Cache& cache, const Matrix& dh_out) const {
  const int T = cache.x.rows;
  const int H = hidden_;
  Matrix dx(T, in_);

  std::vector<double> dh_next(static_cast<size_t>(H), 0.0);
  std::vector<double> dc_next(static_cast<size_t>(H), 0.0);
  std::vector<double> dz(static_cast<size_t>(4 * H));

  for (int step = T - 1; step >= 0; --step) {
    const int t = cache.reversed ? T - 1 - step : step;
    const int t_prev = cache.reversed ? T - step : step - 1;  // processing-order predecessor
    const bool has_prev = step > 0;
    const double* gt = cache.gates.row(t);
    const double* ct = cache.c.row(t);
    const double* c_prev = has_prev ? cache.c.row(t_prev) : nullptr;
    const double* h_prev = has_prev ? cache.h.row(t_prev) : nullptr;
    const double* dht_out = dh_out.row(t);

    for (int k = 0; k < H; ++k) {
      const double ig = gt[k], fg = gt[H + k], gg = gt[2 * H + k], og = gt[3 * H + k];
      const double tc = std::tanh(ct[k]);
      const double dh = dht_out[k] + dh_next[static_cast<size_t>(k)];
      double dc = dh * og * (1.0 - tc * tc) + dc_next[static_cast<size_t>(k)];
      const double d_og = dh * tc;
      const double d_ig = dc * gg;
      const double d_gg = dc * ig;
      const double d_fg = dc * (has_prev ? c_prev[k] : 0.0);
      dz[static_cast<size_t>(k)] = d_ig * ig * (1.0 - ig);
      dz[static_cast<size_t>(H + k)] = d_fg * fg * (1.0 - fg);
      dz[static_cast<size_t>(2 * H + k)] = d_gg * (1.0 - gg * gg);
      dz[static_cast<size_t>(3 * H + k)] = d_og * og * (1.0 - og);
      dc_next[static_cast<size_t>(k)] = dc * fg;
    }

    const double* xt = cache.x.row(t);
    double* dxt = dx.row(t);
    for (int i = 0; i < in_; ++i) {
      const double* wrow = w_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
      double* gwrow = w_->grad.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
      double acc = 0;
      for (int k = 0; k < 4 * H; ++k) {
        acc += wrow[k] * dz[static_cast<size_t>(k)];
        gwrow[k] += xt[i] * dz[static_cast<size_t>(k)];
      }
      dxt[i] = acc;
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (has_prev) {
      for (int i = 0; i < H; ++i) {
        const double* urow = u_->value.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
        double* gurow = u_->grad.data() + static_cast<size_t>(i) * static_cast<size_t>(4 * H);
        double acc = 0;
        for (int k = 0; k < 4 * H; ++k) {
          acc += urow[k] * dz[static_cast<size_t>(k)];
          gurow[k] += h_prev[i] * dz[static_cast<size_t>(k)];
        }
        dh_next[static_cast<size_t>(i)] = acc;
      }
    }
    for (int k = 0; k < 4 * H; ++k) b_->grad[static_cast<size_t>(k)] += dz[static_cast<size_t>(k)];
  }
  return dx;
}

// --- BiLstm -----------------------------------------------------------------

BiLstm::BiLstm(ParamSet& ps, const std::string& prefix, int input_dim, int hidden, Rng& rng)
    : fwd_(ps, prefix + ".fwd", input_dim, hidden, rng),
      bwd_(ps, prefix + ".bwd", input_dim, hidden, rng),
      hidden_(hidden) {}

Matrix BiLstm::forward(const Matrix& x, Cache* cache) const {
  const Matrix hf = fwd_.forward(x, false, cache ? &cache->fwd : nullptr);
  const Matrix hb = bwd_.forward(x, true, cache ? &cache->bwd : nullptr);
  return concat_cols(hf, hb);
}

Matrix BiLstm::backward(const Cache& cache, const Matrix& d_out) const {
  Matrix df, db;
  split_cols(d_out, hidden_, df, db);
  Matrix dx = fwd_.backward(cache.fwd, df);
  const Matrix dx2 = bwd_.backward(cache.bwd, db);
  for (size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dx2.a[i];
  return dx;
}

// --- dropout ----------------------------------------------------------------

Matrix dropout_apply(const Matrix& x, double rate, DropoutMode mode, bool training, Rng& rng,
                     DropoutCache* cache) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (cache) {
    cache->mode = mode;
    cache->active = false;
  }
  if (!training || mode == DropoutMode::None || rate == 0.0) return x;

  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(mode == DropoutMode::Variational ? 1 : x.rows, x.cols);
  for (double& m : mask.a) m = rng.uniform() < rate ? 0.0 : scale;

  Matrix y(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    const double* mt = mask.row(mode == DropoutMode::Variational ? 0 : t);
    const double* xt = x.row(t);
    double* yt = y.row(t);
    for (int j = 0; j < x.cols; ++j) yt[j] = xt[j] * mt[j];
  }
  if (cache) {
    cache->mask = std::move(mask);
    cache->active = true;
  }
  return y;
}

Matrix dropout_backward(const DropoutCache& cache, const Matrix& d_out) {
  if (!cache.active) return d_out;
  Matrix dx(d_out.rows, d_out.cols);
  for (int t = 0; t < d_out.rows; ++t) {
    const double* mt = cache.mask.row(cache.mode == DropoutMode::Variational ? 0 : t);
    const double* dt = d_out.row(t);
    double* dxt = dx.row(t);
    for (int j = 0; j < d_out.cols; ++j) dxt[j] = dt[j] * mt[j];
  }
  return dx;
}

// --- Gaussian noise -----------------------------------------------------------

GaussianNoise::GaussianNoise(ParamSet& ps, const std::string& prefix, int dim, double sigma_init)
    : dim_(dim) {
  rho_ = &ps.add(prefix + ".rho", {dim});
  const double rho0 = softplus_inverse(sigma_init);
  std::fill(rho_->value.begin(), rho_->value.end(), rho0);
}

Matrix GaussianNoise::forward(const Matrix& x, bool active, Rng& rng, Cache* cache) const {
  if (x.cols != dim_) throw std::invalid_argument("GaussianNoise: width mismatch");
  if (cache) cache->active = active;
  if (!active) return x;
  Matrix eps(x.rows, x.cols);
  for (double& e : eps.a) e = rng.normal();
  Matrix y(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    const double* xt = x.row(t);
    const double* et = eps.row(t);
    double* yt = y.row(t);
    for (int j = 0; j < dim_; ++j) {
      yt[j] = xt[j] + softplus(rho_->value[static_cast<size_t>(j)]) * et[j];
    }
  }
  if (cache) cache->eps = std::move(eps);
  return y;
}

Matrix GaussianNoise::backward(const Cache& cache, const Matrix& d_out) const {
  if (!cache.active) return d_out;
  for (int t = 0; t < d_out.rows; ++t) {
    const double* dt = d_out.row(t);
    const double* et = cache.eps.row(t);
    for (int j = 0; j < dim_; ++j) {
      // d sigma / d rho = sigmoid(rho)
      rho_->grad[static_cast<size_t>(j)] +=
          dt[j] * et[j] * sigmoid(rho_->value[static_cast<size_t>(j)]);
    }
  }
  return d_out;
}

std::vector<double> GaussianNoise::sigma() const {
  std::vector<double> s(rho_->value.size());
  for (size_t i = 0; i < s.size(); ++i) s[i] = softplus(rho_->value[i]);
  return s;
}

Matrix add_gaussian_noise(const Matrix& x, const std::vector<double>& sigma, Rng& rng) {
  if (static_cast<int>(sigma.size()) != x.cols) {
    throw std::invalid_argument("add_gaussian_noise: sigma width mismatch");
  }
  Matrix y(x.rows, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    const double* xt = x.row(t);
    double* yt = y.row(t);
    for (int j = 0; j < x.cols; ++j) yt[j] = xt[j] + sigma[static_cast<size_t>(j)] * rng.normal();
  }
  return y;
}

// --- pooling / channels -------------------------------------------------------

Matrix mean_pool(const Matrix& x, MeanPoolCache* cache) {
  Matrix y(1, x.cols);
  for (int t = 0; t < x.rows; ++t) {
    const double* xt = x.row(t);
    for (int j = 0; j < x.cols; ++j) y.a[static_cast<size_t>(j)] += xt[j];
  }
  for (double& v : y.a) v /= static_cast<double>(x.rows);
  if (cache) cache->rows = x.rows;
  return y;
}

Matrix mean_pool_backward(const MeanPoolCache& cache, const Matrix& d_out) {
  Matrix dx(cache.rows, d_out.cols);
  for (int t = 0; t < cache.rows; ++t) {
    double* dxt = dx.row(t);
    for (int j = 0; j < d_out.cols; ++j) {
      dxt[j] = d_out.a[static_cast<size_t>(j)] / static_cast<double>(cache.rows);
    }
  }
  return dx;
}

Matrix cosine_channel(const Matrix& a, const Matrix& b, CosineCache* cache) {
  if (!a.same_shape(b)) throw std::invalid_argument("cosine_channel: shape mismatch");
  Matrix out(a.rows, 1);
  CosineCache local;
  CosineCache& c = cache ? *cache : local;
  c.a = a;
  c.b = b;
  c.na.assign(static_cast<size_t>(a.rows), 0.0);
  c.nb.assign(static_cast<size_t>(a.rows), 0.0);
  c.cos.assign(static_cast<size_t>(a.rows), 0.0);
  for (int t = 0; t < a.rows; ++t) {
    const double* at = a.row(t);
    const double* bt = b.row(t);
    double dot = 0, na = 0, nb = 0;
    for (int j = 0; j < a.cols; ++j) {
      dot += at[j] * bt[j];
      na += at[j] * at[j];
      nb += bt[j] * bt[j];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    c.na[static_cast<size_t>(t)] = na;
    c.nb[static_cast<size_t>(t)] = nb;
    const double cos = (na < 1e-12 || nb < 1e-12) ? 0.0 : dot / (na * nb);
    c.cos[static_cast<size_t>(t)] = cos;
    out.at(t, 0) = cos;
  }
  return out;
}

void cosine_channel_backward(const CosineCache& cache, const Matrix& d_out, Matrix& da,
                             Matrix& db) {
  const Matrix& a = cache.a;
  const Matrix& b = cache.b;
  for (int t = 0; t < a.rows; ++t) {
    const double g = d_out.at(t, 0);
    const double na = cache.na[static_cast<size_t>(t)];
    const double nb = cache.nb[static_cast<size_t>(t)];
    if (g == 0.0 || na < 1e-12 || nb < 1e-12) continue;
    const double cos = cache.cos[static_cast<size_t>(t)];
    const double* at = a.row(t);
    const double* bt = b.row(t);
    double* dat = da.row(t);
    double* dbt = db.row(t);
    for (int j = 0; j < a.cols; ++j) {
      dat[j] += g * (bt[j] / (na * nb) - cos * at[j] / (na * na));
      dbt[j] += g * (at[j] / (na * nb) - cos * bt[j] / (nb * nb));
    }
  }
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, a.cols + b.cols);
  for (int t = 0; t < a.rows; ++t) {
    std::copy(a.row(t), a.row(t) + a.cols, out.row(t));
    std::copy(b.row(t), b.row(t) + b.cols, out.row(t) + a.cols);
  }
  return out;
}

Matrix concat_cols(const Matrix& a, const Matrix& b, const Matrix& c) {
  return concat_cols(concat_cols(a, b), c);
}

void split_cols(const Matrix& d, int ca, Matrix& da, Matrix& db) {
  da = Matrix(d.rows, ca);
  db = Matrix(d.rows, d.cols - ca);
  for (int t = 0; t < d.rows; ++t) {
    std::copy(d.row(t), d.row(t) + ca, da.row(t));
    std::copy(d.row(t) + ca, d.row(t) + d.cols, db.row(t));
  }
}

void split_cols(const Matrix& d, int ca, int cb, Matrix& da, Matrix& db, Matrix& dc) {
  Matrix rest;
  split_cols(d, ca, da, rest);
  split_cols(rest, cb, db, dc);
}

}  // namespace deid::nn
