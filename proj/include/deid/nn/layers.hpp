#pragma once

#include "deid/nn/core.hpp"

namespace deid::nn {

// --- dense ------------------------------------------------------------------

class Dense {
 public:
  Dense(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng);

  struct Cache {
    Matrix x;
  };

  Matrix forward(const Matrix& x, Cache* cache) const;
  // accumulates parameter gradients, returns dx
  Matrix backward(const Cache& cache, const Matrix& d_out) const;

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

 private:
  Param* w_;  // in x out
  Param* b_;  // out
  int in_, out_;
};

// --- LSTM -------------------------------------------------------------------

// One direction over a full sequence. Gate order in the width-4H axis:
// input, forget, cell, output. Forget-gate bias starts at 1.
class LstmCell {
 public:
  LstmCell(ParamSet& ps, const std::string& prefix, int input_dim, int hidden, Rng& rng);

  struct Cache {
    Matrix x;      // T x in
    Matrix gates;  // T x 4H, post-activation
    Matrix c;      // T x H
    Matrix h;      // T x H
    bool reversed = false;
  };

  // h sequence in original time order; reversed=true processes t backwards
  Matrix forward(const Matrix& x, bool reversed, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dh) const;

  int hidden() const { return hidden_; }

 private:
  Param* w_;  // in x 4H
  Param* u_;  // H x 4H
  Param* b_;  // 4H
  int in_, hidden_;
};

// Bidirectional wrapper; output is [forward H | backward H] per timestep.
class BiLstm {
 public:
  BiLstm(ParamSet& ps, const std::string& prefix, int input_dim, int hidden, Rng& rng);

  struct Cache {
    LstmCell::Cache fwd, bwd;
  };

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out) const;

  int out_dim() const { return 2 * hidden_; }

 private:
  LstmCell fwd_, bwd_;
  int hidden_;
};

// --- dropout ----------------------------------------------------------------

enum class DropoutMode { None, Element, Variational };

struct DropoutCache {
  Matrix mask;  // element: T x C; variational: 1 x C
  DropoutMode mode = DropoutMode::None;
  bool active = false;
};

// Element mode draws one mask entry per element; variational mode draws one
// mask per sequence and reuses it at every timestep. Survivors are scaled by
// 1/(1-rate). Inference (training=false) is the identity.
Matrix dropout_apply(const Matrix& x, double rate, DropoutMode mode, bool training, Rng& rng,
                     DropoutCache* cache);
Matrix dropout_backward(const DropoutCache& cache, const Matrix& d_out);

// --- trainable Gaussian noise -------------------------------------------------

// Adds sigma ⊙ eps with sigma = softplus(rho) per dimension, eps fresh per
// element. Gradient reaches rho through the reparameterization.
class GaussianNoise {
 public:
  GaussianNoise(ParamSet& ps, const std::string& prefix, int dim, double sigma_init);

  struct Cache {
    Matrix eps;
    bool active = false;
  };

  Matrix forward(const Matrix& x, bool active, Rng& rng, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out) const;

  std::vector<double> sigma() const;
  int dim() const { return dim_; }

 private:
  Param* rho_;
  int dim_;
};

// fixed-sigma helper used by tests and the noise-only representer
Matrix add_gaussian_noise(const Matrix& x, const std::vector<double>& sigma, Rng& rng);

// --- pooling / channels -------------------------------------------------------

struct MeanPoolCache {
  int rows = 0;
};

Matrix mean_pool(const Matrix& x, MeanPoolCache* cache);           // T x C -> 1 x C
Matrix mean_pool_backward(const MeanPoolCache& cache, const Matrix& d_out);

struct CosineCache {
  Matrix a, b;
  std::vector<double> na, nb, cos;
};

// per-timestep cosine similarity channel: (T x d, T x d) -> T x 1
Matrix cosine_channel(const Matrix& a, const Matrix& b, CosineCache* cache);
void cosine_channel_backward(const CosineCache& cache, const Matrix& d_out, Matrix& da,
                             Matrix& db);

Matrix concat_cols(const Matrix& a, const Matrix& b);
Matrix concat_cols(const Matrix& a, const Matrix& b, const Matrix& c);
void split_cols(const Matrix& d, int ca, Matrix& da, Matrix& db);
void split_cols(const Matrix& d, int ca, int cb, Matrix& da, Matrix& db, Matrix& dc);

}  // namespace deid::nn
