#pragma once

#include <memory>

#include "deid/corpus.hpp"
#include "deid/embed.hpp"
#include "deid/nn/checkpoint.hpp"
#include "deid/nn/crf.hpp"
#include "deid/nn/layers.hpp"

namespace deid::models {

using nn::Matrix;

// BIO label indexing: O = 0, B-cat = 1 + 2*cat, I-cat = 2 + 2*cat.
struct LabelMap {
  static int count() { return 1 + 2 * corpus::kNumPhiCategories; }
  static int index_of(const corpus::BioLabel& l);
  static corpus::BioLabel label_of(int index);
};

// --- feature assembly --------------------------------------------------------

Matrix casing_onehot(const corpus::Sentence& sentence);
Matrix embedding_sequence(const corpus::Sentence& sentence, const embed::EmbeddingStore& store);
Matrix append_casing(const Matrix& base, const corpus::Sentence& sentence);
std::vector<int> label_indices(const corpus::Sentence& sentence);

// --- de-identification tagger -------------------------------------------------

struct TaggerConfig {
  int layers = 2;
  int units = 128;
  double dropout_in = 0.1;    // element dropout on the embedding features
  double dropout_var = 0.25;  // variational dropout on every recurrent layer input
  double dropout_post = 0.5;  // element dropout after the last recurrent layer
};

// Stacked BiLSTM -> linear emissions -> linear-chain CRF. The input is the
// representation (or raw embedding) sequence with the 7-dim casing one-hot
// appended; invalid BIO transitions are masked at init so decodes stay valid.
class TaggerModel {
 public:
  TaggerModel(int feature_dim, const TaggerConfig& config, uint64_t seed);

  double loss(const Matrix& features, const std::vector<int>& labels, bool training,
              uint64_t dropout_seed) const;
  // forward + backward; gradients scaled by grad_scale. d_features, when
  // non-null, receives the gradient w.r.t. the full feature matrix.
  double loss_grad(const Matrix& features, const std::vector<int>& labels, bool training,
                   uint64_t dropout_seed, double grad_scale, Matrix* d_features);

  std::vector<int> predict(const Matrix& features) const;

  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  int feature_dim() const { return feature_dim_; }
  const TaggerConfig& config() const { return cfg_; }
  nn::Crf& crf() { return *crf_; }

 private:
  struct Cache;
  Matrix emissions(const Matrix& features, bool training, uint64_t dropout_seed,
                   Cache* cache) const;

  nn::ParamSet ps_;
  TaggerConfig cfg_;
  int feature_dim_;
  std::vector<nn::BiLstm> lstm_;
  std::unique_ptr<nn::Dense> emission_;
  std::unique_ptr<nn::Crf> crf_;
};

// --- representation model ------------------------------------------------------

// R = N_out + BiLSTM(E + N_in); both noise terms are zero-mean Gaussians with
// trainable per-dimension standard deviations.
class RepresentationModel {
 public:
  RepresentationModel(int emb_dim, int repr_dim, uint64_t seed, double sigma_init = 0.1);

  struct Cache {
    nn::GaussianNoise::Cache noise_in, noise_out;
    nn::BiLstm::Cache lstm;
  };

  Matrix transform(const Matrix& embeddings, uint64_t noise_seed, bool with_noise,
                   Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& d_repr);

  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  int emb_dim() const { return emb_dim_; }
  int repr_dim() const { return repr_dim_; }
  std::vector<double> sigma_in() const { return noise_in_->sigma(); }
  std::vector<double> sigma_out() const { return noise_out_->sigma(); }

 private:
  nn::ParamSet ps_;
  int emb_dim_, repr_dim_;
  std::unique_ptr<nn::GaussianNoise> noise_in_, noise_out_;
  std::unique_ptr<nn::BiLstm> lstm_;
};

// Read-only transform interface shared by the trained model, the identity
// baseline and the pure-noise null model; this is what the attack harness
// freezes and probes.
class Representer {
 public:
  virtual ~Representer() = default;
  virtual int output_dim() const = 0;
  virtual Matrix transform(const Matrix& embeddings, uint64_t seed) const = 0;
  virtual uint64_t checksum() const = 0;
  virtual std::string name() const = 0;
};

class ModelRepresenter final : public Representer {
 public:
  explicit ModelRepresenter(const RepresentationModel& model, bool with_noise = true)
      : model_(&model), with_noise_(with_noise) {}
  int output_dim() const override { return model_->repr_dim(); }
  Matrix transform(const Matrix& embeddings, uint64_t seed) const override {
    return model_->transform(embeddings, seed, with_noise_);
  }
  uint64_t checksum() const override { return model_->params().checksum(); }
  std::string name() const override { return with_noise_ ? "model" : "model-nonoise"; }

 private:
  const RepresentationModel* model_;
  bool with_noise_;
};

// passes raw embeddings through; the attack upper bound
class IdentityRepresenter final : public Representer {
 public:
  explicit IdentityRepresenter(int dim) : dim_(dim) {}
  int output_dim() const override { return dim_; }
  Matrix transform(const Matrix& embeddings, uint64_t) const override { return embeddings; }
  uint64_t checksum() const override { return 0x1de271f1ULL; }
  std::string name() const override { return "identity"; }

 private:
  int dim_;
};

// outputs pure noise; carries no signal at all
class NoiseRepresenter final : public Representer {
 public:
  NoiseRepresenter(int dim, double sigma = 1.0) : dim_(dim), sigma_(sigma) {}
  int output_dim() const override { return dim_; }
  Matrix transform(const Matrix& embeddings, uint64_t seed) const override;
  uint64_t checksum() const override { return 0x4015eULL; }
  std::string name() const override { return "noise"; }

 private:
  int dim_;
  double sigma_;
};

// --- adversaries ---------------------------------------------------------------

// Two bidirectional discriminators with single sigmoid outputs:
//   A1 reads concat(repr_a, emb_b) per timestep,
//   A2 reads concat(repr_a, repr_b, cos(repr_a_t, repr_b_t)).
// The model score is the mean of the two sigmoids (or one head alone).
class AdversaryModel {
 public:
  enum class Head { A1, A2, Both };

  AdversaryModel(int repr_dim, int emb_dim, int units, uint64_t seed);

  struct Cache {
    Head head = Head::Both;
    int rows = 0;
    double s1 = 0.5, s2 = 0.5;
    nn::BiLstm::Cache lstm1, lstm2;
    nn::MeanPoolCache pool1, pool2;
    nn::Dense::Cache dense1, dense2;
    nn::CosineCache cosine;
  };

  double score(const Matrix& repr_a, const Matrix& emb_b, const Matrix& repr_b, Head head,
               Cache* cache = nullptr) const;
  // propagates d_score into the inputs; parameter grads accumulate in params()
  void backward(const Cache& cache, double d_score, Matrix* d_repr_a, Matrix* d_emb_b,
                Matrix* d_repr_b);

  nn::ParamSet& params() { return ps_; }
  const nn::ParamSet& params() const { return ps_; }
  int repr_dim() const { return repr_dim_; }
  int emb_dim() const { return emb_dim_; }
  int units() const { return units_; }

 private:
  nn::ParamSet ps_;
  int repr_dim_, emb_dim_, units_;
  std::unique_ptr<nn::BiLstm> lstm_a1_, lstm_a2_;
  std::unique_ptr<nn::Dense> out_a1_, out_a2_;
};

const char* to_string(AdversaryModel::Head head);

// binary cross-entropy on the averaged sigmoid score; the score is clamped to
// [1e-7, 1 - 1e-7] before the log
double adversary_loss(double score, bool same_sentence, double* d_score = nullptr);

// loss of a perfect random guesser, -log(1/2)
inline constexpr double kRandomGuessLoss = 0.69314718055994530941723212145818;

// --- checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  std::string component;  // "tagger" | "representation" | "adversary"
  int repr_dim = 0;
  int emb_dim = 0;
  int units = 0;
  int layers = 0;
  int neighbors = 0;
  int feature_dim = 0;
  double sigma_init = 0.1;
  uint64_t embedding_fingerprint = 0;
  uint64_t seed = 0;
};

// payload at `path`, JSON manifest at `path`.json
void save_model_checkpoint(const std::string& path, const nn::ParamSet& params,
                           const CheckpointMeta& meta);
CheckpointMeta load_checkpoint_meta(const std::string& path);
RepresentationModel load_representation_checkpoint(const std::string& path);

}  // namespace deid::models
