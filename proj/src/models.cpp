#include "deid/models.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "deid/util.hpp"

namespace deid::models {

using corpus::BioLabel;

int LabelMap::index_of(const BioLabel& l) {
  switch (l.kind) {
    case BioLabel::Kind::O:
      return 0;
    case BioLabel::Kind::B:
      return 1 + 2 * static_cast<int>(l.category);
    case BioLabel::Kind::I:
      return 2 + 2 * static_cast<int>(l.category);
  }
  return 0;
}

BioLabel LabelMap::label_of(int index) {
  if (index == 0) return BioLabel::outside();
  const int cat = (index - 1) / 2;
  const bool begin = (index - 1) % 2 == 0;
  const auto category = static_cast<corpus::PhiCategory>(cat);
  return begin ? BioLabel::begin(category) : BioLabel::inside(category);
}

Matrix casing_onehot(const corpus::Sentence& sentence) {
  Matrix m(static_cast<int>(sentence.tokens.size()), corpus::kNumCasingCategories);
  for (size_t t = 0; t < sentence.tokens.size(); ++t) {
    m.at(static_cast<int>(t), static_cast<int>(sentence.tokens[t].casing)) = 1.0;
  }
  return m;
}

Matrix embedding_sequence(const corpus::Sentence& sentence, const embed::EmbeddingStore& store) {
  Matrix m(static_cast<int>(sentence.tokens.size()), store.dim());
  for (size_t t = 0; t < sentence.tokens.size(); ++t) {
    const std::vector<double> v = store.lookup(sentence.tokens[t].text);
    std::copy(v.begin(), v.end(), m.row(static_cast<int>(t)));
  }
  return m;
}

Matrix append_casing(const Matrix& base, const corpus::Sentence& sentence) {
  return nn::concat_cols(base, casing_onehot(sentence));
}

std::vector<int> label_indices(const corpus::Sentence& sentence) {
  std::vector<int> out(sentence.labels.size());
  for (size_t i = 0; i < sentence.labels.size(); ++i) out[i] = LabelMap::index_of(sentence.labels[i]);
  return out;
}

// --- tagger -------------------------------------------------------------------

struct TaggerModel::Cache {
  nn::DropoutCache drop_in;
  Matrix casing_part;  // untouched by input dropout
  std::vector<nn::DropoutCache> drop_var;
  std::vector<nn::BiLstm::Cache> lstm;
  nn::DropoutCache drop_post;
  nn::Dense::Cache dense;
};

TaggerModel::TaggerModel(int feature_dim, const TaggerConfig& config, uint64_t seed)
    : cfg_(config), feature_dim_(feature_dim) {
  Rng rng(derive_seed(seed, 0x7a66e4ULL));
  int in = feature_dim;
  for (int l = 0; l < cfg_.layers; ++l) {
    lstm_.emplace_back(ps_, cat("tagger.lstm", l), in, cfg_.units, rng);
    in = 2 * cfg_.units;
  }
  emission_ = std::make_unique<nn::Dense>(ps_, "tagger.emission", in, LabelMap::count(), rng);
  crf_ = std::make_unique<nn::Crf>(ps_, "tagger.crf", LabelMap::count());

  // hard-mask BIO-invalid transitions: I-cat is only reachable from B-cat/I-cat
  const int L = LabelMap::count();
  for (int to = 0; to < L; ++to) {
    const BioLabel to_label = LabelMap::label_of(to);
    if (to_label.kind != BioLabel::Kind::I) continue;
    for (int from = 0; from < L + 2; ++from) {
      bool valid = false;
      if (from < L) {
        const BioLabel from_label = LabelMap::label_of(from);
        valid = from_label.kind != BioLabel::Kind::O && from_label.category == to_label.category;
      }
      if (!valid) crf_->set_transition(from, to, -1e4);
    }
  }
}

Matrix TaggerModel::emissions(const Matrix& features, bool training, uint64_t dropout_seed,
                              Cache* cache) const {
  if (features.cols != feature_dim_) throw std::invalid_argument("TaggerModel: feature width mismatch");
  Rng rng(derive_seed(dropout_seed, 0xd409u));

  // input dropout hits only the embedding/representation part
  const int emb_cols = feature_dim_ - corpus::kNumCasingCategories;
  Matrix emb_part, casing_part;
  nn::split_cols(features, emb_cols, emb_part, casing_part);
  Matrix x = nn::dropout_apply(emb_part, cfg_.dropout_in, nn::DropoutMode::Element, training, rng,
                               cache ? &cache->drop_in : nullptr);
  if (cache) cache->casing_part = casing_part;
  x = nn::concat_cols(x, casing_part);

  if (cache) {
    cache->drop_var.resize(lstm_.size());
    cache->lstm.resize(lstm_.size());
  }
  for (size_t l = 0; l < lstm_.size(); ++l) {
    x = nn::dropout_apply(x, cfg_.dropout_var, nn::DropoutMode::Variational, training, rng,
                          cache ? &cache->drop_var[l] : nullptr);
    x = lstm_[l].forward(x, cache ? &cache->lstm[l] : nullptr);
  }
  x = nn::dropout_apply(x, cfg_.dropout_post, nn::DropoutMode::Element, training, rng,
                        cache ? &cache->drop_post : nullptr);
  return emission_->forward(x, cache ? &cache->dense : nullptr);
}

double TaggerModel::loss(const Matrix& features, const std::vector<int>& labels, bool training,
                         uint64_t dropout_seed) const {
  const Matrix em = emissions(features, training, dropout_seed, nullptr);
  return crf_->neg_log_likelihood(em, labels, 0.0, nullptr);
}

double TaggerModel::loss_grad(const Matrix& features, const std::vector<int>& labels,
                              bool training, uint64_t dropout_seed, double grad_scale,
                              Matrix* d_features) {
  Cache cache;
  const Matrix em = emissions(features, training, dropout_seed, &cache);
  Matrix d_em(em.rows, em.cols);
  const double nll = crf_->neg_log_likelihood(em, labels, grad_scale, &d_em);

  Matrix dx = emission_->backward(cache.dense, d_em);
  dx = nn::dropout_backward(cache.drop_post, dx);
  for (size_t l = lstm_.size(); l-- > 0;) {
    dx = lstm_[l].backward(cache.lstm[l], dx);
    dx = nn::dropout_backward(cache.drop_var[l], dx);
  }
  if (d_features) {
    const int emb_cols = feature_dim_ - corpus::kNumCasingCategories;
    Matrix d_emb, d_casing;
    nn::split_cols(dx, emb_cols, d_emb, d_casing);
    d_emb = nn::dropout_backward(cache.drop_in, d_emb);
    *d_features = nn::concat_cols(d_emb, d_casing);
  }
  return nll;
}

std::vector<int> TaggerModel::predict(const Matrix& features) const {
  const Matrix em = emissions(features, false, 0, nullptr);
  return crf_->viterbi(em).first;
}

// --- representation -------------------------------------------------------------

RepresentationModel::RepresentationModel(int emb_dim, int repr_dim, uint64_t seed,
                                         double sigma_init)
    : emb_dim_(emb_dim), repr_dim_(repr_dim) {
  if (repr_dim % 2 != 0) throw std::invalid_argument("RepresentationModel: repr_dim must be even");
  Rng rng(derive_seed(seed, 0x4e62ULL));
  noise_in_ = std::make_unique<nn::GaussianNoise>(ps_, "repr.noise_in", emb_dim, sigma_init);
  lstm_ = std::make_unique<nn::BiLstm>(ps_, "repr.lstm", emb_dim, repr_dim / 2, rng);
  noise_out_ = std::make_unique<nn::GaussianNoise>(ps_, "repr.noise_out", repr_dim, sigma_init);
}

Matrix RepresentationModel::transform(const Matrix& embeddings, uint64_t noise_seed,
                                      bool with_noise, Cache* cache) const {
  if (embeddings.cols != emb_dim_) {
    throw std::invalid_argument("RepresentationModel: embedding width mismatch");
  }
  Rng rng(derive_seed(noise_seed, 0x90e15eULL));
  Matrix x = noise_in_->forward(embeddings, with_noise, rng, cache ? &cache->noise_in : nullptr);
  x = lstm_->forward(x, cache ? &cache->lstm : nullptr);
  return noise_out_->forward(x, with_noise, rng, cache ? &cache->noise_out : nullptr);
}

Matrix RepresentationModel::backward(const Cache& cache, const Matrix& d_repr) {
  Matrix dx = noise_out_->backward(cache.noise_out, d_repr);
  dx = lstm_->backward(cache.lstm, dx);
  return noise_in_->backward(cache.noise_in, dx);
}

Matrix NoiseRepresenter::transform(const Matrix& embeddings, uint64_t seed) const {
  Rng rng(derive_seed(seed, 0xa01e5ULL));
  Matrix out(embeddings.rows, dim_);
  for (double& v : out.a) v = sigma_ * rng.normal();
  return out;
}

// --- adversaries -----------------------------------------------------------------

AdversaryModel::AdversaryModel(int repr_dim, int emb_dim, int units, uint64_t seed)
    : repr_dim_(repr_dim), emb_dim_(emb_dim), units_(units) {
  Rng rng(derive_seed(seed, 0xad7e0ULL));
  lstm_a1_ = std::make_unique<nn::BiLstm>(ps_, "adv.a1.lstm", repr_dim + emb_dim, units, rng);
  out_a1_ = std::make_unique<nn::Dense>(ps_, "adv.a1.out", 2 * units, 1, rng);
  lstm_a2_ = std::make_unique<nn::BiLstm>(ps_, "adv.a2.lstm", 2 * repr_dim + 1, units, rng);
  out_a2_ = std::make_unique<nn::Dense>(ps_, "adv.a2.out", 2 * units, 1, rng);
}

double AdversaryModel::score(const Matrix& repr_a, const Matrix& emb_b, const Matrix& repr_b,
                             Head head, Cache* cache) const {
  if (repr_a.rows != emb_b.rows || repr_a.rows != repr_b.rows) {
    throw std::invalid_argument("AdversaryModel: sequence length mismatch");
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.head = head;
  c.rows = repr_a.rows;

  if (head == Head::A1 || head == Head::Both) {
    const Matrix in1 = nn::concat_cols(repr_a, emb_b);
    const Matrix h1 = lstm_a1_->forward(in1, &c.lstm1);
    const Matrix p1 = nn::mean_pool(h1, &c.pool1);
    const Matrix logit1 = out_a1_->forward(p1, &c.dense1);
    c.s1 = nn::sigmoid(logit1.at(0, 0));
  }
  if (head == Head::A2 || head == Head::Both) {
    const Matrix cos = nn::cosine_channel(repr_a, repr_b, &c.cosine);
    const Matrix in2 = nn::concat_cols(repr_a, repr_b, cos);
    const Matrix h2 = lstm_a2_->forward(in2, &c.lstm2);
    const Matrix p2 = nn::mean_pool(h2, &c.pool2);
    const Matrix logit2 = out_a2_->forward(p2, &c.dense2);
    c.s2 = nn::sigmoid(logit2.at(0, 0));
  }
  switch (head) {
    case Head::A1:
      return c.s1;
    case Head::A2:
      return c.s2;
    case Head::Both:
      return 0.5 * (c.s1 + c.s2);
  }
  return 0.5;
}

void AdversaryModel::backward(const Cache& c, double d_score, Matrix* d_repr_a, Matrix* d_emb_b,
                              Matrix* d_repr_b) {
  auto ensure = [&](Matrix* m, int cols) {
    if (m && (m->rows != c.rows || m->cols != cols)) *m = Matrix(c.rows, cols);
  };
  ensure(d_repr_a, repr_dim_);
  ensure(d_emb_b, emb_dim_);
  ensure(d_repr_b, repr_dim_);

  const bool use1 = c.head == Head::A1 || c.head == Head::Both;
  const bool use2 = c.head == Head::A2 || c.head == Head::Both;
  const double w = c.head == Head::Both ? 0.5 : 1.0;

  if (use1) {
    const double dlogit = d_score * w * c.s1 * (1.0 - c.s1);
    Matrix d_logit(1, 1);
    d_logit.at(0, 0) = dlogit;
    Matrix dp = out_a1_->backward(c.dense1, d_logit);
    Matrix dh = nn::mean_pool_backward(c.pool1, dp);
    Matrix din = lstm_a1_->backward(c.lstm1, dh);
    Matrix da, db;
    nn::split_cols(din, repr_dim_, da, db);
    if (d_repr_a)
      for (size_t i = 0; i < da.a.size(); ++i) d_repr_a->a[i] += da.a[i];
    if (d_emb_b)
      for (size_t i = 0; i < db.a.size(); ++i) d_emb_b->a[i] += db.a[i];
  }
  if (use2) {
    const double dlogit = d_score * w * c.s2 * (1.0 - c.s2);
    Matrix d_logit(1, 1);
    d_logit.at(0, 0) = dlogit;
    Matrix dp = out_a2_->backward(c.dense2, d_logit);
    Matrix dh = nn::mean_pool_backward(c.pool2, dp);
    Matrix din = lstm_a2_->backward(c.lstm2, dh);
    Matrix da, db, dcos;
    nn::split_cols(din, repr_dim_, repr_dim_, da, db, dcos);
    Matrix da_cos(c.rows, repr_dim_), db_cos(c.rows, repr_dim_);
    nn::cosine_channel_backward(c.cosine, dcos, da_cos, db_cos);
    if (d_repr_a)
      for (size_t i = 0; i < da.a.size(); ++i) d_repr_a->a[i] += da.a[i] + da_cos.a[i];
    if (d_repr_b)
      for (size_t i = 0; i < db.a.size(); ++i) d_repr_b->a[i] += db.a[i] + db_cos.a[i];
  }
}

const char* to_string(AdversaryModel::Head head) {
  switch (head) {
    case AdversaryModel::Head::A1:
      return "a1";
    case AdversaryModel::Head::A2:
      return "a2";
    case AdversaryModel::Head::Both:
      return "both";
  }
  return "both";
}

double adversary_loss(double score, bool same_sentence, double* d_score) {
  const double s = std::min(1.0 - 1e-7, std::max(1e-7, score));
  if (same_sentence) {
    if (d_score) *d_score = -1.0 / s;
    return -std::log(s);
  }
  if (d_score) *d_score = 1.0 / (1.0 - s);
  return -std::log(1.0 - s);
}

// --- checkpoints ------------------------------------------------------------------

void save_model_checkpoint(const std::string& path, const nn::ParamSet& params,
                           const CheckpointMeta& meta) {
  nn::save_checkpoint(path, params);
  nlohmann::json j{{"component", meta.component},
                   {"repr_dim", meta.repr_dim},
                   {"emb_dim", meta.emb_dim},
                   {"units", meta.units},
                   {"layers", meta.layers},
                   {"neighbors", meta.neighbors},
                   {"feature_dim", meta.feature_dim},
                   {"sigma_init", meta.sigma_init},
                   {"embedding_fingerprint", meta.embedding_fingerprint},
                   {"seed", meta.seed}};
  std::ofstream os(path + ".json");
  if (!os) throw nn::CheckpointError("cannot write manifest: " + path + ".json");
  os << j.dump(2) << '\n';
}

CheckpointMeta load_checkpoint_meta(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw nn::CheckpointError("missing manifest: " + path + ".json");
  nlohmann::json j;
  is >> j;
  CheckpointMeta meta;
  meta.component = j.value("component", "");
  meta.repr_dim = j.value("repr_dim", 0);
  meta.emb_dim = j.value("emb_dim", 0);
  meta.units = j.value("units", 0);
  meta.layers = j.value("layers", 0);
  meta.neighbors = j.value("neighbors", 0);
  meta.feature_dim = j.value("feature_dim", 0);
  meta.sigma_init = j.value("sigma_init", 0.1);
  meta.embedding_fingerprint = j.value("embedding_fingerprint", 0ULL);
  meta.seed = j.value("seed", 0ULL);
  return meta;
}

RepresentationModel load_representation_checkpoint(const std::string& path) {
  const CheckpointMeta meta = load_checkpoint_meta(path);
  if (meta.component != "representation") {
    throw nn::CheckpointError("checkpoint is not a representation model: " + path);
  }
  RepresentationModel model(meta.emb_dim, meta.repr_dim, meta.seed, meta.sigma_init);
  nn::load_into(model.params(), nn::load_checkpoint(path));
  return model;
}

}  // namespace deid::models
