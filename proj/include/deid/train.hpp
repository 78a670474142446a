#pragma once

#include <memory>
#include <optional>

#include "deid/metrics.hpp"
#include "deid/nn/optim.hpp"
#include "deid/models.hpp"
#include "deid/pseudo.hpp"

namespace deid::train {

struct TrainConfig {
  // model
  int batch_size = 32;
  int layers = 2;
  int units = 128;
  double dropout_in = 0.1;
  double dropout_var = 0.25;
  double dropout_post = 0.5;
  int adv_units = 32;

  // optimization
  double lr = 2e-3;
  double adv_lr = 0.0;  // adversary-specific rate; 0 means use lr
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;

  // privacy / representation
  double lambda = 1.0;  // weight on |l_adv - l_random| in the combined loss
  size_t neighbors = 100;
  int repr_dim = 50;
  double sigma_init = 0.1;
  double fake_fraction = 0.5;
  int pair_rounds = 1;  // adversary pair generation passes per epoch

  // schedule
  uint64_t seed = 1;
  double val_fraction = 0.1;
  int tagger_patience = 5;
  int tagger_max_epochs = 120;
  int dann_epochs = 15;
  int patience_p1 = 5, patience_p2 = 5, patience_p3 = 10;
  int max_epochs_p1 = 60, max_epochs_p2 = 60, max_epochs_p3 = 80;
  double p2_min_accuracy = 0.55;  // abort threshold: adversary must beat chance in P2

  models::TaggerConfig tagger_config() const {
    return {layers, units, dropout_in, dropout_var, dropout_post};
  }
  nn::OptimConfig optim_config() const { return {lr, beta1, beta2, epsilon, clip_norm}; }
  nn::OptimConfig adv_optim_config() const {
    return {adv_lr > 0 ? adv_lr : lr, beta1, beta2, epsilon, clip_norm};
  }
};

enum class Phase { Tagger, Dann, P1, P2, P3a, P3b };
const char* to_string(Phase phase);

struct LossRecord {
  int epoch = 0;
  Phase phase = Phase::Tagger;
  double l_deid = 0, l_adv = 0, l_repr = 0;
  double val_l_deid = 0, val_l_adv = 0, val_l_repr = 0;
  double val_adv_accuracy = 0;
  // end-of-epoch parameter checksums; they audit the freezing contract
  uint64_t repr_checksum = 0, tagger_checksum = 0, adversary_checksum = 0;
};

std::string to_jsonl(const LossRecord& record);

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TaggerTrainResult {
  std::unique_ptr<models::TaggerModel> model;
  std::vector<LossRecord> log;
  double best_val_loss = 0;
};

// Mini-batch Nadam with early stopping on validation loss; the best-epoch
// weights are restored. When `frozen_repr` is given, every sentence is
// transformed once up front (one noise draw, seeded) and the tagger trains on
// those fixed representations.
TaggerTrainResult train_tagger(const std::vector<corpus::Sentence>& sentences,
                               const embed::EmbeddingStore& store, const TrainConfig& config,
                               const models::Representer* frozen_repr = nullptr);

struct AdversarialResult {
  std::unique_ptr<models::RepresentationModel> repr;
  std::unique_ptr<models::TaggerModel> tagger;
  std::unique_ptr<models::AdversaryModel> adversary;
  std::vector<LossRecord> log;
};

// Conjoint training: one optimizer over all three components, l_deid + l_adv
// per batch, with the adversary gradient negated on its way into the
// representation (gradient reversal, scale 1).
AdversarialResult dann_train(const std::vector<corpus::Sentence>& sentences,
                             const embed::EmbeddingStore& store, const TrainConfig& config);

// P1: representation + tagger on l_deid. P2: adversary alone on the frozen
// representation. P3: one-epoch alternation of (a) tagger + adversary with the
// representation frozen and (b) representation alone on
// l_repr = l_deid + lambda * |l_adv - l_random|, early-stopped on the (b)
// validation loss only; the best representation is restored.
AdversarialResult three_phase_train(const std::vector<corpus::Sentence>& sentences,
                                    const embed::EmbeddingStore& store,
                                    const TrainConfig& config);

// Viterbi predictions for every sentence; representations (when given) use
// one seeded noise draw per sentence.
std::vector<corpus::Sentence> predict_labels(const models::TaggerModel& tagger,
                                             const std::vector<corpus::Sentence>& sentences,
                                             const embed::EmbeddingStore& store,
                                             const models::Representer* repr = nullptr,
                                             uint64_t seed = 0);

metrics::EvalReport evaluate_tagger(const models::TaggerModel& tagger,
                                    const std::vector<corpus::Sentence>& sentences,
                                    const embed::EmbeddingStore& store,
                                    const models::Representer* repr = nullptr, uint64_t seed = 0);

// deterministic train/validation split by seeded shuffle
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double val_fraction,
                                                                  uint64_t seed);

}  // namespace deid::train
