#pragma once

#include "deid/models.hpp"
#include "deid/pseudo.hpp"

namespace deid::privacy {

struct AttackConfig {
  models::AdversaryModel::Head head = models::AdversaryModel::Head::Both;
  int extra_epochs = 50;
  uint64_t seed = 0;
  size_t neighbors = 50;
  double fake_fraction = 0.5;
  int pair_rounds = 4;  // pair-generation passes per sentence set
  double test_fraction = 0.25;
  int adv_units = 32;
  int batch_size = 32;
  double lr = 2e-3;
  double clip_norm = 1.0;
};

struct AttackReport {
  std::string kind;  // "a1" | "a2" | "both"
  std::string representation;
  int epochs = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
  double chance = 0.5;
  double margin = 0;  // test_accuracy - chance
  size_t train_pairs = 0, test_pairs = 0;

  std::string to_json() const;
  std::string to_text() const;
};

// Trains a freshly initialized adversary for extra_epochs on pairs drawn from
// the sentences, against the frozen representation (checksummed before and
// after; any change aborts). Pair representations are drawn once, so the
// attacker sees fixed vectors, as it would when data is shared.
AttackReport continued_adversary_attack(const models::Representer& repr,
                                        const std::vector<corpus::Sentence>& sentences,
                                        const embed::EmbeddingStore& store,
                                        const AttackConfig& config);

// Repeated-transform distinguishability: mean pairwise distance among
// `repeats` transforms of each sentence vs its one-token-replaced variants,
// cosine over timestep-mean-pooled sequences. Ratio ~1 means repeated
// transforms are indistinguishable from neighbor-sentence transforms.
double lookup_probe(const models::Representer& repr,
                    const std::vector<corpus::Sentence>& sentences,
                    const embed::EmbeddingStore& store, size_t repeats, uint64_t seed,
                    size_t neighbors = 50);

struct InvarianceReport {
  double neighbor_similarity = 0;  // mean cos(repr(s), repr(s with one PHI token replaced))
  double self_similarity = 0;      // mean cos between two fresh transforms of s
  double cross_similarity = 0;     // baseline: unrelated sentence pairs
  double min_neighbor_similarity = 1.0;
  size_t samples = 0;
};

InvarianceReport neighborhood_invariance_report(const models::Representer& repr,
                                                const std::vector<corpus::Sentence>& sentences,
                                                const embed::EmbeddingStore& store,
                                                size_t neighbors, size_t samples, uint64_t seed);

}  // namespace deid::privacy
