#pragma once

#include <cstdint>
#include <vector>

#include "deid/corpus.hpp"
#include "deid/embed.hpp"

namespace deid::pseudo {

struct PseudonymizationConfig {
  size_t neighbors = 100;  // N; 1 means no pseudonymization
  uint64_t seed = 0;
};

struct PseudonymizeResult {
  std::vector<corpus::Sentence> sentences;
  size_t oov_kept = 0;  // PHI tokens kept verbatim because they are OOV
};

// Shuffles the sentences and replaces every PHI-labeled token with a uniform
// draw from its N nearest cosine neighbors (the token itself included).
// Labels, lengths and O tokens are untouched; casing is recomputed on
// replacements. Deterministic per seed; per-sentence randomness is derived
// from (seed, original sentence index).
PseudonymizeResult pseudonymize_corpus(const std::vector<corpus::Sentence>& sentences,
                                       const embed::EmbeddingStore& store,
                                       const PseudonymizationConfig& config);

enum class PairKind { T1, T2 };
enum class PairLabel { SameSentence, DifferentSentence };

struct AdversaryPair {
  PairKind kind = PairKind::T1;
  corpus::Sentence a, b;  // equal length; fake pairs differ at exactly one PHI position
  PairLabel label = PairLabel::SameSentence;
};

// One pair per input sentence. Fake pairs replace exactly one uniformly
// chosen PHI token with a uniformly chosen neighbor != itself from its top-N
// list. fake_fraction is respected up to rounding; only PHI-bearing sentences
// are eligible for fakes.
std::vector<AdversaryPair> make_pairs(const std::vector<corpus::Sentence>& sentences,
                                      const embed::EmbeddingStore& store, size_t neighbors,
                                      uint64_t seed, double fake_fraction);

}  // namespace deid::pseudo
