#include "deid/pseudo.hpp"

#include <algorithm>
#include <cmath>

#include "deid/util.hpp"

namespace deid::pseudo {

using corpus::Sentence;

namespace {

// PHI positions whose token resolves to a vocabulary row
std::vector<size_t> replaceable_positions(const Sentence& s, const embed::EmbeddingStore& store) {
  std::vector<size_t> out;
  for (size_t t = 0; t < s.tokens.size(); ++t) {
    if (!s.labels[t].is_phi()) continue;
    if (store.row_of_with_fallback(s.tokens[t].text)) out.push_back(t);
  }
  return out;
}

void replace_token(Sentence& s, size_t pos, const std::string& text) {
  corpus::Token& tok = s.tokens[pos];
  tok.text = text;
  tok.casing = corpus::casing_of(text);
}

}  // namespace

PseudonymizeResult pseudonymize_corpus(const std::vector<Sentence>& sentences,
                                       const embed::EmbeddingStore& store,
                                       const PseudonymizationConfig& config) {
  if (config.neighbors < 1) throw std::invalid_argument("pseudonymize_corpus: N must be >= 1");
  if (config.neighbors > store.size()) {
    throw std::invalid_argument(cat("pseudonymize_corpus: N=", config.neighbors,
                                    " exceeds vocabulary size ", store.size()));
  }

  std::vector<size_t> order(sentences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(config.seed, 0x5f0f1eULL));
  shuffle_rng.shuffle(order);

  PseudonymizeResult result;
  result.sentences.reserve(sentences.size());
  for (size_t src : order) {
    Sentence s = sentences[src];
    if (s.labels.size() != s.tokens.size()) {
      throw std::invalid_argument("pseudonymize_corpus: sentences must be labeled");
    }
    Rng rng(derive_seed(config.seed, 0x9e0d0ULL, src));
    for (size_t t = 0; t < s.tokens.size(); ++t) {
      if (!s.labels[t].is_phi()) continue;
      if (!store.row_of_with_fallback(s.tokens[t].text)) {
        ++result.oov_kept;
        continue;
      }
      const auto nl = store.nearest_neighbors(s.tokens[t].text, config.neighbors);
      const size_t pick = rng.below(nl.neighbors.size());
      replace_token(s, t, nl.neighbors[pick].token);
    }
    result.sentences.push_back(std::move(s));
  }
  return result;
}

std::vector<AdversaryPair> make_pairs(const std::vector<Sentence>& sentences,
                                      const embed::EmbeddingStore& store, size_t neighbors,
                                      uint64_t seed, double fake_fraction) {
  if (fake_fraction < 0.0 || fake_fraction > 1.0) {
    throw std::invalid_argument("make_pairs: fake_fraction must be in [0, 1]");
  }
  if (fake_fraction > 0.0 && neighbors < 2) {
    throw std::invalid_argument("make_pairs: fake pairs need N >= 2 (no neighbor != self)");
  }

  std::vector<size_t> eligible;  // indices of sentences with a replaceable PHI token
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].labels.size() != sentences[i].tokens.size()) {
      throw std::invalid_argument("make_pairs: sentences must be labeled");
    }
    if (!replaceable_positions(sentences[i], store).empty()) eligible.push_back(i);
  }
  const auto n_fake_target =
      static_cast<size_t>(std::llround(fake_fraction * static_cast<double>(sentences.size())));
  if (fake_fraction > 0.0 && eligible.empty()) {
    throw std::invalid_argument("make_pairs: fake_fraction > 0 but no sentence has a PHI token");
  }

  Rng pick_rng(derive_seed(seed, 0xfa8eULL));
  std::vector<size_t> fake_pool = eligible;
  pick_rng.shuffle(fake_pool);
  fake_pool.resize(std::min(n_fake_target, fake_pool.size()));
  std::vector<bool> is_fake(sentences.size(), false);
  for (size_t i : fake_pool) is_fake[i] = true;

  std::vector<AdversaryPair> pairs;
  pairs.reserve(sentences.size());
  for (size_t i = 0; i < sentences.size(); ++i) {
    AdversaryPair pair;
    pair.kind = i % 2 == 0 ? PairKind::T1 : PairKind::T2;
    pair.a = sentences[i];
    pair.b = sentences[i];
    if (is_fake[i]) {
      Rng rng(derive_seed(seed, 0xfabe5ULL, i));
      const auto positions = replaceable_positions(pair.b, store);
      const size_t pos = positions[rng.below(positions.size())];
      const auto nl = store.nearest_neighbors(pair.b.tokens[pos].text, neighbors);
      // first neighbor is the token itself; draw from the rest
      const size_t pick = 1 + rng.below(nl.neighbors.size() - 1);
      replace_token(pair.b, pos, nl.neighbors[pick].token);
      pair.label = PairLabel::DifferentSentence;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace deid::pseudo
