#include "deid/privacy.hpp"

#include <algorithm>
#include <cmath>

#include "deid/nn/optim.hpp"
#include "deid/util.hpp"

namespace deid::privacy {

using models::AdversaryModel;
using models::Matrix;

namespace {

struct FixedPair {
  Matrix repr_a, emb_b, repr_b;
  bool same = true;
};

// representations drawn once per pair: the attacker works from fixed vectors
std::vector<FixedPair> materialize_pairs(const models::Representer& repr,
                                         const std::vector<pseudo::AdversaryPair>& pairs,
                                         const embed::EmbeddingStore& store, uint64_t seed) {
  std::vector<FixedPair> out;
  out.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    FixedPair fp;
    const Matrix emb_a = models::embedding_sequence(pairs[i].a, store);
    fp.emb_b = models::embedding_sequence(pairs[i].b, store);
    fp.repr_a = repr.transform(emb_a, derive_seed(seed, 2 * i));
    fp.repr_b = repr.transform(fp.emb_b, derive_seed(seed, 2 * i + 1));
    fp.same = pairs[i].label == pseudo::PairLabel::SameSentence;
    out.push_back(std::move(fp));
  }
  return out;
}

double accuracy_on(AdversaryModel& adv, const std::vector<FixedPair>& pairs,
                   AdversaryModel::Head head) {
  if (pairs.empty()) return 0;
  size_t correct = 0;
  for (const FixedPair& p : pairs) {
    const double score = adv.score(p.repr_a, p.emb_b, p.repr_b, head);
    if ((score > 0.5) == p.same) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::vector<double> mean_pooled(const Matrix& m) {
  std::vector<double> v(static_cast<size_t>(m.cols), 0.0);
  for (int t = 0; t < m.rows; ++t) {
    const double* row = m.row(t);
    for (int j = 0; j < m.cols; ++j) v[static_cast<size_t>(j)] += row[j];
  }
  for (double& x : v) x /= static_cast<double>(m.rows);
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double mean_timestep_cosine(const Matrix& a, const Matrix& b) {
  double sum = 0;
  for (int t = 0; t < a.rows; ++t) {
    std::vector<double> va(a.row(t), a.row(t) + a.cols);
    std::vector<double> vb(b.row(t), b.row(t) + b.cols);
    sum += cosine(va, vb);
  }
  return sum / static_cast<double>(a.rows);
}

// one-PHI-token-replaced variant; nullopt when the sentence has no
// replaceable PHI token
std::optional<corpus::Sentence> replaced_variant(const corpus::Sentence& s,
                                                 const embed::EmbeddingStore& store,
                                                 size_t neighbors, Rng& rng) {
  std::vector<size_t> positions;
  for (size_t t = 0; t < s.tokens.size(); ++t) {
    if (s.labels[t].is_phi() && store.row_of_with_fallback(s.tokens[t].text)) positions.push_back(t);
  }
  if (positions.empty()) return std::nullopt;
  corpus::Sentence out = s;
  const size_t pos = positions[rng.below(positions.size())];
  const auto nl = store.nearest_neighbors(out.tokens[pos].text, neighbors);
  const size_t pick = 1 + rng.below(nl.neighbors.size() - 1);
  out.tokens[pos].text = nl.neighbors[pick].token;
  out.tokens[pos].casing = corpus::casing_of(out.tokens[pos].text);
  return out;
}

}  // namespace

std::string AttackReport::to_json() const {
  return cat("{\"kind\":\"", kind, "\",\"representation\":\"", representation,
             "\",\"epochs\":", epochs, ",\"train_accuracy\":", train_accuracy,
             ",\"test_accuracy\":", test_accuracy, ",\"chance\":", chance,
             ",\"margin\":", margin, ",\"train_pairs\":", train_pairs,
             ",\"test_pairs\":", test_pairs, "}");
}

std::string AttackReport::to_text() const {
  return cat("attack.kind ", kind, "\nattack.representation ", representation,
             "\nattack.epochs ", epochs, "\nattack.train_accuracy ", train_accuracy,
             "\nattack.test_accuracy ", test_accuracy, "\nattack.chance ", chance,
             "\nattack.margin ", margin, "\nattack.train_pairs ", train_pairs,
             "\nattack.test_pairs ", test_pairs, "\n");
}

AttackReport continued_adversary_attack(const models::Representer& repr,
                                        const std::vector<corpus::Sentence>& sentences,
                                        const embed::EmbeddingStore& store,
                                        const AttackConfig& config) {
  const uint64_t checksum_before = repr.checksum();

  // held-out split at the sentence level
  std::vector<size_t> idx(sentences.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng split_rng(derive_seed(config.seed, 0xa77acULL));
  split_rng.shuffle(idx);
  const size_t n_test = std::max<size_t>(1, static_cast<size_t>(config.test_fraction *
                                                                static_cast<double>(idx.size())));
  std::vector<corpus::Sentence> test_sentences, train_sentences;
  for (size_t i = 0; i < idx.size(); ++i) {
    (i < n_test ? test_sentences : train_sentences).push_back(sentences[idx[i]]);
  }

  std::vector<FixedPair> train_pairs, test_pairs;
  for (int round = 0; round < std::max(1, config.pair_rounds); ++round) {
    const auto r = static_cast<uint64_t>(round);
    for (auto& fp : materialize_pairs(
             repr,
             pseudo::make_pairs(train_sentences, store, config.neighbors,
                                derive_seed(config.seed, 0x7e57ULL, r), config.fake_fraction),
             store, derive_seed(config.seed, 0x111ULL, r))) {
      train_pairs.push_back(std::move(fp));
    }
    for (auto& fp : materialize_pairs(
             repr,
             pseudo::make_pairs(test_sentences, store, config.neighbors,
                                derive_seed(config.seed, 0x7e58ULL, r), config.fake_fraction),
             store, derive_seed(config.seed, 0x222ULL, r))) {
      test_pairs.push_back(std::move(fp));
    }
  }

  AdversaryModel adv(repr.output_dim(), store.dim(), config.adv_units,
                     derive_seed(config.seed, 0xf4e5bULL));
  nn::OptimConfig oc;
  oc.lr = config.lr;
  oc.clip_norm = config.clip_norm;
  nn::Nadam opt({&adv.params()}, oc);

  Rng order_rng(derive_seed(config.seed, 0x0d4eULL));
  std::vector<size_t> order(train_pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.extra_epochs; ++epoch) {
    order_rng.shuffle(order);
    const auto bs = static_cast<size_t>(config.batch_size);
    for (size_t b = 0; b < order.size(); b += bs) {
      const size_t e = std::min(order.size(), b + bs);
      const double scale = 1.0 / static_cast<double>(e - b);
      adv.params().zero_grad();
      for (size_t k = b; k < e; ++k) {
        const FixedPair& p = train_pairs[order[k]];
        AdversaryModel::Cache cache;
        const double score = adv.score(p.repr_a, p.emb_b, p.repr_b, config.head, &cache);
        double d_score = 0;
        models::adversary_loss(score, p.same, &d_score);
        adv.backward(cache, d_score * scale, nullptr, nullptr, nullptr);
      }
      opt.step();
    }
  }

  if (repr.checksum() != checksum_before) {
    throw std::logic_error("continued_adversary_attack: representation changed under attack");
  }

  AttackReport report;
  report.kind = models::to_string(config.head);
  report.representation = repr.name();
  report.epochs = config.extra_epochs;
  report.train_accuracy = accuracy_on(adv, train_pairs, config.head);
  report.test_accuracy = accuracy_on(adv, test_pairs, config.head);
  report.margin = report.test_accuracy - report.chance;
  report.train_pairs = train_pairs.size();
  report.test_pairs = test_pairs.size();
  return report;
}

double lookup_probe(const models::Representer& repr,
                    const std::vector<corpus::Sentence>& sentences,
                    const embed::EmbeddingStore& store, size_t repeats, uint64_t seed,
                    size_t neighbors) {
  if (repeats < 2) throw std::invalid_argument("lookup_probe: repeats must be >= 2");
  Rng rng(derive_seed(seed, 0x100cabULL));
  double ratio_sum = 0;
  size_t used = 0;
  for (size_t si = 0; si < sentences.size(); ++si) {
    const corpus::Sentence& s = sentences[si];
    auto variant = replaced_variant(s, store, neighbors, rng);
    if (!variant) continue;

    const Matrix emb_self = models::embedding_sequence(s, store);
    const Matrix emb_var = models::embedding_sequence(*variant, store);
    std::vector<std::vector<double>> self_pool, var_pool;
    for (size_t r = 0; r < repeats; ++r) {
      self_pool.push_back(mean_pooled(repr.transform(emb_self, derive_seed(seed, si, 2 * r))));
      var_pool.push_back(mean_pooled(repr.transform(emb_var, derive_seed(seed, si, 2 * r + 1))));
    }
    double self_dist = 0;
    size_t self_n = 0;
    for (size_t i = 0; i < repeats; ++i) {
      for (size_t j = i + 1; j < repeats; ++j) {
        self_dist += 1.0 - cosine(self_pool[i], self_pool[j]);
        ++self_n;
      }
    }
    double cross_dist = 0;
    size_t cross_n = 0;
    for (size_t i = 0; i < repeats; ++i) {
      for (size_t j = 0; j < repeats; ++j) {
        cross_dist += 1.0 - cosine(self_pool[i], var_pool[j]);
        ++cross_n;
      }
    }
    self_dist /= static_cast<double>(self_n);
    cross_dist /= static_cast<double>(cross_n);
    ratio_sum += cross_dist < 1e-12 ? (self_dist < 1e-12 ? 1.0 : 0.0) : self_dist / cross_dist;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("lookup_probe: no sentence has a PHI token");
  return ratio_sum / static_cast<double>(used);
}

InvarianceReport neighborhood_invariance_report(const models::Representer& repr,
                                                const std::vector<corpus::Sentence>& sentences,
                                                const embed::EmbeddingStore& store,
                                                size_t neighbors, size_t samples, uint64_t seed) {
  if (neighbors < 2) throw std::invalid_argument("neighborhood_invariance_report: N must be >= 2");
  Rng rng(derive_seed(seed, 0x1284eULL));
  InvarianceReport report;
  std::vector<std::vector<double>> pooled;

  size_t attempts = 0;
  while (report.samples < samples && attempts < samples * 20) {
    ++attempts;
    const corpus::Sentence& s = sentences[rng.below(sentences.size())];
    auto variant = replaced_variant(s, store, neighbors, rng);
    if (!variant) continue;
    const Matrix emb = models::embedding_sequence(s, store);
    const Matrix emb_var = models::embedding_sequence(*variant, store);
    const Matrix r1 = repr.transform(emb, rng.next());
    const Matrix r2 = repr.transform(emb, rng.next());
    const Matrix rv = repr.transform(emb_var, rng.next());
    const double neighbor_sim = mean_timestep_cosine(r1, rv);
    report.neighbor_similarity += neighbor_sim;
    report.min_neighbor_similarity = std::min(report.min_neighbor_similarity, neighbor_sim);
    report.self_similarity += mean_timestep_cosine(r1, r2);
    pooled.push_back(mean_pooled(r1));
    ++report.samples;
  }
  if (report.samples == 0) {
    throw std::invalid_argument("neighborhood_invariance_report: no PHI-bearing sentences");
  }
  report.neighbor_similarity /= static_cast<double>(report.samples);
  report.self_similarity /= static_cast<double>(report.samples);

  // unrelated baseline: cosine between pooled representations of shuffled pairs
  double cross = 0;
  size_t n = 0;
  for (size_t i = 0; i + 1 < pooled.size(); i += 2) {
    cross += cosine(pooled[i], pooled[i + 1]);
    ++n;
  }
  report.cross_similarity = n == 0 ? 0.0 : cross / static_cast<double>(n);
  return report;
}

}  // namespace deid::privacy
