#include "deid/train.hpp"

#include <algorithm>
#include <cmath>

#include "deid/nn/optim.hpp"
#include "deid/util.hpp"

namespace deid::train {

using corpus::Sentence;
using models::AdversaryModel;
using models::Matrix;
using models::RepresentationModel;
using models::TaggerModel;
using nn::Nadam;

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Tagger: return "tagger";
    case Phase::Dann: return "dann";
    case Phase::P1: return "p1";
    case Phase::P2: return "p2";
    case Phase::P3a: return "p3a";
    case Phase::P3b: return "p3b";
  }
  return "?";
}

std::string to_jsonl(const LossRecord& r) {
  return cat("{\"epoch\":", r.epoch, ",\"phase\":\"", to_string(r.phase), "\",\"l_deid\":",
             r.l_deid, ",\"l_adv\":", r.l_adv, ",\"l_repr\":", r.l_repr, ",\"val_l_deid\":",
             r.val_l_deid, ",\"val_l_adv\":", r.val_l_adv, ",\"val_l_repr\":", r.val_l_repr,
             ",\"val_adv_accuracy\":", r.val_adv_accuracy, "}");
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double val_fraction,
                                                                  uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5b117ULL));
  rng.shuffle(idx);
  size_t n_val = static_cast<size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (n_val == 0 && n > 1) n_val = 1;
  std::vector<size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  return {tr, val};
}

namespace {

struct Example {
  Matrix embeddings;  // T x emb_dim
  std::vector<int> labels;
  const Sentence* sentence;
};

std::vector<Example> make_examples(const std::vector<Sentence>& sentences,
                                   const embed::EmbeddingStore& store) {
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const Sentence& s : sentences) {
    if (s.labels.size() != s.tokens.size()) {
      throw TrainError("training sentences must carry labels");
    }
    out.push_back({models::embedding_sequence(s, store), models::label_indices(s), &s});
  }
  return out;
}

void require_finite(double loss, const char* where, int epoch) {
  if (!std::isfinite(loss)) {
    throw TrainError(cat("training diverged (non-finite loss) in ", where, " at epoch ", epoch));
  }
}

// pair tensors shared by dann/three-phase/attack paths
struct PairInputs {
  Matrix emb_a, emb_b;
  bool same = true;
};

PairInputs pair_inputs(const pseudo::AdversaryPair& pair, const embed::EmbeddingStore& store) {
  return {models::embedding_sequence(pair.a, store), models::embedding_sequence(pair.b, store),
          pair.label == pseudo::PairLabel::SameSentence};
}

// adversary loss/score on one pair through a trainable representation;
// returns the loss and (optionally) backprops d(loss)/d(score) with the given
// scale through the adversary into the representation (reversal_sign applied
// to the representation branch only).
struct PairStep {
  double loss = 0;
  double score = 0.5;
};

PairStep run_pair(RepresentationModel& repr, AdversaryModel& adv, const PairInputs& in,
                  AdversaryModel::Head head, uint64_t noise_seed, bool backward, double scale,
                  double reversal_sign) {
  RepresentationModel::Cache cache_a, cache_b;
  const Matrix repr_a =
      repr.transform(in.emb_a, derive_seed(noise_seed, 0xa), true, backward ? &cache_a : nullptr);
  const Matrix repr_b =
      repr.transform(in.emb_b, derive_seed(noise_seed, 0xb), true, backward ? &cache_b : nullptr);
  AdversaryModel::Cache cache;
  const double score = adv.score(repr_a, in.emb_b, repr_b, head, &cache);
  double d_score = 0;
  const double loss = models::adversary_loss(score, in.same, &d_score);
  if (backward) {
    Matrix d_ra, d_eb, d_rb;
    adv.backward(cache, d_score * scale, &d_ra, &d_eb, &d_rb);
    for (double& g : d_ra.a) g *= reversal_sign;
    for (double& g : d_rb.a) g *= reversal_sign;
    repr.backward(cache_a, d_ra);
    repr.backward(cache_b, d_rb);
  }
  return {loss, score};
}

// frozen-representation variant: transforms without caches, no repr gradient
PairStep run_pair_frozen(const models::Representer& repr, AdversaryModel& adv,
                         const PairInputs& in, AdversaryModel::Head head, uint64_t noise_seed,
                         bool backward, double scale) {
  const Matrix repr_a = repr.transform(in.emb_a, derive_seed(noise_seed, 0xa));
  const Matrix repr_b = repr.transform(in.emb_b, derive_seed(noise_seed, 0xb));
  AdversaryModel::Cache cache;
  const double score = adv.score(repr_a, in.emb_b, repr_b, head, &cache);
  double d_score = 0;
  const double loss = models::adversary_loss(score, in.same, &d_score);
  if (backward) adv.backward(cache, d_score * scale, nullptr, nullptr, nullptr);
  return {loss, score};
}

struct PairEval {
  double mean_loss = 0;
  double accuracy = 0;
};

PairEval evaluate_pairs_frozen(const models::Representer& repr, AdversaryModel& adv,
                               const std::vector<PairInputs>& pairs, AdversaryModel::Head head,
                               uint64_t seed) {
  PairEval ev;
  if (pairs.empty()) return ev;
  size_t correct = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const PairStep st =
        run_pair_frozen(repr, adv, pairs[i], head, derive_seed(seed, i), false, 0.0);
    ev.mean_loss += st.loss;
    if ((st.score > 0.5) == pairs[i].same) ++correct;
  }
  ev.mean_loss /= static_cast<double>(pairs.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  return ev;
}

}  // namespace

// --- tagger ---------------------------------------------------------------------

TaggerTrainResult train_tagger(const std::vector<Sentence>& sentences,
                               const embed::EmbeddingStore& store, const TrainConfig& config,
                               const models::Representer* frozen_repr) {
  if (sentences.empty()) throw TrainError("train_tagger: empty corpus");
  auto examples = make_examples(sentences, store);
  auto [train_idx, val_idx] = split_indices(examples.size(), config.val_fraction, config.seed);
  if (train_idx.empty()) throw TrainError("train_tagger: empty training split");

  // features are fixed across epochs: raw embeddings, or one shared noise
  // draw per sentence when training on a frozen representation
  std::vector<Matrix> features(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    Matrix base = frozen_repr ? frozen_repr->transform(examples[i].embeddings,
                                                       derive_seed(config.seed, 0xf0a7, i))
                              : examples[i].embeddings;
    features[i] = models::append_casing(base, *examples[i].sentence);
  }
  const int feature_dim = features[0].cols;

  auto model = std::make_unique<TaggerModel>(feature_dim, config.tagger_config(),
                                             derive_seed(config.seed, 0x7a9ULL));
  Nadam opt({&model->params()}, config.optim_config());

  TaggerTrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snapshot = model->params().snapshot();
  int bad_epochs = 0;

  Rng order_rng(derive_seed(config.seed, 0x0d3aULL));
  for (int epoch = 0; epoch < config.tagger_max_epochs; ++epoch) {
    std::vector<size_t> order = train_idx;
    order_rng.shuffle(order);

    double train_loss = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(config.batch_size)) {
      const size_t e = std::min(order.size(), b + static_cast<size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(e - b);
      model->params().zero_grad();
      for (size_t k = b; k < e; ++k) {
        const size_t i = order[k];
        train_loss += model->loss_grad(features[i], examples[i].labels, true,
                                       derive_seed(config.seed, static_cast<uint64_t>(epoch), i),
                                       scale, nullptr);
      }
      opt.step();
    }
    train_loss /= static_cast<double>(order.size());
    require_finite(train_loss, "train_tagger", epoch);

    double val_loss = 0;
    for (size_t i : val_idx) val_loss += model->loss(features[i], examples[i].labels, false, 0);
    val_loss /= std::max<double>(1.0, static_cast<double>(val_idx.size()));

    LossRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::Tagger;
    rec.l_deid = train_loss;
    rec.val_l_deid = val_loss;
    rec.tagger_checksum = model->params().checksum();
    result.log.push_back(rec);

    if (val_loss < best_val - 1e-9) {
      best_val = val_loss;
      best_snapshot = model->params().snapshot();
      bad_epochs = 0;
    } else if (++bad_epochs > config.tagger_patience) {
      break;
    }
  }
  model->params().restore(best_snapshot);
  result.best_val_loss = best_val;
  result.model = std::move(model);
  return result;
}

// --- DANN -----------------------------------------------------------------------

AdversarialResult dann_train(const std::vector<Sentence>& sentences,
                             const embed::EmbeddingStore& store, const TrainConfig& config) {
  if (sentences.empty()) throw TrainError("dann_train: empty corpus");
  auto examples = make_examples(sentences, store);
  auto [train_idx, val_idx] = split_indices(examples.size(), config.val_fraction, config.seed);

  AdversarialResult result;
  result.repr = std::make_unique<RepresentationModel>(store.dim(), config.repr_dim,
                                                      derive_seed(config.seed, 0x4e1ULL),
                                                      config.sigma_init);
  result.tagger = std::make_unique<TaggerModel>(config.repr_dim + corpus::kNumCasingCategories,
                                                config.tagger_config(),
                                                derive_seed(config.seed, 0x7a2ULL));
  result.adversary = std::make_unique<AdversaryModel>(config.repr_dim, store.dim(),
                                                      config.adv_units,
                                                      derive_seed(config.seed, 0xad3ULL));
  RepresentationModel& repr = *result.repr;
  TaggerModel& tagger = *result.tagger;
  AdversaryModel& adv = *result.adversary;

  Nadam opt({&repr.params(), &tagger.params(), &adv.params()}, config.optim_config());

  std::vector<Sentence> train_sentences, val_sentences;
  for (size_t i : train_idx) train_sentences.push_back(sentences[i]);
  for (size_t i : val_idx) val_sentences.push_back(sentences[i]);

  std::vector<PairInputs> val_pairs;
  for (const auto& p : pseudo::make_pairs(val_sentences, store, config.neighbors,
                                          derive_seed(config.seed, 0x7a1d5ULL),
                                          config.fake_fraction)) {
    val_pairs.push_back(pair_inputs(p, store));
  }

  Rng order_rng(derive_seed(config.seed, 0x0da22ULL));
  for (int epoch = 0; epoch < config.dann_epochs; ++epoch) {
    // fresh fake pairs every epoch
    std::vector<PairInputs> pairs;
    for (const auto& p :
         pseudo::make_pairs(train_sentences, store, config.neighbors,
                            derive_seed(config.seed, 0xfa12ULL, static_cast<uint64_t>(epoch)),
                            config.fake_fraction)) {
      pairs.push_back(pair_inputs(p, store));
    }

    std::vector<size_t> order = train_idx;
    order_rng.shuffle(order);
    std::vector<size_t> pair_order(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) pair_order[i] = i;
    order_rng.shuffle(pair_order);

    double l_deid_sum = 0, l_adv_sum = 0;
    const auto bs = static_cast<size_t>(config.batch_size);
    const size_t n_batches = (order.size() + bs - 1) / bs;
    for (size_t batch = 0; batch < n_batches; ++batch) {
      repr.params().zero_grad();
      tagger.params().zero_grad();
      adv.params().zero_grad();

      const size_t b = batch * bs;
      const size_t e = std::min(order.size(), b + bs);
      const double scale = 1.0 / static_cast<double>(e - b);
      for (size_t k = b; k < e; ++k) {
        const size_t i = order[k];
        const uint64_t noise_seed = derive_seed(config.seed, 0xd1a0 + static_cast<uint64_t>(epoch), i);
        RepresentationModel::Cache rcache;
        const Matrix r = repr.transform(examples[i].embeddings, noise_seed, true, &rcache);
        const Matrix feats = models::append_casing(r, *examples[i].sentence);
        Matrix d_feats;
        l_deid_sum += tagger.loss_grad(feats, examples[i].labels, true,
                                       derive_seed(config.seed, 0xd2b0, i), scale, &d_feats);
        Matrix d_repr, d_casing;
        nn::split_cols(d_feats, config.repr_dim, d_repr, d_casing);
        repr.backward(rcache, d_repr);
      }

      const size_t pb = batch * bs;
      const size_t pe = std::min(pair_order.size(), pb + bs);
      if (pb < pe) {
        const double pscale = 1.0 / static_cast<double>(pe - pb);
        for (size_t k = pb; k < pe; ++k) {
          const size_t i = pair_order[k];
          // gradient reversal: the representation sees the negated adversary
          // gradient, the adversary itself the true one
          const PairStep st = run_pair(repr, adv, pairs[i], AdversaryModel::Head::Both,
                                       derive_seed(config.seed, 0xab + static_cast<uint64_t>(epoch), i),
                                       true, pscale, -1.0);
          l_adv_sum += st.loss;
        }
      }
      opt.step();
    }

    LossRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::Dann;
    rec.l_deid = l_deid_sum / static_cast<double>(order.size());
    rec.l_adv = l_adv_sum / std::max<double>(1.0, static_cast<double>(pairs.size()));
    require_finite(rec.l_deid, "dann_train", epoch);
    require_finite(rec.l_adv, "dann_train", epoch);

    double val_deid = 0;
    for (size_t i : val_idx) {
      const Matrix r = repr.transform(examples[i].embeddings, derive_seed(config.seed, 0xe1, i), true);
      val_deid += tagger.loss(models::append_casing(r, *examples[i].sentence), examples[i].labels,
                              false, 0);
    }
    rec.val_l_deid = val_deid / std::max<double>(1.0, static_cast<double>(val_idx.size()));
    const models::ModelRepresenter view(repr);
    const PairEval ev = evaluate_pairs_frozen(view, adv, val_pairs, AdversaryModel::Head::Both,
                                              derive_seed(config.seed, 0xeaULL));
    rec.val_l_adv = ev.mean_loss;
    rec.val_adv_accuracy = ev.accuracy;
    rec.repr_checksum = repr.params().checksum();
    rec.tagger_checksum = tagger.params().checksum();
    rec.adversary_checksum = adv.params().checksum();
    result.log.push_back(rec);
  }
  return result;
}

// --- three-phase ------------------------------------------------------------------

namespace {

struct EpochStats {
  double l_deid = 0, l_adv = 0;
};

}  // namespace

AdversarialResult three_phase_train(const std::vector<Sentence>& sentences,
                                    const embed::EmbeddingStore& store,
                                    const TrainConfig& config) {
  if (sentences.empty()) throw TrainError("three_phase_train: empty corpus");
  auto examples = make_examples(sentences, store);
  auto [train_idx, val_idx] = split_indices(examples.size(), config.val_fraction, config.seed);

  AdversarialResult result;
  result.repr = std::make_unique<RepresentationModel>(store.dim(), config.repr_dim,
                                                      derive_seed(config.seed, 0x4e1ULL),
                                                      config.sigma_init);
  result.tagger = std::make_unique<TaggerModel>(config.repr_dim + corpus::kNumCasingCategories,
                                                config.tagger_config(),
                                                derive_seed(config.seed, 0x7a2ULL));
  result.adversary = std::make_unique<AdversaryModel>(config.repr_dim, store.dim(),
                                                      config.adv_units,
                                                      derive_seed(config.seed, 0xad3ULL));
  RepresentationModel& repr = *result.repr;
  TaggerModel& tagger = *result.tagger;
  AdversaryModel& adv = *result.adversary;

  std::vector<Sentence> train_sentences, val_sentences;
  for (size_t i : train_idx) train_sentences.push_back(sentences[i]);
  for (size_t i : val_idx) val_sentences.push_back(sentences[i]);

  std::vector<PairInputs> val_pairs;
  for (const auto& p : pseudo::make_pairs(val_sentences, store, config.neighbors,
                                          derive_seed(config.seed, 0x7a1d5ULL),
                                          config.fake_fraction)) {
    val_pairs.push_back(pair_inputs(p, store));
  }

  const auto bs = static_cast<size_t>(config.batch_size);
  Rng order_rng(derive_seed(config.seed, 0x0da23ULL));
  int global_epoch = 0;

  auto epoch_pairs = [&](int epoch) {
    std::vector<PairInputs> pairs;
    for (int round = 0; round < std::max(1, config.pair_rounds); ++round) {
      for (const auto& p : pseudo::make_pairs(
               train_sentences, store, config.neighbors,
               derive_seed(config.seed, 0xfa12ULL + static_cast<uint64_t>(round),
                           static_cast<uint64_t>(epoch)),
               config.fake_fraction)) {
        pairs.push_back(pair_inputs(p, store));
      }
    }
    return pairs;
  };

  auto val_deid_loss = [&]() {
    double val = 0;
    for (size_t i : val_idx) {
      const Matrix r = repr.transform(examples[i].embeddings, derive_seed(config.seed, 0xe1, i), true);
      val += tagger.loss(models::append_casing(r, *examples[i].sentence), examples[i].labels,
                         false, 0);
    }
    return val / std::max<double>(1.0, static_cast<double>(val_idx.size()));
  };

  auto fill_checksums = [&](LossRecord& rec) {
    rec.repr_checksum = repr.params().checksum();
    rec.tagger_checksum = tagger.params().checksum();
    rec.adversary_checksum = adv.params().checksum();
  };

  // one l_deid training epoch through the representation; when update_repr is
  // false the representation stays frozen (no backward into it)
  auto deid_epoch = [&](Nadam& opt, bool update_repr, int epoch) {
    std::vector<size_t> order = train_idx;
    order_rng.shuffle(order);
    double sum = 0;
    for (size_t b = 0; b < order.size(); b += bs) {
      const size_t e = std::min(order.size(), b + bs);
      const double scale = 1.0 / static_cast<double>(e - b);
      repr.params().zero_grad();
      tagger.params().zero_grad();
      adv.params().zero_grad();
      for (size_t k = b; k < e; ++k) {
        const size_t i = order[k];
        const uint64_t noise_seed = derive_seed(config.seed, 0xd1a0 + static_cast<uint64_t>(epoch), i);
        RepresentationModel::Cache rcache;
        const Matrix r = repr.transform(examples[i].embeddings, noise_seed, true,
                                        update_repr ? &rcache : nullptr);
        const Matrix feats = models::append_casing(r, *examples[i].sentence);
        Matrix d_feats;
        sum += tagger.loss_grad(feats, examples[i].labels, true,
                                derive_seed(config.seed, 0xd2b0, i), scale,
                                update_repr ? &d_feats : nullptr);
        if (update_repr) {
          Matrix d_repr, d_casing;
          nn::split_cols(d_feats, config.repr_dim, d_repr, d_casing);
          repr.backward(rcache, d_repr);
        }
      }
      opt.step();
    }
    return sum / static_cast<double>(order.size());
  };

  // one adversary training epoch against the frozen representation
  auto adv_epoch = [&](Nadam& opt, int epoch) {
    auto pairs = epoch_pairs(epoch);
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    const models::ModelRepresenter view(repr);
    double sum = 0;
    for (size_t b = 0; b < order.size(); b += bs) {
      const size_t e = std::min(order.size(), b + bs);
      const double scale = 1.0 / static_cast<double>(e - b);
      repr.params().zero_grad();
      tagger.params().zero_grad();
      adv.params().zero_grad();
      for (size_t k = b; k < e; ++k) {
        const size_t i = order[k];
        sum += run_pair_frozen(view, adv, pairs[i], AdversaryModel::Head::Both,
                               derive_seed(config.seed, 0xab01 + static_cast<uint64_t>(epoch), i),
                               true, scale)
                   .loss;
      }
      opt.step();
    }
    return sum / std::max<double>(1.0, static_cast<double>(pairs.size()));
  };

  // --- P1: pre-train representation + tagger on l_deid -------------------------
  {
    Nadam opt({&repr.params(), &tagger.params()}, config.optim_config());
    double best = std::numeric_limits<double>::infinity();
    auto best_repr = repr.params().snapshot();
    auto best_tagger = tagger.params().snapshot();
    int bad = 0;
    for (int epoch = 0; epoch < config.max_epochs_p1; ++epoch, ++global_epoch) {
      LossRecord rec;
      rec.epoch = global_epoch;
      rec.phase = Phase::P1;
      rec.l_deid = deid_epoch(opt, true, global_epoch);
      require_finite(rec.l_deid, "three_phase_train/P1", epoch);
      rec.val_l_deid = val_deid_loss();
      fill_checksums(rec);
      result.log.push_back(rec);
      if (rec.val_l_deid < best - 1e-9) {
        best = rec.val_l_deid;
        best_repr = repr.params().snapshot();
        best_tagger = tagger.params().snapshot();
        bad = 0;
      } else if (++bad > config.patience_p1) {
        break;
      }
    }
    repr.params().restore(best_repr);
    tagger.params().restore(best_tagger);
  }

  // --- P2: pre-train adversary on the frozen representation --------------------
  {
    Nadam opt({&adv.params()}, config.adv_optim_config());
    double best = std::numeric_limits<double>::infinity();
    auto best_adv = adv.params().snapshot();
    int bad = 0;
    for (int epoch = 0; epoch < config.max_epochs_p2; ++epoch, ++global_epoch) {
      LossRecord rec;
      rec.epoch = global_epoch;
      rec.phase = Phase::P2;
      rec.l_adv = adv_epoch(opt, global_epoch);
      require_finite(rec.l_adv, "three_phase_train/P2", epoch);
      const models::ModelRepresenter view(repr);
      const PairEval ev = evaluate_pairs_frozen(view, adv, val_pairs, AdversaryModel::Head::Both,
                                                derive_seed(config.seed, 0xeaULL));
      rec.val_l_adv = ev.mean_loss;
      rec.val_adv_accuracy = ev.accuracy;
      fill_checksums(rec);
      result.log.push_back(rec);
      if (rec.val_l_adv < best - 1e-9) {
        best = rec.val_l_adv;
        best_adv = adv.params().snapshot();
        bad = 0;
      } else if (++bad > config.patience_p2) {
        break;
      }
    }
    adv.params().restore(best_adv);

    const models::ModelRepresenter view(repr);
    const PairEval ev = evaluate_pairs_frozen(view, adv, val_pairs, AdversaryModel::Head::Both,
                                              derive_seed(config.seed, 0xeaULL));
    if (ev.accuracy < config.p2_min_accuracy) {
      throw TrainError(cat("three_phase_train: adversary failed to beat chance after P2 "
                           "(validation accuracy ",
                           ev.accuracy, " < ", config.p2_min_accuracy,
                           "); the adversarial game is not set up correctly"));
    }
  }

  // --- P3: alternate (a) tagger+adversary and (b) representation ----------------
  {
    Nadam opt_tagger({&tagger.params()}, config.optim_config());
    Nadam opt_adv({&adv.params()}, config.adv_optim_config());
    Nadam opt_b({&repr.params()}, config.optim_config());
    double best = std::numeric_limits<double>::infinity();
    auto best_repr = repr.params().snapshot();
    int bad = 0;

    for (int round = 0; round < config.max_epochs_p3; ++round) {
      // (a) representation frozen; tagger and adversary train on their losses
      {
        LossRecord rec;
        rec.epoch = global_epoch;
        rec.phase = Phase::P3a;
        rec.l_deid = deid_epoch(opt_tagger, false, global_epoch);
        rec.l_adv = adv_epoch(opt_adv, global_epoch);
        require_finite(rec.l_deid, "three_phase_train/P3a", global_epoch);
        require_finite(rec.l_adv, "three_phase_train/P3a", global_epoch);
        rec.val_l_deid = val_deid_loss();
        const models::ModelRepresenter view(repr);
        const PairEval ev = evaluate_pairs_frozen(view, adv, val_pairs,
                                                  AdversaryModel::Head::Both,
                                                  derive_seed(config.seed, 0xeaULL));
        rec.val_l_adv = ev.mean_loss;
        rec.val_adv_accuracy = ev.accuracy;
        fill_checksums(rec);
        result.log.push_back(rec);
        ++global_epoch;
      }

      // (b) tagger and adversary frozen; representation trains on the
      // combined loss l_repr = l_deid + lambda * |l_adv - l_random|
      {
        auto pairs = epoch_pairs(global_epoch);
        std::vector<size_t> order = train_idx;
        order_rng.shuffle(order);
        std::vector<size_t> pair_order(pairs.size());
        for (size_t i = 0; i < pairs.size(); ++i) pair_order[i] = i;
        order_rng.shuffle(pair_order);

        double deid_sum = 0, adv_sum = 0;
        const size_t n_batches = (order.size() + bs - 1) / bs;
        for (size_t batch = 0; batch < n_batches; ++batch) {
          repr.params().zero_grad();
          tagger.params().zero_grad();
          adv.params().zero_grad();

          const size_t b = batch * bs;
          const size_t e = std::min(order.size(), b + bs);
          const double scale = 1.0 / static_cast<double>(e - b);
          for (size_t k = b; k < e; ++k) {
            const size_t i = order[k];
            RepresentationModel::Cache rcache;
            const Matrix r = repr.transform(
                examples[i].embeddings,
                derive_seed(config.seed, 0xd1a0 + static_cast<uint64_t>(global_epoch), i), true,
                &rcache);
            const Matrix feats = models::append_casing(r, *examples[i].sentence);
            Matrix d_feats;
            deid_sum += tagger.loss_grad(feats, examples[i].labels, true,
                                         derive_seed(config.seed, 0xd2b0, i), scale, &d_feats);
            Matrix d_repr, d_casing;
            nn::split_cols(d_feats, config.repr_dim, d_repr, d_casing);
            repr.backward(rcache, d_repr);
          }

          // |l_adv - l_random| needs the batch-mean adversary loss before the
          // sign is known: forward all pairs with caches, then backprop
          const size_t pb = batch * bs;
          const size_t pe = std::min(pair_order.size(), pb + bs);
          if (pb < pe) {
            struct Held {
              RepresentationModel::Cache ca, cb;
              AdversaryModel::Cache ac;
              double d_score = 0;
            };
            std::vector<Held> held(pe - pb);
            double batch_adv = 0;
            for (size_t k = pb; k < pe; ++k) {
              const size_t i = pair_order[k];
              Held& h = held[k - pb];
              const uint64_t ns =
                  derive_seed(config.seed, 0xab02 + static_cast<uint64_t>(global_epoch), i);
              const Matrix repr_a =
                  repr.transform(pairs[i].emb_a, derive_seed(ns, 0xa), true, &h.ca);
              const Matrix repr_b =
                  repr.transform(pairs[i].emb_b, derive_seed(ns, 0xb), true, &h.cb);
              const double score = adv.score(repr_a, pairs[i].emb_b, repr_b,
                                             AdversaryModel::Head::Both, &h.ac);
              batch_adv += models::adversary_loss(score, pairs[i].same, &h.d_score);
            }
            const double pscale = 1.0 / static_cast<double>(pe - pb);
            batch_adv *= pscale;
            adv_sum += batch_adv * static_cast<double>(pe - pb);
            const double sign = batch_adv >= models::kRandomGuessLoss ? 1.0 : -1.0;
            for (Held& h : held) {
              Matrix d_ra, d_eb, d_rb;
              adv.backward(h.ac, h.d_score * pscale * config.lambda * sign, &d_ra, &d_eb, &d_rb);
              repr.backward(h.ca, d_ra);
              repr.backward(h.cb, d_rb);
            }
          }
          opt_b.step();
        }

        LossRecord rec;
        rec.epoch = global_epoch;
        rec.phase = Phase::P3b;
        rec.l_deid = deid_sum / static_cast<double>(order.size());
        rec.l_adv = adv_sum / std::max<double>(1.0, static_cast<double>(pairs.size()));
        rec.l_repr = rec.l_deid + config.lambda * std::abs(rec.l_adv - models::kRandomGuessLoss);
        require_finite(rec.l_repr, "three_phase_train/P3b", global_epoch);
        rec.val_l_deid = val_deid_loss();
        const models::ModelRepresenter view(repr);
        const PairEval ev = evaluate_pairs_frozen(view, adv, val_pairs,
                                                  AdversaryModel::Head::Both,
                                                  derive_seed(config.seed, 0xeaULL));
        rec.val_l_adv = ev.mean_loss;
        rec.val_adv_accuracy = ev.accuracy;
        rec.val_l_repr =
            rec.val_l_deid + config.lambda * std::abs(rec.val_l_adv - models::kRandomGuessLoss);
        fill_checksums(rec);
        result.log.push_back(rec);
        ++global_epoch;

        // early stopping uses only the combined validation loss from (b)
        if (rec.val_l_repr < best - 1e-9) {
          best = rec.val_l_repr;
          best_repr = repr.params().snapshot();
          bad = 0;
        } else if (++bad > config.patience_p3) {
          break;
        }
      }
    }
    repr.params().restore(best_repr);
  }
  return result;
}

// --- evaluation -------------------------------------------------------------------

std::vector<Sentence> predict_labels(const TaggerModel& tagger,
                                     const std::vector<Sentence>& sentences,
                                     const embed::EmbeddingStore& store,
                                     const models::Representer* repr, uint64_t seed) {
  std::vector<Sentence> out = sentences;
  for (size_t i = 0; i < out.size(); ++i) {
    Matrix base = models::embedding_sequence(out[i], store);
    if (repr) base = repr->transform(base, derive_seed(seed, 0x94ed, i));
    const std::vector<int> pred = tagger.predict(models::append_casing(base, out[i]));
    out[i].labels.resize(out[i].tokens.size());
    for (size_t t = 0; t < pred.size(); ++t) {
      out[i].labels[t] = models::LabelMap::label_of(pred[t]);
    }
  }
  return out;
}

metrics::EvalReport evaluate_tagger(const TaggerModel& tagger,
                                    const std::vector<Sentence>& sentences,
                                    const embed::EmbeddingStore& store,
                                    const models::Representer* repr, uint64_t seed) {
  return metrics::binary_hipaa_f1(sentences, predict_labels(tagger, sentences, store, repr, seed));
}

}  // namespace deid::train
