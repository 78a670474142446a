// scratch experiment harness (not part of the deliverable)
#include <chrono>
#include <cstring>
#include <iostream>

#include "deid/corpus.hpp"
#include "deid/embed.hpp"
#include "deid/nn/layers.hpp"
#include "deid/privacy.hpp"
#include "deid/train.hpp"
#include "deid/util.hpp"

using namespace deid;
using Clock = std::chrono::steady_clock;

static double secs(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

struct Data {
  embed::EmbeddingStore store;
  std::vector<corpus::Sentence> train, test;
};

static Data load_data(size_t docs, double density, uint64_t seed, int dim, double spread) {
  auto all_docs = corpus::generate_synthetic(seed, docs, density);
  embed::ClusterGeometry geom;
  geom.token_spread = spread;
  Data d{embed::make_clustered_store(corpus::synthetic_vocab_groups(), dim, 11, geom), {}, {}};
  const size_t n_train = docs * 4 / 5;
  for (size_t i = 0; i < all_docs.size(); ++i) {
    auto sents = corpus::sentences_of(all_docs[i]);
    auto& dst = i < n_train ? d.train : d.test;
    dst.insert(dst.end(), sents.begin(), sents.end());
  }
  return d;
}

int main(int argc, char** argv) {
  std::string mode = argc > 1 ? argv[1] : "tagger";
  train::TrainConfig cfg;
  cfg.units = 24;
  cfg.layers = 1;
  cfg.adv_units = 24;
  cfg.seed = 1;
  cfg.repr_dim = 50;
  cfg.neighbors = 50;
  size_t docs = 200;
  double density = 0.18;
  int dim = 32;
  double spread = 0.25;
  for (int i = 2; i + 1 < argc; i += 2) {
    const std::string k = argv[i];
    const std::string v = argv[i + 1];
    if (k == "--units") cfg.units = std::stoi(v);
    if (k == "--adv-units") cfg.adv_units = std::stoi(v);
    if (k == "--layers") cfg.layers = std::stoi(v);
    if (k == "--seed") cfg.seed = std::stoull(v);
    if (k == "--docs") docs = std::stoul(v);
    if (k == "--density") density = std::stod(v);
    if (k == "--neighbors") cfg.neighbors = std::stoul(v);
    if (k == "--lr") cfg.lr = std::stod(v);
    if (k == "--epochs") cfg.tagger_max_epochs = std::stoi(v);
    if (k == "--dann-epochs") cfg.dann_epochs = std::stoi(v);
    if (k == "--sigma") cfg.sigma_init = std::stod(v);
    if (k == "--p3") cfg.max_epochs_p3 = std::stoi(v);
    if (k == "--patience3") cfg.patience_p3 = std::stoi(v);
    if (k == "--lambda") cfg.lambda = std::stod(v);
    if (k == "--adv-lr") cfg.adv_lr = std::stod(v);
    if (k == "--rounds") cfg.pair_rounds = std::stoi(v);
    if (k == "--dim") dim = std::stoi(v);
    if (k == "--spread") spread = std::stod(v);
  }

  auto t0 = Clock::now();
  Data d = load_data(docs, density, 7, dim, spread);
  std::cout << "data: " << d.train.size() << " train sentences, " << d.test.size()
            << " test sentences, vocab " << d.store.size() << " (" << secs(t0, Clock::now())
            << "s)\n";

  if (mode == "tagger") {
    auto t1 = Clock::now();
    auto result = train::train_tagger(d.train, d.store, cfg);
    auto t2 = Clock::now();
    const auto report = train::evaluate_tagger(*result.model, d.test, d.store);
    std::cout << "epochs " << result.log.size() << "  time " << secs(t1, t2) << "s  per-epoch "
              << secs(t1, t2) / result.log.size() << "s\n";
    std::cout << "test F1 " << report.f1 << "  P " << report.precision << "  R " << report.recall
              << "\n";
    const auto train_report = train::evaluate_tagger(*result.model, d.train, d.store);
    std::cout << "train F1 " << train_report.f1 << "\n";
  } else if (mode == "pseudo") {
    auto raw = train::train_tagger(d.train, d.store, cfg);
    const double raw_f1 = train::evaluate_tagger(*raw.model, d.test, d.store).f1;
    std::cout << "raw F1 " << raw_f1 << "\n";
    for (size_t n : {1ul, 20ul, 100ul, d.store.size()}) {
      auto t1 = Clock::now();
      auto pseudo_corpus = pseudo::pseudonymize_corpus(d.train, d.store, {n, cfg.seed});
      auto trained = train::train_tagger(pseudo_corpus.sentences, d.store, cfg);
      const double f1 = train::evaluate_tagger(*trained.model, d.test, d.store).f1;
      std::cout << "N=" << n << "  F1 " << f1 << "  (delta " << raw_f1 - f1 << ", epochs "
                << trained.log.size() << ", " << secs(t1, Clock::now()) << "s)\n";
    }
  } else if (mode == "identity") {
    models::IdentityRepresenter identity(d.store.dim());
    privacy::AttackConfig ac;
    ac.seed = cfg.seed;
    ac.neighbors = cfg.neighbors;
    ac.adv_units = cfg.adv_units;
    ac.extra_epochs = cfg.tagger_max_epochs;
    ac.lr = cfg.lr;
    ac.pair_rounds = cfg.pair_rounds;
    std::vector<corpus::Sentence> both = d.train;
    both.insert(both.end(), d.test.begin(), d.test.end());
    for (auto head : {models::AdversaryModel::Head::A2, models::AdversaryModel::Head::Both}) {
      ac.head = head;
      auto t1 = Clock::now();
      const auto report = privacy::continued_adversary_attack(identity, both, d.store, ac);
      std::cout << "identity attack head=" << models::to_string(head) << " train "
                << report.train_accuracy << " test " << report.test_accuracy << "  ("
                << secs(t1, Clock::now()) << "s, " << report.train_pairs << "/"
                << report.test_pairs << " pairs)\n";
    }
  } else if (mode == "noise") {
    models::NoiseRepresenter noise(cfg.repr_dim);
    privacy::AttackConfig ac;
    ac.seed = cfg.seed;
    ac.neighbors = cfg.neighbors;
    ac.extra_epochs = 20;
    const auto report = privacy::continued_adversary_attack(noise, d.test, d.store, ac);
    std::cout << "noise attack train " << report.train_accuracy << " test "
              << report.test_accuracy << "\n";
  } else if (mode == "threephase") {
    auto t1 = Clock::now();
    auto result = train::three_phase_train(d.train, d.store, cfg);
    auto t2 = Clock::now();
    std::cout << "three-phase epochs " << result.log.size() << " time " << secs(t1, t2) << "s\n";
    for (const auto& rec : result.log) {
      if (rec.phase == train::Phase::P2 || rec.phase == train::Phase::P3b) {
        std::cout << "  " << to_string(rec.phase) << " e" << rec.epoch << " l_deid " << rec.l_deid
                  << " l_adv " << rec.l_adv << " val_l_repr " << rec.val_l_repr << " val_acc "
                  << rec.val_adv_accuracy << "\n";
      }
    }
    std::cout << "sigma_out[0..3]: ";
    auto s = result.repr->sigma_out();
    for (int i = 0; i < 4; ++i) std::cout << s[static_cast<size_t>(i)] << " ";
    std::cout << "\nsigma_in[0..3]: ";
    auto si = result.repr->sigma_in();
    for (int i = 0; i < 4; ++i) std::cout << si[static_cast<size_t>(i)] << " ";
    std::cout << "\n";

    models::ModelRepresenter view(*result.repr);
    privacy::AttackConfig ac;
    ac.seed = cfg.seed;
    ac.neighbors = cfg.neighbors;
    ac.extra_epochs = 50;
    ac.lr = 0.02;
    ac.adv_units = 24;
    std::vector<corpus::Sentence> both = d.train;
    both.insert(both.end(), d.test.begin(), d.test.end());
    for (auto head : {models::AdversaryModel::Head::A2, models::AdversaryModel::Head::Both}) {
      ac.head = head;
      const auto report = privacy::continued_adversary_attack(view, both, d.store, ac);
      std::cout << "attack head=" << models::to_string(head) << " train " << report.train_accuracy
                << " test " << report.test_accuracy << "\n";
    }

    auto t3 = Clock::now();
    auto tagger = train::train_tagger(d.train, d.store, cfg, &view);
    const double f1 = train::evaluate_tagger(*tagger.model, d.test, d.store, &view, 999).f1;
    std::cout << "repr-tagger F1 " << f1 << " (" << secs(t3, Clock::now()) << "s)\n";
    const double probe = privacy::lookup_probe(view, d.test, d.store, 4, 5, cfg.neighbors);
    std::cout << "lookup probe ratio " << probe << "\n";

    // what does a fresh attacker see: per-position cosines of pairs
    {
      auto pairs = pseudo::make_pairs(d.test, d.store, cfg.neighbors, 77, 0.5);
      double real_cos = 0, fake_rep_cos = 0, fake_other_cos = 0, repr_norm = 0;
      size_t nr = 0, nfr = 0, nfo = 0;
      for (size_t i = 0; i < pairs.size(); ++i) {
        const auto emb_a = models::embedding_sequence(pairs[i].a, d.store);
        const auto emb_b = models::embedding_sequence(pairs[i].b, d.store);
        const auto ra = view.transform(emb_a, 1000 + 2 * i);
        const auto rb = view.transform(emb_b, 1001 + 2 * i);
        int replaced = -1;
        for (size_t t = 0; t < pairs[i].a.tokens.size(); ++t) {
          if (pairs[i].a.tokens[t].text != pairs[i].b.tokens[t].text) replaced = (int)t;
        }
        const auto cosrow = nn::cosine_channel(ra, rb, nullptr);
        for (int t = 0; t < ra.rows; ++t) {
          double nn2 = 0;
          for (int j = 0; j < ra.cols; ++j) nn2 += ra.at(t, j) * ra.at(t, j);
          repr_norm += std::sqrt(nn2);
          if (replaced < 0) { real_cos += cosrow.at(t, 0); ++nr; }
          else if (t == replaced) { fake_rep_cos += cosrow.at(t, 0); ++nfr; }
          else { fake_other_cos += cosrow.at(t, 0); ++nfo; }
        }
      }
      std::cout << "pair stats: real cos " << real_cos / nr << "  fake@replaced "
                << fake_rep_cos / nfr << "  fake@other " << fake_other_cos / nfo
                << "  mean ||repr_t|| " << repr_norm / (nr + nfr + nfo) << "\n";
    }
  } else if (mode == "savethree") {
    auto result = train::three_phase_train(d.train, d.store, cfg);
    models::CheckpointMeta meta;
    meta.component = "representation";
    meta.repr_dim = cfg.repr_dim;
    meta.emb_dim = d.store.dim();
    meta.neighbors = static_cast<int>(cfg.neighbors);
    meta.sigma_init = cfg.sigma_init;
    meta.seed = derive_seed(cfg.seed, 0x4e1ULL);
    models::save_model_checkpoint("/tmp/three.ckpt", result.repr->params(), meta);
    std::cout << "saved; sigma_out[0] " << result.repr->sigma_out()[0] << "\n";
  } else if (mode == "attackckpt") {
    auto repr = models::load_representation_checkpoint("/tmp/three.ckpt");
    models::ModelRepresenter view(repr);
    std::vector<corpus::Sentence> both = d.train;
    both.insert(both.end(), d.test.begin(), d.test.end());
    privacy::AttackConfig ac;
    ac.seed = cfg.seed;
    ac.neighbors = cfg.neighbors;
    ac.extra_epochs = cfg.tagger_max_epochs;
    ac.lr = cfg.lr;
    ac.adv_units = cfg.adv_units;
    ac.pair_rounds = cfg.pair_rounds;
    for (auto head : {models::AdversaryModel::Head::A1, models::AdversaryModel::Head::A2,
                      models::AdversaryModel::Head::Both}) {
      ac.head = head;
      const auto report = privacy::continued_adversary_attack(view, both, d.store, ac);
      std::cout << "attack head=" << models::to_string(head) << " train " << report.train_accuracy
                << " test " << report.test_accuracy << "\n";
    }
  } else if (mode == "noisescan") {
    auto repr = models::load_representation_checkpoint("/tmp/three.ckpt");
    std::vector<corpus::Sentence> both = d.train;
    both.insert(both.end(), d.test.begin(), d.test.end());
    struct Overlay : models::Representer {
      const models::RepresentationModel* m;
      double extra;
      int output_dim() const override { return m->repr_dim(); }
      models::Matrix transform(const models::Matrix& emb, uint64_t seed) const override {
        auto r = m->transform(emb, seed, true);
        Rng rng(derive_seed(seed, 0xee));
        for (double& v : r.a) v += extra * rng.normal();
        return r;
      }
      uint64_t checksum() const override { return m->params().checksum(); }
      std::string name() const override { return "overlay"; }
    };
    for (double extra : {0.1, 0.2, 0.3, 0.45}) {
      Overlay ov;
      ov.m = &repr;
      ov.extra = extra;
      privacy::AttackConfig ac;
      ac.seed = cfg.seed;
      ac.neighbors = cfg.neighbors;
      ac.extra_epochs = 50;
      ac.lr = 0.02;
      ac.adv_units = 24;
      ac.pair_rounds = 4;
      ac.head = models::AdversaryModel::Head::A2;
      const auto report = privacy::continued_adversary_attack(ov, both, d.store, ac);
      auto tg = train::train_tagger(d.train, d.store, cfg, &ov);
      const double f1 = train::evaluate_tagger(*tg.model, d.test, d.store, &ov, 999).f1;
      std::cout << "extra " << extra << "  attack " << report.test_accuracy << " (train "
                << report.train_accuracy << ")  F1 " << f1 << "\n";
    }
  } else if (mode == "dann") {
    auto t1 = Clock::now();
    auto result = train::dann_train(d.train, d.store, cfg);
    std::cout << "dann time " << secs(t1, Clock::now()) << "s\n";
    for (const auto& rec : result.log) {
      std::cout << "  e" << rec.epoch << " l_deid " << rec.l_deid << " l_adv " << rec.l_adv
                << " val_acc " << rec.val_adv_accuracy << "\n";
    }
    models::ModelRepresenter view(*result.repr);
    privacy::AttackConfig ac;
    ac.seed = cfg.seed;
    ac.neighbors = cfg.neighbors;
    ac.extra_epochs = 20;
    const auto report = privacy::continued_adversary_attack(view, d.test, d.store, ac);
    std::cout << "dann attack train " << report.train_accuracy << " test "
              << report.test_accuracy << "\n";
    auto tagger = train::train_tagger(d.train, d.store, cfg, &view);
    std::cout << "dann repr-tagger F1 "
              << train::evaluate_tagger(*tagger.model, d.test, d.store, &view, 999).f1 << "\n";
  }
  return 0;
}
