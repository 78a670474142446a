#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "deid/models.hpp"
#include "deid/nn/gradcheck.hpp"
#include "deid/nn/optim.hpp"
#include "deid/util.hpp"

using namespace deid;
using namespace deid::corpus;
using namespace deid::models;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.a) v = scale * rng.normal();
  return m;
}

Sentence tiny_sentence() {
  Sentence s;
  s.tokens = {{"James", 0, 5, CasingCategory::INITIAL_UPPER},
              {"was", 6, 9, CasingCategory::ALL_LOWER},
              {"admitted", 10, 18, CasingCategory::ALL_LOWER}};
  s.labels = {BioLabel::begin(PhiCategory::PATIENT), BioLabel::outside(), BioLabel::outside()};
  return s;
}

}  // namespace

TEST_SUITE("models.labels") {
  TEST_CASE("index round trip covers the whole label space") {
    CHECK(LabelMap::count() == 25);
    for (int i = 0; i < LabelMap::count(); ++i) {
      CHECK(LabelMap::index_of(LabelMap::label_of(i)) == i);
    }
    CHECK(LabelMap::index_of(BioLabel::outside()) == 0);
  }

  TEST_CASE("casing one-hot has exactly one bit per token") {
    const Matrix m = casing_onehot(tiny_sentence());
    CHECK(m.rows == 3);
    CHECK(m.cols == kNumCasingCategories);
    for (int t = 0; t < m.rows; ++t) {
      double sum = 0;
      for (int j = 0; j < m.cols; ++j) sum += m.at(t, j);
      CHECK(sum == 1.0);
    }
    CHECK(m.at(0, static_cast<int>(CasingCategory::INITIAL_UPPER)) == 1.0);
  }
}

TEST_SUITE("models.tagger") {
  TEST_CASE("zeroed model on a single token: loss is log of the reachable label count") {
    TaggerConfig cfg{1, 4, 0.0, 0.0, 0.0};
    TaggerModel tagger(5 + kNumCasingCategories, cfg, 1);
    for (auto& p : tagger.params()) {
      // keep the BIO mask, zero everything else
      if (p.name != "tagger.crf.transitions") std::fill(p.value.begin(), p.value.end(), 0.0);
    }
    Matrix features(1, 5 + kNumCasingCategories);
    // start -> I-* is masked, so 13 labels are reachable (O + 12 B-)
    const double nll = tagger.loss(features, {0}, false, 0);
    CHECK(nll == doctest::Approx(std::log(13.0)).epsilon(1e-9));
  }

  TEST_CASE("predictions are always BIO-valid") {
    Rng rng(51);
    TaggerConfig cfg{1, 6, 0.0, 0.0, 0.0};
    TaggerModel tagger(4 + kNumCasingCategories, cfg, 77);
    for (int iter = 0; iter < 100; ++iter) {
      const int T = 1 + static_cast<int>(rng.below(8));
      const Matrix features = random_matrix(T, 4 + kNumCasingCategories, rng, 2.0);
      const auto pred = tagger.predict(features);
      for (size_t t = 0; t < pred.size(); ++t) {
        const BioLabel l = LabelMap::label_of(pred[t]);
        if (l.kind == BioLabel::Kind::I) {
          REQUIRE(t > 0);
          const BioLabel prev = LabelMap::label_of(pred[t - 1]);
          CHECK(prev.kind != BioLabel::Kind::O);
          CHECK(prev.category == l.category);
        }
      }
    }
  }

  TEST_CASE("full tagger gradient matches central differences") {
    Rng rng(52);
    TaggerConfig cfg{2, 3, 0.0, 0.0, 0.0};  // two stacked layers, dropout off
    TaggerModel tagger(3 + kNumCasingCategories, cfg, 5);
    const Matrix features = random_matrix(3, 3 + kNumCasingCategories, rng);
    const std::vector<int> labels{1, 2, 0};

    auto loss = [&] { return tagger.loss(features, labels, false, 0); };
    auto grad = [&] {
      tagger.params().zero_grad();
      return tagger.loss_grad(features, labels, false, 0, 1.0, nullptr);
    };
    const auto report = nn::finite_diff_check(tagger.params(), loss, grad, 1e-4);
    CHECK(report.pass);
  }

  TEST_CASE("dropout seeds make training-mode losses reproducible") {
    Rng rng(53);
    TaggerConfig cfg{1, 4, 0.2, 0.25, 0.3};
    TaggerModel tagger(4 + kNumCasingCategories, cfg, 6);
    const Matrix features = random_matrix(4, 4 + kNumCasingCategories, rng);
    const std::vector<int> labels{0, 1, 2, 0};
    const double a = tagger.loss(features, labels, true, 42);
    const double b = tagger.loss(features, labels, true, 42);
    const double c = tagger.loss(features, labels, true, 43);
    CHECK(a == b);
    CHECK(a != c);
  }

  TEST_CASE("overfits a single sentence in 50 steps") {
    Rng rng(54);
    TaggerConfig cfg{1, 8, 0.0, 0.0, 0.0};
    TaggerModel tagger(4 + kNumCasingCategories, cfg, 7);
    const Matrix features = random_matrix(3, 4 + kNumCasingCategories, rng);
    const std::vector<int> labels{LabelMap::index_of(BioLabel::begin(PhiCategory::PATIENT)),
                                  0, 0};
    nn::OptimConfig oc;
    oc.lr = 0.05;
    nn::Nadam opt({&tagger.params()}, oc);
    double first = 0, last = 0;
    for (int step = 0; step < 50; ++step) {
      tagger.params().zero_grad();
      const double l = tagger.loss_grad(features, labels, false, 0, 1.0, nullptr);
      if (step == 0) first = l;
      last = l;
      opt.step();
    }
    CHECK(last < first);
    CHECK(tagger.predict(features) == labels);
  }
}

TEST_SUITE("models.representation") {
  TEST_CASE("output shape is T x d") {
    RepresentationModel repr(6, 4, 1);
    Rng rng(55);
    const Matrix emb = random_matrix(5, 6, rng);
    const Matrix r = repr.transform(emb, 9, true);
    CHECK(r.rows == 5);
    CHECK(r.cols == 4);
  }

  TEST_CASE("fresh noise makes two transforms differ everywhere") {
    RepresentationModel repr(6, 4, 2);
    Rng rng(56);
    const Matrix emb = random_matrix(4, 6, rng);
    const Matrix a = repr.transform(emb, 1, true);
    const Matrix b = repr.transform(emb, 2, true);
    for (size_t i = 0; i < a.a.size(); ++i) CHECK(a.a[i] != b.a[i]);
  }

  TEST_CASE("no-noise mode is a deterministic function of the input") {
    RepresentationModel repr(6, 4, 3);
    Rng rng(57);
    const Matrix emb = random_matrix(4, 6, rng);
    const Matrix a = repr.transform(emb, 1, false);
    const Matrix b = repr.transform(emb, 999, false);
    for (size_t i = 0; i < a.a.size(); ++i) CHECK(a.a[i] == b.a[i]);
  }

  TEST_CASE("odd repr_dim is rejected") { CHECK_THROWS(RepresentationModel(6, 5, 1)); }

  TEST_CASE("gradient flows through the whole Eq-1 stack, including sigma") {
    RepresentationModel repr(3, 4, 4, 0.2);
    Rng rng(58);
    const Matrix emb = random_matrix(3, 3, rng);
    const Matrix w = random_matrix(3, 4, rng);

    auto weighted = [&](const Matrix& y) {
      double s = 0;
      for (size_t i = 0; i < y.a.size(); ++i) s += y.a[i] * w.a[i];
      return s;
    };
    auto loss = [&] { return weighted(repr.transform(emb, 1234, true)); };
    auto grad = [&] {
      repr.params().zero_grad();
      RepresentationModel::Cache cache;
      const Matrix y = repr.transform(emb, 1234, true, &cache);
      repr.backward(cache, w);
      return weighted(y);
    };
    const auto report = nn::finite_diff_check(repr.params(), loss, grad, 1e-4);
    CHECK(report.pass);
  }
}

TEST_SUITE("models.adversary") {
  TEST_CASE("zero-weight discriminators score exactly one half") {
    AdversaryModel adv(4, 6, 3, 1);
    for (auto& p : adv.params()) std::fill(p.value.begin(), p.value.end(), 0.0);
    Rng rng(59);
    const Matrix repr_a = random_matrix(3, 4, rng);
    const Matrix emb_b = random_matrix(3, 6, rng);
    const Matrix repr_b = random_matrix(3, 4, rng);
    CHECK(adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::Both) == 0.5);
    CHECK(adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::A1) == 0.5);
    CHECK(adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::A2) == 0.5);
  }

  TEST_CASE("scores stay inside the open unit interval") {
    AdversaryModel adv(4, 6, 3, 2);
    Rng rng(60);
    for (int iter = 0; iter < 30; ++iter) {
      const int T = 1 + static_cast<int>(rng.below(6));
      const double s = adv.score(random_matrix(T, 4, rng, 3.0), random_matrix(T, 6, rng, 3.0),
                                 random_matrix(T, 4, rng, 3.0), AdversaryModel::Head::Both);
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }

  TEST_CASE("length mismatch is rejected") {
    AdversaryModel adv(4, 6, 3, 3);
    Rng rng(61);
    CHECK_THROWS(adv.score(random_matrix(3, 4, rng), random_matrix(2, 6, rng),
                           random_matrix(3, 4, rng), AdversaryModel::Head::Both));
  }

  TEST_CASE("adversary gradient matches central differences") {
    AdversaryModel adv(3, 4, 3, 4);
    Rng rng(62);
    const Matrix repr_a = random_matrix(3, 3, rng);
    const Matrix emb_b = random_matrix(3, 4, rng);
    const Matrix repr_b = random_matrix(3, 3, rng);

    auto loss = [&] {
      return adversary_loss(adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::Both), true);
    };
    auto grad = [&] {
      adv.params().zero_grad();
      AdversaryModel::Cache cache;
      const double score = adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::Both, &cache);
      double d_score = 0;
      const double l = adversary_loss(score, true, &d_score);
      adv.backward(cache, d_score, nullptr, nullptr, nullptr);
      return l;
    };
    CHECK(nn::finite_diff_check(adv.params(), loss, grad, 1e-4).pass);
  }

  TEST_CASE("input gradients of the pair chain match central differences") {
    // end-to-end: repr params -> (repr_a, repr_b) -> adversary -> bce
    RepresentationModel repr(3, 4, 5, 0.15);
    AdversaryModel adv(4, 3, 3, 6);
    Rng rng(63);
    const Matrix emb_a = random_matrix(3, 3, rng);
    const Matrix emb_b = random_matrix(3, 3, rng);

    auto forward = [&](bool backward) {
      RepresentationModel::Cache ca, cb;
      const Matrix repr_a = repr.transform(emb_a, 111, true, backward ? &ca : nullptr);
      const Matrix repr_b = repr.transform(emb_b, 222, true, backward ? &cb : nullptr);
      AdversaryModel::Cache cache;
      const double score = adv.score(repr_a, emb_b, repr_b, AdversaryModel::Head::Both, &cache);
      double d_score = 0;
      const double l = adversary_loss(score, false, &d_score);
      if (backward) {
        Matrix d_ra, d_eb, d_rb;
        adv.backward(cache, d_score, &d_ra, &d_eb, &d_rb);
        repr.backward(ca, d_ra);
        repr.backward(cb, d_rb);
      }
      return l;
    };
    auto loss = [&] { return forward(false); };
    auto grad = [&] {
      repr.params().zero_grad();
      adv.params().zero_grad();
      return forward(true);
    };
    CHECK(nn::finite_diff_check(repr.params(), loss, grad, 1e-4).pass);
  }
}

TEST_SUITE("models.adversary_loss") {
  TEST_CASE("score one half gives exactly the random-guess loss") {
    CHECK(adversary_loss(0.5, true) == doctest::Approx(kRandomGuessLoss).epsilon(1e-15));
    CHECK(adversary_loss(0.5, false) == doctest::Approx(kRandomGuessLoss).epsilon(1e-15));
    CHECK(std::abs(adversary_loss(0.5, true) - kRandomGuessLoss) == 0.0);
  }

  TEST_CASE("clamping keeps the loss finite at the boundary") {
    const double l = adversary_loss(1.0, true);
    CHECK(l > 0.0);
    CHECK(l < 2e-7);
    CHECK(std::isfinite(adversary_loss(0.0, true)));
    CHECK(std::isfinite(adversary_loss(1.0, false)));
  }
}

TEST_SUITE("models.checkpoint") {
  TEST_CASE("representation checkpoint round trip with manifest") {
    RepresentationModel repr(6, 4, 31, 0.12);
    CheckpointMeta meta;
    meta.component = "representation";
    meta.repr_dim = 4;
    meta.emb_dim = 6;
    meta.neighbors = 50;
    meta.sigma_init = 0.12;
    meta.seed = 31;
    meta.embedding_fingerprint = 0xabcdef;
    const std::string path = "repr_ckpt_test.bin";
    save_model_checkpoint(path, repr.params(), meta);

    const CheckpointMeta loaded = load_checkpoint_meta(path);
    CHECK(loaded.component == "representation");
    CHECK(loaded.neighbors == 50);
    CHECK(loaded.embedding_fingerprint == 0xabcdef);

    const RepresentationModel back = load_representation_checkpoint(path);
    CHECK(back.params().checksum() == repr.params().checksum());
    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
  }

  TEST_CASE("component mismatch is rejected") {
    RepresentationModel repr(6, 4, 32);
    CheckpointMeta meta;
    meta.component = "tagger";
    meta.repr_dim = 4;
    meta.emb_dim = 6;
    const std::string path = "repr_ckpt_test2.bin";
    save_model_checkpoint(path, repr.params(), meta);
    CHECK_THROWS(load_representation_checkpoint(path));
    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
  }
}
