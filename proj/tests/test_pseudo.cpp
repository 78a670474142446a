#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "deid/pseudo.hpp"
#include "deid/util.hpp"

using namespace deid;
using namespace deid::corpus;
using namespace deid::pseudo;

namespace {

// two tight clusters; neighborhoods are unambiguous
embed::EmbeddingStore toy_store() {
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  const std::vector<std::string> names = {"James", "Henry", "Croix", "Scott", "Amber"};
  const std::vector<std::string> words = {"was", "admitted", "to", "the", "ward"};
  for (size_t i = 0; i < names.size(); ++i) {
    rows.emplace_back(names[i], std::vector<double>{1.0, 0.02 * static_cast<double>(i), 0.0});
  }
  for (size_t i = 0; i < words.size(); ++i) {
    rows.emplace_back(words[i], std::vector<double>{0.0, 0.02 * static_cast<double>(i), 1.0});
  }
  return embed::EmbeddingStore::from_rows(rows);
}

Sentence labeled_sentence(const std::vector<std::string>& tokens,
                          const std::vector<BioLabel>& labels) {
  Sentence s;
  size_t off = 0;
  for (const auto& t : tokens) {
    s.tokens.push_back({t, off, off + t.size(), casing_of(t)});
    off += t.size() + 1;
  }
  s.labels = labels;
  return s;
}

std::vector<Sentence> toy_corpus() {
  std::vector<Sentence> out;
  out.push_back(labeled_sentence({"James", "was", "admitted"},
                                 {BioLabel::begin(PhiCategory::PATIENT), BioLabel::outside(),
                                  BioLabel::outside()}));
  out.push_back(labeled_sentence({"Henry", "was", "admitted", "to", "the", "ward"},
                                 {BioLabel::begin(PhiCategory::PATIENT), BioLabel::outside(),
                                  BioLabel::outside(), BioLabel::outside(), BioLabel::outside(),
                                  BioLabel::outside()}));
  out.push_back(labeled_sentence({"the", "ward", "was", "admitted"},
                                 {BioLabel::outside(), BioLabel::outside(), BioLabel::outside(),
                                  BioLabel::outside()}));
  return out;
}

std::multiset<std::string> token_multiset(const std::vector<Sentence>& sentences) {
  std::multiset<std::string> out;
  for (const auto& s : sentences) {
    std::string joined;
    for (const auto& t : s.tokens) joined += t.text + " ";
    out.insert(joined);
  }
  return out;
}

}  // namespace

TEST_SUITE("pseudo.corpus") {
  TEST_CASE("replacements stay inside the exact top-N neighborhood") {
    const auto store = toy_store();
    const auto corpus = toy_corpus();
    const auto result = pseudonymize_corpus(corpus, store, {3, 99});
    REQUIRE(result.sentences.size() == corpus.size());

    // map back to originals by length (all lengths distinct here)
    std::map<size_t, const Sentence*> by_len;
    for (const auto& s : corpus) by_len[s.tokens.size()] = &s;
    for (const Sentence& s : result.sentences) {
      const Sentence& orig = *by_len.at(s.tokens.size());
      for (size_t t = 0; t < s.tokens.size(); ++t) {
        if (!s.labels[t].is_phi()) {
          CHECK(s.tokens[t].text == orig.tokens[t].text);
          continue;
        }
        const auto nl = store.nearest_neighbors(orig.tokens[t].text, 3);
        bool found = false;
        for (const auto& nb : nl.neighbors) found |= nb.token == s.tokens[t].text;
        CHECK(found);
        CHECK(s.tokens[t].casing == casing_of(s.tokens[t].text));
      }
    }
  }

  TEST_CASE("N=1 is the identity on token texts, up to the shuffle") {
    const auto store = toy_store();
    const auto corpus = toy_corpus();
    const auto result = pseudonymize_corpus(corpus, store, {1, 5});
    CHECK(token_multiset(result.sentences) == token_multiset(corpus));
  }

  TEST_CASE("labels and lengths are invariant") {
    const auto store = toy_store();
    const auto corpus = toy_corpus();
    const auto result = pseudonymize_corpus(corpus, store, {5, 7});
    std::multiset<std::string> gold_labels, got_labels;
    for (const auto& s : corpus)
      for (const auto& l : s.labels) gold_labels.insert(to_string(l));
    for (const auto& s : result.sentences) {
      CHECK(s.labels.size() == s.tokens.size());
      for (const auto& l : s.labels) got_labels.insert(to_string(l));
    }
    CHECK(gold_labels == got_labels);
  }

  TEST_CASE("sentence with zero phi tokens is unchanged") {
    const auto store = toy_store();
    std::vector<Sentence> corpus{toy_corpus()[2]};
    const auto result = pseudonymize_corpus(corpus, store, {4, 3});
    CHECK(result.sentences[0].tokens[0].text == "the");
    CHECK(result.sentences[0].tokens[1].text == "ward");
    CHECK(result.oov_kept == 0);
  }

  TEST_CASE("oov phi tokens are kept verbatim and tallied") {
    const auto store = toy_store();
    std::vector<Sentence> corpus{labeled_sentence(
        {"Zorblatt", "was", "admitted"},
        {BioLabel::begin(PhiCategory::PATIENT), BioLabel::outside(), BioLabel::outside()})};
    const auto result = pseudonymize_corpus(corpus, store, {3, 3});
    CHECK(result.sentences[0].tokens[0].text == "Zorblatt");
    CHECK(result.oov_kept == 1);
  }

  TEST_CASE("deterministic per seed, shuffled output order") {
    const auto store = toy_store();
    const auto corpus = toy_corpus();
    const auto a = pseudonymize_corpus(corpus, store, {3, 11});
    const auto b = pseudonymize_corpus(corpus, store, {3, 11});
    REQUIRE(a.sentences.size() == b.sentences.size());
    for (size_t i = 0; i < a.sentences.size(); ++i) {
      REQUIRE(a.sentences[i].tokens.size() == b.sentences[i].tokens.size());
      for (size_t t = 0; t < a.sentences[i].tokens.size(); ++t) {
        CHECK(a.sentences[i].tokens[t].text == b.sentences[i].tokens[t].text);
      }
    }
  }

  TEST_CASE("invalid N") {
    const auto store = toy_store();
    CHECK_THROWS(pseudonymize_corpus(toy_corpus(), store, {0, 1}));
    CHECK_THROWS(pseudonymize_corpus(toy_corpus(), store, {store.size() + 1, 1}));
  }
}

TEST_SUITE("pseudo.pairs") {
  TEST_CASE("fake_fraction zero gives identical same-labeled pairs") {
    const auto store = toy_store();
    const auto pairs = make_pairs(toy_corpus(), store, 3, 5, 0.0);
    REQUIRE(pairs.size() == 3);
    for (const auto& p : pairs) {
      CHECK(p.label == PairLabel::SameSentence);
      REQUIRE(p.a.tokens.size() == p.b.tokens.size());
      for (size_t t = 0; t < p.a.tokens.size(); ++t) {
        CHECK(p.a.tokens[t].text == p.b.tokens[t].text);
      }
    }
  }

  TEST_CASE("fake pairs differ at exactly one phi position, inside top-N minus self") {
    const auto store = toy_store();
    std::vector<Sentence> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(toy_corpus()[i % 2]);
    const auto pairs = make_pairs(corpus, store, 4, 9, 1.0);
    size_t fakes = 0;
    for (const auto& p : pairs) {
      if (p.label == PairLabel::SameSentence) continue;
      ++fakes;
      size_t diffs = 0;
      size_t diff_pos = 0;
      REQUIRE(p.a.tokens.size() == p.b.tokens.size());
      for (size_t t = 0; t < p.a.tokens.size(); ++t) {
        if (p.a.tokens[t].text != p.b.tokens[t].text) {
          ++diffs;
          diff_pos = t;
        }
      }
      CHECK(diffs == 1);
      CHECK(p.a.labels[diff_pos].is_phi());
      CHECK(p.b.tokens[diff_pos].text != p.a.tokens[diff_pos].text);
      const auto nl = store.nearest_neighbors(p.a.tokens[diff_pos].text, 4);
      bool found = false;
      for (size_t i = 1; i < nl.neighbors.size(); ++i) {
        found |= nl.neighbors[i].token == p.b.tokens[diff_pos].text;
      }
      CHECK(found);
    }
    CHECK(fakes == pairs.size());
  }

  TEST_CASE("fake fraction is exact at 0.5 on 100 pairs and reproducible") {
    const auto store = toy_store();
    std::vector<Sentence> corpus;
    for (int i = 0; i < 100; ++i) corpus.push_back(toy_corpus()[i % 2]);
    const auto pairs = make_pairs(corpus, store, 3, 123, 0.5);
    size_t fakes = 0;
    for (const auto& p : pairs) fakes += p.label == PairLabel::DifferentSentence;
    CHECK(fakes == 50);

    const auto pairs2 = make_pairs(corpus, store, 3, 123, 0.5);
    for (size_t i = 0; i < pairs.size(); ++i) {
      CHECK((pairs[i].label == pairs2[i].label));
      for (size_t t = 0; t < pairs[i].b.tokens.size(); ++t) {
        CHECK(pairs[i].b.tokens[t].text == pairs2[i].b.tokens[t].text);
      }
    }
  }

  TEST_CASE("errors") {
    const auto store = toy_store();
    std::vector<Sentence> no_phi{toy_corpus()[2]};
    CHECK_THROWS(make_pairs(no_phi, store, 3, 1, 0.5));
    CHECK_THROWS(make_pairs(toy_corpus(), store, 1, 1, 0.5));  // N=1 has no neighbor != self
    CHECK_THROWS(make_pairs(toy_corpus(), store, 3, 1, 1.5));
  }
}
