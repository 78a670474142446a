#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace deid::corpus {

enum class PhiCategory {
  PATIENT,
  DOCTOR,
  HOSPITAL,
  DATE,
  AGE,
  PHONE,
  ID,
  CITY,
  STATE,
  COUNTRY,
  PROFESSION,
  OTHER,
};

inline constexpr int kNumPhiCategories = 12;

const char* to_string(PhiCategory c);
std::optional<PhiCategory> phi_category_from_string(const std::string& s);

// Surface-form descriptor used in place of character embeddings.
enum class CasingCategory {
  NUMERIC,
  MAINLY_NUMERIC,
  ALL_LOWER,
  ALL_UPPER,
  INITIAL_UPPER,
  CONTAINS_DIGIT,
  OTHER,
};

inline constexpr int kNumCasingCategories = 7;

const char* to_string(CasingCategory c);

// Character offsets throughout this module count Unicode scalar values,
// not bytes, so XML standoff offsets stay encoding-independent.
struct PhiSpan {
  size_t start = 0;  // inclusive
  size_t end = 0;    // exclusive
  PhiCategory category = PhiCategory::OTHER;
  std::string text;
};

struct Token {
  std::string text;
  size_t start = 0;
  size_t end = 0;
  CasingCategory casing = CasingCategory::OTHER;
};

// BIO label over PhiCategory; outside() is the O label.
struct BioLabel {
  enum class Kind { O, B, I } kind = Kind::O;
  PhiCategory category = PhiCategory::OTHER;

  static BioLabel outside() { return {}; }
  static BioLabel begin(PhiCategory c) { return {Kind::B, c}; }
  static BioLabel inside(PhiCategory c) { return {Kind::I, c}; }
  bool is_phi() const { return kind != Kind::O; }
  bool operator==(const BioLabel& o) const {
    return kind == o.kind && (kind == Kind::O || category == o.category);
  }
};

std::string to_string(const BioLabel& l);
std::optional<BioLabel> bio_label_from_string(const std::string& s);

struct Sentence {
  std::string doc_id;
  std::vector<Token> tokens;
  std::vector<BioLabel> labels;  // empty until align_labels; then |labels| == |tokens|
};

struct Document {
  std::string id;
  std::string text;           // UTF-8
  std::vector<PhiSpan> spans; // sorted by start, non-overlapping
};

// Thrown on malformed XML, out-of-bounds offsets, span text mismatches and
// overlaps; the message carries the document id and offending offset.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- standoff XML ---------------------------------------------------------

Document parse_document(const std::string& xml_bytes);
std::string write_document(const Document& doc);

// --- tokenization / sentence splitting ------------------------------------

CasingCategory casing_of(const std::string& token_text);

std::vector<Token> tokenize(const std::string& text, size_t base_offset = 0);

std::vector<Sentence> split_sentences(const Document& doc);

std::vector<Sentence> align_labels(const Document& doc, std::vector<Sentence> sentences);

// parse + split + align in one step
std::vector<Sentence> sentences_of(const Document& doc);

// Rebuild a Document from (possibly pseudonymized) sentences: tokens joined
// by single spaces, sentences by newlines, spans recomputed from label runs.
Document render_sentences(const std::string& doc_id, const std::vector<Sentence>& sentences);

// --- synthetic corpus ------------------------------------------------------

// Named token group used both by the generator templates and by the
// clustered toy-embedding builder. Groups with the same cluster id share an
// embedding cluster; sub id separates sub-clusters inside it.
struct VocabGroup {
  std::string name;
  int cluster = 0;
  int sub = 0;
  std::vector<std::string> tokens;
};

const std::vector<VocabGroup>& synthetic_vocab_groups();

// every distinct token the generator can emit, order-stable
std::vector<std::string> synthetic_vocabulary();

std::vector<Document> generate_synthetic(uint64_t seed, size_t n_docs, double phi_density);

}  // namespace deid::corpus
