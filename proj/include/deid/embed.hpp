#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "deid/corpus.hpp"

namespace deid::embed {

struct Neighbor {
  std::string token;
  double similarity;
  size_t row;
};

// Exact top-N by cosine similarity, self-inclusive, non-increasing.
struct NeighborList {
  std::string query;
  std::vector<Neighbor> neighbors;
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Immutable after construction; concurrent reads are safe.
class EmbeddingStore {
 public:
  // Text format: one token + dim floats per line, optional "count dim" header.
  static EmbeddingStore load(const std::string& path);
  static EmbeddingStore from_rows(
      const std::vector<std::pair<std::string, std::vector<double>>>& rows,
      const std::string& source_name = "<memory>");

  size_t size() const { return tokens_.size(); }
  int dim() const { return dim_; }
  size_t duplicates_skipped() const { return duplicates_skipped_; }
  uint64_t fingerprint() const { return fingerprint_; }

  const std::string& token_at(size_t row) const { return tokens_[row]; }
  const double* row(size_t r) const { return matrix_.data() + r * static_cast<size_t>(dim_); }
  const std::vector<double>& unknown_vector() const { return unknown_; }

  std::optional<size_t> row_of(const std::string& token) const;
  // exact match, then lowercase fallback
  std::optional<size_t> row_of_with_fallback(const std::string& token) const;

  // exact match -> lowercase fallback -> unknown vector; never fails
  std::vector<double> lookup(const std::string& token) const;

  NeighborList nearest_neighbors(const std::string& token, size_t n) const;

  // Mean, over the given tokens, of how many of their top-N neighbors contain
  // the token as a case-insensitive substring. The token itself is excluded.
  double subword_neighbor_stats(const std::vector<std::string>& tokens, size_t n) const;

  std::string to_text() const;

 private:
  int dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<double> matrix_;  // row-major |V| x dim
  std::vector<double> norms_;
  std::vector<double> unknown_;
  std::unordered_map<std::string, size_t> vocab_;
  size_t duplicates_skipped_ = 0;
  uint64_t fingerprint_ = 0;

  void finalize(const std::string& source_name);
};

struct ClusterGeometry {
  double sub_offset = 0.9;    // distance between sub-cluster centers
  double token_spread = 0.25; // expected norm of the per-token offset
};

// Toy vectors for the synthetic vocabulary: orthonormal cluster centers,
// sub-cluster offsets, small per-token noise. Cosine neighborhoods then align
// with the generator's token groups.
EmbeddingStore make_clustered_store(const std::vector<corpus::VocabGroup>& groups, int dim,
                                    uint64_t seed, const ClusterGeometry& geometry = {});

}  // namespace deid::embed
