#include "deid/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "deid/util.hpp"

namespace deid::embed {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string field;
  while (is >> field) out.push_back(field);
  return out;
}

bool is_integer(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
}

double parse_double(const std::string& s, const std::string& source, size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw LoadError(cat(source, ":", line_no, ": non-numeric field '", s, "'"));
  }
  return v;
}

}  // namespace

void EmbeddingStore::finalize(const std::string& source_name) {
  if (tokens_.empty()) throw LoadError(source_name + ": no vectors loaded");
  const auto d = static_cast<size_t>(dim_);
  norms_.resize(tokens_.size());
  unknown_.assign(d, 0.0);
  for (size_t r = 0; r < tokens_.size(); ++r) {
    double sq = 0;
    for (size_t k = 0; k < d; ++k) {
      const double x = matrix_[r * d + k];
      sq += x * x;
      unknown_[k] += x;
    }
    norms_[r] = std::sqrt(sq);
    if (norms_[r] == 0.0) {
      throw LoadError(cat(source_name, ": zero-norm vector for token '", tokens_[r], "'"));
    }
  }
  for (double& x : unknown_) x /= static_cast<double>(tokens_.size());
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open embeddings file: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.empty()) throw LoadError("empty embeddings file: " + path);

  EmbeddingStore store;
  store.fingerprint_ = fnv1a64(content.data(), content.size());

  std::istringstream lines(content);
  std::string line;
  size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(lines, line)) {
    ++line_no;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (first_content_line && fields.size() == 2 && is_integer(fields[0]) &&
        is_integer(fields[1])) {
      first_content_line = false;  // "count dim" header
      continue;
    }
    first_content_line = false;
    if (fields.size() < 2) {
      throw LoadError(cat(path, ":", line_no, ": expected a token and at least one value"));
    }
    const int d = static_cast<int>(fields.size()) - 1;
    if (store.dim_ == 0) {
      store.dim_ = d;
    } else if (d != store.dim_) {
      throw LoadError(cat(path, ":", line_no, ": dimension ", d, " does not match ",
                          store.dim_));
    }
    if (store.vocab_.count(fields[0])) {
      ++store.duplicates_skipped_;
      continue;
    }
    store.vocab_.emplace(fields[0], store.tokens_.size());
    store.tokens_.push_back(fields[0]);
    for (int k = 0; k < d; ++k) {
      store.matrix_.push_back(parse_double(fields[static_cast<size_t>(k) + 1], path, line_no));
    }
  }
  store.finalize(path);
  return store;
}

EmbeddingStore EmbeddingStore::from_rows(
    const std::vector<std::pair<std::string, std::vector<double>>>& rows,
    const std::string& source_name) {
  EmbeddingStore store;
  for (const auto& [token, vec] : rows) {
    if (store.dim_ == 0) {
      store.dim_ = static_cast<int>(vec.size());
      if (store.dim_ == 0) throw LoadError(source_name + ": zero-dimensional vector");
    } else if (static_cast<int>(vec.size()) != store.dim_) {
      throw LoadError(cat(source_name, ": dimension mismatch for token '", token, "'"));
    }
    if (store.vocab_.count(token)) {
      ++store.duplicates_skipped_;
      continue;
    }
    store.vocab_.emplace(token, store.tokens_.size());
    store.tokens_.push_back(token);
    store.matrix_.insert(store.matrix_.end(), vec.begin(), vec.end());
  }
  store.finalize(source_name);
  const std::string text = store.to_text();
  store.fingerprint_ = fnv1a64(text.data(), text.size());
  return store;
}

std::optional<size_t> EmbeddingStore::row_of(const std::string& token) const {
  auto it = vocab_.find(token);
  if (it == vocab_.end()) return std::nullopt;
  return it->second;
}

std::optional<size_t> EmbeddingStore::row_of_with_fallback(const std::string& token) const {
  if (auto r = row_of(token)) return r;
  return row_of(ascii_lower(token));
}

std::vector<double> EmbeddingStore::lookup(const std::string& token) const {
  if (auto r = row_of_with_fallback(token)) {
    const double* p = row(*r);
    return std::vector<double>(p, p + dim_);
  }
  return unknown_;
}

NeighborList EmbeddingStore::nearest_neighbors(const std::string& token, size_t n) const {
  auto r = row_of_with_fallback(token);
  if (!r) throw std::invalid_argument("nearest_neighbors: token not in vocabulary: " + token);
  if (n < 1 || n > size()) {
    throw std::invalid_argument(cat("nearest_neighbors: N=", n, " out of range [1, ", size(),
                                    "]"));
  }
  const auto d = static_cast<size_t>(dim_);
  const double* q = row(*r);
  const double qn = norms_[*r];

  std::vector<Neighbor> all;
  all.reserve(size());
  for (size_t i = 0; i < size(); ++i) {
    double dot = 0;
    for (size_t k = 0; k < d; ++k) dot += q[k] * matrix_[i * d + k];
    all.push_back({tokens_[i], dot / (qn * norms_[i]), i});
  }
  // the query is pinned first; remaining order is cosine desc, row asc
  auto before = [&](const Neighbor& a, const Neighbor& b) {
    if (a.row == *r) return true;
    if (b.row == *r) return false;
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.row < b.row;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), before);
  all.resize(n);
  all[0].similarity = 1.0;  // cos(q, q) exactly

  return NeighborList{token, std::move(all)};
}

double EmbeddingStore::subword_neighbor_stats(const std::vector<std::string>& tokens,
                                              size_t n) const {
  if (tokens.empty()) throw std::invalid_argument("subword_neighbor_stats: empty token list");
  double total = 0;
  for (const std::string& token : tokens) {
    const NeighborList nl = nearest_neighbors(token, n);
    const std::string needle = ascii_lower(token);
    const auto self = row_of_with_fallback(token);
    size_t count = 0;
    for (const Neighbor& nb : nl.neighbors) {
      if (self && nb.row == *self) continue;
      if (ascii_lower(nb.token).find(needle) != std::string::npos) ++count;
    }
    total += static_cast<double>(count);
  }
  return total / static_cast<double>(tokens.size());
}

std::string EmbeddingStore::to_text() const {
  std::ostringstream os;
  os << tokens_.size() << ' ' << dim_ << '\n';
  os.precision(17);
  const auto d = static_cast<size_t>(dim_);
  for (size_t r = 0; r < tokens_.size(); ++r) {
    os << tokens_[r];
    for (size_t k = 0; k < d; ++k) os << ' ' << matrix_[r * d + k];
    os << '\n';
  }
  return os.str();
}

EmbeddingStore make_clustered_store(const std::vector<corpus::VocabGroup>& groups, int dim,
                                    uint64_t seed, const ClusterGeometry& geometry) {
  int max_cluster = 0;
  for (const auto& g : groups) max_cluster = std::max(max_cluster, g.cluster);
  const int n_clusters = max_cluster + 1;
  if (n_clusters > dim) {
    throw std::invalid_argument(
        cat("make_clustered_store: ", n_clusters, " clusters need dim >= ", n_clusters));
  }

  Rng rng(derive_seed(seed, 0xc1057e2ULL));
  const auto d = static_cast<size_t>(dim);

  // orthonormal cluster centers via Gram-Schmidt on Gaussian draws
  std::vector<std::vector<double>> centers;
  while (static_cast<int>(centers.size()) < n_clusters) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& c : centers) {
      double dot = 0;
      for (size_t k = 0; k < d; ++k) dot += v[k] * c[k];
      for (size_t k = 0; k < d; ++k) v[k] -= dot * c[k];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    centers.push_back(std::move(v));
  }

  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::map<std::pair<int, int>, std::vector<double>> sub_offsets;
  for (const auto& g : groups) {
    const auto key = std::make_pair(g.cluster, g.sub);
    if (!sub_offsets.count(key)) {
      std::vector<double> off(d, 0.0);
      if (g.sub != 0) {
        double norm = 0;
        for (double& x : off) {
          x = rng.normal();
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : off) x *= geometry.sub_offset / norm;
      }
      sub_offsets.emplace(key, std::move(off));
    }
    const auto& center = centers[static_cast<size_t>(g.cluster)];
    const auto& off = sub_offsets[key];
    const double per_dim = geometry.token_spread / std::sqrt(static_cast<double>(dim));
    for (const std::string& token : g.tokens) {
      std::vector<double> v(d);
      for (size_t k = 0; k < d; ++k) {
        v[k] = center[k] + off[k] + per_dim * rng.normal();
      }
      rows.emplace_back(token, std::move(v));
    }
  }
  return EmbeddingStore::from_rows(rows, cat("clustered-", seed, "-", dim));
}

}  // namespace deid::embed
