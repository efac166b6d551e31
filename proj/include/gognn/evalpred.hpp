#ifndef GOGNN_EVALPRED_HPP
#define GOGNN_EVALPRED_HPP

// Embedding index, top-k function-name prediction, p@k and binary matching.

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gognn/error.hpp"
#include "gognn/gog.hpp"
#include "gognn/hgnn.hpp"
#include "gognn/io.hpp"
#include "gognn/tensor.hpp"

namespace gognn {

struct IndexRecord {
  std::string package;
  std::string binary;
  std::string arch;
  std::size_t function = 0;
  std::optional<std::string> name;
  std::vector<double> embedding;

  bool same_binary(const IndexRecord& o) const {
    return package == o.package && binary == o.binary && arch == o.arch;
  }
};

class EmbeddingIndex {
 public:
  std::size_t add(IndexRecord r) {
    if (!records_.empty() && r.embedding.size() != dim_) {
      throw ShapeError("index: embedding of size " + std::to_string(r.embedding.size()) +
                       " does not match index dimension " + std::to_string(dim_));
    }
    if (records_.empty()) dim_ = r.embedding.size();
    records_.push_back(std::move(r));
    return records_.size() - 1;
  }

  /// Adds one record per function of `g`, taking row f of `embeddings`.
  void add_binary(const GoG& g, const Tensor& embeddings) {
    if (embeddings.rows() != g.functions.size()) {
      throw ShapeError("index: " + std::to_string(g.functions.size()) + " functions vs embeddings " +
                       embeddings.shape_string());
    }
    for (std::size_t f = 0; f < g.functions.size(); ++f) {
      auto row = embeddings.row(f);
      add({g.package, g.binary_name, g.arch, f, g.functions[f].name, {row.begin(), row.end()}});
    }
  }

  const IndexRecord& at(std::size_t id) const { return records_.at(id); }
  const std::vector<IndexRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  std::vector<IndexRecord> records_;
  std::size_t dim_ = 0;
};

/// Embeds every binary of a corpus with up to `workers` threads.
inline std::vector<Tensor> embed_corpus(const Corpus& corpus, const Model& model, int workers = 1) {
  std::vector<Tensor> out(corpus.binaries.size());
  const std::size_t n = corpus.binaries.size();
  const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) out[i] = embed_functions(corpus.binaries[i], model);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) out[i] = embed_functions(corpus.binaries[i], model);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline EmbeddingIndex build_index(const Corpus& corpus, const Model& model, int workers = 1) {
  EmbeddingIndex index;
  auto emb = embed_corpus(corpus, model, workers);
  for (std::size_t i = 0; i < corpus.binaries.size(); ++i) index.add_binary(corpus.binaries[i], emb[i]);
  return index;
}

struct NameScore {
  std::string name;
  double similarity = 0.0;

  friend bool operator==(const NameScore&, const NameScore&) = default;
};

/// The k best names for a query embedding.  Each named pool record scores its
/// name by cosine similarity; a name's score is its best record.  Ties go to
/// the lexicographically smaller name.  Records for which `in_pool` returns
/// false are skipped.
template <typename PoolFilter>
std::vector<NameScore> topk_names(std::span<const double> query, const EmbeddingIndex& index,
                                  std::size_t k, PoolFilter&& in_pool) {
  if (k < 1) throw ConfigError("top-k: k must be >= 1");
  std::map<std::string, double> best;
  for (std::size_t id = 0; id < index.size(); ++id) {
    const IndexRecord& r = index.at(id);
    if (!r.name || !in_pool(id)) continue;
    const double s = cosine_similarity(query, r.embedding);
    auto [it, inserted] = best.try_emplace(*r.name, s);
    if (!inserted && s > it->second) it->second = s;
  }
  if (best.empty()) throw DataError("top-k: candidate pool is empty");
  std::vector<NameScore> ranked;
  ranked.reserve(best.size());
  for (auto& [name, s] : best) ranked.push_back({name, s});
  const std::size_t keep = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                    [](const NameScore& a, const NameScore& b) {
                      return a.similarity != b.similarity ? a.similarity > b.similarity : a.name < b.name;
                    });
  ranked.resize(keep);
  return ranked;
}

/// Top-k names for index record `query_id`, excluding records of the query's
/// own binary unless `exclude_own_binary` is false.
inline std::vector<NameScore> topk_names(const EmbeddingIndex& index, std::size_t query_id, std::size_t k,
                                         bool exclude_own_binary = true) {
  const IndexRecord& q = index.at(query_id);
  return topk_names(q.embedding, index, k, [&](std::size_t id) {
    return !exclude_own_binary || !index.at(id).same_binary(q);
  });
}

struct PrecisionTable {
  std::vector<double> precision;  // precision[k-1] = p@k
  std::size_t queries = 0;
  std::size_t pool_names = 0;     // distinct names among pool records

  double at(std::size_t k) const { return precision.at(k - 1); }
  double random_baseline() const { return pool_names ? 1.0 / static_cast<double>(pool_names) : 0.0; }
};

/// p@1..p@k_max over the named records selected by `is_query`.
template <typename QueryFilter>
PrecisionTable precision_at_k(const EmbeddingIndex& index, std::size_t k_max, QueryFilter&& is_query) {
  if (k_max < 1) throw ConfigError("p@k: kmax must be >= 1");
  PrecisionTable t;
  t.precision.assign(k_max, 0.0);
  std::set<std::string> names;
  for (const auto& r : index.records())
    if (r.name) names.insert(*r.name);
  t.pool_names = names.size();
  std::vector<std::size_t> hits(k_max, 0);
  for (std::size_t id = 0; id < index.size(); ++id) {
    const IndexRecord& q = index.at(id);
    if (!q.name || !is_query(id)) continue;
    ++t.queries;
    const auto ranked = topk_names(index, id, k_max);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (ranked[r].name == *q.name) {
        for (std::size_t k = r; k < k_max; ++k) ++hits[k];
        break;
      }
    }
  }
  if (t.queries > 0) {
    for (std::size_t k = 0; k < k_max; ++k) {
      t.precision[k] = static_cast<double>(hits[k]) / static_cast<double>(t.queries);
    }
  }
  return t;
}

inline PrecisionTable precision_at_k(const EmbeddingIndex& index, std::size_t k_max) {
  return precision_at_k(index, k_max, [](std::size_t) { return true; });
}

struct EvalOptions {
  std::size_t k_max = 5;
  const Corpus* reference = nullptr;        // extra pool records, never queried
  std::optional<std::string> query_arch;    // restrict queries to one architecture
  int workers = 1;
};

/// Embeds the test corpus (plus an optional reference set) and evaluates p@k
/// with every named test function as a query.
inline PrecisionTable precision_at_k(const Corpus& test, const Model& model, const EvalOptions& opts = {}) {
  EmbeddingIndex index = build_index(test, model, opts.workers);
  const std::size_t n_test = index.size();
  if (opts.reference) {
    auto emb = embed_corpus(*opts.reference, model, opts.workers);
    for (std::size_t i = 0; i < opts.reference->binaries.size(); ++i) {
      index.add_binary(opts.reference->binaries[i], emb[i]);
    }
  }
  return precision_at_k(index, opts.k_max, [&](std::size_t id) {
    return id < n_test && (!opts.query_arch || index.at(id).arch == *opts.query_arch);
  });
}

inline std::string precision_csv(const PrecisionTable& t) {
  std::string out = "k,precision\n";
  for (std::size_t k = 0; k < t.precision.size(); ++k) {
    out += std::to_string(k + 1) + "," + format_double(t.precision[k]) + "\n";
  }
  return out;
}

// ---- binary matching ----------------------------------------------------------

struct MatchEntry {
  std::size_t query = 0;
  std::optional<std::string> query_name;
  std::size_t key = 0;
  std::optional<std::string> key_name;
  double similarity = 0.0;
};

struct MatchReport {
  std::vector<MatchEntry> matched;
  std::vector<MatchEntry> mismatched;  // patch candidates
  std::vector<MatchEntry> orphans;     // low-confidence; key is the best candidate
  double t_match = 0.9;
  double t_orphan = 0.5;

  std::size_t total() const { return matched.size() + mismatched.size() + orphans.size(); }
};

/// Partitions stripped functions by the similarity of their best reference
/// function (ties go to the lowest reference id).
inline MatchReport match_embeddings(const Tensor& stripped, const Tensor& reference,
                                    const std::vector<std::optional<std::string>>& stripped_names,
                                    const std::vector<std::optional<std::string>>& reference_names,
                                    double t_match, double t_orphan) {
  if (t_orphan > t_match) throw ConfigError("match: orphan threshold exceeds match threshold");
  if (reference.rows() == 0) throw DataError("match: reference binary has no functions");
  MatchReport rep;
  rep.t_match = t_match;
  rep.t_orphan = t_orphan;
  for (std::size_t q = 0; q < stripped.rows(); ++q) {
    std::size_t best = 0;
    double best_sim = cosine_similarity(stripped.row(q), reference.row(0));
    for (std::size_t r = 1; r < reference.rows(); ++r) {
      const double s = cosine_similarity(stripped.row(q), reference.row(r));
      if (s > best_sim) {
        best_sim = s;
        best = r;
      }
    }
    MatchEntry e{q, stripped_names.at(q), best, reference_names.at(best), best_sim};
    if (best_sim >= t_match) {
      rep.matched.push_back(std::move(e));
    } else if (best_sim >= t_orphan) {
      rep.mismatched.push_back(std::move(e));
    } else {
      rep.orphans.push_back(std::move(e));
    }
  }
  return rep;
}

inline MatchReport match_binaries(const GoG& stripped, const GoG& reference, const Model& model,
                                  double t_match = 0.9, double t_orphan = 0.5) {
  if (reference.functions.empty()) throw DataError("match: reference binary has no functions");
  std::vector<std::optional<std::string>> sn, rn;
  for (const auto& f : stripped.functions) sn.push_back(f.name);
  for (const auto& f : reference.functions) rn.push_back(f.name);
  return match_embeddings(embed_functions(stripped, model), embed_functions(reference, model), sn, rn,
                          t_match, t_orphan);
}

inline nlohmann::json to_json(const MatchReport& r) {
  auto name_json = [](const std::optional<std::string>& n) { return n ? nlohmann::json(*n) : nlohmann::json(nullptr); };
  auto paired = [&](const std::vector<MatchEntry>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : v) {
      arr.push_back({{"query", {{"fn", e.query}, {"name", name_json(e.query_name)}}},
                     {"key", {{"fn", e.key}, {"name", name_json(e.key_name)}}},
                     {"similarity", e.similarity}});
    }
    return arr;
  };
  nlohmann::json orphans = nlohmann::json::array();
  for (const auto& e : r.orphans) {
    orphans.push_back({{"query", {{"fn", e.query}, {"name", name_json(e.query_name)}}}, {"similarity", e.similarity}});
  }
  return {{"thresholds", {{"match", r.t_match}, {"orphan", r.t_orphan}}},
          {"matched", paired(r.matched)},
          {"mismatched", paired(r.mismatched)},
          {"orphans", std::move(orphans)}};
}

/// Aligned plain-text rendering of the three tables.
inline std::string format_report(const MatchReport& r) {
  std::ostringstream os;
  auto label = [](std::size_t id, const std::optional<std::string>& n) {
    return "#" + std::to_string(id) + (n ? " " + *n : std::string());
  };
  auto table = [&](const char* title, const std::vector<MatchEntry>& v, bool with_key) {
    os << title << " (" << v.size() << ")\n";
    std::size_t wq = 5, wk = 3;
    for (const auto& e : v) {
      wq = std::max(wq, label(e.query, e.query_name).size());
      wk = std::max(wk, label(e.key, e.key_name).size());
    }
    os << "  " << std::left << std::setw(static_cast<int>(wq)) << "query";
    if (with_key) os << "  " << std::setw(static_cast<int>(wk)) << "key";
    os << "  similarity\n";
    for (const auto& e : v) {
      os << "  " << std::setw(static_cast<int>(wq)) << label(e.query, e.query_name);
      if (with_key) os << "  " << std::setw(static_cast<int>(wk)) << label(e.key, e.key_name);
      os << "  " << std::fixed << std::setprecision(4) << e.similarity << "\n";
    }
  };
  table("Matched", r.matched, true);
  table("Mismatched", r.mismatched, true);
  table("Orphan", r.orphans, false);
  return os.str();
}

// ---- index files ------------------------------------------------------------------

inline std::string write_index(const EmbeddingIndex& index) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : index.records()) {
    recs.push_back({{"package", r.package},
                    {"binary", r.binary},
                    {"arch", r.arch},
                    {"fn", r.function},
                    {"name", r.name ? nlohmann::json(*r.name) : nlohmann::json(nullptr)},
                    {"embedding", r.embedding}});
  }
  nlohmann::json doc{{"format", "gognn-index-v1"}, {"dim", index.dim()}, {"records", std::move(recs)}};
  return doc.dump() + "\n";
}

inline EmbeddingIndex parse_index(std::string_view text, const std::string& source = "<index>") {
  try {
    auto doc = nlohmann::json::parse(text.begin(), text.end());
    if (doc.at("format") != "gognn-index-v1") throw DataError("unsupported index format");
    EmbeddingIndex index;
    for (const auto& r : doc.at("records")) {
      IndexRecord rec{r.at("package"), r.at("binary"), r.at("arch"), r.at("fn").get<std::size_t>(),
                      std::nullopt, r.at("embedding").get<std::vector<double>>()};
      if (!r.at("name").is_null()) rec.name = r.at("name").get<std::string>();
      index.add(std::move(rec));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": malformed index: " + e.what());
  } catch (const std::exception& e) {
    throw DataError(source + ": " + e.what());
  }
}

}  // namespace gognn

#endif  // GOGNN_EVALPRED_HPP
