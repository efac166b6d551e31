#ifndef GOGNN_GOG_HPP
#define GOGNN_GOG_HPP

// Graph-of-Graph domain types: a binary is a directed call graph whose nodes
// are attributed control-flow graphs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gognn/error.hpp"
#include "gognn/rng.hpp"

namespace gognn {

inline constexpr std::size_t kFeatureDim = 12;

/// Index of each per-block attribute.  Entries 1..9 are instruction
/// categories and are each bounded by the total.
enum class Feature : std::size_t {
  kTotal = 0,
  kArithmetic,
  kLogic,
  kTransfer,
  kCall,
  kDataTransfer,
  kSsa,
  kCompare,
  kPointer,
  kOther,
  kConstants,
  kStrings,
};

inline constexpr std::size_t kFirstCategory = 1;
inline constexpr std::size_t kLastCategory = 9;

/// Per-block attribute vector.  Stored as a plain vector so that malformed
/// lengths remain representable and reportable by validate().
struct BasicBlockFeatures {
  std::vector<double> values = std::vector<double>(kFeatureDim, 0.0);

  double operator[](Feature f) const { return values[static_cast<std::size_t>(f)]; }
  double& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }

  bool all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }

  friend bool operator==(const BasicBlockFeatures&, const BasicBlockFeatures&) = default;
};

using Edge = std::pair<std::size_t, std::size_t>;

struct Cfg {
  std::vector<BasicBlockFeatures> blocks;
  std::vector<Edge> edges;
  std::optional<std::string> name;
  bool is_thunk = false;

  /// A body-less declaration: one block whose attributes are all zero.
  bool is_declaration() const { return blocks.size() == 1 && blocks.front().all_zero(); }

  friend bool operator==(const Cfg&, const Cfg&) = default;
};

struct GoG {
  std::string package;
  std::string binary_name;
  std::string arch;
  std::vector<Cfg> functions;
  std::vector<Edge> call_edges;

  std::tuple<const std::string&, const std::string&, const std::string&> key() const {
    return {package, binary_name, arch};
  }

  friend bool operator==(const GoG&, const GoG&) = default;
};

struct Corpus {
  std::vector<GoG> binaries;
  std::string provenance;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

namespace detail {

inline std::string arrow(std::size_t a, std::size_t b) {
  return std::to_string(a) + "→" + std::to_string(b);
}

inline void check_features(const BasicBlockFeatures& f, const std::string& where,
                           std::vector<std::string>& out) {
  if (f.values.size() != kFeatureDim) {
    out.push_back(where + ": feature vector has " + std::to_string(f.values.size()) +
                  " entries, expected 12");
    return;
  }
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    if (!std::isfinite(f.values[i]) || f.values[i] < 0.0) {
      out.push_back(where + ": feature " + std::to_string(i) + " is negative or non-finite");
      return;
    }
  }
  for (std::size_t i = kFirstCategory; i <= kLastCategory; ++i) {
    if (f.values[i] > f.values[0]) {
      out.push_back(where + ": category " + std::to_string(i) + " exceeds total instructions");
      return;
    }
  }
}

}  // namespace detail

/// Checks a CFG on its own; `label` prefixes each message.
inline std::vector<std::string> validate(const Cfg& cfg, const std::string& label = "function") {
  std::vector<std::string> out;
  if (cfg.blocks.empty() && !cfg.is_thunk) out.push_back(label + ": has no blocks and is not a thunk");
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    detail::check_features(cfg.blocks[b], label + " block " + std::to_string(b), out);
  }
  std::set<Edge> seen;
  for (const auto& [s, d] : cfg.edges) {
    const std::string e = label + " edge " + detail::arrow(s, d);
    if (s >= cfg.blocks.size()) out.push_back(e + ": source out of range");
    if (d >= cfg.blocks.size()) out.push_back(e + ": destination out of range");
    if (!seen.insert({s, d}).second) out.push_back(e + ": duplicate edge");
  }
  return out;
}

/// Lists every invariant violation of a GoG.  Empty means valid.
inline std::vector<std::string> validate(const GoG& gog) {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < gog.functions.size(); ++f) {
    auto v = validate(gog.functions[f], "function " + std::to_string(f));
    out.insert(out.end(), v.begin(), v.end());
  }
  const std::size_t n = gog.functions.size();
  std::set<Edge> seen;
  for (const auto& [s, d] : gog.call_edges) {
    const std::string e = "call edge " + detail::arrow(s, d);
    if (s >= n) out.push_back(e + ": caller out of range");
    if (d >= n) out.push_back(e + ": callee out of range");
    if (!seen.insert({s, d}).second) out.push_back(e + ": duplicate call edge");
  }
  return out;
}

/// Validates every binary plus cross-binary key uniqueness.
inline std::vector<std::string> validate(const Corpus& corpus) {
  std::vector<std::string> out;
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& g : corpus.binaries) {
    const std::string label = g.package + "/" + g.binary_name + "/" + g.arch;
    for (auto& v : validate(g)) out.push_back(label + ": " + v);
    if (!keys.insert({g.package, g.binary_name, g.arch}).second) {
      out.push_back(label + ": duplicate (package, binary, arch)");
    }
  }
  return out;
}

/// Distinct package names in sorted order.
inline std::vector<std::string> packages_of(const Corpus& corpus) {
  std::set<std::string> s;
  for (const auto& g : corpus.binaries) s.insert(g.package);
  return {s.begin(), s.end()};
}

/// Package-disjoint split.  Packages are shuffled with `seed`, and the train
/// side receives the longest prefix whose binary count stays within
/// `train_fraction` of the corpus.  Binary order within each side follows the
/// input corpus.
inline std::pair<Corpus, Corpus> split_by_package(const Corpus& corpus, double train_fraction,
                                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  std::vector<std::string> pkgs = packages_of(corpus);
  if (pkgs.size() < 2) {
    throw DataError("cannot split: corpus has " + std::to_string(pkgs.size()) +
                    " package(s), need at least 2");
  }
  Rng rng(seed);
  rng.shuffle(pkgs);

  const double budget = train_fraction * static_cast<double>(corpus.binaries.size());
  std::set<std::string> train_pkgs;
  std::size_t taken = 0;
  for (const auto& p : pkgs) {
    const auto n = static_cast<std::size_t>(std::count_if(
        corpus.binaries.begin(), corpus.binaries.end(),
        [&](const GoG& g) { return g.package == p; }));
    if (static_cast<double>(taken + n) > budget + 1e-9) break;
    taken += n;
    train_pkgs.insert(p);
  }

  Corpus train, test;
  train.provenance = corpus.provenance + (corpus.provenance.empty() ? "" : "; ") +
                     "train split seed=" + std::to_string(seed);
  test.provenance = corpus.provenance + (corpus.provenance.empty() ? "" : "; ") +
                    "test split seed=" + std::to_string(seed);
  for (const auto& g : corpus.binaries) {
    (train_pkgs.count(g.package) ? train : test).binaries.push_back(g);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace gognn

#endif  // GOGNN_GOG_HPP
