#ifndef GOGNN_SYNTH_HPP
#define GOGNN_SYNTH_HPP

// Synthetic multi-architecture corpora.
//
// Every package owns a set of function prototypes (CFG shape plus an
// instruction-mix profile).  Each architecture variant of the package is
// derived from the same prototypes: each attribute is multiplied by a global
// per-architecture factor, jittered with noise proportional to
// `arch_distortion`, and blocks are split or merged with probability
// proportional to `arch_distortion`.  Random streams are keyed by package and
// architecture names, so adding an architecture leaves the others unchanged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gognn/error.hpp"
#include "gognn/gog.hpp"
#include "gognn/ingest.hpp"
#include "gognn/io.hpp"
#include "gognn/rng.hpp"

namespace gognn {

struct SynthConfig {
  int n_packages = 40;
  int min_functions = 10;
  int max_functions = 20;
  std::vector<std::string> archs{"amd64", "armel", "i386"};
  int min_blocks = 3;
  int max_blocks = 12;
  double edge_density = 0.3;
  double arch_distortion = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_packages < 1) throw ConfigError("synth: packages must be >= 1");
    if (min_functions < 1 || max_functions < min_functions) {
      throw ConfigError("synth: functions-per-binary range is empty");
    }
    if (min_blocks < 1 || max_blocks < min_blocks) {
      throw ConfigError("synth: blocks-per-function range is empty");
    }
    if (!(edge_density > 0.0 && edge_density <= 1.0)) {
      throw ConfigError("synth: edge density must lie in (0, 1]");
    }
    if (!(arch_distortion >= 0.0) || !std::isfinite(arch_distortion)) {
      throw ConfigError("synth: arch distortion must be a finite value >= 0");
    }
    std::set<std::string> distinct(archs.begin(), archs.end());
    if (distinct.size() != archs.size() || archs.size() < 2) {
      throw ConfigError("synth: need at least 2 distinct architecture tags");
    }
    for (const auto& a : archs) {
      if (a.empty() || a.find('/') != std::string::npos) {
        throw ConfigError("synth: bad architecture tag \"" + a + "\"");
      }
    }
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_packages", c.n_packages},
          {"functions_per_binary", {c.min_functions, c.max_functions}},
          {"archs", c.archs},
          {"blocks_per_function", {c.min_blocks, c.max_blocks}},
          {"edge_density", c.edge_density},
          {"arch_distortion", c.arch_distortion},
          {"seed", c.seed}};
}

inline std::string synth_package_name(int index) {
  std::string digits = std::to_string(index);
  return "pkg" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

/// Global multiplicative signature of an architecture tag: one factor per
/// attribute, each in [0.7, 1.4].  The total-instruction entry is unused
/// (totals are recomputed from the categories) and set to 1.
inline std::vector<double> arch_scale(std::uint64_t seed, const std::string& arch) {
  Rng rng(derive_seed(seed, "arch:" + arch));
  std::vector<double> scale(kFeatureDim, 1.0);
  for (std::size_t k = 1; k < kFeatureDim; ++k) scale[k] = rng.uniform(0.7, 1.4);
  return scale;
}

namespace detail {

struct Prototype {
  std::string name;
  std::vector<BasicBlockFeatures> blocks;
  std::vector<Edge> edges;
};

struct PackagePrototype {
  std::vector<Prototype> functions;
  std::vector<Edge> calls;
};

inline double round_count(double v) { return std::max(0.0, std::round(v)); }

inline PackagePrototype make_package(const SynthConfig& cfg, const std::string& pkg) {
  Rng rng(derive_seed(cfg.seed, "pkg:" + pkg));
  PackagePrototype p;
  const int nf = rng.uniform_int(cfg.min_functions, cfg.max_functions);
  for (int f = 0; f < nf; ++f) {
    Prototype fn;
    fn.name = "fn_" + pkg + "_" + std::to_string(f);
    const int nb = rng.uniform_int(cfg.min_blocks, cfg.max_blocks);

    std::vector<double> mix(kLastCategory - kFirstCategory + 1);
    for (double& w : mix) w = -std::log(1.0 - rng.uniform());
    const double mix_sum = std::accumulate(mix.begin(), mix.end(), 0.0);
    for (double& w : mix) w /= mix_sum;
    const double block_size = rng.uniform(3.0, 15.0);
    const double const_rate = rng.uniform(0.0, 0.5);
    const double string_rate = rng.uniform(0.0, 0.2);

    for (int b = 0; b < nb; ++b) {
      BasicBlockFeatures bf;
      const double size = block_size * std::exp(0.4 * rng.normal());
      double total = 0.0;
      for (std::size_t c = 0; c < mix.size(); ++c) {
        const double v = round_count(size * mix[c] * std::exp(0.25 * rng.normal()));
        bf.values[kFirstCategory + c] = v;
        total += v;
      }
      if (total == 0.0) {
        bf.values[kFirstCategory] = 1.0;
        total = 1.0;
      }
      bf[Feature::kTotal] = total;
      bf[Feature::kConstants] = round_count(const_rate * size * std::exp(0.25 * rng.normal()));
      bf[Feature::kStrings] = round_count(string_rate * size * std::exp(0.25 * rng.normal()));
      fn.blocks.push_back(std::move(bf));
    }
    std::set<Edge> edges;
    for (int b = 0; b + 1 < nb; ++b) edges.insert({b, b + 1});
    for (int b = 0; b < nb && nb > 2; ++b) {
      if (!rng.bernoulli(cfg.edge_density)) continue;
      int d = rng.uniform_int(0, nb - 1);
      if (d == b || d == b + 1) continue;
      edges.insert({b, d});
    }
    fn.edges.assign(edges.begin(), edges.end());
    p.functions.push_back(std::move(fn));
  }
  // Sparse random DAG over prototype order (at most two forward calls per
  // function) plus a few back edges.
  std::set<Edge> calls;
  for (int i = 0; i < nf; ++i) {
    const int degree = rng.uniform_int(0, 2);
    for (int k = 0; k < degree && i + 1 < nf; ++k) calls.insert({i, rng.uniform_int(i + 1, nf - 1)});
    if (i > 0 && rng.bernoulli(0.05)) calls.insert({i, rng.uniform_int(0, i - 1)});
  }
  p.calls.assign(calls.begin(), calls.end());
  return p;
}

inline BasicBlockFeatures perturb(const BasicBlockFeatures& src, const std::vector<double>& scale,
                                  double distortion, Rng& rng) {
  BasicBlockFeatures out;
  double total = 0.0;
  for (std::size_t k = 1; k < kFeatureDim; ++k) {
    double noise = 1.0;
    if (distortion > 0.0) noise = std::max(0.0, 1.0 + distortion * rng.normal());
    out.values[k] = scale[k] * src.values[k] * noise;
    if (k <= kLastCategory) total += out.values[k];
  }
  out.values[0] = total;
  return out;
}

inline Cfg make_variant(const Prototype& proto, const std::vector<double>& scale, double distortion,
                       Rng& rng) {
  const std::size_t n = proto.blocks.size();
  const double p_split = std::min(0.45, 0.5 * distortion);
  const double p_merge = p_split;

  // Prototype block k maps to an entry block (incoming edges) and an exit
  // block (outgoing edges) in the variant.
  std::vector<std::size_t> entry(n), exit(n);
  std::vector<BasicBlockFeatures> raw;
  std::set<Edge> edges;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = distortion > 0.0 ? rng.uniform() : 1.0;
    if (r < p_split) {
      const double u = rng.uniform(0.3, 0.7);
      BasicBlockFeatures a, b;
      for (std::size_t c = 0; c < kFeatureDim; ++c) {
        a.values[c] = u * proto.blocks[k].values[c];
        b.values[c] = proto.blocks[k].values[c] - a.values[c];
      }
      entry[k] = raw.size();
      raw.push_back(a);
      exit[k] = raw.size();
      raw.push_back(b);
      edges.insert({entry[k], exit[k]});
    } else if (r < p_split + p_merge && k + 1 < n) {
      BasicBlockFeatures m;
      for (std::size_t c = 0; c < kFeatureDim; ++c) {
        m.values[c] = proto.blocks[k].values[c] + proto.blocks[k + 1].values[c];
      }
      entry[k] = exit[k] = entry[k + 1] = exit[k + 1] = raw.size();
      raw.push_back(m);
      ++k;
    } else {
      entry[k] = exit[k] = raw.size();
      raw.push_back(proto.blocks[k]);
    }
  }
  for (const auto& [s, d] : proto.edges) {
    const Edge e{exit[s], entry[d]};
    if (e.first != e.second) edges.insert(e);
  }
  Cfg cfg;
  cfg.name = proto.name;
  cfg.edges.assign(edges.begin(), edges.end());
  cfg.blocks.reserve(raw.size());
  for (const auto& b : raw) cfg.blocks.push_back(perturb(b, scale, distortion, rng));
  return cfg;
}

}  // namespace detail

/// Generates one GoG per (package, arch).  Deterministic given the config.
inline Corpus generate(const SynthConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.provenance = "synth " + to_json(cfg).dump();
  for (int p = 0; p < cfg.n_packages; ++p) {
    const std::string pkg = synth_package_name(p);
    const detail::PackagePrototype proto = detail::make_package(cfg, pkg);
    for (const auto& arch : cfg.archs) {
      Rng rng(derive_seed(cfg.seed, "pkg:" + pkg + "/arch:" + arch));
      const std::vector<double> scale = arch_scale(cfg.seed, arch);
      const std::size_t nf = proto.functions.size();
      std::vector<std::size_t> order(nf);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      std::vector<std::size_t> position(nf);
      for (std::size_t i = 0; i < nf; ++i) position[order[i]] = i;

      GoG g;
      g.package = pkg;
      g.binary_name = pkg;
      g.arch = arch;
      g.functions.resize(nf);
      for (std::size_t f = 0; f < nf; ++f) {
        g.functions[position[f]] =
            detail::make_variant(proto.functions[f], scale, cfg.arch_distortion, rng);
      }
      std::set<Edge> calls;
      for (const auto& [s, d] : proto.calls) calls.insert({position[s], position[d]});
      g.call_edges.assign(calls.begin(), calls.end());
      corpus.binaries.push_back(std::move(g));
    }
  }
  return corpus;
}

/// Writes `<out>/<package>/<arch>.gog.json` for every binary plus manifest.json.
inline void write_synth_corpus(const fs::path& out, const Corpus& corpus, const SynthConfig& cfg) {
  auto files = write_corpus(out, corpus);
  nlohmann::json manifest{{"format", "gognn-manifest-v1"}, {"config", to_json(cfg)}, {"files", files}};
  write_file_atomic(out / "manifest.json", manifest.dump(1) + "\n");
}

}  // namespace gognn

#endif  // GOGNN_SYNTH_HPP
