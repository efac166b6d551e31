#ifndef GOGNN_INGEST_HPP
#define GOGNN_INGEST_HPP

// gog-v1 JSON reader/writer and the dataset-hygiene transforms.
//
// Canonical output: keys sorted, no insignificant whitespace, doubles in
// shortest round-trip form, a single trailing LF.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gognn/error.hpp"
#include "gognn/gog.hpp"
#include "gognn/io.hpp"

namespace gognn {

inline constexpr std::string_view kGogSchema = "gog-v1";

namespace detail {

using nlohmann::json;

[[noreturn]] inline void schema_error(const std::string& path, const std::string& what) {
  throw DataError("schema error at " + (path.empty() ? std::string("<root>") : path) + ": " + what);
}

inline const json& member(const json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

inline std::string string_member(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_string()) schema_error(path.empty() ? key : path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline std::size_t index_value(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    schema_error(path, "expected a non-negative integer");
  }
  return static_cast<std::size_t>(v.get<long long>());
}

inline std::vector<Edge> edge_list(const json& v, const std::string& path) {
  if (!v.is_array()) schema_error(path, "expected an array of [src, dst] pairs");
  std::vector<Edge> edges;
  edges.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    const json& e = v[i];
    if (!e.is_array() || e.size() != 2) schema_error(p, "expected a [src, dst] pair");
    edges.emplace_back(index_value(e[0], p + "[0]"), index_value(e[1], p + "[1]"));
  }
  return edges;
}

inline json edges_json(const std::vector<Edge>& edges) {
  json arr = json::array();
  for (const auto& [s, d] : edges) arr.push_back(json::array({s, d}));
  return arr;
}

}  // namespace detail

/// Parses one gog-v1 document.  `source` names the input in error messages.
inline GoG parse_gog(std::string_view text, const std::string& source = "<input>") {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw DataError(source + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    if (!doc.is_object()) detail::schema_error("", "expected an object");
    const std::string version = detail::string_member(doc, "", "schema_version");
    if (version != kGogSchema) {
      detail::schema_error("schema_version", "unsupported version \"" + version + "\"");
    }
    GoG g;
    g.package = detail::string_member(doc, "", "package");
    g.binary_name = detail::string_member(doc, "", "binary_name");
    g.arch = detail::string_member(doc, "", "arch");

    const json& fns = detail::member(doc, "", "functions");
    if (!fns.is_array()) detail::schema_error("functions", "expected an array");
    g.functions.reserve(fns.size());
    for (std::size_t fi = 0; fi < fns.size(); ++fi) {
      const std::string fp = "functions[" + std::to_string(fi) + "]";
      const json& fj = fns[fi];
      if (!fj.is_object()) detail::schema_error(fp, "expected an object");
      if (detail::index_value(detail::member(fj, fp, "id"), fp + ".id") != fi) {
        detail::schema_error(fp + ".id", "ids must be dense and in order");
      }
      Cfg cfg;
      const json& name = detail::member(fj, fp, "name");
      if (name.is_string()) {
        cfg.name = name.get<std::string>();
      } else if (!name.is_null()) {
        detail::schema_error(fp + ".name", "expected a string or null");
      }
      const json& thunk = detail::member(fj, fp, "is_thunk");
      if (!thunk.is_boolean()) detail::schema_error(fp + ".is_thunk", "expected a boolean");
      cfg.is_thunk = thunk.get<bool>();

      const json& blocks = detail::member(fj, fp, "blocks");
      if (!blocks.is_array()) detail::schema_error(fp + ".blocks", "expected an array");
      cfg.blocks.reserve(blocks.size());
      for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const std::string bp = fp + ".blocks[" + std::to_string(bi) + "]";
        const json& bj = blocks[bi];
        if (!bj.is_object()) detail::schema_error(bp, "expected an object");
        if (detail::index_value(detail::member(bj, bp, "id"), bp + ".id") != bi) {
          detail::schema_error(bp + ".id", "ids must be dense and in order");
        }
        const json& feats = detail::member(bj, bp, "features");
        if (!feats.is_array() || feats.size() != kFeatureDim) {
          detail::schema_error(bp + ".features", "expected an array of 12 numbers");
        }
        BasicBlockFeatures bf;
        for (std::size_t k = 0; k < kFeatureDim; ++k) {
          if (!feats[k].is_number()) {
            detail::schema_error(bp + ".features[" + std::to_string(k) + "]", "expected a number");
          }
          bf.values[k] = feats[k].get<double>();
        }
        cfg.blocks.push_back(std::move(bf));
      }
      cfg.edges = detail::edge_list(detail::member(fj, fp, "edges"), fp + ".edges");
      g.functions.push_back(std::move(cfg));
    }
    g.call_edges = detail::edge_list(detail::member(doc, "", "call_edges"), "call_edges");

    auto violations = validate(g);
    if (!violations.empty()) throw DataError("invalid GoG: " + violations.front());
    return g;
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
}

inline GoG read_gog(const fs::path& path) { return parse_gog(read_file(path), path.string()); }

/// Canonical gog-v1 text for `g`.
inline std::string write_gog(const GoG& g) {
  using detail::json;
  json doc;
  doc["schema_version"] = std::string(kGogSchema);
  doc["package"] = g.package;
  doc["binary_name"] = g.binary_name;
  doc["arch"] = g.arch;
  json fns = json::array();
  for (std::size_t fi = 0; fi < g.functions.size(); ++fi) {
    const Cfg& cfg = g.functions[fi];
    json fj;
    fj["id"] = fi;
    fj["name"] = cfg.name ? json(*cfg.name) : json(nullptr);
    fj["is_thunk"] = cfg.is_thunk;
    json blocks = json::array();
    for (std::size_t bi = 0; bi < cfg.blocks.size(); ++bi) {
      json feats = json::array();
      for (double v : cfg.blocks[bi].values) feats.push_back(v);
      blocks.push_back(json{{"features", std::move(feats)}, {"id", bi}});
    }
    fj["blocks"] = std::move(blocks);
    fj["edges"] = detail::edges_json(cfg.edges);
    fns.push_back(std::move(fj));
  }
  doc["functions"] = std::move(fns);
  doc["call_edges"] = detail::edges_json(g.call_edges);
  return doc.dump() + "\n";
}

inline void write_gog_file(const fs::path& path, const GoG& g) { write_file_atomic(path, write_gog(g)); }

/// Path of a binary inside a corpus directory tree.
inline fs::path corpus_relative_path(const GoG& g) {
  for (const std::string* part : {&g.package, &g.binary_name, &g.arch}) {
    if (part->empty() || part->find('/') != std::string::npos || *part == "." || *part == "..") {
      throw DataError("binary key component \"" + *part + "\" cannot be used as a path");
    }
  }
  if (g.binary_name == g.package) return fs::path(g.package) / (g.arch + ".gog.json");
  return fs::path(g.package) / g.binary_name / (g.arch + ".gog.json");
}

/// Reads every *.gog.json below `dir`, in sorted path order.
inline Corpus read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 9 &&
        name.compare(name.size() - 9, 9, ".gog.json") == 0) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Corpus c;
  c.provenance = dir.string();
  for (const auto& f : files) c.binaries.push_back(read_gog(f));
  auto violations = validate(c);
  if (!violations.empty()) throw DataError(dir.string() + ": " + violations.front());
  return c;
}

/// Writes each binary to its corpus path below `dir`.  Returns relative paths.
inline std::vector<std::string> write_corpus(const fs::path& dir, const Corpus& corpus) {
  std::vector<std::pair<fs::path, std::string>> rendered;
  for (const auto& g : corpus.binaries) rendered.emplace_back(corpus_relative_path(g), write_gog(g));
  std::vector<std::string> written;
  for (const auto& [rel, text] : rendered) {
    write_file_atomic(dir / rel, text);
    written.push_back(rel.generic_string());
  }
  return written;
}

/// Removes thunk functions and their call edges, compacting function ids.
inline GoG strip_thunks(const GoG& g) {
  GoG out;
  out.package = g.package;
  out.binary_name = g.binary_name;
  out.arch = g.arch;
  std::vector<std::optional<std::size_t>> remap(g.functions.size());
  for (std::size_t i = 0; i < g.functions.size(); ++i) {
    if (g.functions[i].is_thunk) continue;
    remap[i] = out.functions.size();
    out.functions.push_back(g.functions[i]);
  }
  for (const auto& [s, d] : g.call_edges) {
    if (remap[s] && remap[d]) out.call_edges.emplace_back(*remap[s], *remap[d]);
  }
  return out;
}

inline Corpus strip_thunks(const Corpus& c) {
  Corpus out;
  out.provenance = c.provenance;
  for (const auto& g : c.binaries) out.binaries.push_back(strip_thunks(g));
  return out;
}

struct DedupeReport {
  std::size_t replaced = 0;
  std::size_t unresolved = 0;
};

/// Replaces named declaration stubs with the bodied CFG of the same name found
/// in another binary of the same package and architecture.
inline std::vector<GoG> dedupe_declarations(std::vector<GoG> binaries, DedupeReport* report = nullptr) {
  DedupeReport rep;
  if (!binaries.empty()) {
    const std::string& pkg = binaries.front().package;
    for (const auto& g : binaries) {
      if (g.package != pkg) {
        throw DataError("dedupe_declarations: mixed packages \"" + pkg + "\" and \"" + g.package + "\"");
      }
    }
  }
  // (arch, name) -> (binary index, function index) of the first bodied definition.
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::size_t, std::size_t>>> bodies;
  for (std::size_t b = 0; b < binaries.size(); ++b) {
    const auto& fns = binaries[b].functions;
    for (std::size_t f = 0; f < fns.size(); ++f) {
      const Cfg& cfg = fns[f];
      if (cfg.name && !cfg.is_thunk && !cfg.blocks.empty() && !cfg.is_declaration()) {
        bodies[{binaries[b].arch, *cfg.name}].emplace_back(b, f);
      }
    }
  }
  std::vector<GoG> out = binaries;
  for (std::size_t b = 0; b < out.size(); ++b) {
    for (auto& cfg : out[b].functions) {
      if (!cfg.name || cfg.is_thunk || !cfg.is_declaration()) continue;
      auto it = bodies.find({out[b].arch, *cfg.name});
      const std::pair<std::size_t, std::size_t>* source = nullptr;
      if (it != bodies.end()) {
        for (const auto& cand : it->second) {
          if (cand.first != b) {
            source = &cand;
            break;
          }
        }
      }
      if (!source) {
        ++rep.unresolved;
        continue;
      }
      const Cfg& body = binaries[source->first].functions[source->second];
      cfg.blocks = body.blocks;
      cfg.edges = body.edges;
      ++rep.replaced;
    }
  }
  if (report) *report = rep;
  return out;
}

/// Thunk removal followed by per-package declaration deduplication.
inline Corpus clean_corpus(const Corpus& c, DedupeReport* report = nullptr) {
  std::map<std::string, std::vector<std::size_t>> by_pkg;
  for (std::size_t i = 0; i < c.binaries.size(); ++i) by_pkg[c.binaries[i].package].push_back(i);
  Corpus out;
  out.provenance = c.provenance;
  out.binaries.resize(c.binaries.size());
  DedupeReport total;
  for (const auto& [pkg, idx] : by_pkg) {
    std::vector<GoG> group;
    for (std::size_t i : idx) group.push_back(strip_thunks(c.binaries[i]));
    DedupeReport r;
    group = dedupe_declarations(std::move(group), &r);
    total.replaced += r.replaced;
    total.unresolved += r.unresolved;
    for (std::size_t k = 0; k < idx.size(); ++k) out.binaries[idx[k]] = std::move(group[k]);
  }
  if (report) *report = total;
  return out;
}

}  // namespace gognn

#endif  // GOGNN_INGEST_HPP
