#ifndef GOGNN_HGNN_HPP
#define GOGNN_HGNN_HPP

// Hierarchical GNN over a Graph-of-Graph.
//
// Stage 1 embeds every CFG: `n_gcn` graph convolutions
//   h_k <- ReLU(h_k W + sum_{m in N(k)} h_m M)
// optionally followed by one single-head attention layer, then a readout over
// blocks.  Stage 2 runs the same kind of stack over the call graph, starting
// from the CFG embeddings, and returns one vector per function.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gognn/error.hpp"
#include "gognn/gog.hpp"
#include "gognn/io.hpp"
#include "gognn/rng.hpp"
#include "gognn/tensor.hpp"

namespace gognn {

enum class Readout { kSum, kMean, kMax };
enum class NeighborMode { kOut, kIn, kBoth };

inline std::string to_string(Readout r) {
  switch (r) {
    case Readout::kSum: return "sum";
    case Readout::kMean: return "mean";
    case Readout::kMax: return "max";
  }
  return "sum";
}

inline std::string to_string(NeighborMode m) {
  switch (m) {
    case NeighborMode::kOut: return "out";
    case NeighborMode::kIn: return "in";
    case NeighborMode::kBoth: return "both";
  }
  return "both";
}

inline Readout parse_readout(const std::string& s) {
  if (s == "sum") return Readout::kSum;
  if (s == "mean") return Readout::kMean;
  if (s == "max") return Readout::kMax;
  throw ConfigError("unknown readout \"" + s + "\" (expected sum, mean or max)");
}

inline NeighborMode parse_neighbor_mode(const std::string& s) {
  if (s == "out") return NeighborMode::kOut;
  if (s == "in") return NeighborMode::kIn;
  if (s == "both") return NeighborMode::kBoth;
  throw ConfigError("unknown neighbor mode \"" + s + "\" (expected out, in or both)");
}

struct LayerStackConfig {
  std::size_t input_dim = kFeatureDim;
  std::size_t hidden_dim = 64;
  int n_gcn = 3;
  bool use_gat = true;
  Readout readout = Readout::kSum;
  NeighborMode neighbor_mode = NeighborMode::kBoth;

  /// Number of message-passing iterations in the stack.
  int depth() const { return n_gcn + (use_gat ? 1 : 0); }

  friend bool operator==(const LayerStackConfig&, const LayerStackConfig&) = default;
};

struct ModelConfig {
  LayerStackConfig cfg_stack;
  LayerStackConfig gog_stack{64, 64, 3, true, Readout::kSum, NeighborMode::kBoth};

  int cfg_iterations() const { return cfg_stack.depth(); }
  int gog_iterations() const { return gog_stack.depth(); }
  std::size_t embedding_dim() const { return gog_stack.hidden_dim; }

  void validate() const {
    for (const auto* s : {&cfg_stack, &gog_stack}) {
      if (s->n_gcn < 1) throw ConfigError("model: n_gcn must be >= 1");
      if (s->hidden_dim < 1) throw ConfigError("model: hidden_dim must be >= 1");
    }
    if (cfg_stack.input_dim != kFeatureDim) throw ConfigError("model: CFG input dimension must be 12");
    if (gog_stack.input_dim != cfg_stack.hidden_dim) {
      throw ConfigError("model: GoG input dimension " + std::to_string(gog_stack.input_dim) +
                        " does not match CFG output dimension " +
                        std::to_string(cfg_stack.hidden_dim));
    }
  }

  /// Both stacks built with the same layer recipe and width.
  static ModelConfig uniform(std::size_t hidden, int n_gcn, bool use_gat) {
    ModelConfig c;
    c.cfg_stack = {kFeatureDim, hidden, n_gcn, use_gat, Readout::kSum, NeighborMode::kBoth};
    c.gog_stack = {hidden, hidden, n_gcn, use_gat, Readout::kSum, NeighborMode::kBoth};
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Neighbor lists of an n-node directed graph under a neighbor mode.  Each
/// neighbor appears once per node even when edges run both ways.
inline Adjacency build_adjacency(std::size_t n, const std::vector<Edge>& edges, NeighborMode mode,
                                 bool include_self = false) {
  std::vector<std::set<std::size_t>> nb(n);
  for (const auto& [s, d] : edges) {
    if (s >= n || d >= n) {
      throw DataError("edge " + std::to_string(s) + "→" + std::to_string(d) + " out of range for " +
                      std::to_string(n) + " nodes");
    }
    if (mode != NeighborMode::kIn) nb[s].insert(d);
    if (mode != NeighborMode::kOut) nb[d].insert(s);
  }
  Adjacency adj;
  adj.offsets.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (include_self) nb[i].insert(i);
    adj.indices.insert(adj.indices.end(), nb[i].begin(), nb[i].end());
    adj.offsets.push_back(adj.indices.size());
  }
  return adj;
}

/// Graph structure handed to a layer stack.
struct GraphView {
  Adjacency neighbors;       // for graph convolutions
  Adjacency attention;       // neighbors plus self, for the attention layer

  static GraphView build(std::size_t n, const std::vector<Edge>& edges, NeighborMode mode) {
    return {build_adjacency(n, edges, mode, false), build_adjacency(n, edges, mode, true)};
  }
};

/// Resolves parameter names to tape leaves, caching one leaf per name.
class Binder {
 public:
  /// Parameters enter as constants; nothing receives gradients.
  Binder(Tape& tape, const ParameterMap& params) : tape_(tape), params_(params) {}

  /// Gradients accumulate into each Parameter's own grad.
  Binder(Tape& tape, ParameterMap& params) : tape_(tape), params_(params) {
    for (auto& [name, p] : params) sinks_[name] = &p.grad;
  }

  /// Gradients accumulate into `sinks`, which is filled with zero tensors on demand.
  Binder(Tape& tape, const ParameterMap& params, std::map<std::string, Tensor>& sinks)
      : tape_(tape), params_(params) {
    for (const auto& [name, p] : params) {
      auto [it, inserted] = sinks.try_emplace(name, Tensor::zeros_like(p.value));
      sinks_[name] = &it->second;
    }
  }

  Tape& tape() { return tape_; }

  Var operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw ConfigError("model has no parameter \"" + name + "\"");
    Var v;
    auto s = sinks_.find(name);
    if (tape_.recording() && s != sinks_.end()) {
      v = tape_.parameter(p->second.value, *s->second);
    } else {
      v = tape_.constant(p->second.value);
    }
    bound_.emplace(name, v);
    return v;
  }

 private:
  Tape& tape_;
  const ParameterMap& params_;
  std::map<std::string, Tensor*> sinks_;
  std::map<std::string, Var> bound_;
};

inline std::string conv_name(const std::string& stack, int layer, const char* part) {
  return stack + ".conv" + std::to_string(layer) + "." + part;
}
inline std::string attn_name(const std::string& stack, const char* part) {
  return stack + ".attn." + part;
}

/// ReLU(x W + (A x) M) with A given by the neighbor lists.
inline Var gcn_layer(Var x, const Adjacency& adj, Var self_weight, Var neighbor_weight) {
  const Tensor& xv = x.value();
  if (xv.cols() != self_weight.value().rows() || xv.cols() != neighbor_weight.value().rows() ||
      self_weight.value().cols() != neighbor_weight.value().cols()) {
    throw ShapeError("gcn_layer: shape mismatch " + xv.shape_string() + " vs " +
                     self_weight.value().shape_string() + "/" +
                     neighbor_weight.value().shape_string());
  }
  Var self = ops::matmul(x, self_weight);
  Var agg = ops::matmul(ops::neighbor_sum(x, adj), neighbor_weight);
  return ops::relu(ops::add(self, agg));
}

/// Single-head attention over each node's neighbors plus itself:
///   e_ij = LeakyReLU(a . [W h_i | W h_j]),  alpha = softmax_j(e_ij),
///   h_i' = ReLU(sum_j alpha_ij W h_j).
/// `adj_with_self` must list node i among its own neighbors.
inline Var gat_layer(Var x, const Adjacency& adj_with_self, Var proj, Var score,
                     double negative_slope = 0.2) {
  const Tensor& xv = x.value();
  if (xv.cols() != proj.value().rows() || score.value().rows() != 2 * proj.value().cols() ||
      score.value().cols() != 1) {
    throw ShapeError("gat_layer: shape mismatch " + xv.shape_string() + " vs " +
                     proj.value().shape_string() + "/" + score.value().shape_string());
  }
  if (adj_with_self.nodes() != xv.rows()) {
    throw ShapeError("gat_layer: adjacency over " + std::to_string(adj_with_self.nodes()) +
                     " nodes vs features " + xv.shape_string());
  }
  std::vector<std::size_t> target, source;
  target.reserve(adj_with_self.indices.size());
  for (std::size_t i = 0; i < adj_with_self.nodes(); ++i) {
    for (std::size_t j : adj_with_self.neighbors(i)) {
      target.push_back(i);
      source.push_back(j);
    }
  }
  Var z = ops::matmul(x, proj);
  Var zi = ops::gather_rows(z, std::move(target));
  Var zj = ops::gather_rows(z, std::move(source));
  Var logits = ops::leaky_relu(ops::matmul(ops::concat(zi, zj), score), negative_slope);
  Var alpha = ops::softmax_over_group(logits, adj_with_self.offsets);
  Var msg = ops::scale_rows(zj, alpha);
  return ops::relu(ops::sum_rows(msg, adj_with_self.offsets));
}

/// Per-segment readout.  Every segment must be non-empty.
inline Var readout(Var x, const ops::Segments& segments, Readout kind) {
  for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
    if (segments[s + 1] == segments[s]) throw DataError("readout: empty graph");
  }
  if (segments.size() < 2) throw DataError("readout: empty graph");
  switch (kind) {
    case Readout::kSum: return ops::sum_rows(x, segments);
    case Readout::kMean: return ops::mean_rows(x, segments);
    case Readout::kMax: return ops::max_rows(x, segments);
  }
  throw ConfigError("unknown readout");
}

inline Var readout(Var x, Readout kind) { return readout(x, {0, x.value().rows()}, kind); }

/// Runs a layer stack (convolutions then optional attention) over a graph.
inline Var run_stack(Binder& bind, const std::string& prefix, const LayerStackConfig& cfg, Var x,
                     const GraphView& graph) {
  for (int l = 0; l < cfg.n_gcn; ++l) {
    x = gcn_layer(x, graph.neighbors, bind(conv_name(prefix, l, "self")),
                  bind(conv_name(prefix, l, "neighbor")));
  }
  if (cfg.use_gat) {
    x = gat_layer(x, graph.attention, bind(attn_name(prefix, "proj")), bind(attn_name(prefix, "score")));
  }
  return x;
}

/// Model parameters plus the configuration and seed that produced them.
class Model {
 public:
  Model() = default;

  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    add_stack("cfg", config_.cfg_stack);
    add_stack("gog", config_.gog_stack);
    // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn in name order.
    Rng rng(derive_seed(seed, "init"));
    for (auto& [name, p] : params_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
      for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
    }
  }

  Model(ModelConfig config, std::uint64_t seed, ParameterMap params)
      : config_(std::move(config)), seed_(seed), params_(std::move(params)) {
    config_.validate();
    Model shape_ref(config_, seed_);
    for (const auto& [name, p] : shape_ref.params_) {
      auto it = params_.find(name);
      if (it == params_.end()) throw DataError("checkpoint is missing parameter \"" + name + "\"");
      if (!it->second.value.same_shape(p.value)) {
        throw DataError("checkpoint parameter \"" + name + "\" has shape " +
                        it->second.value.shape_string() + ", expected " + p.value.shape_string());
      }
    }
    if (params_.size() != shape_ref.params_.size()) throw DataError("checkpoint has unexpected parameters");
  }

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterMap& params() { return params_; }
  const ParameterMap& params() const { return params_; }

  friend bool operator==(const Model& a, const Model& b) {
    if (!(a.config_ == b.config_) || a.seed_ != b.seed_ || a.params_.size() != b.params_.size()) return false;
    for (const auto& [name, p] : a.params_) {
      auto it = b.params_.find(name);
      if (it == b.params_.end() || !(it->second.value == p.value)) return false;
    }
    return true;
  }

 private:
  void add_stack(const std::string& prefix, const LayerStackConfig& s) {
    std::size_t in = s.input_dim;
    for (int l = 0; l < s.n_gcn; ++l) {
      params_.emplace(conv_name(prefix, l, "self"), Parameter(Tensor(in, s.hidden_dim)));
      params_.emplace(conv_name(prefix, l, "neighbor"), Parameter(Tensor(in, s.hidden_dim)));
      in = s.hidden_dim;
    }
    if (s.use_gat) {
      params_.emplace(attn_name(prefix, "proj"), Parameter(Tensor(in, s.hidden_dim)));
      params_.emplace(attn_name(prefix, "score"), Parameter(Tensor(2 * s.hidden_dim, 1)));
    }
  }

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  ParameterMap params_;
};

/// Block matrix, block adjacency and per-function segments of a GoG.
struct GogLayout {
  Tensor features;          // all blocks of all functions, stacked
  GraphView blocks;         // block-level graph (block-diagonal across functions)
  ops::Segments segments;   // function f owns rows [segments[f], segments[f+1])
  GraphView calls;          // function-level call graph

  static GogLayout build(const GoG& g, const ModelConfig& cfg) {
    GogLayout out;
    std::size_t total = 0;
    out.segments.push_back(0);
    for (std::size_t f = 0; f < g.functions.size(); ++f) {
      const Cfg& fn = g.functions[f];
      if (fn.blocks.empty()) {
        throw DataError(g.package + "/" + g.binary_name + "/" + g.arch + ": function " +
                        std::to_string(f) + " has no blocks (strip thunks first)");
      }
      total += fn.blocks.size();
      out.segments.push_back(total);
    }
    out.features = Tensor(total, kFeatureDim);
    std::vector<Edge> edges;
    for (std::size_t f = 0; f < g.functions.size(); ++f) {
      const Cfg& fn = g.functions[f];
      const std::size_t base = out.segments[f];
      for (std::size_t b = 0; b < fn.blocks.size(); ++b) {
        if (fn.blocks[b].values.size() != kFeatureDim) {
          throw DataError("function " + std::to_string(f) + " block " + std::to_string(b) +
                          ": feature vector must have 12 entries");
        }
        std::copy(fn.blocks[b].values.begin(), fn.blocks[b].values.end(),
                  out.features.row(base + b).begin());
      }
      for (const auto& [s, d] : fn.edges) {
        if (s >= fn.blocks.size() || d >= fn.blocks.size()) {
          throw DataError("function " + std::to_string(f) + ": block edge out of range");
        }
        edges.emplace_back(base + s, base + d);
      }
    }
    out.blocks = GraphView::build(total, edges, cfg.cfg_stack.neighbor_mode);
    out.calls = GraphView::build(g.functions.size(), g.call_edges, cfg.gog_stack.neighbor_mode);
    return out;
  }
};

/// Records the two-stage forward pass for one GoG; returns an F x d matrix
/// whose row f is the embedding of function f.
inline Var embed_gog(Binder& bind, const ModelConfig& cfg, const GogLayout& layout) {
  Tape& tape = bind.tape();
  if (layout.segments.size() < 2) return tape.constant(Tensor(0, cfg.embedding_dim()));
  Var x = tape.constant(layout.features);
  x = run_stack(bind, "cfg", cfg.cfg_stack, x, layout.blocks);
  Var fns = readout(x, layout.segments, cfg.cfg_stack.readout);
  return run_stack(bind, "gog", cfg.gog_stack, fns, layout.calls);
}

/// Per-function embeddings of a validated, thunk-free GoG (no gradients).
inline Tensor embed_functions(const GoG& g, const Model& model) {
  Tape tape(false);
  Binder bind(tape, model.params());
  const GogLayout layout = GogLayout::build(g, model.config());
  return embed_gog(bind, model.config(), layout).value();
}

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::string_view kCheckpointFormat = "cfg2vec-ckpt-v1";

inline nlohmann::json to_json(const LayerStackConfig& s) {
  return {{"input_dim", s.input_dim},   {"hidden_dim", s.hidden_dim},
          {"n_gcn", s.n_gcn},           {"use_gat", s.use_gat},
          {"readout", to_string(s.readout)}, {"neighbor_mode", to_string(s.neighbor_mode)}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"cfg_stack", to_json(c.cfg_stack)}, {"gog_stack", to_json(c.gog_stack)},
          {"T", c.cfg_iterations()}, {"L", c.gog_iterations()}};
}

inline LayerStackConfig stack_from_json(const nlohmann::json& j) {
  LayerStackConfig s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  s.n_gcn = j.at("n_gcn").get<int>();
  s.use_gat = j.at("use_gat").get<bool>();
  s.readout = parse_readout(j.at("readout").get<std::string>());
  s.neighbor_mode = parse_neighbor_mode(j.at("neighbor_mode").get<std::string>());
  return s;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.cfg_stack = stack_from_json(j.at("cfg_stack"));
  c.gog_stack = stack_from_json(j.at("gog_stack"));
  return c;
}

/// Canonical checkpoint text (sorted keys, shortest round-trip doubles, LF).
inline std::string write_checkpoint(const Model& m) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : m.params()) {
    nlohmann::json data = nlohmann::json::array();
    for (double v : p.value.data()) data.push_back(v);
    params[name] = {{"shape", p.value.shape()}, {"data", std::move(data)}};
  }
  nlohmann::json doc{{"format", std::string(kCheckpointFormat)},
                     {"config", to_json(m.config())},
                     {"params", std::move(params)},
                     {"seed", m.seed()}};
  return doc.dump() + "\n";
}

inline Model parse_checkpoint(std::string_view text, const std::string& source = "<checkpoint>") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(source + ": parse error at byte " + std::to_string(e.byte));
  }
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw DataError("unsupported checkpoint format");
    }
    ModelConfig cfg = model_config_from_json(doc.at("config"));
    ParameterMap params;
    for (const auto& [name, pj] : doc.at("params").items()) {
      params.emplace(name, Parameter(Tensor(pj.at("shape").get<std::vector<std::size_t>>(),
                                            pj.at("data").get<std::vector<double>>())));
    }
    return Model(cfg, doc.at("seed").get<std::uint64_t>(), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": malformed checkpoint: " + e.what());
  } catch (const std::exception& e) {
    throw DataError(source + ": " + e.what());
  }
}

inline Model read_checkpoint(const fs::path& path) { return parse_checkpoint(read_file(path), path.string()); }

}  // namespace gognn

#endif  // GOGNN_HGNN_HPP
