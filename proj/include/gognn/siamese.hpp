#ifndef GOGNN_SIAMESE_HPP
#define GOGNN_SIAMESE_HPP

// Cross-architecture pair labeling, balanced batching, the contrastive loss,
// and the Adam training loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gognn/error.hpp"
#include "gognn/gog.hpp"
#include "gognn/hgnn.hpp"
#include "gognn/io.hpp"
#include "gognn/rng.hpp"
#include "gognn/tensor.hpp"

namespace gognn {

/// A function addressed by (binary index in the corpus, function id).
struct FunctionRef {
  std::size_t binary = 0;
  std::size_t function = 0;

  friend auto operator<=>(const FunctionRef&, const FunctionRef&) = default;
};

struct PairLabel {
  int y = 1;  // +1 similar, -1 dissimilar
  FunctionRef query;
  FunctionRef key;

  friend bool operator==(const PairLabel&, const PairLabel&) = default;
};

struct Batch {
  std::vector<std::size_t> gogs;  // corpus binary indices
  std::vector<PairLabel> pairs;

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const PairLabel& p) { return p.y > 0; }));
  }
  std::size_t negatives() const { return pairs.size() - positives(); }

  friend bool operator==(const Batch&, const Batch&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  int epochs = 30;
  double margin = 0.5;
  AdamOptions adam;
  std::size_t max_pairs_per_batch = 512;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("train: margin must lie in (0, 1)");
    if (!(adam.lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw ConfigError("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ConfigError("train: Adam epsilon must be > 0");
    if (max_pairs_per_batch < 2) throw ConfigError("train: max pairs per batch must be >= 2");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},       {"margin", c.margin},
          {"lr", c.adam.lr},            {"beta1", c.adam.beta1},    {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},          {"max_pairs_per_batch", c.max_pairs_per_batch},
          {"seed", c.seed},             {"workers", c.workers}};
}

/// Contrastive loss of one pair: 1 - y_hat for similar pairs, max(0, y_hat - m)
/// for dissimilar ones.
inline double pair_loss(double y_hat, int y, double margin) {
  if (!(std::abs(y_hat) <= 1.0)) throw std::domain_error("pair_loss: similarity outside [-1, 1]");
  if (y == 1) return 1.0 - y_hat;
  if (y == -1) return std::max(0.0, y_hat - margin);
  throw std::domain_error("pair_loss: label must be +1 or -1");
}

/// Sum of pair_loss over a column of similarities.  Dissimilar pairs at or
/// below the margin pass no gradient.
inline Var contrastive_loss(Var similarity, std::vector<int> labels, double margin) {
  Tape& t = *similarity.tape;
  const Tensor& s = similarity.value();
  if (s.cols() != 1 || s.rows() != labels.size()) {
    throw ShapeError("contrastive_loss: shape mismatch " + s.shape_string() + " vs [" +
                     std::to_string(labels.size()) + "] labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += pair_loss(s[i], labels[i], margin);
    if (labels[i] == -1) t.note_branch(s[i] > margin);
  }
  const std::size_t out_id = t.size();
  return t.push(Tensor(1, 1, total), t.requires_grad(similarity),
                [&t, similarity, out_id, labels = std::move(labels), margin] {
                  const double g = t.grad_of(out_id)[0];
                  const Tensor& s = similarity.value();
                  Tensor& d = t.grad_buffer(similarity.id);
                  for (std::size_t i = 0; i < labels.size(); ++i) {
                    if (labels[i] == 1) {
                      d[i] -= g;
                    } else if (s[i] > margin) {
                      d[i] += g;
                    }
                  }
                });
}

/// Balanced batches for one epoch.
///
/// Packages that exist under at least two architectures are visited in a
/// seeded random order.  Each visit contributes a group of three binaries: a
/// random binary of the package, a binary of the same package built for a
/// different architecture (same binary name preferred), and a binary of a
/// package not yet present in the batch.  Same-name functions of the first
/// two form the positive pairs; an equal number of cross-package pairs
/// between the first and third are drawn as negatives.  A batch takes groups
/// while it has room for three more binaries and the next package is new to
/// it; batches lacking either label are dropped.
inline std::vector<Batch> build_batches(const Corpus& corpus, const TrainConfig& cfg, int epoch) {
  std::map<std::string, std::vector<std::size_t>> by_pkg;
  for (std::size_t i = 0; i < corpus.binaries.size(); ++i) by_pkg[corpus.binaries[i].package].push_back(i);
  if (by_pkg.size() < 2) throw DataError("batching needs at least 2 packages");

  std::vector<std::string> capable;
  for (const auto& [pkg, idx] : by_pkg) {
    std::set<std::string> archs;
    for (std::size_t i : idx) archs.insert(corpus.binaries[i].arch);
    if (archs.size() >= 2) capable.push_back(pkg);
  }
  if (capable.empty()) throw DataError("no positive pairs possible: no package has two architectures");

  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(capable);

  const std::size_t capacity = std::max<std::size_t>(cfg.batch_size, 3);
  std::vector<Batch> batches;
  Batch current;
  std::set<std::string> present;

  auto flush = [&] {
    if (current.positives() > 0 && current.negatives() > 0) {
      const std::size_t half = cfg.max_pairs_per_batch / 2;
      std::vector<PairLabel> pos, neg;
      for (const auto& p : current.pairs) (p.y > 0 ? pos : neg).push_back(p);
      if (pos.size() > half) {
        rng.shuffle(pos);
        pos.resize(half);
      }
      if (neg.size() > pos.size()) {
        rng.shuffle(neg);
        neg.resize(pos.size());
      }
      current.pairs = std::move(pos);
      current.pairs.insert(current.pairs.end(), neg.begin(), neg.end());
      batches.push_back(std::move(current));
    }
    current = Batch{};
    present.clear();
  };

  auto named = [&](std::size_t b) {
    std::vector<std::size_t> out;
    const auto& fns = corpus.binaries[b].functions;
    for (std::size_t f = 0; f < fns.size(); ++f)
      if (fns[f].name && !fns[f].is_thunk) out.push_back(f);
    return out;
  };

  for (const auto& pkg : capable) {
    if (present.count(pkg) || current.gogs.size() + 3 > capacity) flush();

    const auto& members = by_pkg.at(pkg);
    const std::size_t s = rng.pick(members);
    const GoG& sg = corpus.binaries[s];
    std::vector<std::size_t> partners, same_name;
    for (std::size_t i : members) {
      if (corpus.binaries[i].arch == sg.arch) continue;
      partners.push_back(i);
      if (corpus.binaries[i].binary_name == sg.binary_name) same_name.push_back(i);
    }
    const std::size_t p = rng.pick(same_name.empty() ? partners : same_name);

    std::vector<std::string> others;
    for (const auto& [q, _] : by_pkg)
      if (q != pkg && !present.count(q)) others.push_back(q);
    if (others.empty()) {
      flush();
      for (const auto& [q, _] : by_pkg)
        if (q != pkg) others.push_back(q);
    }
    const std::string& neg_pkg = rng.pick(others);
    const std::size_t n = rng.pick(by_pkg.at(neg_pkg));

    std::map<std::string, std::size_t> key_by_name;
    for (std::size_t f : named(p)) key_by_name.try_emplace(*corpus.binaries[p].functions[f].name, f);
    std::size_t n_pos = 0;
    const auto seed_fns = named(s);
    for (std::size_t f : seed_fns) {
      auto it = key_by_name.find(*sg.functions[f].name);
      if (it == key_by_name.end()) continue;
      current.pairs.push_back({1, {s, f}, {p, it->second}});
      ++n_pos;
    }
    const auto neg_fns = named(n);
    const std::size_t n_cand = seed_fns.size() * neg_fns.size();
    const std::size_t n_neg = std::min(n_pos, n_cand);
    std::vector<std::size_t> cand(n_cand);
    for (std::size_t i = 0; i < n_cand; ++i) cand[i] = i;
    for (std::size_t i = 0; i < n_neg; ++i) {
      std::swap(cand[i], cand[i + rng.index(n_cand - i)]);
      const std::size_t c = cand[i];
      current.pairs.push_back({-1, {s, seed_fns[c / neg_fns.size()]}, {n, neg_fns[c % neg_fns.size()]}});
    }
    current.gogs.insert(current.gogs.end(), {s, p, n});
    present.insert(pkg);
    present.insert(neg_pkg);
  }
  flush();
  return batches;
}

/// Precomputed block/call layouts for every binary in a corpus.
inline std::vector<GogLayout> build_layouts(const Corpus& corpus, const ModelConfig& cfg) {
  std::vector<GogLayout> out;
  out.reserve(corpus.binaries.size());
  for (const auto& g : corpus.binaries) out.push_back(GogLayout::build(g, cfg));
  return out;
}

struct BatchResult {
  double loss = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

/// Loss of a batch (sum of pair losses over cosine similarities).
///
/// Each binary is embedded once on its own tape; the pair losses are taken on
/// a separate tape over the stacked embeddings, and their gradients are pushed
/// back into each binary's tape.  When `grads` is given, per-binary gradients
/// are added to its Parameter grads in batch order, so the result does not
/// depend on `workers`.  `branches`, when given, receives the branch
/// pattern of every piecewise op evaluated.
inline BatchResult batch_loss(const Batch& batch, std::span<const GogLayout> layouts, const Model& model,
                              double margin, ParameterMap* grads = nullptr, int workers = 1,
                              std::vector<std::uint8_t>* branches = nullptr) {
  const bool accumulate_grads = grads != nullptr;
  const std::size_t nb = batch.gogs.size();
  std::vector<std::unique_ptr<Tape>> tapes(nb);
  std::vector<std::map<std::string, Tensor>> sinks(nb);
  std::vector<Var> emb(nb);

  auto forward = [&](std::size_t k) {
    tapes[k] = std::make_unique<Tape>(accumulate_grads);
    Binder bind = accumulate_grads ? Binder(*tapes[k], model.params(), sinks[k])
                                   : Binder(*tapes[k], model.params());
    emb[k] = embed_gog(bind, model.config(), layouts[batch.gogs[k]]);
  };
  auto for_each = [&](const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || nb <= 1) {
      for (std::size_t k = 0; k < nb; ++k) fn(k);
      return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = static_cast<std::size_t>(w); k < nb; k += static_cast<std::size_t>(workers)) fn(k);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  };
  for_each(forward);

  std::map<std::size_t, std::size_t> row_base;  // corpus binary -> first stacked row
  std::size_t rows = 0;
  const std::size_t dim = model.config().embedding_dim();
  for (std::size_t k = 0; k < nb; ++k) {
    row_base.emplace(batch.gogs[k], rows);
    rows += emb[k].value().rows();
  }
  Tensor stacked(rows, dim);
  for (std::size_t k = 0; k < nb; ++k) {
    const Tensor& e = emb[k].value();
    std::copy(e.data().begin(), e.data().end(), stacked.row(row_base[batch.gogs[k]]).begin());
  }

  Tape pair_tape(accumulate_grads);
  Var all = pair_tape.leaf(std::move(stacked));
  std::vector<std::size_t> qi, ki;
  std::vector<int> labels;
  BatchResult result;
  for (const auto& p : batch.pairs) {
    auto qb = row_base.find(p.query.binary);
    auto kb = row_base.find(p.key.binary);
    if (qb == row_base.end() || kb == row_base.end()) throw DataError("pair refers to a binary outside its batch");
    qi.push_back(qb->second + p.query.function);
    ki.push_back(kb->second + p.key.function);
    labels.push_back(p.y);
    (p.y > 0 ? result.n_pos : result.n_neg)++;
  }
  Var sim = ops::cosine(ops::gather_rows(all, std::move(qi)), ops::gather_rows(all, std::move(ki)));
  Var loss = contrastive_loss(sim, std::move(labels), margin);
  result.loss = loss.value()[0];

  if (branches) {
    for (const auto& t : tapes) branches->insert(branches->end(), t->branch_pattern().begin(), t->branch_pattern().end());
    branches->insert(branches->end(), pair_tape.branch_pattern().begin(), pair_tape.branch_pattern().end());
  }
  if (!accumulate_grads) return result;

  pair_tape.backward(loss);
  const Tensor& g_all = pair_tape.grad(all);
  for_each([&](std::size_t k) {
    const Tensor& e = emb[k].value();
    if (e.rows() == 0 || !tapes[k]->requires_grad(emb[k])) return;
    Tensor seed(e.rows(), e.cols());
    const std::size_t base = row_base[batch.gogs[k]];
    std::copy_n(g_all.row(base).begin(), e.size(), seed.data().begin());
    tapes[k]->backward(emb[k], seed);
  });
  for (std::size_t k = 0; k < nb; ++k) {
    for (auto& [name, g] : sinks[k]) {
      auto dst = grads->at(name).grad.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return result;
}

/// Forward-only loss of a batch over a corpus.
inline double batch_loss(const Batch& batch, const Corpus& corpus, const Model& model, double margin) {
  std::vector<GogLayout> layouts;
  layouts.reserve(corpus.binaries.size());
  for (const auto& g : corpus.binaries) layouts.push_back(GogLayout::build(g, model.config()));
  return batch_loss(batch, layouts, model, margin).loss;
}

struct TrainLogRow {
  int epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
  std::vector<double> epoch_mean_loss;
};

/// Non-finite loss during training.  Carries the last finite model.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, Model last_good, std::vector<TrainLogRow> log)
      : std::runtime_error(what), last_good_(std::move(last_good)), log_(std::move(log)) {}
  const Model& last_good() const { return last_good_; }
  const std::vector<TrainLogRow>& log() const { return log_; }

 private:
  Model last_good_;
  std::vector<TrainLogRow> log_;
};

using EpochCallback = std::function<void(int epoch, double mean_loss, const Model&)>;

/// Siamese training with Adam.  Deterministic given the seed.
inline TrainResult train(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  model_cfg.validate();
  TrainResult result{Model(model_cfg, cfg.seed), {}, {}};
  if (cfg.epochs == 0) return result;

  const std::vector<GogLayout> layouts = build_layouts(corpus, model_cfg);
  Adam adam(cfg.adam);
  Model& model = result.model;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = build_batches(corpus, cfg, epoch);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Model before = model;
      zero_grads(model.params());
      BatchResult r;
      try {
        r = batch_loss(batches[b], layouts, model, cfg.margin, &model.params(), cfg.workers);
        adam.step(model.params());
        for (const auto& [name, p] : model.params()) {
          if (!p.value.all_finite()) throw NonFiniteError("parameter " + name + " became non-finite");
        }
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                                  std::to_string(b) + ": " + e.what(),
                              std::move(before), result.log);
      }
      result.log.push_back({epoch, b, r.loss, r.n_pos, r.n_neg});
      sum += r.loss;
    }
    const double mean = batches.empty() ? 0.0 : sum / static_cast<double>(batches.size());
    result.epoch_mean_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean, model);
  }
  zero_grads(model.params());
  return result;
}

/// Metrics log as CSV (`epoch,batch,loss,n_pos,n_neg`, LF line endings).
inline std::string metrics_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "epoch,batch,loss,n_pos,n_neg\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + format_double(r.loss) + "," +
           std::to_string(r.n_pos) + "," + std::to_string(r.n_neg) + "\n";
  }
  return out;
}

}  // namespace gognn

#endif  // GOGNN_SIAMESE_HPP
