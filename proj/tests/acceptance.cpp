// Acceptance runner: one PASS/FAIL line per criterion.  Pass criterion
// numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace gognn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: gradient oracle -----------------------------------------------------------

// Two architecture variants of one random package plus a second package, so
// the batch has both labels.
Corpus grad_corpus(Rng& rng) {
  GoG a = testutil::random_gog(rng, 4, 6, "p0", "x");
  GoG b = a;
  b.arch = "y";
  for (auto& f : b.functions)
    for (auto& blk : f.blocks) blk.values[10] += static_cast<double>(rng.index(3));
  GoG n = testutil::random_gog(rng, 4, 6, "p1", "x");
  Corpus c;
  c.binaries = {a, b, n};
  return c;
}

Outcome gradient_oracle() {
  const ModelConfig mc = ModelConfig::uniform(8, 3, true);
  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0, skipped = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    Rng rng(static_cast<std::uint64_t>(t) + 1000);
    const Corpus c = grad_corpus(rng);
    Model m(mc, static_cast<std::uint64_t>(t));
    const auto layouts = build_layouts(c, mc);
    TrainConfig tc;
    tc.seed = static_cast<std::uint64_t>(t);
    const Batch batch = build_batches(c, tc, 0).front();
    zero_grads(m.params());
    batch_loss(batch, layouts, m, 0.5, &m.params());
    const auto r = testutil::check_gradients(m.params(), [&](std::vector<std::uint8_t>* br) {
      return batch_loss(batch, layouts, m, 0.5, nullptr, 1, br).loss;
    });
    checked += r.checked;
    skipped += r.skipped;
    if (r.worst_rel > worst) {
      worst = r.worst_rel;
      worst_where = r.worst_param + " (trial " + std::to_string(t) + ")";
    }
  }
  std::ostringstream os;
  os << trials << " trials, worst relative error " << worst << " at " << worst_where << ", " << checked
     << " elements checked, " << skipped << " skipped at activation kinks";
  return {worst < 1e-3 && checked > 0, os.str()};
}

// ---- 2: forward oracle ------------------------------------------------------------

Outcome forward_oracle() {
  double worst_gcn = 0.0, worst_gat = 0.0, worst_embed = 0.0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    Rng rng(static_cast<std::uint64_t>(t) + 7);
    const std::size_t n = 1 + rng.index(3);
    std::vector<Edge> edges;
    for (std::size_t k = 0; k < n; ++k) edges.push_back({rng.index(n), rng.index(n)});
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    auto rnd = [&](std::size_t r, std::size_t c) {
      Tensor x(r, c);
      for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
      return x;
    };
    const Tensor x = rnd(n, 5), w = rnd(5, 4), m = rnd(5, 4), a = rnd(8, 1);
    const auto mode = static_cast<NeighborMode>(rng.index(3));
    const std::string mode_name = to_string(mode);
    const oracle::Edges oe(edges.begin(), edges.end());

    Tape tape(false);
    const Tensor g = gcn_layer(tape.constant(x), build_adjacency(n, edges, mode), tape.constant(w),
                               tape.constant(m)).value();
    worst_gcn = std::max(worst_gcn, testutil::max_abs_diff(
        g, oracle::gcn(testutil::to_mat(x), oe, testutil::to_mat(w), testutil::to_mat(m), mode_name)));
    const Tensor h = gat_layer(tape.constant(x), build_adjacency(n, edges, mode, true), tape.constant(w),
                               tape.constant(a)).value();
    worst_gat = std::max(worst_gat, testutil::max_abs_diff(
        h, oracle::gat(testutil::to_mat(x), oe, testutil::to_mat(w), {a.data().begin(), a.data().end()},
                       mode_name)));

    ModelConfig mc = ModelConfig::uniform(6, 1 + static_cast<int>(rng.index(3)), rng.bernoulli(0.7));
    mc.cfg_stack.readout = static_cast<Readout>(rng.index(3));
    mc.cfg_stack.neighbor_mode = mode;
    mc.gog_stack.neighbor_mode = static_cast<NeighborMode>(rng.index(3));
    const Model model(mc, static_cast<std::uint64_t>(t));
    const GoG gog = testutil::random_gog(rng, 3, 3);
    worst_embed = std::max(worst_embed,
                           testutil::max_abs_diff(embed_functions(gog, model), testutil::oracle_embed(gog, model)));
  }
  const double worst = std::max({worst_gcn, worst_gat, worst_embed});
  std::ostringstream os;
  os << trials << " random graphs of <= 3 nodes, max abs difference gcn " << worst_gcn << ", gat " << worst_gat
     << ", embed " << worst_embed;
  return {worst <= 1e-9, os.str()};
}

// ---- 3, 4, 5: protocol runs ------------------------------------------------------

struct ProtocolResult {
  double first_loss = 0.0;
  double last_loss = 0.0;
  PrecisionTable table;
  double seconds = 0.0;
};

// Synth, clean, split 4:1 by package, train with defaults, evaluate p@k on the
// held-out packages.  With `unseen_arch`, that arch is generated too but kept
// out of training and only its functions are queried.
ProtocolResult run_protocol(std::uint64_t seed, const ModelConfig& mc,
                            const std::optional<std::string>& unseen_arch = std::nullopt) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.n_packages = 40;
  sc.min_functions = 10;
  sc.max_functions = 20;
  sc.arch_distortion = 0.1;
  sc.seed = seed;
  if (unseen_arch) sc.archs.push_back(*unseen_arch);
  const Corpus corpus = clean_corpus(generate(sc));
  auto [train_set, test_set] = split_by_package(corpus, 0.8, seed);
  if (unseen_arch) {
    std::erase_if(train_set.binaries, [&](const GoG& g) { return g.arch == *unseen_arch; });
  }
  TrainConfig tc;
  tc.seed = seed;
  const TrainResult tr = train(train_set, mc, tc);
  EvalOptions opts;
  opts.query_arch = unseen_arch;
  ProtocolResult r;
  r.first_loss = tr.epoch_mean_loss.front();
  r.last_loss = tr.epoch_mean_loss.back();
  r.table = precision_at_k(test_set, tr.model, opts);
  r.seconds = seconds_since(t0);
  return r;
}

Outcome protocol_replication() {
  const ProtocolResult r = run_protocol(0, ModelConfig{});
  const double p1 = r.table.at(1), p5 = r.table.at(5), base = r.table.random_baseline();
  const bool loss_ok = r.last_loss < 0.5 * r.first_loss;
  const bool p1_ok = p1 >= 0.60 && p1 >= 10.0 * base;
  const bool mono_ok = p5 >= p1;
  std::ostringstream os;
  os << "loss " << fmt(r.first_loss) << " -> " << fmt(r.last_loss) << " (ratio " << fmt(r.last_loss / r.first_loss)
     << (loss_ok ? " ok" : " FAIL") << "), p@1 " << fmt(p1) << " vs baseline " << fmt(base) << " over "
     << r.table.queries << " queries" << (p1_ok ? " ok" : " FAIL") << ", p@5 " << fmt(p5) << (mono_ok ? " ok" : " FAIL")
     << ", " << fmt(r.seconds, 1) << " s";
  return {loss_ok && p1_ok && mono_ok, os.str()};
}

Outcome unseen_architecture() {
  int above_zero = 0, above_3x = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ProtocolResult r = run_protocol(seed, ModelConfig{}, "mips");
    const double p1 = r.table.at(1), base = r.table.random_baseline();
    above_zero += p1 > 0.0;
    above_3x += p1 >= 3.0 * base;
    per_seed << (seed ? " " : "") << fmt(p1, 3);
    std::cerr << "  [4] seed " << seed << ": p@1 " << fmt(p1) << " baseline " << fmt(base) << " ("
              << fmt(r.seconds, 1) << " s)\n";
  }
  std::ostringstream os;
  os << "unseen-arch p@1 per seed [" << per_seed.str() << "], >= 3x baseline in " << above_3x
     << "/10, > 0 in " << above_zero << "/10";
  return {above_3x == 10 && above_zero >= 9, os.str()};
}

Outcome ablation_ordering() {
  const std::vector<std::pair<std::string, ModelConfig>> variants{
      {"GCN-GAT", ModelConfig::uniform(64, 1, true)},
      {"2GCN", ModelConfig::uniform(64, 2, false)},
      {"3GCN+GAT", ModelConfig::uniform(64, 3, true)},
  };
  std::vector<double> mean(variants.size(), 0.0);
  std::ostringstream os;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    os << (v ? "; " : "") << variants[v].first << " [";
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ProtocolResult r = run_protocol(seed, variants[v].second);
      mean[v] += r.table.at(1) / 5.0;
      os << (seed ? " " : "") << fmt(r.table.at(1), 3);
      std::cerr << "  [5] " << variants[v].first << " seed " << seed << ": p@1 " << fmt(r.table.at(1)) << " ("
                << fmt(r.seconds, 1) << " s)\n";
    }
    os << "] mean " << fmt(mean[v]);
  }
  const bool first = mean[0] <= mean[1] + 0.02;
  const bool second = mean[1] <= mean[2] + 0.02;
  os << "; GCN-GAT <= 2GCN " << (first ? "ok" : "FAIL") << ", 2GCN <= 3GCN+GAT " << (second ? "ok" : "FAIL");
  return {first && second, os.str()};
}

// ---- 6: invariant suite -----------------------------------------------------------

Corpus random_batch_corpus(Rng& rng) {
  Corpus c;
  const std::size_t np = 2 + rng.index(5);
  for (std::size_t p = 0; p < np; ++p) {
    const std::string pkg = "q" + std::to_string(p);
    const std::size_t na = 1 + rng.index(3);
    const std::size_t nf = 1 + rng.index(4);
    for (std::size_t a = 0; a < na; ++a) {
      GoG g;
      g.package = g.binary_name = pkg;
      g.arch = "a" + std::to_string(a);
      for (std::size_t f = 0; f < nf; ++f) {
        Cfg cfg;
        cfg.name = pkg + "_f" + std::to_string(rng.index(nf));
        cfg.blocks.push_back(testutil::random_block(rng));
        g.functions.push_back(cfg);
      }
      c.binaries.push_back(g);
    }
  }
  GoG extra = c.binaries.front();
  extra.arch = "zz";
  c.binaries.push_back(extra);
  return c;
}

Outcome invariant_suite() {
  std::vector<std::string> failures;
  std::ostringstream os;

  // readout permutation invariance
  {
    const Model m(ModelConfig{}, 1);
    double drift = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      GoG g = testutil::random_gog(rng, 4, 8);
      const Tensor base = embed_functions(g, m);
      for (auto& f : g.functions) {
        std::vector<std::size_t> perm(f.blocks.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        std::vector<BasicBlockFeatures> blocks(f.blocks.size());
        for (std::size_t b = 0; b < perm.size(); ++b) blocks[perm[b]] = f.blocks[b];
        f.blocks = blocks;
        for (auto& [s, d] : f.edges) {
          s = perm[s];
          d = perm[d];
        }
      }
      const Tensor moved = embed_functions(g, m);
      for (std::size_t i = 0; i < base.size(); ++i) drift = std::max(drift, std::abs(base[i] - moved[i]));
    }
    os << "permutation drift " << drift;
    if (drift > 1e-9) failures.push_back("permutation invariance");
  }

  // batch balance, label soundness, dead zone
  {
    std::size_t batches = 0, unbalanced = 0, unsound = 0, dead_checked = 0, dead_leaks = 0;
    // a shallow model keeps untrained similarities spread out, so batches
    // with every negative below some margin in (0, 1) are common
    const Model m(ModelConfig::uniform(8, 1, false), 3);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      Rng rng(seed + 50000);
      const Corpus c = random_batch_corpus(rng);
      TrainConfig tc;
      tc.seed = seed;
      tc.batch_size = 3 + rng.index(10);
      const auto bs = build_batches(c, tc, static_cast<int>(seed % 5));
      for (const auto& b : bs) {
        ++batches;
        if (b.positives() == 0 || b.negatives() == 0) ++unbalanced;
        for (const auto& p : b.pairs) {
          const GoG& q = c.binaries[p.query.binary];
          const GoG& k = c.binaries[p.key.binary];
          if (p.y > 0 && (q.arch == k.arch || q.package != k.package ||
                          q.functions[p.query.function].name != k.functions[p.key.function].name)) {
            ++unsound;
          }
          if (p.y < 0 && q.package == k.package) ++unsound;
        }
      }
      if (bs.empty()) continue;
      // dead zone: with the margin set above every negative similarity of a
      // batch, its negatives must pass no gradient at all
      std::map<std::size_t, Tensor> emb;
      for (std::size_t g : bs.front().gogs) emb[g] = embed_functions(c.binaries[g], m);
      Batch dead;
      dead.gogs = bs.front().gogs;
      double top = -1.0;
      for (const auto& p : bs.front().pairs) {
        if (p.y > 0) continue;
        dead.pairs.push_back(p);
        top = std::max(top, cosine_similarity(emb[p.query.binary].row(p.query.function),
                                              emb[p.key.binary].row(p.key.function)));
      }
      if (dead.pairs.empty() || top >= 0.99) continue;
      const double margin = std::max(0.01, (top + 1.0) / 2.0);
      ++dead_checked;
      ParameterMap grads = m.params();
      zero_grads(grads);
      batch_loss(dead, build_layouts(c, m.config()), m, margin, &grads);
      for (const auto& [name, p] : grads)
        for (double v : p.grad.data()) dead_leaks += v != 0.0;
    }
    os << "; " << batches << " batches over 1000 corpora, " << unbalanced << " unbalanced, " << unsound
       << " unsound labels; dead zone checked on " << dead_checked << " batches, " << dead_leaks
       << " nonzero grads";
    if (unbalanced) failures.push_back("batch balance");
    if (unsound) failures.push_back("label soundness");
    if (dead_leaks || dead_checked == 0) failures.push_back("dead zone");
  }

  // p@k monotonicity
  {
    std::size_t violations = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(seed);
      EmbeddingIndex idx;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t f = 0; f < 8; ++f) {
          std::vector<double> e(4);
          for (double& v : e) v = rng.uniform(-1.0, 1.0);
          idx.add({"p", "b" + std::to_string(b), "x", f, "n" + std::to_string(rng.index(8)), e});
        }
      const auto t = precision_at_k(idx, 8);
      for (std::size_t k = 1; k < 8; ++k) violations += t.at(k) > t.at(k + 1);
    }
    os << "; p@k monotonicity violations " << violations;
    if (violations) failures.push_back("p@k monotonicity");
  }

  // match-report partition
  {
    std::size_t bad = 0;
    const Model m(ModelConfig::uniform(16, 2, true), 0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const GoG a = testutil::random_gog(rng, 8, 5), b = testutil::random_gog(rng, 8, 5);
      const double tm = rng.uniform(0.0, 1.0), to = rng.uniform(-1.0, tm);
      const MatchReport r = match_binaries(a, b, m, tm, to);
      std::set<std::size_t> seen;
      for (const auto* list : {&r.matched, &r.mismatched, &r.orphans})
        for (const auto& e : *list) seen.insert(e.query);
      if (r.total() != a.functions.size() || seen.size() != a.functions.size()) ++bad;
    }
    os << "; match partition violations " << bad;
    if (bad) failures.push_back("match partition");
  }

  // GoG JSON round-trip byte stability
  {
    std::size_t bad = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(seed);
      GoG g = testutil::random_gog(rng, 6, 6);
      g.functions[0].blocks[0].values[11] = rng.uniform(0.0, 1.0);
      const std::string text = write_gog(g);
      const GoG back = parse_gog(text);
      if (!(back == g) || write_gog(back) != text) ++bad;
    }
    os << "; JSON round-trip failures " << bad;
    if (bad) failures.push_back("JSON round-trip");
  }

  for (const auto& f : failures) os << "; FAILED " << f;
  return {failures.empty(), os.str()};
}

// ---- 7: determinism ---------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gognn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome determinism() {
  const fs::path root = testutil::temp_dir("acceptance_determinism");
  std::vector<std::string> artifacts[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path d = root / ("run" + std::to_string(run));
    const std::string s = (d / "synth").string(), tr = (d / "train").string(), te = (d / "test").string();
    ExperimentConfig cfg;
    cfg.train.epochs = 5;
    cfg.train.workers = 1;
    write_file_atomic(d / "cfg.txt", render_config(cfg));
    const bool ok = cli({"synth", "--out", s, "--packages", "10", "--seed", "7"}) == 0 &&
                    cli({"split", "--in", s, "--out-train", tr, "--out-test", te, "--seed", "7"}) == 0 &&
                    cli({"train", "--data", tr, "--config", (d / "cfg.txt").string(), "--out",
                         (d / "ckpt.json").string(), "--metrics", (d / "metrics.csv").string()}) == 0 &&
                    cli({"eval", "--ckpt", (d / "ckpt.json").string(), "--test", te, "--out",
                         (d / "pk.csv").string()}) == 0;
    if (!ok) return {false, "pipeline run " + std::to_string(run) + " failed"};
    for (const char* f : {"ckpt.json", "metrics.csv", "pk.csv"}) artifacts[run].push_back(read_file(d / f));
  }
  fs::remove_all(root);
  const bool same = artifacts[0] == artifacts[1];
  std::ostringstream os;
  os << "two synth->split->train->eval runs: checkpoint (" << artifacts[0][0].size() << " bytes), metrics ("
     << artifacts[0][1].size() << " bytes) and p@k CSV " << (same ? "byte-identical" : "DIFFER");
  return {same, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"forward oracle", forward_oracle},
      {"protocol replication", protocol_replication},
      {"unseen architecture", unseen_architecture},
      {"ablation ordering", ablation_ordering},
      {"invariant suite", invariant_suite},
      {"determinism", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (!selected.empty() && !selected.count(c + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c + 1 << "] " << criteria[c].first << ": " << o.detail
              << " (" << fmt(seconds_since(t0), 1) << " s)" << std::endl;
  }
  return failed ? 1 : 0;
}
