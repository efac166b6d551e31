#ifndef GOGNN_CLI_HPP
#define GOGNN_CLI_HPP

// Command-line front end.  run_cli returns the process exit code:
//   0 success, 1 usage or configuration error, 2 data or validation error,
//   3 numeric divergence during training.

#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gognn/config.hpp"
#include "gognn/error.hpp"
#include "gognn/evalpred.hpp"
#include "gognn/gog.hpp"
#include "gognn/hgnn.hpp"
#include "gognn/ingest.hpp"
#include "gognn/io.hpp"
#include "gognn/siamese.hpp"
#include "gognn/synth.hpp"

namespace gognn {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kDiverged = 3;
}  // namespace exit_code

namespace detail {

inline Corpus load_clean_corpus(const std::string& dir, const char* flag) {
  Corpus raw;
  try {
    raw = read_corpus(dir);
  } catch (const DataError& e) {
    throw DataError(std::string(flag) + ": " + e.what());
  }
  if (raw.binaries.empty()) throw DataError(std::string(flag) + ": no *.gog.json files under " + dir);
  return clean_corpus(raw);
}

inline Model load_model(const std::string& path) {
  try {
    return read_checkpoint(path);
  } catch (const std::exception& e) {
    throw DataError(std::string("--ckpt: ") + e.what());
  }
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical GNN function embeddings over graph-of-graph binaries", "gognn"};
  app.require_subcommand(1);

  // synth
  SynthConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-architecture corpus");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--packages", sc.n_packages, "number of packages")->capture_default_str();
  synth->add_option("--archs", sc.archs, "comma-separated architecture tags")->delimiter(',')->capture_default_str();
  synth->add_option("--distortion", sc.arch_distortion, "cross-architecture distortion")->capture_default_str();
  synth->add_option("--seed", sc.seed, "random seed")->capture_default_str();

  // split
  std::string split_in, split_train, split_test;
  double train_frac = 0.8;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "package-disjoint train/test split");
  split->add_option("--in", split_in, "corpus directory")->required();
  split->add_option("--train-frac", train_frac, "fraction of packages used for training")->capture_default_str();
  split->add_option("--seed", split_seed, "random seed")->capture_default_str();
  split->add_option("--out-train", split_train, "training corpus directory")->required();
  split->add_option("--out-test", split_test, "test corpus directory")->required();

  // train
  std::string train_data, train_config, train_out, train_metrics;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> train_workers;
  auto* trn = app.add_subcommand("train", "train the siamese model");
  trn->add_option("--data", train_data, "training corpus directory")->required();
  trn->add_option("--config", train_config, "experiment config file (defaults when omitted)");
  trn->add_option("--out", train_out, "checkpoint path")->required();
  trn->add_option("--metrics", train_metrics, "per-batch metrics CSV")->required();
  trn->add_option("--seed", train_seed, "override train.seed");
  trn->add_option("--workers", train_workers, "override train.workers (results are identical for any value)");

  // embed
  std::string embed_ckpt, embed_data, embed_out;
  int embed_workers = 1;
  auto* emb = app.add_subcommand("embed", "embed every function of a corpus");
  emb->add_option("--ckpt", embed_ckpt, "checkpoint path")->required();
  emb->add_option("--data", embed_data, "corpus directory")->required();
  emb->add_option("--out", embed_out, "embedding index path")->required();
  emb->add_option("--workers", embed_workers, "worker threads")->capture_default_str();

  // eval
  std::string eval_ckpt, eval_test, eval_out, eval_reference;
  std::optional<std::string> eval_arch;
  std::size_t kmax = 5;
  int eval_workers = 1;
  auto* ev = app.add_subcommand("eval", "function-name prediction p@k on a test corpus");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  ev->add_option("--test", eval_test, "test corpus directory")->required();
  ev->add_option("--kmax", kmax, "largest k")->capture_default_str();
  ev->add_option("--out", eval_out, "p@k CSV path")->required();
  ev->add_option("--reference", eval_reference, "extra corpus added to the candidate pool");
  ev->add_option("--query-arch", eval_arch, "only query functions of this architecture");
  ev->add_option("--workers", eval_workers, "worker threads")->capture_default_str();

  // match
  std::string match_ckpt, match_stripped, match_reference, match_out;
  double t_match = 0.9, t_orphan = 0.5;
  auto* mt = app.add_subcommand("match", "match a stripped binary against a reference binary");
  mt->add_option("--ckpt", match_ckpt, "checkpoint path")->required();
  mt->add_option("--stripped", match_stripped, "stripped GoG file")->required();
  mt->add_option("--reference", match_reference, "reference GoG file")->required();
  mt->add_option("--t-match", t_match, "similarity at or above which a pair is matched")->capture_default_str();
  mt->add_option("--t-orphan", t_orphan, "similarity below which a function is an orphan")->capture_default_str();
  mt->add_option("--out", match_out, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; everything else is a usage error.
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    if (*synth) {
      sc.validate();
      const Corpus c = generate(sc);
      write_synth_corpus(synth_out, c, sc);
      out << "wrote " << c.binaries.size() << " binaries to " << synth_out << "\n";
    } else if (*split) {
      if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("--train-frac must lie in (0, 1)");
      Corpus c = read_corpus(split_in);
      if (c.binaries.empty()) throw DataError("--in: no *.gog.json files under " + split_in);
      auto [tr, te] = split_by_package(c, train_frac, split_seed);
      write_corpus(split_train, tr);
      write_corpus(split_test, te);
      out << "train " << packages_of(tr).size() << " packages / " << tr.binaries.size() << " binaries, test "
          << packages_of(te).size() << " packages / " << te.binaries.size() << " binaries\n";
    } else if (*trn) {
      ExperimentConfig ec;
      if (!train_config.empty()) {
        try {
          ec = read_config(train_config);
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("--config: ") + e.what());
        }
      }
      if (train_seed) ec.train.seed = *train_seed;
      if (train_workers) ec.train.workers = *train_workers;
      ec.train.validate();
      const Corpus c = detail::load_clean_corpus(train_data, "--data");
      try {
        TrainResult r = train(c, ec.model, ec.train);
        write_file_atomic(train_out, write_checkpoint(r.model));
        write_file_atomic(train_metrics, metrics_csv(r.log));
        if (!r.epoch_mean_loss.empty()) {
          out << "epochs " << r.epoch_mean_loss.size() << ", first mean loss "
              << format_double(r.epoch_mean_loss.front()) << ", last mean loss "
              << format_double(r.epoch_mean_loss.back()) << "\n";
        }
      } catch (const DivergenceError& e) {
        write_file_atomic(train_out, write_checkpoint(e.last_good()));
        write_file_atomic(train_metrics, metrics_csv(e.log()));
        err << "error: " << e.what() << " (last good checkpoint written to " << train_out << ")\n";
        return exit_code::kDiverged;
      }
    } else if (*emb) {
      const Model m = detail::load_model(embed_ckpt);
      const Corpus c = detail::load_clean_corpus(embed_data, "--data");
      const EmbeddingIndex index = build_index(c, m, embed_workers);
      write_file_atomic(embed_out, write_index(index));
      out << "embedded " << index.size() << " functions\n";
    } else if (*ev) {
      if (kmax < 1) throw ConfigError("--kmax must be >= 1");
      const Model m = detail::load_model(eval_ckpt);
      const Corpus test = detail::load_clean_corpus(eval_test, "--test");
      std::optional<Corpus> reference;
      if (!eval_reference.empty()) reference = detail::load_clean_corpus(eval_reference, "--reference");
      EvalOptions opts;
      opts.k_max = kmax;
      opts.reference = reference ? &*reference : nullptr;
      opts.query_arch = eval_arch;
      opts.workers = eval_workers;
      const PrecisionTable t = precision_at_k(test, m, opts);
      write_file_atomic(eval_out, precision_csv(t));
      out << "queries " << t.queries << ", pool names " << t.pool_names << "\n";
      for (std::size_t k = 1; k <= t.precision.size(); ++k) out << "p@" << k << " " << format_double(t.at(k)) << "\n";
    } else if (*mt) {
      if (t_orphan > t_match) throw ConfigError("--t-orphan must not exceed --t-match");
      const Model m = detail::load_model(match_ckpt);
      const GoG stripped = strip_thunks(read_gog(match_stripped));
      const GoG reference = strip_thunks(read_gog(match_reference));
      const MatchReport r = match_binaries(stripped, reference, m, t_match, t_orphan);
      write_file_atomic(match_out, to_json(r).dump() + "\n");
      out << format_report(r);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kDiverged;
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kData;
  }
  return exit_code::kOk;
}

}  // namespace gognn

#endif  // GOGNN_CLI_HPP
