#include <gtest/gtest.h>

#include "gognn/siamese.hpp"
#include "gognn/synth.hpp"
#include "test_util.hpp"

using namespace gognn;

namespace {

const std::string& fn_name(const Corpus& c, const FunctionRef& r) {
  return *c.binaries[r.binary].functions[r.function].name;
}

Corpus random_corpus(Rng& rng) {
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
        cfg.name = pkg + "_f" + std::to_string(f);
        cfg.blocks.push_back(testutil::random_block(rng));
        g.functions.push_back(cfg);
      }
      c.binaries.push_back(g);
    }
  }
  // at least one package must exist under two architectures
  GoG extra = c.binaries.front();
  extra.arch = "zz";
  c.binaries.push_back(extra);
  return c;
}

TrainConfig small_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.seed = 4;
  return t;
}

}  // namespace

TEST(Siamese, PairLossExamples) {
  EXPECT_EQ(pair_loss(1.0, 1, 0.5), 0.0);
  EXPECT_EQ(pair_loss(0.3, -1, 0.5), 0.0);
  EXPECT_NEAR(pair_loss(0.9, -1, 0.5), 0.4, 1e-15);
  EXPECT_EQ(pair_loss(-1.0, 1, 0.5), 2.0);
  EXPECT_THROW(pair_loss(1.5, 1, 0.5), std::domain_error);
  EXPECT_THROW(pair_loss(0.0, 0, 0.5), std::domain_error);
}

TEST(Siamese, LossIsNonNegative) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double y = rng.uniform(-1.0, 1.0);
    EXPECT_GE(pair_loss(y, 1, 0.5), 0.0);
    EXPECT_GE(pair_loss(y, -1, rng.uniform(0.01, 0.99)), 0.0);
  }
}

TEST(Siamese, ContrastiveLossExamples) {
  Tape t;
  EXPECT_EQ(contrastive_loss(t.leaf(Tensor::from_rows({{1.0}, {0.2}})), {1, -1}, 0.5).value()[0], 0.0);
  EXPECT_EQ(contrastive_loss(t.leaf(Tensor::from_rows({{0.0}})), {1}, 0.5).value()[0], 1.0);
}

TEST(Siamese, NegativesBelowMarginPassNoGradient) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Tape t;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
      const bool at_margin = rng.bernoulli(0.2);
      rows.push_back({at_margin ? 0.5 : rng.uniform(-1.0, 0.5)});
      labels.push_back(-1);
    }
    Var s = t.leaf(Tensor::from_rows(rows));
    t.backward(contrastive_loss(s, labels, 0.5));
    for (double g : t.grad(s).data()) EXPECT_EQ(g, 0.0);
  }
  Tape t;
  Var s = t.leaf(Tensor::from_rows({{0.7}, {0.1}}));
  t.backward(contrastive_loss(s, {-1, 1}, 0.5));
  EXPECT_EQ(t.grad(s), Tensor::from_rows({{1.0}, {-1.0}}));
}

TEST(Siamese, TwoPackagesTwoArchsGiveThreeAndThree) {
  const Corpus c = testutil::tiny_corpus(2, {"a", "b"}, 3);
  for (int epoch = 0; epoch < 5; ++epoch) {
    const auto batches = build_batches(c, TrainConfig{}, epoch);
    ASSERT_FALSE(batches.empty());
    for (const auto& b : batches) {
      EXPECT_EQ(b.positives(), 3u);
      EXPECT_EQ(b.negatives(), 3u);
    }
  }
}

TEST(Siamese, BatchingErrors) {
  EXPECT_THROW(build_batches(testutil::tiny_corpus(1, {"a", "b"}, 3), TrainConfig{}, 0), DataError);
  try {
    build_batches(testutil::tiny_corpus(3, {"a"}, 3), TrainConfig{}, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no positive pairs possible"), std::string::npos);
  }
}

TEST(Siamese, BatchesAreDeterministicPerEpoch) {
  const Corpus c = testutil::tiny_corpus(6, {"a", "b", "c"}, 4);
  TrainConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(build_batches(c, cfg, 3), build_batches(c, cfg, 3));
  EXPECT_NE(build_batches(c, cfg, 3), build_batches(c, cfg, 4));
}

TEST(Siamese, BatchesAreBalancedAndLabelsSound) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const Corpus c = random_corpus(rng);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 3 + rng.index(10);
    cfg.max_pairs_per_batch = 2 + 2 * rng.index(8);
    for (const auto& b : build_batches(c, cfg, static_cast<int>(seed % 3))) {
      EXPECT_GE(b.positives(), 1u);
      EXPECT_EQ(b.positives(), b.negatives());
      EXPECT_LE(b.pairs.size(), cfg.max_pairs_per_batch);
      EXPECT_LE(b.gogs.size(), std::max<std::size_t>(cfg.batch_size, 3));
      for (const auto& p : b.pairs) {
        const GoG& q = c.binaries[p.query.binary];
        const GoG& k = c.binaries[p.key.binary];
        EXPECT_NE(p.query, p.key);
        if (p.y > 0) {
          EXPECT_EQ(fn_name(c, p.query), fn_name(c, p.key));
          EXPECT_EQ(q.package, k.package);
          EXPECT_NE(q.arch, k.arch);
        } else {
          EXPECT_NE(q.package, k.package);
        }
      }
    }
  }
}

TEST(Siamese, BatchLossEqualsSumOfOraclePairLosses) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Corpus c = random_corpus(rng);
    const Model m(ModelConfig::uniform(8, 2, true), seed);
    for (const auto& b : build_batches(c, TrainConfig{}, 0)) {
      std::map<std::size_t, oracle::Mat> emb;
      for (std::size_t g : b.gogs) emb[g] = testutil::oracle_embed(c.binaries[g], m);
      double expect = 0.0;
      for (const auto& p : b.pairs) {
        const double y = oracle::cosine(emb[p.query.binary][p.query.function], emb[p.key.binary][p.key.function]);
        expect += oracle::pair_loss(y, p.y, 0.5);
      }
      EXPECT_NEAR(batch_loss(b, c, m, 0.5), expect, 1e-9);
    }
  }
}

TEST(Siamese, BatchGradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Corpus c = random_corpus(rng);
  Model m(ModelConfig::uniform(4, 1, true), 1);
  const auto layouts = build_layouts(c, m.config());
  const Batch b = build_batches(c, TrainConfig{}, 0).front();
  zero_grads(m.params());
  batch_loss(b, layouts, m, 0.5, &m.params());
  const auto r = testutil::check_gradients(m.params(), [&](std::vector<std::uint8_t>* br) {
    return batch_loss(b, layouts, m, 0.5, nullptr, 1, br).loss;
  });
  EXPECT_LT(r.worst_rel, 1e-4) << r.worst_param;
  EXPECT_GT(r.checked, 0u);
}

TEST(Siamese, WorkerCountDoesNotChangeGradients) {
  const Corpus c = testutil::tiny_corpus(4, {"a", "b", "c"}, 4);
  Model m(ModelConfig::uniform(8, 2, true), 2);
  const auto layouts = build_layouts(c, m.config());
  TrainConfig cfg;
  cfg.batch_size = 9;
  const Batch b = build_batches(c, cfg, 0).front();
  ParameterMap one = m.params(), four = m.params();
  zero_grads(one);
  zero_grads(four);
  const double l1 = batch_loss(b, layouts, m, 0.5, &one, 1).loss;
  const double l4 = batch_loss(b, layouts, m, 0.5, &four, 4).loss;
  EXPECT_EQ(l1, l4);
  for (const auto& [name, p] : one) EXPECT_EQ(p.grad, four.at(name).grad) << name;
}

TEST(Siamese, ZeroEpochsReturnsInitialization) {
  const Corpus c = testutil::tiny_corpus(2, {"a", "b"}, 3);
  const ModelConfig mc = ModelConfig::uniform(8, 1, true);
  const TrainResult r = train(c, mc, small_train(0));
  EXPECT_TRUE(r.model == Model(mc, 4));
  EXPECT_TRUE(r.log.empty());
}

TEST(Siamese, TrainingIsDeterministicAndReducesLoss) {
  SynthConfig sc;
  sc.n_packages = 6;
  sc.max_functions = 12;
  const Corpus c = generate(sc);
  const ModelConfig mc = ModelConfig::uniform(8, 1, true);
  TrainConfig cfg = small_train(15);
  cfg.adam.lr = 1e-2;
  const TrainResult a = train(c, mc, cfg);
  const TrainResult b = train(c, mc, cfg);
  EXPECT_EQ(metrics_csv(a.log), metrics_csv(b.log));
  EXPECT_EQ(write_checkpoint(a.model), write_checkpoint(b.model));
  cfg.workers = 3;
  const TrainResult w = train(c, mc, cfg);
  EXPECT_EQ(write_checkpoint(a.model), write_checkpoint(w.model));
  EXPECT_LT(a.epoch_mean_loss.back(), a.epoch_mean_loss.front());
}

TEST(Siamese, MetricsCsvFormat) {
  const std::string csv = metrics_csv({{0, 1, 0.25, 3, 3}});
  EXPECT_EQ(csv, "epoch,batch,loss,n_pos,n_neg\n0,1,0.25,3,3\n");
}
