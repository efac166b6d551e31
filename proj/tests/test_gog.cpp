#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gognn/gog.hpp"
#include "test_util.hpp"

using namespace gognn;
using testutil::block;

namespace {

// Fisher-Yates from the end with rejection-sampled indices, written against
// the raw engine.
std::vector<std::string> reference_shuffle(std::vector<std::string> v, std::uint64_t seed) {
  std::mt19937_64 e(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % i;
    std::uint64_t x;
    do x = e(); while (x >= lim);
    std::swap(v[i - 1], v[x % i]);
  }
  return v;
}

std::set<std::string> packages(const Corpus& c) {
  std::set<std::string> s;
  for (const auto& g : c.binaries) s.insert(g.package);
  return s;
}

}  // namespace

TEST(Gog, CallEdgeOutOfRangeIsReported) {
  GoG g;
  for (int i = 0; i < 3; ++i) {
    Cfg c;
    c.blocks.push_back(block({1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
    g.functions.push_back(c);
  }
  g.call_edges = {{0, 7}};
  EXPECT_EQ(validate(g), std::vector<std::string>{"call edge 0→7: callee out of range"});
}

TEST(Gog, EmptyGogIsValid) { EXPECT_TRUE(validate(GoG{}).empty()); }

TEST(Gog, ShortFeatureVectorNamesTheBlock) {
  GoG g;
  Cfg c;
  c.blocks.push_back(block(std::vector<double>(11, 0.0)));
  g.functions.push_back(c);
  const auto v = validate(g);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("function 0 block 0"), std::string::npos) << v[0];
}

TEST(Gog, OtherViolations) {
  Cfg c;
  c.blocks.push_back(block({1, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  c.edges = {{0, 0}, {0, 0}, {0, 3}};
  const auto v = validate(c);
  EXPECT_EQ(v.size(), 3u);
  Cfg empty;
  EXPECT_EQ(validate(empty).size(), 1u);
  empty.is_thunk = true;
  EXPECT_TRUE(validate(empty).empty());
}

TEST(Gog, SplitFiveByFourMatchesReferenceShuffle) {
  const Corpus c = testutil::tiny_corpus(5, {"a", "b", "c", "d"}, 2);
  const auto [train, test] = split_by_package(c, 0.8, 1);
  EXPECT_EQ(train.binaries.size(), 16u);
  EXPECT_EQ(test.binaries.size(), 4u);
  const auto order = reference_shuffle(packages_of(c), 1);
  EXPECT_EQ(packages(test), std::set<std::string>{order.back()});
  // Frozen from the reference shuffle above.
  EXPECT_EQ(order.back(), "pkg3");
}

TEST(Gog, SplitTwoPackagesAtHalf) {
  const Corpus c = testutil::tiny_corpus(2, {"a", "b"}, 2);
  const auto [train, test] = split_by_package(c, 0.5, 7);
  EXPECT_EQ(packages(train).size(), 1u);
  EXPECT_EQ(packages(test).size(), 1u);
}

TEST(Gog, SplitNeedsTwoPackages) {
  const Corpus c = testutil::tiny_corpus(1, {"a", "b"}, 2);
  try {
    split_by_package(c, 0.8, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot split"), std::string::npos);
  }
  EXPECT_THROW(split_by_package(testutil::tiny_corpus(3, {"a"}, 1), 1.0, 0), ConfigError);
}

TEST(Gog, SplitIsDisjointCompleteAndDeterministic) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t np = 2 + rng.index(8);
    Corpus c;
    for (std::size_t p = 0; p < np; ++p) {
      const std::size_t nb = 1 + rng.index(4);
      for (std::size_t b = 0; b < nb; ++b) {
        c.binaries.push_back(testutil::random_gog(rng, 3, 3, "q" + std::to_string(p), "a" + std::to_string(b)));
      }
    }
    const double frac = rng.uniform(0.1, 0.9);
    const auto [train, test] = split_by_package(c, frac, seed);
    const auto [train2, test2] = split_by_package(c, frac, seed);
    EXPECT_EQ(train, train2);
    EXPECT_EQ(test, test2);
    EXPECT_EQ(train.binaries.size() + test.binaries.size(), c.binaries.size());
    const auto a = packages(train), b = packages(test);
    for (const auto& p : a) EXPECT_EQ(b.count(p), 0u) << p;
    EXPECT_LE(static_cast<double>(train.binaries.size()), frac * static_cast<double>(c.binaries.size()) + 1e-9);
  }
}

TEST(Gog, AnythingThatValidatesEmbeds) {
  const Model model(ModelConfig::uniform(8, 2, true), 3);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    GoG g = testutil::random_gog(rng, 5, 6);
    // random corruptions, some of which make the GoG invalid
    if (rng.bernoulli(0.2)) g.call_edges.push_back({0, g.functions.size() + rng.index(3)});
    if (rng.bernoulli(0.2)) g.functions[0].blocks[0].values.pop_back();
    if (rng.bernoulli(0.2)) g.functions[0].blocks[0].values[1] = g.functions[0].blocks[0].values[0] + 1;
    if (!validate(g).empty()) continue;
    const Tensor e = embed_functions(g, model);
    EXPECT_EQ(e.rows(), g.functions.size());
    EXPECT_EQ(e.cols(), 8u);
  }
}
