#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "ctrnas/errors.hpp"
#include "ctrnas/space.hpp"
#include "fixtures.hpp"

using namespace ctrnas;
using namespace ctrnas::testing;

TEST(DimensionOptions, SeedHundred) {
  EXPECT_EQ(grown_dimension_options(100), (std::vector<int>{50, 62, 75, 87, 100, 112, 125}));
}

TEST(DimensionOptions, SmallSeedsDeduplicateAndStayPositive) {
  const auto d = grown_dimension_options(1);
  EXPECT_EQ(d, (std::vector<int>{1}));
  for (int seed : {2, 3, 5, 17, 64}) {
    const auto o = grown_dimension_options(seed);
    EXPECT_TRUE(std::is_sorted(o.begin(), o.end()));
    EXPECT_EQ(std::adjacent_find(o.begin(), o.end()), o.end());
    EXPECT_GE(o.front(), 1);
    EXPECT_NE(std::find(o.begin(), o.end(), seed), o.end());
  }
}

TEST(DimensionMask, LeadingOnes) {
  EXPECT_EQ(dimension_mask(3, 5), (std::vector<double>{1, 1, 1, 0, 0}));
  for (int m = 1; m <= 9; ++m) {
    const auto v = dimension_mask(m, 9);
    EXPECT_EQ(std::count(v.begin(), v.end(), 1.0), m);
    EXPECT_TRUE(std::is_sorted(v.rbegin(), v.rend()));
  }
}

TEST(Grow, PredecessorDistancesAreAllowed) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SupernetSpec s = grown_spec(seed);
    ASSERT_NO_THROW(validate(s));
    for (std::size_t i = 0; i < s.choices.size(); ++i)
      for (int p : s.choices[i].preds) {
        if (p < kFirstChoiceNode) continue;
        const int d = choice_node(i) - p;
        EXPECT_TRUE(d == 1 || d == 2 || d == 3 || d == 6 || d == 9) << "distance " << d;
      }
  }
}

TEST(Grow, DuplicatesEmbeddingChoicesOnly) {
  // Seed has one CompressedDot and one EmbedFC choice: 5 + 2 choices.
  EXPECT_EQ(grown_spec().choices.size(), 7u);
  SupernetSpec flat = seed_chain();
  flat.choices = {ChoiceSpec{{block(BlockKind::Linear, {8})}, {0, 1}, {}},
                  ChoiceSpec{{block(BlockKind::PairwiseSum)}, {0, 2}, {}}};
  flat.defaults.choices = {one_block(1, 0, 2), one_block(1, 0, 2, {{0, 1}})};
  Rng rng(3);
  EXPECT_EQ(grow_supernet(flat, rng).choices.size(), 2u);
}

TEST(Grow, CompletesBlockGroups) {
  const SupernetSpec s = grown_spec();
  for (const auto& c : s.choices) {
    const bool emb = c.has_block(BlockKind::EmbedFC) || c.has_block(BlockKind::CompressedDot);
    if (emb) {
      EXPECT_TRUE(c.has_block(BlockKind::EmbedFC) && c.has_block(BlockKind::CompressedDot));
      EXPECT_EQ(c.blocks.size(), 2u);
    } else {
      EXPECT_EQ(c.blocks.size(), 3u);
    }
  }
}

TEST(Grow, DefaultsReproduceSeedBlocks) {
  const SupernetSpec s = grown_spec();
  ASSERT_NO_THROW(validate(s, s.defaults));
  for (std::size_t i = 0; i < s.choices.size(); ++i)
    EXPECT_EQ(std::count(s.defaults.choices[i].blocks.begin(), s.defaults.choices[i].blocks.end(), 1), 1);
}

TEST(Grow, RejectsMultiBlockSeed) {
  SupernetSpec s = seed_chain();
  s.choices[0].blocks.push_back(block(BlockKind::PairwiseSum));
  s.defaults.choices[0] = one_block(2, 0, 2, {{0, 0}});
  Rng rng(1);
  EXPECT_THROW(grow_supernet(s, rng), SpecError);
}

TEST(Validate, RejectsCycleAndBadDims) {
  SupernetSpec s = seed_chain();
  s.choices[1].preds = {1, 3};  // node 3 is choice 1 itself
  EXPECT_THROW(validate(s), SpecError);
  s = seed_chain();
  s.choices[0].blocks[0].dims = {4, 4};
  s.defaults.choices[0].dims = {0};
  EXPECT_THROW(validate(s), SpecError);
}

TEST(SpaceSize, LargeDimsOnlyShapes) {
  using boost::multiprecision::pow;
  EXPECT_EQ(search_space_size(dims_only_chain(93)), pow(BigInt(9), 93));
  EXPECT_EQ(search_space_size(dims_only_chain(28)), pow(BigInt(9), 28));
  EXPECT_EQ(search_space_size(dims_only_chain(19)), pow(BigInt(9), 19));
}

TEST(SpaceSize, SingleChoiceSevenDims) {
  SupernetSpec s = dims_only_chain(1);
  s.choices[0].blocks[0].dims = {1, 2, 3, 4, 5, 6, 7};
  s.mode = SearchMode::Full;
  EXPECT_EQ(search_space_size(s), BigInt(7));
}

TEST(SpaceSize, MatchesEnumerationOnTinySpace) {
  SupernetSpec s = dims_only_chain(2);
  s.mode = SearchMode::Full;
  s.choices[0].blocks = {block(BlockKind::Linear, {1, 2}), block(BlockKind::PairwiseSum)};
  s.choices[1].blocks = {block(BlockKind::Linear, {2, 3, 4})};
  s.choices[1].preds = {0, 2};
  s.defaults.choices = {one_block(2, 0, 1, {{0, 0}}), one_block(1, 0, 2)};
  const auto all = enumerate_genomes(s, 1000);
  ASSERT_TRUE(all.has_value());
  // Decision product: choice 0 has 2 blocks x 2 dims, choice 1 has 3 connection
  // patterns x 3 dims. Distinct subnets: the sum block ignores the dim option.
  EXPECT_EQ(search_space_size(s), BigInt(4 * 9));
  EXPECT_EQ(all->size(), 3u * 9u);
}

TEST(SpaceSize, BlocksOnlyCountsBlocks) {
  const SupernetSpec s = grown_spec(7, SearchMode::BlocksOnly);
  BigInt expect = 1;
  for (const auto& c : s.choices) expect *= c.blocks.size();
  EXPECT_EQ(search_space_size(s), expect);
}

TEST(Sampling, ProbabilityOneSetsAllConnections) {
  const SupernetSpec s = grown_spec();
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto g = sample_random_genome(s, rng, 1.0);
    ASSERT_NO_THROW(validate(s, g));
    for (const auto& c : g.choices)
      for (auto bit : c.connections) EXPECT_EQ(bit, 1);
  }
}

TEST(Sampling, DimsOnlyKeepsFrozenFields) {
  const SupernetSpec s = grown_spec(7, SearchMode::DimsOnly);
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const auto g = sample_random_genome(s, rng);
    for (std::size_t i = 0; i < s.choices.size(); ++i) {
      EXPECT_EQ(g.choices[i].blocks, s.defaults.choices[i].blocks);
      EXPECT_EQ(g.choices[i].connections, s.defaults.choices[i].connections);
      EXPECT_EQ(g.choices[i].pairs, s.defaults.choices[i].pairs);
    }
  }
}

TEST(Sampling, ConnectionBitRateNearTarget) {
  // Every grown choice has at least three predecessors, so the empty-mask
  // resampling bias is below 0.8 / (1 - 0.2^3) - 0.8 < 0.007.
  const SupernetSpec s = grown_spec();
  Rng rng(2024);
  std::size_t on = 0, total = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto g = sample_random_genome(s, rng, 0.8);
    for (std::size_t i = 0; i < s.choices.size(); ++i) {
      for (auto bit : g.choices[i].connections) on += bit;
      total += g.choices[i].connections.size();
    }
  }
  EXPECT_NEAR(static_cast<double>(on) / static_cast<double>(total), 0.8, 0.02);
}

TEST(Sampling, BlockChoiceIsUniform) {
  const SupernetSpec s = grown_spec();
  Rng rng(77);
  for (std::size_t i = 0; i < s.choices.size(); ++i) {
    const std::size_t nb = s.choices[i].blocks.size();
    std::vector<std::size_t> count(nb);
    for (int k = 0; k < 3000; ++k) {
      const auto g = sample_random_genome(s, rng);
      for (std::size_t b = 0; b < nb; ++b) count[b] += g.choices[i].blocks[b];
    }
    for (std::size_t b = 0; b < nb; ++b)
      EXPECT_NEAR(static_cast<double>(count[b]) / 3000.0, 1.0 / static_cast<double>(nb), 0.04);
  }
}

TEST(Decisions, RoundTripThroughGenome) {
  for (SearchMode m : {SearchMode::Full, SearchMode::DimsOnly, SearchMode::BlocksOnly}) {
    const SupernetSpec s = grown_spec(7, m);
    const auto dec = free_decisions(s);
    Rng rng(31);
    for (int k = 0; k < 100; ++k) {
      const auto g = canonicalize(s, sample_random_genome(s, rng));
      const auto v = decisions_from_genome(s, dec, g);
      EXPECT_EQ(canonicalize(s, genome_from_decisions(s, dec, v)), g);
    }
  }
}

TEST(Serialization, SpecAndGenomeRoundTrip) {
  const SupernetSpec s = grown_spec();
  EXPECT_EQ(spec_from_json(nlohmann::json::parse(to_json(s).dump())), s);
  Rng rng(8);
  for (int k = 0; k < 100; ++k) {
    const auto g = sample_random_genome(s, rng);
    const auto back = genome_from_json(nlohmann::json::parse(to_json(g).dump()));
    EXPECT_EQ(back, g);
    EXPECT_EQ(genome_id(back), genome_id(g));
  }
}

TEST(Serialization, MalformedInputThrows) {
  EXPECT_THROW(spec_from_json(nlohmann::json{{"version", 1}}), SpecError);
  EXPECT_THROW(genome_from_json(nlohmann::json::parse("[1,2]")), GenomeError);
}

TEST(GenomeValidation, PairwiseNeedsAPair) {
  SupernetSpec s = seed_chain();
  SubnetGenome g = s.defaults;
  g.choices[3].pairs.clear();
  EXPECT_THROW(validate(s, g), GenomeError);
  g = s.defaults;
  g.choices[0].connections = {0, 0};
  EXPECT_THROW(validate(s, g), GenomeError);
}

TEST(Adaptors, ShapeArithmetic) {
  // flat2d on {2D[.x3], 3D[.x2x2]} -> width 7
  SupernetSpec s;
  s.dense_width = 3;
  s.num_embeddings = 2;
  s.embedding_dim = 2;
  s.choices = {ChoiceSpec{{block(BlockKind::Linear, {2})}, {0, 1}, {}}};
  s.defaults.choices = {one_block(1, 0, 2)};
  EXPECT_EQ(compute_shapes(s).choices[0].linear_in, 7u);
  // concat3d on {3D[.x2x4], 2D[.x3]} -> 3 rows
  s.embedding_dim = 4;
  s.choices = {ChoiceSpec{{block(BlockKind::EmbedFC, {2})}, {0, 1}, {}},
               ChoiceSpec{{block(BlockKind::Linear, {2})}, {2}, {}}};
  s.defaults.choices = {one_block(1, 0, 2), one_block(1, 0, 1)};
  EXPECT_EQ(compute_shapes(s).choices[0].rows_in, 3u);
  // list2d on a 3D[.x2x3] node -> one 2D of width 6
  s.embedding_dim = 3;
  EXPECT_EQ(compute_shapes(s).flat(kEmbeddingNode), 6u);
}

TEST(ActiveChoices, DisconnectedChoicesAreDead) {
  SupernetSpec s = seed_chain();
  SubnetGenome g = s.defaults;
  g.choices[4].connections = {0, 0, 1};  // last choice reads only choice 3
  const auto alive = active_choices(s, g);
  EXPECT_EQ(alive, (std::vector<bool>{true, true, false, true, true}));
  g.choices[3].pairs = {{0, 0}};  // choice 3 now reads only choice 0
  EXPECT_EQ(active_choices(s, g), (std::vector<bool>{true, false, false, true, true}));
}
