#include <sstream>

#include <gtest/gtest.h>

#include "ctrnas/cost.hpp"
#include "ctrnas/errors.hpp"
#include "fd_check.hpp"
#include "fixtures.hpp"

using namespace ctrnas;
using namespace ctrnas::testing;

namespace {

SupernetSpec single_linear(std::vector<int> dims) {
  SupernetSpec s;
  s.dense_width = 3;
  s.num_embeddings = 1;
  s.embedding_dim = 1;
  s.choices = {ChoiceSpec{{block(BlockKind::Linear, std::move(dims))}, {0}, {}}};
  s.defaults.choices = {one_block(1, 0, 1)};
  return s;
}

double expected_at(const SupernetSpec& spec, const SubnetGenome& g) {
  const auto dec = free_decisions(spec);
  const auto v = decisions_from_genome(spec, dec, g);
  Graph gr;
  std::vector<Value> probs;
  for (std::size_t d = 0; d < dec.size(); ++d) {
    Tensor p({dec[d].options});
    p.data[static_cast<std::size_t>(v[d])] = 1.0;
    probs.push_back(gr.constant(p));
  }
  return expected_flops(gr, spec, dec, probs).value()[0];
}

}  // namespace

TEST(Flops, AffineKernelCount) {
  FlopCounter c;
  Graph g(&c);
  matmul(g.constant(Tensor({1, 3})), g.constant(Tensor({3, 4})), g.constant(Tensor({4})));
  EXPECT_EQ(c.flops, 28u);
}

TEST(Flops, SingleLinearNetwork) {
  // affine 28 + layer norm 7*4+4 + relu 4 + head 2*4+1
  const SupernetSpec s = single_linear({4});
  EXPECT_EQ(count_flops(s, s.defaults).flops, 28u + 32u + 4u + 9u);
  EXPECT_EQ(count_flops(s, s.defaults, 8).flops, 8u * 73u);
  EXPECT_EQ(count_flops(s, s.defaults), oracle_count(s, s.defaults));
  EXPECT_EQ(count_flops(s, s.defaults).dense_params, 3u * 4u + 4u + 8u + 5u);
}

TEST(Flops, HalvedDimensionHalvesProjection) {
  const SupernetSpec s = single_linear({2, 4});
  SubnetGenome half = s.defaults, full = s.defaults;
  half.choices[0].dims = {0};
  full.choices[0].dims = {1};
  // Everything downstream of the projection is linear in the width too; the
  // only constant terms are the layer-norm +4 and the head bias.
  const auto fh = count_flops(s, half).flops - 5, ff = count_flops(s, full).flops - 5;
  EXPECT_EQ(2 * fh, ff);
  FlopCounter a, b;
  {
    Graph g(&a);
    matmul(g.constant(Tensor({1, 3})), g.constant(Tensor({3, 2})), g.constant(Tensor({2})));
  }
  {
    Graph g(&b);
    matmul(g.constant(Tensor({1, 3})), g.constant(Tensor({3, 4})), g.constant(Tensor({4})));
  }
  EXPECT_EQ(2 * a.flops, b.flops);
}

class FlopsModes : public ::testing::TestWithParam<SearchMode> {};

TEST_P(FlopsModes, ClosedFormEqualsInstrumentedCount) {
  const SupernetSpec spec = grown_spec(7, GetParam());
  Rng rng(100 + static_cast<int>(GetParam()));
  for (int k = 0; k < 100; ++k) {
    const SubnetGenome g = sample_random_genome(spec, rng);
    EXPECT_EQ(count_flops(spec, g), oracle_count(spec, g)) << "genome " << k;
  }
}

TEST_P(FlopsModes, OneHotExpectationEqualsCount) {
  const SupernetSpec spec = grown_spec(7, GetParam());
  Rng rng(200 + static_cast<int>(GetParam()));
  for (int k = 0; k < 100; ++k) {
    const SubnetGenome g = canonicalize(spec, sample_random_genome(spec, rng));
    EXPECT_EQ(expected_at(spec, g), static_cast<double>(count_flops(spec, g).flops)) << "genome " << k;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, FlopsModes, ::testing::Values(SearchMode::Full, SearchMode::DimsOnly, SearchMode::BlocksOnly));

TEST(Flops, AllOnesBoundsEverySubnet) {
  const SupernetSpec spec = grown_spec();
  const auto top = count_flops(spec, all_ones_genome(spec));
  EXPECT_EQ(top, oracle_count(spec, all_ones_genome(spec)));
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const auto r = count_flops(spec, sample_random_genome(spec, rng));
    EXPECT_LE(r.flops, top.flops);
    EXPECT_LE(r.dense_params, top.dense_params);
  }
}

TEST(Flops, MonotoneInDimensionsAndConnections) {
  const SupernetSpec spec = grown_spec();
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const SubnetGenome g = sample_random_genome(spec, rng);
    const auto base = count_flops(spec, g).flops;
    for (std::size_t i = 0; i < spec.choices.size(); ++i) {
      for (std::size_t b = 0; b < spec.choices[i].blocks.size(); ++b) {
        if (!g.choices[i].blocks[b] || g.choices[i].dims[b] + 1 >= static_cast<int>(spec.choices[i].blocks[b].dims.size())) continue;
        SubnetGenome up = g;
        ++up.choices[i].dims[b];
        EXPECT_GE(count_flops(spec, up).flops, base);
      }
      for (std::size_t p = 0; p < spec.choices[i].preds.size(); ++p) {
        if (g.choices[i].connections[p]) continue;
        SubnetGenome up = g;
        up.choices[i].connections[p] = 1;
        EXPECT_GE(count_flops(spec, up).flops, base);
      }
    }
  }
}

TEST(Flops, UniformDimsUseMeanWidth) {
  const SupernetSpec s = single_linear({2, 4});
  const auto dec = free_decisions(s);
  Graph g;
  const double f = expected_flops(g, s, dec, {g.constant(Tensor::vector({0.5, 0.5}))}).value()[0];
  // effective width 3: affine 2*3*3+3, norm 7*3+4, relu 3, head 2*3+1
  EXPECT_DOUBLE_EQ(f, 21.0 + 25.0 + 3.0 + 7.0);
}

TEST(Flops, ExpectationGradientMatchesFiniteDifferences) {
  const SupernetSpec spec = grown_spec();
  const auto dec = free_decisions(spec);
  Rng rng(5);
  std::vector<Tensor> logits;
  for (const auto& d : dec) logits.push_back(random_tensor({d.options}, rng));
  const auto r = fd_check_leaves(logits, [&](Graph& g, const std::vector<Value>& v) {
    std::vector<Value> probs;
    for (auto x : v) probs.push_back(softmax(x));
    // Scaled so that the relative error floor is meaningful.
    return mul_scalar(expected_flops(g, spec, dec, probs), 1e-3);
  });
  EXPECT_LT(r.max_rel, 1e-5);
}

TEST(Flops, DeterministicAcrossRuns) {
  const SupernetSpec spec = grown_spec();
  Rng a(9), b(9);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(oracle_count(spec, sample_random_genome(spec, a)), oracle_count(spec, sample_random_genome(spec, b)));
}

TEST(Statistics, RowCountAndBound) {
  const SupernetSpec spec = grown_spec();
  Rng rng(6);
  const auto st = subnet_statistics(spec, 10000, 0.8, rng);
  EXPECT_EQ(st.samples.size(), 10000u);
  const auto top = count_flops(spec, all_ones_genome(spec)).flops;
  for (const auto& r : st.samples) EXPECT_LE(r.flops, top);
  std::ostringstream os;
  write_statistics_table(os, st);
  std::size_t lines = 0;
  for (char c : os.str()) lines += c == '\n';
  EXPECT_EQ(lines, 10002u);  // header + reference + samples
}

TEST(Statistics, SingleAlwaysOnSampleIsTheFullNetwork) {
  // Seed-like spec without pairwise choices: one block and one dimension per
  // choice, so probability 1 reproduces the all-ones genome.
  SupernetSpec s = seed_chain();
  s.choices[3] = ChoiceSpec{{block(BlockKind::Linear, {5})}, {2, 3, 4}, {}};
  s.defaults.choices[3] = one_block(1, 0, 3);
  Rng rng(7);
  const auto st = subnet_statistics(s, 1, 1.0, rng);
  ASSERT_EQ(st.samples.size(), 1u);
  EXPECT_EQ(st.samples[0], count_flops(s, all_ones_genome(s)));
  EXPECT_THROW(subnet_statistics(s, 0, 1.0, rng), ArgumentError);
}
