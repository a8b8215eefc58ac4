#include <gtest/gtest.h>

#include "ctrnas/cost.hpp"
#include "ctrnas/errors.hpp"
#include "ctrnas/post.hpp"
#include "fixtures.hpp"

using namespace ctrnas;
using namespace ctrnas::testing;

namespace {

SubnetGenome merge2(const SupernetSpec& s, const SubnetGenome& a, const SubnetGenome& b) {
  const std::vector<SubnetGenome> v{a, b};
  return merge_genomes(v, s);
}

bool any_scaled_active(const SupernetSpec& spec, const SubnetGenome& g, ScaleRule rule) {
  const auto alive = active_choices(spec, g);
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    if (!alive[i]) continue;
    for (std::size_t b = 0; b < spec.choices[i].blocks.size(); ++b) {
      if (!g.choices[i].blocks[b]) continue;
      const BlockKind k = spec.choices[i].blocks[b].kind;
      if (rule == ScaleRule::EmbedFc3x ? k == BlockKind::EmbedFC : has_dimension(k)) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Scale, NoEmbedFcMeansUnchanged) {
  auto spec = seed_chain();
  spec.choices[2] = ChoiceSpec{{block(BlockKind::Linear, {2})}, {1, 2}, {}};
  const auto out = naive_scale(spec.defaults, spec, ScaleRule::EmbedFc3x);
  EXPECT_EQ(out.genome, spec.defaults);
  EXPECT_EQ(out.spec, spec);
}

TEST(Scale, EmbedFcFourBecomesTwelve) {
  auto spec = seed_chain();
  spec.choices[2].blocks[0].dims = {2, 4};
  spec.defaults.choices[2].dims = {1};
  const auto out = naive_scale(spec.defaults, spec, ScaleRule::EmbedFc3x);
  EXPECT_EQ(selected_dim(out.spec, out.genome, 2, 0), 12);
  EXPECT_EQ(out.spec.choices[2].blocks[0].dims, (std::vector<int>{2, 4, 12}));
  // Defaults keep pointing at the same dimension value.
  EXPECT_EQ(selected_dim(out.spec, out.spec.defaults, 2, 0), 4);
  EXPECT_NO_THROW(validate(out.spec));
}

TEST(Scale, MixedRoundsUpAndDoublesBottleneck) {
  const auto spec = seed_chain();
  const auto out = naive_scale(spec.defaults, spec, ScaleRule::Mixed1p5x2x);
  EXPECT_EQ(selected_dim(out.spec, out.genome, 0, 0), 12);  // 8 * 1.5
  EXPECT_EQ(selected_dim(out.spec, out.genome, 1, 0), 5);   // ceil(3 * 1.5)
  EXPECT_EQ(selected_dim(out.spec, out.genome, 2, 0), 3);
  EXPECT_EQ(selected_dim(out.spec, out.genome, 4, 0), 9);
  EXPECT_EQ(out.spec.bottleneck, 2 * spec.bottleneck);
}

TEST(Scale, ScaledFlopsExceedOriginal) {
  for (ScaleRule rule : {ScaleRule::EmbedFc3x, ScaleRule::Mixed1p5x2x}) {
    const auto spec = grown_spec();
    Rng rng(1);
    int checked = 0;
    for (int k = 0; k < 100; ++k) {
      const auto g = sample_random_genome(spec, rng);
      const auto out = naive_scale(g, spec, rule);
      const auto before = count_flops(spec, g).flops, after = count_flops(out.spec, out.genome).flops;
      EXPECT_GE(after, before);
      if (any_scaled_active(spec, g, rule) && !(out.genome == g && out.spec == spec)) {
        EXPECT_GT(after, before);
        ++checked;
      }
    }
    EXPECT_GT(checked, 10);
  }
}

TEST(Merge, SingleAndSelf) {
  const auto spec = grown_spec();
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const auto g = sample_random_genome(spec, rng);
    const std::vector<SubnetGenome> one{g};
    EXPECT_EQ(merge_genomes(one, spec), g);
    EXPECT_EQ(merge2(spec, g, g), g);
  }
  EXPECT_THROW(merge_genomes(std::vector<SubnetGenome>{}, spec), ArgumentError);
  EXPECT_THROW(merge2(spec, spec.defaults, seed_chain().defaults), ArgumentError);
}

TEST(Merge, CommutativeAssociativeIdempotent) {
  const auto spec = grown_spec();
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto a = sample_random_genome(spec, rng), b = sample_random_genome(spec, rng), c = sample_random_genome(spec, rng);
    EXPECT_EQ(merge2(spec, a, b), merge2(spec, b, a));
    EXPECT_EQ(merge2(spec, merge2(spec, a, b), c), merge2(spec, a, merge2(spec, b, c)));
    const auto ab = merge2(spec, a, b);
    EXPECT_EQ(merge2(spec, ab, ab), ab);
    EXPECT_EQ(merge2(spec, ab, a), ab);
    const std::vector<SubnetGenome> abc{a, b, c};
    EXPECT_EQ(merge_genomes(abc, spec), merge2(spec, ab, c));
  }
}

TEST(Merge, CoversSourcesAndIsMonotoneInFlops) {
  const auto spec = grown_spec();
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const auto a = sample_random_genome(spec, rng), b = sample_random_genome(spec, rng);
    const auto m = merge2(spec, a, b);
    for (const auto* s : {&a, &b})
      for (std::size_t i = 0; i < spec.choices.size(); ++i) {
        for (std::size_t j = 0; j < s->choices[i].blocks.size(); ++j)
          if (s->choices[i].blocks[j]) {
            EXPECT_TRUE(m.choices[i].blocks[j]);
            EXPECT_GE(m.choices[i].dims[j], s->choices[i].dims[j]);
          }
        for (std::size_t p = 0; p < s->choices[i].connections.size(); ++p)
          if (s->choices[i].connections[p]) EXPECT_TRUE(m.choices[i].connections[p]);
        for (const auto& pr : s->choices[i].pairs)
          EXPECT_NE(std::find(m.choices[i].pairs.begin(), m.choices[i].pairs.end(), pr), m.choices[i].pairs.end());
      }
    const auto fm = count_flops(spec, m).flops;
    EXPECT_GE(fm, std::max(count_flops(spec, a).flops, count_flops(spec, b).flops));
    EXPECT_EQ(count_flops(spec, m), oracle_count(spec, m));
  }
}
