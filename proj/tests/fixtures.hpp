#pragma once

// Small specs and tasks shared by the unit tests and the acceptance binary.

#include <initializer_list>
#include <utility>
#include <vector>

#include "ctrnas/data.hpp"
#include "ctrnas/space.hpp"

namespace ctrnas::testing {

inline BlockSpec block(BlockKind k, std::vector<int> dims = {}) { return BlockSpec{k, std::move(dims), default_activation(k)}; }

inline ChoiceGenome one_block(std::size_t n_blocks, std::size_t b, std::size_t n_preds, std::vector<std::pair<int, int>> pairs = {}) {
  ChoiceGenome g;
  g.blocks.assign(n_blocks, 0);
  g.blocks[b] = 1;
  g.connections.assign(n_preds, 1);
  g.dims.assign(n_blocks, 0);
  g.pairs = std::move(pairs);
  return g;
}

/// Production-like seed chain touching all five block kinds:
/// linear -> compressed dot -> embedfc -> gating -> linear.
inline SupernetSpec seed_chain(std::size_t S = 6, std::size_t N = 3, std::size_t D = 4) {
  SupernetSpec s;
  s.dense_width = S;
  s.num_embeddings = N;
  s.embedding_dim = D;
  s.bottleneck = 4;
  s.choices = {
      ChoiceSpec{{block(BlockKind::Linear, {8})}, {0, 1}, {}},
      ChoiceSpec{{block(BlockKind::CompressedDot, {3})}, {1, 2}, {}},
      ChoiceSpec{{block(BlockKind::EmbedFC, {2})}, {1, 2}, {}},
      ChoiceSpec{{block(BlockKind::PairwiseGating)}, {2, 3, 4}, {}},
      ChoiceSpec{{block(BlockKind::Linear, {6})}, {3, 4, 5}, {}},
  };
  s.defaults.choices = {one_block(1, 0, 2), one_block(1, 0, 2), one_block(1, 0, 2), one_block(1, 0, 3, {{0, 1}}),
                        one_block(1, 0, 3)};
  return s;
}

/// Grown supernet used across the suites (11 choices in full mode).
inline SupernetSpec grown_spec(std::uint64_t seed = 7, SearchMode mode = SearchMode::Full) {
  Rng rng(seed);
  SupernetSpec s = grow_supernet(seed_chain(), rng);
  s.mode = mode;
  return s;
}

/// Smaller grown space (short connection distances, three dimension options)
/// for tests that train many subnets.
inline SupernetSpec seed_chain_space(std::uint64_t seed = 7, SearchMode mode = SearchMode::Full) {
  Rng rng(seed);
  GrowOptions opts;
  opts.distances = {1, 2};
  opts.dim_options = 3;
  SupernetSpec s = grow_supernet(seed_chain(), rng, opts);
  s.mode = mode;
  return s;
}

/// Dims-only chain of `n` single-Linear choices with nine dimension options each.
inline SupernetSpec dims_only_chain(std::size_t n) {
  SupernetSpec s;
  s.dense_width = 4;
  s.num_embeddings = 2;
  s.embedding_dim = 2;
  s.mode = SearchMode::DimsOnly;
  for (std::size_t i = 0; i < n; ++i) {
    ChoiceSpec c{{block(BlockKind::Linear, {1, 2, 3, 4, 5, 6, 7, 8, 9})}, {i == 0 ? 0 : choice_node(i - 1)}, {}};
    s.choices.push_back(c);
    s.defaults.choices.push_back(one_block(1, 0, 1));
  }
  return s;
}

/// Dims-only chain whose free decisions are one dimension choice per
/// Linear block with `options` options each: a plain multi-decision bandit.
inline SupernetSpec bandit_spec(std::size_t decisions, int options) {
  SupernetSpec s;
  s.dense_width = 3;
  s.num_embeddings = 2;
  s.embedding_dim = 2;
  s.mode = SearchMode::DimsOnly;
  std::vector<int> dims;
  for (int k = 1; k <= options; ++k) dims.push_back(k);
  for (std::size_t i = 0; i < decisions; ++i) {
    s.choices.push_back(ChoiceSpec{{block(BlockKind::Linear, dims)}, {i == 0 ? 0 : choice_node(i - 1)}, {}});
    s.defaults.choices.push_back(one_block(1, 0, 1));
  }
  return s;
}

/// Task with a strong embedding-interaction term.
inline SynthTaskSpec interaction_task(std::uint64_t seed = 1, std::size_t S = 6, std::size_t N = 3, std::size_t D = 4) {
  SynthTaskSpec t;
  t.dense_width = S;
  t.num_embeddings = N;
  t.embedding_dim = D;
  t.base_ctr = 0.25;
  t.dense_scale = 0.5;
  t.pairs = {{0, 1, 1.5}, {1, 2, -1.0}};
  t.seed = seed;
  return t;
}

}  // namespace ctrnas::testing
