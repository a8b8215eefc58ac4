#include "ctrnas/space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "ctrnas/errors.hpp"

namespace ctrnas {

namespace {

constexpr std::pair<BlockKind, std::string_view> kKindNames[] = {
    {BlockKind::Linear, "linear"},
    {BlockKind::EmbedFC, "embed_fc"},
    {BlockKind::CompressedDot, "compressed_dot"},
    {BlockKind::PairwiseGating, "pairwise_gating"},
    {BlockKind::PairwiseSum, "pairwise_sum"},
};

[[noreturn]] void spec_error(const std::string& msg) { throw SpecError("spec: " + msg); }
[[noreturn]] void genome_error(std::size_t c, const std::string& msg) {
  throw GenomeError("genome: choice " + std::to_string(c) + ": " + msg);
}

std::vector<int> right_candidates(const ChoiceSpec& c) {
  if (!c.right_preds.empty()) return c.right_preds;
  std::vector<int> all(c.preds.size());
  for (std::size_t p = 0; p < all.size(); ++p) all[p] = static_cast<int>(p);
  return all;
}

bool any_block(const ChoiceSpec& c, bool (*pred)(BlockKind)) {
  return std::any_of(c.blocks.begin(), c.blocks.end(), [&](const BlockSpec& b) { return pred(b.kind); });
}

bool uses_conn_fn(BlockKind k) { return uses_connections(k); }
bool pairwise_fn(BlockKind k) { return is_pairwise(k); }

bool enabled_any(const ChoiceSpec& cs, const ChoiceGenome& cg, bool (*pred)(BlockKind)) {
  for (std::size_t b = 0; b < cs.blocks.size(); ++b)
    if (cg.blocks[b] && pred(cs.blocks[b].kind)) return true;
  return false;
}

}  // namespace

std::string_view to_string(BlockKind k) {
  for (auto [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

BlockKind block_kind_from_string(std::string_view s) {
  for (auto [kind, name] : kKindNames)
    if (name == s) return kind;
  spec_error("unknown block kind '" + std::string(s) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: break;
  }
  return "identity";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  spec_error("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(SearchMode m) {
  switch (m) {
    case SearchMode::DimsOnly: return "dims_only";
    case SearchMode::BlocksOnly: return "blocks_only";
    case SearchMode::Full: break;
  }
  return "full";
}

SearchMode search_mode_from_string(std::string_view s) {
  if (s == "full") return SearchMode::Full;
  if (s == "dims_only") return SearchMode::DimsOnly;
  if (s == "blocks_only") return SearchMode::BlocksOnly;
  throw ConfigError("unknown search mode '" + std::string(s) + "'");
}

std::optional<std::size_t> ChoiceSpec::block_index(BlockKind k) const {
  for (std::size_t b = 0; b < blocks.size(); ++b)
    if (blocks[b].kind == k) return b;
  return std::nullopt;
}

bool ChoiceSpec::right_allowed(int pos) const {
  if (pos < 0 || static_cast<std::size_t>(pos) >= preds.size()) return false;
  return right_preds.empty() || std::find(right_preds.begin(), right_preds.end(), pos) != right_preds.end();
}

std::size_t SpecShapes::block_width(const SupernetSpec& spec, std::size_t choice, std::size_t block) const {
  const BlockSpec& b = spec.choices[choice].blocks[block];
  switch (b.kind) {
    case BlockKind::Linear: return static_cast<std::size_t>(b.max_dim());
    case BlockKind::CompressedDot: return choices[choice].rows_in * static_cast<std::size_t>(b.max_dim());
    case BlockKind::PairwiseGating:
    case BlockKind::PairwiseSum: return choices[choice].pairwise_width;
    case BlockKind::EmbedFC: break;
  }
  return 0;
}

SpecShapes compute_shapes(const SupernetSpec& spec) {
  SpecShapes sh;
  sh.embedding_dim = spec.embedding_dim;
  sh.nodes.resize(spec.node_count());
  sh.nodes[kDenseNode] = {spec.dense_width, 0};
  sh.nodes[kEmbeddingNode] = {0, spec.num_embeddings};
  sh.choices.resize(spec.choices.size());
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& c = spec.choices[i];
    ChoiceShape& cs = sh.choices[i];
    for (int p : c.preds) {
      const NodeShape& ns = sh.nodes.at(static_cast<std::size_t>(p));
      cs.linear_in += ns.flat(spec.embedding_dim);
      cs.rows_in += (ns.width2d > 0 ? 1 : 0) + ns.rows3d;
    }
    for (int r : right_candidates(c)) cs.pairwise_width = std::max(cs.pairwise_width, sh.flat(c.preds.at(static_cast<std::size_t>(r))));
    NodeShape& out = sh.nodes[static_cast<std::size_t>(choice_node(i))];
    for (std::size_t b = 0; b < c.blocks.size(); ++b) {
      if (c.blocks[b].kind == BlockKind::EmbedFC)
        out.rows3d = static_cast<std::size_t>(c.blocks[b].max_dim());
      else
        out.width2d = std::max(out.width2d, sh.block_width(spec, i, b));
    }
  }
  sh.head_in = spec.choices.empty() ? 0 : sh.flat(choice_node(spec.choices.size() - 1));
  return sh;
}

void validate(const SupernetSpec& spec) {
  if (spec.dense_width == 0 || spec.num_embeddings == 0 || spec.embedding_dim == 0)
    spec_error("raw input shapes must be positive");
  if (spec.bottleneck == 0) spec_error("bottleneck must be positive");
  if (spec.choices.empty()) spec_error("at least one choice must feed the head");
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& c = spec.choices[i];
    const std::string at = "choice " + std::to_string(i) + ": ";
    if (c.blocks.empty()) spec_error(at + "no blocks");
    std::set<BlockKind> kinds;
    for (const auto& b : c.blocks) {
      if (!kinds.insert(b.kind).second) spec_error(at + "duplicate block kind " + std::string(to_string(b.kind)));
      if (has_dimension(b.kind)) {
        if (b.dims.empty()) spec_error(at + std::string(to_string(b.kind)) + " needs dimension options");
        for (std::size_t k = 0; k < b.dims.size(); ++k) {
          if (b.dims[k] <= 0) spec_error(at + "dimension options must be positive");
          if (k > 0 && b.dims[k] <= b.dims[k - 1]) spec_error(at + "dimension options must be strictly increasing");
        }
      } else if (!b.dims.empty()) {
        spec_error(at + "pairwise blocks take no dimension options");
      }
    }
    if (c.preds.empty()) spec_error(at + "no predecessors");
    for (std::size_t p = 0; p < c.preds.size(); ++p) {
      if (c.preds[p] < 0 || c.preds[p] >= choice_node(i)) spec_error(at + "predecessor " + std::to_string(c.preds[p]) + " breaks DAG order");
      if (p > 0 && c.preds[p] <= c.preds[p - 1]) spec_error(at + "predecessors must be strictly increasing");
    }
    for (std::size_t r = 0; r < c.right_preds.size(); ++r) {
      if (c.right_preds[r] < 0 || static_cast<std::size_t>(c.right_preds[r]) >= c.preds.size())
        spec_error(at + "right operand position out of range");
      if (r > 0 && c.right_preds[r] <= c.right_preds[r - 1]) spec_error(at + "right operand positions must be increasing");
    }
  }
  try {
    validate(spec, spec.defaults, GenomeRules{true, true});
  } catch (const GenomeError& e) {
    spec_error(std::string("defaults: ") + e.what());
  }
}

void validate(const SupernetSpec& spec, const SubnetGenome& g, GenomeRules rules) {
  if (g.choices.size() != spec.choices.size())
    throw GenomeError("genome has " + std::to_string(g.choices.size()) + " choices, spec has " + std::to_string(spec.choices.size()));
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGenome& cg = g.choices[i];
    if (cg.blocks.size() != cs.blocks.size() || cg.dims.size() != cs.blocks.size())
      genome_error(i, "block/dims vector length mismatch");
    if (cg.connections.size() != cs.preds.size()) genome_error(i, "connection mask length mismatch");
    const auto enabled = std::count_if(cg.blocks.begin(), cg.blocks.end(), [](std::uint8_t v) { return v != 0; });
    if (enabled == 0) genome_error(i, "no block selected");
    if (enabled > 1 && !rules.allow_multi_block) genome_error(i, "more than one block selected");
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (cg.blocks[b] > 1) genome_error(i, "block mask must be binary");
      const int n = static_cast<int>(cs.blocks[b].dims.size());
      if (has_dimension(cs.blocks[b].kind) ? (cg.dims[b] < 0 || cg.dims[b] >= n) : cg.dims[b] != 0)
        genome_error(i, "dimension option out of range");
    }
    for (auto v : cg.connections)
      if (v > 1) genome_error(i, "connection mask must be binary");
    if (enabled_any(cs, cg, uses_conn_fn) && std::none_of(cg.connections.begin(), cg.connections.end(), [](auto v) { return v != 0; }))
      genome_error(i, "connection-based block with an empty connection mask");
    for (std::size_t k = 0; k < cg.pairs.size(); ++k) {
      const auto [l, r] = cg.pairs[k];
      if (l < 0 || static_cast<std::size_t>(l) >= cs.preds.size()) genome_error(i, "left index out of range");
      if (!cs.right_allowed(r)) genome_error(i, "right index not allowed");
      if (k > 0 && !(cg.pairs[k - 1] < cg.pairs[k])) genome_error(i, "pairs must be sorted and unique");
    }
    if (enabled_any(cs, cg, pairwise_fn)) {
      if (cg.pairs.empty()) genome_error(i, "pairwise block without a (left, right) pair");
      if (cg.pairs.size() > 1 && !rules.allow_multi_pair) genome_error(i, "more than one (left, right) pair");
    }
  }
}

SubnetGenome all_ones_genome(const SupernetSpec& spec) {
  SubnetGenome g;
  for (const auto& cs : spec.choices) {
    ChoiceGenome cg;
    cg.blocks.assign(cs.blocks.size(), 1);
    cg.connections.assign(cs.preds.size(), 1);
    for (const auto& b : cs.blocks) cg.dims.push_back(b.dims.empty() ? 0 : static_cast<int>(b.dims.size()) - 1);
    const auto rights = right_candidates(cs);
    for (int l = 0; l < static_cast<int>(cs.preds.size()); ++l)
      for (int r : rights) cg.pairs.emplace_back(l, r);
    g.choices.push_back(std::move(cg));
  }
  return g;
}

SubnetGenome canonicalize(const SupernetSpec& spec, SubnetGenome g) {
  for (std::size_t i = 0; i < spec.choices.size() && i < g.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    ChoiceGenome& cg = g.choices[i];
    const ChoiceGenome& def = spec.defaults.choices.at(i);
    if (!enabled_any(cs, cg, uses_conn_fn)) cg.connections = def.connections;
    if (!enabled_any(cs, cg, pairwise_fn)) cg.pairs = def.pairs;
    for (std::size_t b = 0; b < cs.blocks.size(); ++b)
      if (!cg.blocks[b]) cg.dims[b] = def.dims[b];
  }
  return g;
}

std::vector<bool> active_choices(const SupernetSpec& spec, const SubnetGenome& g) {
  const std::size_t n = spec.choices.size();
  std::vector<bool> alive(n, false);
  if (n == 0) return alive;
  alive[n - 1] = true;
  auto mark = [&](int node) {
    if (node >= kFirstChoiceNode) alive[static_cast<std::size_t>(node - kFirstChoiceNode)] = true;
  };
  for (std::size_t i = n; i-- > 0;) {
    if (!alive[i]) continue;
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGenome& cg = g.choices[i];
    if (enabled_any(cs, cg, uses_conn_fn))
      for (std::size_t p = 0; p < cs.preds.size(); ++p)
        if (cg.connections[p]) mark(cs.preds[p]);
    if (enabled_any(cs, cg, pairwise_fn))
      for (auto [l, r] : cg.pairs) {
        mark(cs.preds[static_cast<std::size_t>(l)]);
        mark(cs.preds[static_cast<std::size_t>(r)]);
      }
  }
  return alive;
}

std::vector<double> dimension_mask(int dim, int max_dim) {
  if (dim < 0 || dim > max_dim) throw GenomeError("dimension " + std::to_string(dim) + " outside [0, " + std::to_string(max_dim) + "]");
  std::vector<double> m(static_cast<std::size_t>(max_dim), 0.0);
  std::fill_n(m.begin(), dim, 1.0);
  return m;
}

int selected_dim(const SupernetSpec& spec, const SubnetGenome& g, std::size_t choice, std::size_t block) {
  const auto& dims = spec.choices.at(choice).blocks.at(block).dims;
  if (dims.empty()) return 0;
  return dims.at(static_cast<std::size_t>(g.choices.at(choice).dims.at(block)));
}

std::vector<Decision> free_decisions(const SupernetSpec& spec) {
  std::vector<Decision> out;
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGenome& def = spec.defaults.choices.at(i);
    const bool full = spec.mode == SearchMode::Full;
    if ((full || spec.mode == SearchMode::BlocksOnly) && cs.blocks.size() > 1)
      out.push_back({DecisionKind::Block, i, 0, cs.blocks.size()});
    if (full && any_block(cs, uses_conn_fn) && cs.preds.size() > 1)
      for (std::size_t p = 0; p < cs.preds.size(); ++p) out.push_back({DecisionKind::Connection, i, p, 2});
    if (full && any_block(cs, pairwise_fn)) {
      if (cs.preds.size() > 1) out.push_back({DecisionKind::Left, i, 0, cs.preds.size()});
      const auto rights = right_candidates(cs);
      if (rights.size() > 1) out.push_back({DecisionKind::Right, i, 0, rights.size()});
    }
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (cs.blocks[b].dims.size() <= 1) continue;
      if (full || (spec.mode == SearchMode::DimsOnly && def.blocks[b]))
        out.push_back({DecisionKind::Dim, i, b, cs.blocks[b].dims.size()});
    }
  }
  return out;
}

SubnetGenome genome_from_decisions(const SupernetSpec& spec, const std::vector<Decision>& decisions,
                                   const std::vector<int>& values) {
  if (values.size() != decisions.size()) throw ArgumentError("decision value count mismatch");
  SubnetGenome g = spec.defaults;
  std::map<std::size_t, std::pair<int, int>> pair_update;
  for (std::size_t d = 0; d < decisions.size(); ++d) {
    const Decision& dec = decisions[d];
    const int v = values[d];
    if (v < 0 || static_cast<std::size_t>(v) >= dec.options) throw ArgumentError("decision value out of range");
    ChoiceGenome& cg = g.choices.at(dec.choice);
    const ChoiceSpec& cs = spec.choices[dec.choice];
    switch (dec.kind) {
      case DecisionKind::Block:
        std::fill(cg.blocks.begin(), cg.blocks.end(), 0);
        cg.blocks[static_cast<std::size_t>(v)] = 1;
        break;
      case DecisionKind::Connection: cg.connections[dec.index] = static_cast<std::uint8_t>(v); break;
      case DecisionKind::Left:
      case DecisionKind::Right: {
        auto it = pair_update.find(dec.choice);
        if (it == pair_update.end()) {
          const auto base = cg.pairs.empty() ? std::pair<int, int>{0, right_candidates(cs).front()} : cg.pairs.front();
          it = pair_update.emplace(dec.choice, base).first;
        }
        if (dec.kind == DecisionKind::Left)
          it->second.first = v;
        else
          it->second.second = right_candidates(cs)[static_cast<std::size_t>(v)];
        break;
      }
      case DecisionKind::Dim: cg.dims[dec.index] = v; break;
    }
  }
  for (auto& [c, p] : pair_update) g.choices[c].pairs = {p};
  return g;
}

std::vector<int> decisions_from_genome(const SupernetSpec& spec, const std::vector<Decision>& decisions,
                                       const SubnetGenome& g) {
  std::vector<int> v;
  v.reserve(decisions.size());
  for (const Decision& dec : decisions) {
    const ChoiceGenome& cg = g.choices.at(dec.choice);
    switch (dec.kind) {
      case DecisionKind::Block:
        v.push_back(static_cast<int>(std::find(cg.blocks.begin(), cg.blocks.end(), 1) - cg.blocks.begin()));
        break;
      case DecisionKind::Connection: v.push_back(cg.connections[dec.index]); break;
      case DecisionKind::Left: v.push_back(cg.pairs.empty() ? 0 : cg.pairs.front().first); break;
      case DecisionKind::Right: {
        const auto rights = right_candidates(spec.choices[dec.choice]);
        const int r = cg.pairs.empty() ? rights.front() : cg.pairs.front().second;
        v.push_back(static_cast<int>(std::find(rights.begin(), rights.end(), r) - rights.begin()));
        break;
      }
      case DecisionKind::Dim: v.push_back(cg.dims[dec.index]); break;
    }
  }
  return v;
}

bool connections_nonempty(const SupernetSpec& spec, const SubnetGenome& g, std::size_t choice) {
  const ChoiceGenome& cg = g.choices.at(choice);
  if (!enabled_any(spec.choices.at(choice), cg, uses_conn_fn)) return true;
  return std::any_of(cg.connections.begin(), cg.connections.end(), [](auto v) { return v != 0; });
}

BigInt search_space_size(const SupernetSpec& spec) {
  BigInt total = 1;
  std::map<std::size_t, unsigned> conn_bits;
  for (const Decision& d : free_decisions(spec)) {
    if (d.kind == DecisionKind::Connection)
      ++conn_bits[d.choice];
    else
      total *= static_cast<unsigned long long>(d.options);
  }
  for (auto [_, k] : conn_bits) total *= (BigInt(1) << k) - 1;
  return total;
}

SubnetGenome sample_random_genome(const SupernetSpec& spec, Rng& rng, double connection_on_prob) {
  if (!(connection_on_prob > 0.0 && connection_on_prob <= 1.0)) throw ArgumentError("connection_on_prob must be in (0, 1]");
  const auto decisions = free_decisions(spec);
  std::vector<int> values(decisions.size(), 0);
  for (std::size_t d = 0; d < decisions.size();) {
    if (decisions[d].kind != DecisionKind::Connection) {
      values[d] = static_cast<int>(uniform_index(rng, decisions[d].options));
      ++d;
      continue;
    }
    // All connection bits of one choice are contiguous; redraw the group until one is set.
    std::size_t end = d;
    while (end < decisions.size() && decisions[end].kind == DecisionKind::Connection && decisions[end].choice == decisions[d].choice) ++end;
    bool any = false;
    while (!any) {
      for (std::size_t k = d; k < end; ++k) {
        values[k] = bernoulli(rng, connection_on_prob) ? 1 : 0;
        any = any || values[k] == 1;
      }
    }
    d = end;
  }
  return genome_from_decisions(spec, decisions, values);
}

std::optional<std::vector<SubnetGenome>> enumerate_genomes(const SupernetSpec& spec, std::size_t limit) {
  const auto decisions = free_decisions(spec);
  BigInt raw = 1;
  for (const auto& d : decisions) raw *= static_cast<unsigned long long>(d.options);
  if (raw > BigInt(limit) * 16) return std::nullopt;
  std::set<SubnetGenome> seen;
  std::vector<SubnetGenome> out;
  std::vector<int> values(decisions.size(), 0);
  while (true) {
    SubnetGenome g = genome_from_decisions(spec, decisions, values);
    bool ok = true;
    for (std::size_t i = 0; i < spec.choices.size() && ok; ++i) {
      const auto& cg = g.choices[i];
      const bool has_conn_decision = std::any_of(decisions.begin(), decisions.end(), [&](const Decision& d) {
        return d.kind == DecisionKind::Connection && d.choice == i;
      });
      if (has_conn_decision && std::none_of(cg.connections.begin(), cg.connections.end(), [](auto v) { return v != 0; })) ok = false;
      ok = ok && connections_nonempty(spec, g, i);
    }
    if (ok) {
      g = canonicalize(spec, std::move(g));
      if (seen.insert(g).second) {
        out.push_back(g);
        if (out.size() > limit) return std::nullopt;
      }
    }
    std::size_t k = 0;
    for (; k < values.size(); ++k) {
      if (static_cast<std::size_t>(++values[k]) < decisions[k].options) break;
      values[k] = 0;
    }
    if (k == values.size()) break;
  }
  return out;
}

std::vector<int> grown_dimension_options(int seed_dim, const GrowOptions& opts) {
  if (seed_dim <= 0) spec_error("seed dimension must be positive");
  std::vector<int> out;
  const int n = std::max(opts.dim_options, 1);
  for (int k = 0; k < n; ++k) {
    const double f = n == 1 ? 1.0 : opts.dim_low + (opts.dim_high - opts.dim_low) * k / (n - 1);
    const int v = std::max(1, static_cast<int>(std::floor(seed_dim * f + 1e-9)));
    if (out.empty() || v > out.back()) out.push_back(v);
  }
  return out;
}

SupernetSpec grow_supernet(const SupernetSpec& seed, Rng& rng, const GrowOptions& opts) {
  validate(seed);
  const std::size_t n = seed.choices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const ChoiceSpec& c = seed.choices[i];
    if (c.blocks.size() != 1) spec_error("seed choice " + std::to_string(i) + " must hold exactly one block");
    if (has_dimension(c.blocks[0].kind) && c.blocks[0].dims.size() != 1)
      spec_error("seed choice " + std::to_string(i) + " must have a single dimension");
  }

  // (1) Random topological order of the seed choices.
  std::vector<int> indeg(n, 0);
  std::vector<std::vector<std::size_t>> succ(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int p : seed.choices[i].preds)
      if (p >= kFirstChoiceNode) {
        ++indeg[i];
        succ[static_cast<std::size_t>(p - kFirstChoiceNode)].push_back(i);
      }
  std::vector<std::size_t> ready, order;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    const std::size_t k = uniform_index(rng, ready.size());
    const std::size_t c = ready[k];
    ready.erase(ready.begin() + static_cast<std::ptrdiff_t>(k));
    order.push_back(c);
    for (std::size_t s : succ[c])
      if (--indeg[s] == 0) ready.push_back(s);
  }
  if (order.size() != n) spec_error("seed is not a DAG");

  // (2) Duplicate embedding-consuming choices right after themselves.
  struct Slot {
    std::size_t orig;
    bool copy;
  };
  std::vector<Slot> slots;
  std::vector<std::size_t> primary(n);
  for (std::size_t c : order) {
    primary[c] = slots.size();
    slots.push_back({c, false});
    const BlockKind k = seed.choices[c].blocks[0].kind;
    if (k == BlockKind::EmbedFC || k == BlockKind::CompressedDot) slots.push_back({c, true});
  }

  int fallback_dim = 0;
  for (const auto& c : seed.choices)
    if (c.blocks[0].kind == BlockKind::Linear) fallback_dim = std::max(fallback_dim, c.blocks[0].dims[0]);
  if (fallback_dim == 0) fallback_dim = static_cast<int>(seed.dense_width);

  auto map_node = [&](int node) { return node < kFirstChoiceNode ? node : choice_node(primary[static_cast<std::size_t>(node - kFirstChoiceNode)]); };

  SupernetSpec out;
  out.dense_width = seed.dense_width;
  out.num_embeddings = seed.num_embeddings;
  out.embedding_dim = seed.embedding_dim;
  out.bottleneck = seed.bottleneck;
  out.mode = seed.mode;

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const ChoiceSpec& sc = seed.choices[slots[i].orig];
    const ChoiceGenome& sg = seed.defaults.choices[slots[i].orig];
    const BlockSpec& sb = sc.blocks[0];
    const int seed_dim = sb.dims.empty() ? 0 : sb.dims[0];

    // (3) Block completion, canonical kind order.
    std::set<BlockKind> kinds{sb.kind};
    if (sb.kind == BlockKind::EmbedFC || sb.kind == BlockKind::CompressedDot) {
      kinds.insert(BlockKind::EmbedFC);
      kinds.insert(BlockKind::CompressedDot);
    } else {
      kinds.insert(BlockKind::Linear);
      kinds.insert(BlockKind::PairwiseGating);
      kinds.insert(BlockKind::PairwiseSum);
    }
    ChoiceSpec cs;
    ChoiceGenome cg;
    for (BlockKind k : kAllBlockKinds) {
      if (!kinds.count(k)) continue;
      BlockSpec b;
      b.kind = k;
      b.activation = k == sb.kind ? sb.activation : default_activation(k);
      const int base = seed_dim > 0 ? seed_dim : fallback_dim;
      if (has_dimension(k)) b.dims = grown_dimension_options(base, opts);
      cg.blocks.push_back(k == sb.kind ? 1 : 0);
      int di = 0;
      if (has_dimension(k)) di = static_cast<int>(std::find(b.dims.begin(), b.dims.end(), base) - b.dims.begin());
      if (di >= static_cast<int>(b.dims.size())) di = 0;
      cg.dims.push_back(has_dimension(k) ? di : 0);
      cs.blocks.push_back(std::move(b));
    }

    // (4) Distance-based connections; raw inputs are always reachable.
    std::set<int> preds{kDenseNode, kEmbeddingNode};
    for (int d : opts.distances)
      if (d > 0 && static_cast<std::size_t>(d) <= i) preds.insert(choice_node(i - static_cast<std::size_t>(d)));
    cs.preds.assign(preds.begin(), preds.end());
    auto pos_of = [&](int node) {
      auto it = std::find(cs.preds.begin(), cs.preds.end(), node);
      return it == cs.preds.end() ? -1 : static_cast<int>(it - cs.preds.begin());
    };

    cg.connections.assign(cs.preds.size(), 0);
    for (std::size_t p = 0; p < sc.preds.size(); ++p) {
      if (!sg.connections[p]) continue;
      const int pos = pos_of(map_node(sc.preds[p]));
      if (pos >= 0) cg.connections[static_cast<std::size_t>(pos)] = 1;
    }
    const int nearest = static_cast<int>(cs.preds.size()) - 1;
    if (std::none_of(cg.connections.begin(), cg.connections.end(), [](auto v) { return v != 0; }))
      cg.connections[static_cast<std::size_t>(nearest)] = 1;

    for (auto [l, r] : sg.pairs) {
      const int nl = pos_of(map_node(sc.preds[static_cast<std::size_t>(l)]));
      const int nr = pos_of(map_node(sc.preds[static_cast<std::size_t>(r)]));
      if (nl >= 0 && nr >= 0) cg.pairs.emplace_back(nl, nr);
    }
    if (cg.pairs.empty()) cg.pairs.emplace_back(nearest, nearest);
    std::sort(cg.pairs.begin(), cg.pairs.end());
    cg.pairs.erase(std::unique(cg.pairs.begin(), cg.pairs.end()), cg.pairs.end());
    if (cg.pairs.size() > 1) cg.pairs.resize(1);

    out.choices.push_back(std::move(cs));
    out.defaults.choices.push_back(std::move(cg));
  }
  validate(out);
  return out;
}

// ---- serialization ---------------------------------------------------------

nlohmann::json to_json(const SubnetGenome& g) {
  nlohmann::json choices = nlohmann::json::array();
  for (const auto& c : g.choices) {
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [l, r] : c.pairs) pairs.push_back({l, r});
    choices.push_back({{"blocks", c.blocks}, {"connections", c.connections}, {"pairs", pairs}, {"dims", c.dims}});
  }
  return {{"version", SupernetSpec::kVersion}, {"choices", choices}};
}

SubnetGenome genome_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != SupernetSpec::kVersion) throw GenomeError("unsupported genome version");
    SubnetGenome g;
    for (const auto& c : j.at("choices")) {
      ChoiceGenome cg;
      cg.blocks = c.at("blocks").get<std::vector<std::uint8_t>>();
      cg.connections = c.at("connections").get<std::vector<std::uint8_t>>();
      for (const auto& p : c.at("pairs")) cg.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      cg.dims = c.at("dims").get<std::vector<int>>();
      g.choices.push_back(std::move(cg));
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw GenomeError(std::string("malformed genome document: ") + e.what());
  }
}

nlohmann::json to_json(const SupernetSpec& spec) {
  nlohmann::json choices = nlohmann::json::array();
  for (const auto& c : spec.choices) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : c.blocks)
      blocks.push_back({{"kind", to_string(b.kind)}, {"dims", b.dims}, {"activation", to_string(b.activation)}});
    choices.push_back({{"blocks", blocks}, {"preds", c.preds}, {"right_preds", c.right_preds}});
  }
  return {{"version", SupernetSpec::kVersion},
          {"dense_width", spec.dense_width},
          {"num_embeddings", spec.num_embeddings},
          {"embedding_dim", spec.embedding_dim},
          {"bottleneck", spec.bottleneck},
          {"mode", to_string(spec.mode)},
          {"choices", choices},
          {"defaults", to_json(spec.defaults)}};
}

SupernetSpec spec_from_json(const nlohmann::json& j) {
  SupernetSpec s;
  try {
    if (j.at("version").get<int>() != SupernetSpec::kVersion) spec_error("unsupported spec version");
    s.dense_width = j.at("dense_width").get<std::size_t>();
    s.num_embeddings = j.at("num_embeddings").get<std::size_t>();
    s.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    s.bottleneck = j.at("bottleneck").get<std::size_t>();
    s.mode = search_mode_from_string(j.at("mode").get<std::string>());
    for (const auto& c : j.at("choices")) {
      ChoiceSpec cs;
      for (const auto& b : c.at("blocks"))
        cs.blocks.push_back({block_kind_from_string(b.at("kind").get<std::string>()), b.at("dims").get<std::vector<int>>(),
                             activation_from_string(b.at("activation").get<std::string>())});
      cs.preds = c.at("preds").get<std::vector<int>>();
      cs.right_preds = c.value("right_preds", std::vector<int>{});
      s.choices.push_back(std::move(cs));
    }
    s.defaults = genome_from_json(j.at("defaults"));
  } catch (const nlohmann::json::exception& e) {
    spec_error(std::string("malformed spec document: ") + e.what());
  } catch (const ConfigError& e) {
    spec_error(e.what());
  }
  validate(s);
  return s;
}

std::string genome_id(const SubnetGenome& g) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(g).dump())));
  return buf;
}

}  // namespace ctrnas
