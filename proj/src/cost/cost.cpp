#include "ctrnas/cost.hpp"

#include <iomanip>
#include <set>

#include "ctrnas/errors.hpp"

namespace ctrnas {

namespace {

std::uint64_t act_cost(Activation a) {
  switch (a) {
    case Activation::Relu: return 1;
    case Activation::Sigmoid: return 4;
    case Activation::Identity: break;
  }
  return 0;
}

std::uint64_t norm_cost(std::uint64_t rows, std::uint64_t width, Activation a) {
  return rows * (7 * width + 4) + rows * width * act_cost(a);
}

std::uint64_t affine(std::uint64_t in, std::uint64_t out) { return 2 * in * out + out; }

std::uint64_t pair_cost(BlockKind k, std::uint64_t fl, std::uint64_t fr, std::uint64_t bn) {
  return affine(fl, bn) + affine(bn, fr) + (k == BlockKind::PairwiseGating ? 5 * fr : fr);
}

struct Counts {
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

// Closed forms over a compact (all-enabled, single-dimension) spec.
Counts compact_counts(const SupernetSpec& c, const SubnetGenome& g) {
  const SpecShapes sh = compute_shapes(c);
  const std::uint64_t D = c.embedding_dim, bn = c.bottleneck;
  Counts out;
  std::set<std::string> shared_pairs;
  for (std::size_t i = 0; i < c.choices.size(); ++i) {
    const ChoiceSpec& cs = c.choices[i];
    const ChoiceGenome& cg = g.choices[i];
    const ChoiceShape& ch = sh.choices[i];
    std::uint64_t adapt_flops = 0, adapt_params = 0;
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      const std::uint64_t w2 = sh.nodes[static_cast<std::size_t>(cs.preds[p])].width2d;
      if (w2 == 0) continue;
      adapt_params += w2 * D + D;
      if (cg.connections[p]) adapt_flops += affine(w2, D);
    }
    std::vector<std::uint64_t> widths2d;
    for (const auto& b : cs.blocks) {
      const std::uint64_t d = static_cast<std::uint64_t>(b.max_dim());
      const std::uint64_t R = ch.rows_in;
      switch (b.kind) {
        case BlockKind::Linear:
          out.flops += affine(ch.linear_in, d) + norm_cost(1, d, b.activation);
          out.params += ch.linear_in * d + d + 2 * d;
          widths2d.push_back(d);
          break;
        case BlockKind::EmbedFC:
          out.flops += adapt_flops + d * D * (2 * R + 1) + norm_cost(d, D, b.activation);
          out.params += adapt_params + d * R + d + 2 * D;
          break;
        case BlockKind::CompressedDot:
          out.flops += adapt_flops + d * D * (2 * R + 1) + 2 * R * D * d + norm_cost(1, R * d, b.activation);
          out.params += adapt_params + d * R + d + 2 * R * d;
          widths2d.push_back(R * d);
          break;
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum: {
          std::uint64_t pad = 0;
          for (std::size_t k = 0; k < cg.pairs.size(); ++k) {
            const int ln = cs.preds[static_cast<std::size_t>(cg.pairs[k].first)];
            const int rn = cs.preds[static_cast<std::size_t>(cg.pairs[k].second)];
            const std::uint64_t fl = sh.flat(ln), fr = sh.flat(rn);
            out.flops += pair_cost(b.kind, fl, fr, bn);
            if (k > 0) pad += fr;
            const std::string key = std::string(to_string(b.kind)) + "." + std::to_string(ln) + "." + std::to_string(rn);
            if (shared_pairs.insert(key).second) out.params += fl * bn + bn + bn * fr + fr;
          }
          out.flops += pad + norm_cost(1, ch.pairwise_width, b.activation);
          out.params += 2 * ch.pairwise_width;
          widths2d.push_back(ch.pairwise_width);
          break;
        }
      }
    }
    for (std::size_t k = 1; k < widths2d.size(); ++k) out.flops += widths2d[k];
  }
  out.flops += affine(sh.head_in, 1);
  out.params += sh.head_in + 1;
  return out;
}

void structure_counts(const SupernetSpec& spec, const SubnetGenome& g, FlopsReport& r) {
  const auto alive = active_choices(spec, g);
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    if (!alive[i]) continue;
    ++r.n_choices;
    bool conn = false;
    for (std::size_t b = 0; b < spec.choices[i].blocks.size(); ++b) {
      if (!g.choices[i].blocks[b]) continue;
      if (is_pairwise(spec.choices[i].blocks[b].kind)) r.n_connections += 2;
      conn = conn || uses_connections(spec.choices[i].blocks[b].kind);
    }
    if (conn)
      for (auto bit : g.choices[i].connections) r.n_connections += bit;
  }
}

}  // namespace

FlopsReport count_flops(const SupernetSpec& spec, const SubnetGenome& genome, std::size_t batch_size) {
  const CompactSubnet c = compact_subnet(spec, genome);
  const Counts k = compact_counts(c.spec, c.genome);
  FlopsReport r;
  r.flops = k.flops * batch_size;
  r.dense_params = k.params;
  structure_counts(spec, genome, r);
  return r;
}

FlopsReport oracle_count(const SupernetSpec& spec, const SubnetGenome& genome) {
  const CompactSubnet c = compact_subnet(spec, genome);
  Network net{c.spec, compute_shapes(c.spec), c.genome, make_parameters(c.spec, 0), ForwardMode::Standalone};
  MiniBatch mb;
  mb.dense = Tensor({1, spec.dense_width});
  mb.embeddings = Tensor({1, spec.num_embeddings, spec.embedding_dim});
  mb.labels = {0.0};
  FlopCounter counter;
  {
    Graph g(&counter);
    net.logits(g, mb);
  }
  FlopsReport r;
  r.flops = counter.flops;
  // Parameters the network actually reads: everything a backward pass reaches.
  {
    Graph g;
    g.backward(sum(net.logits(g, mb)));
  }
  for (const auto& [name, p] : net.params)
    if (p.touched) r.dense_params += p.value.size();
  structure_counts(spec, genome, r);
  return r;
}

Value expected_flops(Graph& g, const SupernetSpec& spec, const Gates& gates) {
  if (gates.size() != spec.choices.size()) throw ArgumentError("expected_flops: gates do not match the spec");
  const double D = static_cast<double>(spec.embedding_dim), bn = static_cast<double>(spec.bottleneck);
  auto k = [&](double v) { return g.scalar(v); };

  // Soft node quantities: 2D width, 3D rows, 2D presence.
  const std::size_t nodes = spec.node_count();
  std::vector<Value> w2(nodes), rows3(nodes), present(nodes);
  w2[kDenseNode] = k(static_cast<double>(spec.dense_width));
  rows3[kDenseNode] = k(0);
  present[kDenseNode] = k(1);
  w2[kEmbeddingNode] = k(0);
  rows3[kEmbeddingNode] = k(static_cast<double>(spec.num_embeddings));
  present[kEmbeddingNode] = k(0);
  auto flat = [&](int n) { return add(w2[static_cast<std::size_t>(n)], mul_scalar(rows3[static_cast<std::size_t>(n)], D)); };

  std::vector<Value> cost(spec.choices.size());
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGates& gt = gates[i];
    Value lin_in = k(0), rows_in = k(0), adapt = k(0);
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      const auto n = static_cast<std::size_t>(cs.preds[p]);
      const Value c = gt.connection[p];
      lin_in = add(lin_in, mul(c, flat(cs.preds[p])));
      rows_in = add(rows_in, mul(c, add(present[n], rows3[n])));
      // present * (2 w2 D + D); w2 is zero whenever present is.
      adapt = add(adapt, mul(c, add(mul_scalar(w2[n], 2 * D), mul_scalar(present[n], D))));
    }
    Value total = k(0), width = k(0), pres = k(0), r3 = k(0);
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      const BlockSpec& bs = cs.blocks[b];
      const Value gate = gt.block[b];
      if (g.is_constant_fill(gate, 0.0)) continue;
      const double a = static_cast<double>(act_cost(bs.activation));
      Value c, out_w;
      switch (bs.kind) {
        case BlockKind::Linear: {
          const Value d = sum(gt.dim_mask[b]);
          // 2 in d + d + (7d + 4) + a d
          c = add(mul_scalar(mul(lin_in, d), 2), add_scalar(mul_scalar(d, 8 + a), 4));
          out_w = d;
          break;
        }
        case BlockKind::EmbedFC: {
          const Value d = sum(gt.dim_mask[b]);
          // adapt + d D (2R + 1) + d (7D + 4) + a d D
          c = add(adapt, add(mul(mul_scalar(d, D), add_scalar(mul_scalar(rows_in, 2), 1)), mul_scalar(d, 7 * D + 4 + a * D)));
          r3 = add(r3, mul(gate, d));
          break;
        }
        case BlockKind::CompressedDot: {
          const Value d = sum(gt.dim_mask[b]);
          const Value rd = mul(rows_in, d);
          // adapt + d D (2R + 1) + 2 R D d + (7 R d + 4) + a R d
          c = add(adapt, add(mul(mul_scalar(d, D), add_scalar(mul_scalar(rows_in, 2), 1)),
                             add_scalar(mul_scalar(rd, 2 * D + 7 + a), 4)));
          out_w = rd;
          break;
        }
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum: {
          const double elem = bs.kind == BlockKind::PairwiseGating ? 5 : 1;
          Value pc = k(0), wr = k(0);
          for (const auto& [pr, pg] : gt.pairs) {
            const Value fl = flat(cs.preds[static_cast<std::size_t>(pr.first)]);
            const Value fr = flat(cs.preds[static_cast<std::size_t>(pr.second)]);
            // (2 fl bn + bn) + (2 bn fr + fr) + elem fr
            const Value one = add_scalar(add(mul_scalar(fl, 2 * bn), mul_scalar(fr, 2 * bn + 1 + elem)), bn);
            pc = add(pc, mul(pg, one));
            wr = add(wr, mul(pg, fr));
          }
          c = add(pc, add_scalar(mul_scalar(wr, 7 + a), 4));
          out_w = wr;
          break;
        }
      }
      total = add(total, g.is_constant_fill(gate, 1.0) ? c : mul(gate, c));
      if (produces_2d(bs.kind)) {
        width = add(width, mul(gate, out_w));
        pres = add(pres, gate);
      }
    }
    cost[i] = total;
    w2[static_cast<std::size_t>(choice_node(i))] = width;
    rows3[static_cast<std::size_t>(choice_node(i))] = r3;
    present[static_cast<std::size_t>(choice_node(i))] = pres;
  }

  // Liveness, last choice first: alive_j = 1 - prod over consumers (1 - alive_i use_ij).
  const std::size_t n = spec.choices.size();
  std::vector<Value> dead_prod(n, k(1));
  std::vector<Value> alive(n);
  for (std::size_t i = n; i-- > 0;) {
    alive[i] = i + 1 == n ? k(1) : sub(k(1), dead_prod[i]);
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGates& gt = gates[i];
    Value conn_gate = k(0);
    std::vector<Value> pair_use(cs.preds.size(), k(0));
    bool any_pair = false;
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (uses_connections(cs.blocks[b].kind)) conn_gate = add(conn_gate, gt.block[b]);
      if (!is_pairwise(cs.blocks[b].kind) || g.is_constant_fill(gt.block[b], 0.0)) continue;
      any_pair = true;
      for (const auto& [pr, pg] : gt.pairs) {
        const Value u = mul(gt.block[b], pg);
        pair_use[static_cast<std::size_t>(pr.first)] = add(pair_use[static_cast<std::size_t>(pr.first)], u);
        if (pr.second != pr.first)
          pair_use[static_cast<std::size_t>(pr.second)] = add(pair_use[static_cast<std::size_t>(pr.second)], u);
      }
    }
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      if (cs.preds[p] < kFirstChoiceNode) continue;
      Value use = mul(conn_gate, gt.connection[p]);
      if (any_pair) use = add(use, pair_use[p]);
      const auto j = static_cast<std::size_t>(cs.preds[p] - kFirstChoiceNode);
      dead_prod[j] = mul(dead_prod[j], sub(k(1), mul(alive[i], use)));
    }
  }

  const int last = choice_node(n - 1);
  Value total = add_scalar(mul_scalar(flat(last), 2), 1);
  for (std::size_t i = 0; i < n; ++i) total = add(total, i + 1 == n ? cost[i] : mul(alive[i], cost[i]));
  return total;
}

Value expected_flops(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                     const std::vector<Value>& probs) {
  return expected_flops(g, spec, relaxed_gates(g, spec, decisions, probs));
}

SubnetStatistics subnet_statistics(const SupernetSpec& spec, std::size_t n_samples, double connection_on_prob, Rng& rng) {
  if (n_samples == 0) throw ArgumentError("subnet_statistics: n_samples must be positive");
  SubnetStatistics st;
  st.reference = count_flops(spec, spec.defaults);
  st.samples.reserve(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) st.samples.push_back(count_flops(spec, sample_random_genome(spec, rng, connection_on_prob)));
  return st;
}

void write_statistics_table(std::ostream& os, const SubnetStatistics& stats) {
  os << "kind,flops,dense_params,n_choices,n_connections,flops_ratio\n";
  auto row = [&](const char* kind, const FlopsReport& r) {
    const double ratio = stats.reference.flops == 0 ? 0.0 : static_cast<double>(r.flops) / static_cast<double>(stats.reference.flops);
    os << kind << ',' << r.flops << ',' << r.dense_params << ',' << r.n_choices << ',' << r.n_connections << ','
       << std::setprecision(6) << ratio << '\n';
  };
  row("reference", stats.reference);
  for (const auto& r : stats.samples) row("sample", r);
}

}  // namespace ctrnas
