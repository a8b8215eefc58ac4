#include "ctrnas/supernet.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "ctrnas/errors.hpp"

namespace ctrnas {

namespace {

std::string block_prefix(std::size_t choice, BlockKind k) {
  const std::string base = "choice." + std::to_string(choice) + ".";
  switch (k) {
    case BlockKind::Linear: return base + "linear";
    case BlockKind::EmbedFC: return base + "embedfc";
    case BlockKind::CompressedDot: return base + "cdot";
    case BlockKind::PairwiseGating: return base + "gating";
    case BlockKind::PairwiseSum: return base + "sum";
  }
  return base;
}

std::string pair_prefix(BlockKind k, int left_node, int right_node) {
  return std::string("pair.") + (k == BlockKind::PairwiseGating ? "gating." : "sum.") + std::to_string(left_node) + "." +
         std::to_string(right_node);
}

std::vector<int> right_positions(const ChoiceSpec& c) {
  if (!c.right_preds.empty()) return c.right_preds;
  std::vector<int> all(c.preds.size());
  for (std::size_t p = 0; p < all.size(); ++p) all[p] = static_cast<int>(p);
  return all;
}

Tensor pad_to(const Tensor& t, std::size_t width) {
  Tensor out({width});
  std::copy_n(t.data.begin(), std::min(width, t.size()), out.data.begin());
  return out;
}

// Computes activities (which entries of every node output can be nonzero) and,
// unless activity_only, the network outputs. Activities are 0/1 constants in
// hard modes and differentiable soft values in relaxed mode.
class Builder {
 public:
  Builder(Graph& g, const SupernetSpec& spec, const SpecShapes& sh, ParamStore* ps, const MiniBatch* mb,
          const ForwardPlan& plan)
      : g_(g), spec_(spec), sh_(sh), ps_(ps), mb_(mb), plan_(plan), nodes_(spec.node_count()),
        block_act_(spec.choices.size()) {
    if (plan.gates.size() != spec.choices.size() || plan.alive.size() != spec.choices.size())
      throw InternalError("forward plan does not match the spec");
    B_ = mb_ != nullptr ? mb_->size() : 1;
    D_ = spec.embedding_dim;
  }

  void activities() {
    Node& dn = nodes_[kDenseNode];
    dn.computed = true;
    dn.a2 = g_.constant(Tensor({spec_.dense_width}, 1.0));
    dn.present = g_.scalar(1.0);
    Node& en = nodes_[kEmbeddingNode];
    en.computed = true;
    en.a3 = g_.constant(Tensor({spec_.num_embeddings}, 1.0));
    en.present = g_.scalar(0.0);
    for (std::size_t i = 0; i < spec_.choices.size(); ++i) {
      nodes_[static_cast<std::size_t>(choice_node(i))].computed = plan_.alive[i];
      if (plan_.alive[i]) choice_activity(i);
    }
  }

  Value logits() {
    if (mb_ == nullptr || ps_ == nullptr) throw InternalError("forward without batch or parameters");
    if (mb_->dense.shape != Shape{B_, spec_.dense_width} ||
        mb_->embeddings.shape != Shape{B_, spec_.num_embeddings, spec_.embedding_dim})
      throw DimensionError("batch shapes " + shape_string(mb_->dense.shape) + ", " + shape_string(mb_->embeddings.shape) +
                           " do not match the spec");
    for (std::size_t i = 0; i < spec_.choices.size(); ++i) {
      nodes_[static_cast<std::size_t>(choice_node(i))].computed = plan_.alive[i];
      block_act_[i].resize(spec_.choices[i].blocks.size());
    }
    nodes_[kDenseNode].computed = nodes_[kEmbeddingNode].computed = true;
    nodes_[kDenseNode].o2 = g_.constant(mb_->dense);
    nodes_[kEmbeddingNode].o3 = g_.constant(mb_->embeddings);
    for (std::size_t i = 0; i < spec_.choices.size(); ++i)
      if (plan_.alive[i]) choice_output(i);
    const int last = choice_node(spec_.choices.size() - 1);
    return matmul(flat_input(last), param("head.weight"), param("head.bias"));
  }

  // Activity accessors used to build compact subnets.
  const Tensor& flat_activity_tensor(int node) { return flat_act(node).value(); }
  bool present(int node) const { return nodes_[static_cast<std::size_t>(node)].present->value().data[0] != 0.0; }

 private:
  struct Node {
    bool computed = false;
    std::optional<Value> o2, o3, flat;       // outputs
    std::optional<Value> a2, a3, present;    // activities
    std::optional<Value> flat_act;
  };

  bool masking() const { return plan_.mode != ForwardMode::Standalone; }
  bool hard() const { return plan_.mode != ForwardMode::Relaxed; }
  bool is0(Value v) const { return g_.is_constant_fill(v, 0.0); }
  bool is1(Value v) const { return g_.is_constant_fill(v, 1.0); }
  Value gate_mul(Value x, Value s) { return is1(s) ? x : scale(x, s); }
  Value param(const std::string& name) { return g_.param(ps_->at(name)); }
  Value zeros2(std::size_t w) { return g_.constant(Tensor({B_, w})); }
  Value zeros3(std::size_t rows) { return g_.constant(Tensor({B_, rows, D_})); }
  const NodeShape& shape(int node) const { return sh_.nodes[static_cast<std::size_t>(node)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  // Elementwise union of activity vectors padded to `width`: max for hard
  // masks, gate-weighted sum for relaxed ones.
  Value act_union(const std::vector<std::pair<Value, Value>>& acts, std::size_t width) {
    if (hard()) {
      Tensor u({width});
      for (const auto& [a, gate] : acts) {
        if (is0(gate)) continue;
        const Tensor p = pad_to(a.value(), width);
        for (std::size_t j = 0; j < width; ++j) u.data[j] = std::max(u.data[j], p.data[j] * gate.value().data[0]);
      }
      return g_.constant(std::move(u));
    }
    std::vector<Value> terms;
    for (const auto& [a, gate] : acts)
      if (!is0(gate)) terms.push_back(gate_mul(a, gate));
    if (terms.empty()) return g_.constant(Tensor({width}));
    return zero_pad_sum(terms, width);
  }

  Value flat_act(int id) {
    Node& n = node(id);
    if (n.flat_act) return *n.flat_act;
    const NodeShape& s = shape(id);
    std::vector<Value> parts;
    if (s.width2d > 0) parts.push_back(n.a2 ? *n.a2 : g_.constant(Tensor({s.width2d})));
    if (s.rows3d > 0) parts.push_back(repeat_each(n.a3 ? *n.a3 : g_.constant(Tensor({s.rows3d})), D_));
    n.flat_act = parts.size() == 1 ? parts[0] : concat_last(parts);
    return *n.flat_act;
  }

  Value flat_input(int id) {
    Node& n = node(id);
    const NodeShape& s = shape(id);
    if (!n.computed) return zeros2(s.flat(D_));
    if (n.flat) return *n.flat;
    std::vector<Value> parts;
    if (s.width2d > 0) parts.push_back(*n.o2);
    if (s.rows3d > 0) parts.push_back(reshape(*n.o3, {B_, s.rows3d * D_}));
    n.flat = parts.size() == 1 ? parts[0] : concat_last(parts);
    return *n.flat;
  }

  // Per-input-row activity of the concat3d adaptor.
  Value row_activity(std::size_t i) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    std::vector<Value> pieces;
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      const int id = cs.preds[p];
      const NodeShape& s = shape(id);
      const Value c = gt.connection[p];
      const bool off = is0(c) || !node(id).computed;
      if (s.width2d > 0) pieces.push_back(off ? g_.scalar(0.0) : (is1(c) ? *node(id).present : mul(c, *node(id).present)));
      if (s.rows3d > 0) pieces.push_back(off ? g_.constant(Tensor({s.rows3d})) : gate_mul(*node(id).a3, c));
    }
    return pieces.size() == 1 ? pieces[0] : concat_last(pieces);
  }

  void choice_activity(std::size_t i) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    const NodeShape& out = shape(choice_node(i));
    auto& acts = block_act_[i];
    acts.assign(cs.blocks.size(), std::nullopt);
    std::vector<std::pair<Value, Value>> acts2d;
    std::vector<Value> gates2d;
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      const Value gate = gt.block[b];
      if (is0(gate)) continue;
      const BlockKind k = cs.blocks[b].kind;
      switch (k) {
        case BlockKind::Linear:
        case BlockKind::EmbedFC: acts[b] = gt.dim_mask[b]; break;
        case BlockKind::CompressedDot: acts[b] = outer_flat(row_activity(i), gt.dim_mask[b]); break;
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum: {
          std::vector<std::pair<Value, Value>> rs;
          for (const auto& [pr, pg] : gt.pairs) {
            const int r = cs.preds[static_cast<std::size_t>(pr.second)];
            if (!is0(pg) && node(r).computed) rs.emplace_back(flat_act(r), pg);
          }
          acts[b] = act_union(rs, sh_.choices[i].pairwise_width);
          break;
        }
      }
      if (produces_2d(k)) {
        acts2d.emplace_back(*acts[b], gate);
        gates2d.push_back(gate);
      }
    }
    Node& n = node(choice_node(i));
    if (out.width2d > 0) n.a2 = act_union(acts2d, out.width2d);
    if (hard()) {
      n.present = g_.scalar(gates2d.empty() ? 0.0 : 1.0);
    } else {
      Value pres = g_.scalar(0.0);
      for (Value v : gates2d) pres = add(pres, v);
      n.present = pres;
    }
    if (out.rows3d > 0) {
      const auto efc = cs.block_index(BlockKind::EmbedFC);
      if (efc && acts[*efc])
        n.a3 = gate_mul(*acts[*efc], gt.block[*efc]);
      else
        n.a3 = g_.constant(Tensor({out.rows3d}));
    }
  }

  Value masked_norm(Value y, const std::string& prefix, Activation act, std::optional<Value> activity) {
    const bool apply = masking() && activity && !is1(*activity);
    const std::size_t axis = y.value().rank() - 1;
    if (apply) y = scale_axis(y, *activity, axis);
    y = layer_norm_act(y, param(prefix + ".ln.gain"), param(prefix + ".ln.bias"), act,
                       apply ? activity : std::nullopt);
    if (apply) y = scale_axis(y, *activity, axis);
    return y;
  }

  Value linear_block(std::size_t i, std::size_t b) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    const std::string prefix = block_prefix(i, BlockKind::Linear);
    std::vector<Value> parts;
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      const int id = cs.preds[p];
      const Value c = gt.connection[p];
      if (is0(c) || !node(id).computed)
        parts.push_back(zeros2(shape(id).flat(D_)));
      else
        parts.push_back(gate_mul(flat_input(id), c));
    }
    Value x = parts.size() == 1 ? parts[0] : concat_last(parts);
    Value y = matmul(x, param(prefix + ".weight"), param(prefix + ".bias"));
    return masked_norm(y, prefix, cs.blocks[b].activation, gt.dim_mask[b]);
  }

  // concat3d adaptor: 2D inputs projected to one D-wide row each, 3D rows passed through.
  Value adapted_rows(std::size_t i, const std::string& prefix) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    std::vector<Value> rows;
    for (std::size_t p = 0; p < cs.preds.size(); ++p) {
      const int id = cs.preds[p];
      const NodeShape& s = shape(id);
      const Value c = gt.connection[p];
      Node& n = node(id);
      const bool off = is0(c) || !n.computed;
      if (s.width2d > 0) {
        if (off || (masking() && is0(*n.present))) {
          rows.push_back(zeros3(1));
        } else {
          const std::string ap = prefix + ".adapt." + std::to_string(id);
          Value r = reshape(matmul(*n.o2, param(ap + ".weight"), param(ap + ".bias")), {B_, 1, D_});
          if (masking()) {
            if (!is1(*n.present)) r = scale(r, *n.present);
            r = gate_mul(r, c);
          }
          rows.push_back(r);
        }
      }
      if (s.rows3d > 0) rows.push_back(off ? zeros3(s.rows3d) : gate_mul(*n.o3, c));
    }
    return rows.size() == 1 ? rows[0] : concat_mid(rows);
  }

  Value embedfc_block(std::size_t i, std::size_t b) {
    const ChoiceSpec& cs = spec_.choices[i];
    const std::string prefix = block_prefix(i, BlockKind::EmbedFC);
    const Value x = adapted_rows(i, prefix);
    Value y = mix_middle(x, param(prefix + ".weight"), param(prefix + ".bias"));
    const Value mask = plan_.gates[i].dim_mask[b];
    const bool apply = masking() && !is1(mask);
    if (apply) y = scale_axis(y, mask, 1);
    y = layer_norm_act(y, param(prefix + ".ln.gain"), param(prefix + ".ln.bias"), cs.blocks[b].activation);
    if (apply) y = scale_axis(y, mask, 1);
    return y;
  }

  Value cdot_block(std::size_t i, std::size_t b) {
    const ChoiceSpec& cs = spec_.choices[i];
    const std::string prefix = block_prefix(i, BlockKind::CompressedDot);
    const Value x = adapted_rows(i, prefix);
    Value p = mix_middle(x, param(prefix + ".weight"), param(prefix + ".bias"));
    const Value mask = plan_.gates[i].dim_mask[b];
    if (masking() && !is1(mask)) p = scale_axis(p, mask, 1);
    const Value z = bmm(x, transpose12(p));
    const std::size_t rows = x.value().dim(1), m = p.value().dim(1);
    return masked_norm(reshape(z, {B_, rows * m}), prefix, cs.blocks[b].activation, block_act_[i][b]);
  }

  Value pairwise_block(std::size_t i, std::size_t b) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    const BlockKind k = cs.blocks[b].kind;
    std::vector<Value> terms;
    for (const auto& [pr, pg] : gt.pairs) {
      if (is0(pg)) continue;
      const int l = cs.preds[static_cast<std::size_t>(pr.first)];
      const int r = cs.preds[static_cast<std::size_t>(pr.second)];
      const std::string pp = pair_prefix(k, l, r);
      const Value xl = flat_input(l), xr = flat_input(r);
      const Value h = matmul(xl, param(pp + ".down.weight"), param(pp + ".down.bias"));
      Value z = matmul(h, param(pp + ".up.weight"), param(pp + ".up.bias"));
      if (masking()) {
        const Value fa = flat_act(r);
        if (!is1(fa)) z = scale_axis(z, fa, 1);
      }
      Value t = k == BlockKind::PairwiseGating ? mul(sigmoid(z), xr) : add(z, xr);
      if (masking()) t = gate_mul(t, pg);
      terms.push_back(t);
    }
    const std::size_t width = sh_.choices[i].pairwise_width;
    Value y = terms.empty() ? zeros2(width) : zero_pad_sum(terms, width);
    return masked_norm(y, block_prefix(i, k), cs.blocks[b].activation, block_act_[i][b]);
  }

  void choice_output(std::size_t i) {
    const ChoiceSpec& cs = spec_.choices[i];
    const ChoiceGates& gt = plan_.gates[i];
    const NodeShape& out = shape(choice_node(i));
    std::vector<Value> outs2d;
    std::optional<Value> out3d;
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      const Value gate = gt.block[b];
      if (is0(gate)) continue;
      if (!masking() && !is1(gate)) throw InternalError("standalone forward requires 0/1 block gates");
      Value y;
      switch (cs.blocks[b].kind) {
        case BlockKind::Linear: y = linear_block(i, b); break;
        case BlockKind::EmbedFC: y = embedfc_block(i, b); break;
        case BlockKind::CompressedDot: y = cdot_block(i, b); break;
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum: y = pairwise_block(i, b); break;
      }
      y = gate_mul(y, gate);
      if (produces_2d(cs.blocks[b].kind))
        outs2d.push_back(y);
      else if (out3d)
        throw InternalError("two 3D outputs in one choice");
      else
        out3d = y;
    }
    Node& n = node(choice_node(i));
    if (out.width2d > 0) n.o2 = outs2d.empty() ? zeros2(out.width2d) : zero_pad_sum(outs2d, out.width2d);
    if (out.rows3d > 0) n.o3 = out3d ? *out3d : zeros3(out.rows3d);
  }

  Graph& g_;
  const SupernetSpec& spec_;
  const SpecShapes& sh_;
  ParamStore* ps_;
  const MiniBatch* mb_;
  const ForwardPlan& plan_;
  std::vector<Node> nodes_;
  std::vector<std::vector<std::optional<Value>>> block_act_;
  std::size_t B_ = 1;
  std::size_t D_ = 1;
};

Tensor gather(const Tensor& src, const ParamSlice& s) {
  if (src.rank() == 1) {
    Tensor out({s.rows.size()});
    for (std::size_t k = 0; k < s.rows.size(); ++k) {
      if (s.rows[k] >= src.size()) throw TransferError("slice index out of range for '" + s.source + "'");
      out.data[k] = src.data[s.rows[k]];
    }
    return out;
  }
  if (src.rank() != 2) throw TransferError("unsupported rank for '" + s.source + "'");
  Tensor out({s.rows.size(), s.cols.size()});
  for (std::size_t a = 0; a < s.rows.size(); ++a)
    for (std::size_t c = 0; c < s.cols.size(); ++c) {
      if (s.rows[a] >= src.dim(0) || s.cols[c] >= src.dim(1)) throw TransferError("slice index out of range for '" + s.source + "'");
      out.at(a, c) = src.at(s.rows[a], s.cols[c]);
    }
  return out;
}

std::vector<std::size_t> iota(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = start + k;
  return v;
}

std::vector<std::size_t> active_indices(const Tensor& act) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < act.size(); ++j)
    if (act.data[j] != 0.0) idx.push_back(j);
  return idx;
}

}  // namespace

Gates hard_gates(Graph& g, const SupernetSpec& spec, const SubnetGenome& genome) {
  if (genome.choices.size() != spec.choices.size()) throw GenomeError("genome does not match the spec");
  Gates gates(spec.choices.size());
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGenome& cg = genome.choices[i];
    ChoiceGates& gt = gates[i];
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      gt.block.push_back(g.scalar(cg.blocks[b] ? 1.0 : 0.0));
      gt.dim_mask.push_back(has_dimension(cs.blocks[b].kind)
                                ? g.constant(Tensor::vector(dimension_mask(selected_dim(spec, genome, i, b), cs.blocks[b].max_dim())))
                                : Value{});
    }
    for (auto c : cg.connections) gt.connection.push_back(g.scalar(c ? 1.0 : 0.0));
    for (auto pr : cg.pairs) gt.pairs.emplace_back(pr, g.scalar(1.0));
  }
  return gates;
}

Gates relaxed_gates(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                    const std::vector<Value>& probs) {
  if (probs.size() != decisions.size()) throw ArgumentError("relaxed_gates: one probability vector per decision");
  Gates gates = hard_gates(g, spec, spec.defaults);
  std::vector<std::optional<std::vector<Value>>> left(spec.choices.size()), right(spec.choices.size());
  for (std::size_t d = 0; d < decisions.size(); ++d) {
    const Decision& dec = decisions[d];
    const Value p = probs[d];
    if (p.value().shape != Shape{dec.options}) throw DimensionError("relaxed_gates: probability vector shape");
    ChoiceGates& gt = gates[dec.choice];
    const ChoiceSpec& cs = spec.choices[dec.choice];
    switch (dec.kind) {
      case DecisionKind::Block:
        for (std::size_t b = 0; b < dec.options; ++b) gt.block[b] = pick(p, b);
        break;
      case DecisionKind::Connection: gt.connection[dec.index] = pick(p, 1); break;
      case DecisionKind::Left:
      case DecisionKind::Right: {
        std::vector<Value> v;
        for (std::size_t k = 0; k < dec.options; ++k) v.push_back(pick(p, k));
        (dec.kind == DecisionKind::Left ? left : right)[dec.choice] = std::move(v);
        break;
      }
      case DecisionKind::Dim: {
        const auto& dims = cs.blocks[dec.index].dims;
        const int mx = cs.blocks[dec.index].max_dim();
        Tensor masks({dims.size(), static_cast<std::size_t>(mx)});
        for (std::size_t k = 0; k < dims.size(); ++k) {
          const auto m = dimension_mask(dims[k], mx);
          std::copy(m.begin(), m.end(), masks.data.begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(mx)));
        }
        gt.dim_mask[dec.index] =
            reshape(matmul(reshape(p, {1, dims.size()}), g.constant(std::move(masks))), {static_cast<std::size_t>(mx)});
        break;
      }
    }
  }
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    if (!left[i] && !right[i]) continue;
    const ChoiceSpec& cs = spec.choices[i];
    const auto rights = right_positions(cs);
    const auto def = spec.defaults.choices[i].pairs.front();
    std::vector<Value> lv, rv;
    for (std::size_t l = 0; l < cs.preds.size(); ++l)
      lv.push_back(left[i] ? (*left[i])[l] : g.scalar(static_cast<int>(l) == def.first ? 1.0 : 0.0));
    for (std::size_t r = 0; r < rights.size(); ++r)
      rv.push_back(right[i] ? (*right[i])[r] : g.scalar(rights[r] == def.second ? 1.0 : 0.0));
    ChoiceGates& gt = gates[i];
    gt.pairs.clear();
    for (std::size_t l = 0; l < lv.size(); ++l)
      for (std::size_t r = 0; r < rv.size(); ++r) {
        if (g.is_constant_fill(lv[l], 0.0) || g.is_constant_fill(rv[r], 0.0)) continue;
        gt.pairs.emplace_back(std::pair<int, int>{static_cast<int>(l), rights[r]}, mul(lv[l], rv[r]));
      }
  }
  return gates;
}

ForwardPlan hard_plan(Graph& g, const SupernetSpec& spec, const SubnetGenome& genome, ForwardMode mode) {
  if (mode == ForwardMode::Relaxed) throw ArgumentError("hard_plan: relaxed mode needs probability vectors");
  validate(spec, genome, GenomeRules{true, true});
  ForwardPlan plan;
  plan.mode = mode;
  plan.gates = hard_gates(g, spec, genome);
  plan.alive = active_choices(spec, genome);
  if (mode == ForwardMode::Standalone)
    for (std::size_t i = 0; i < spec.choices.size(); ++i)
      for (std::size_t b = 0; b < spec.choices[i].blocks.size(); ++b)
        if (genome.choices[i].blocks[b] && has_dimension(spec.choices[i].blocks[b].kind) &&
            genome.choices[i].dims[b] + 1 != static_cast<int>(spec.choices[i].blocks[b].dims.size()))
          throw InternalError("standalone forward requires maximal dimensions; compact the subnet first");
  return plan;
}

ForwardPlan relaxed_plan(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                         const std::vector<Value>& probs) {
  ForwardPlan plan;
  plan.mode = ForwardMode::Relaxed;
  plan.gates = relaxed_gates(g, spec, decisions, probs);
  plan.alive.assign(spec.choices.size(), true);
  return plan;
}

Value forward_logits(Graph& g, const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& params,
                     const MiniBatch& batch, const ForwardPlan& plan) {
  Builder b(g, spec, shapes, &params, &batch, plan);
  // Standalone networks carry no masks, so activity tracking is skipped.
  if (plan.mode != ForwardMode::Standalone) b.activities();
  return b.logits();
}

std::vector<ParamDecl> declare_parameters(const SupernetSpec& spec, const SpecShapes& sh) {
  std::vector<ParamDecl> out;
  std::set<std::string> seen;
  auto add = [&](std::string name, Shape s, std::size_t fan) {
    if (seen.insert(name).second) out.push_back({std::move(name), std::move(s), fan});
  };
  const std::size_t D = spec.embedding_dim;
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceShape& ch = sh.choices[i];
    for (const auto& b : cs.blocks) {
      const std::string prefix = block_prefix(i, b.kind);
      const auto M = static_cast<std::size_t>(b.max_dim());
      switch (b.kind) {
        case BlockKind::Linear:
          add(prefix + ".weight", {ch.linear_in, M}, ch.linear_in);
          add(prefix + ".bias", {M}, 1);
          add(prefix + ".ln.gain", {M}, 1);
          add(prefix + ".ln.bias", {M}, 1);
          break;
        case BlockKind::EmbedFC:
        case BlockKind::CompressedDot:
          for (int p : cs.preds) {
            const std::size_t w2 = sh.nodes[static_cast<std::size_t>(p)].width2d;
            if (w2 == 0) continue;
            add(prefix + ".adapt." + std::to_string(p) + ".weight", {w2, D}, w2);
            add(prefix + ".adapt." + std::to_string(p) + ".bias", {D}, 1);
          }
          add(prefix + ".weight", {M, ch.rows_in}, ch.rows_in);
          add(prefix + ".bias", {M}, 1);
          if (b.kind == BlockKind::EmbedFC) {
            add(prefix + ".ln.gain", {D}, 1);
            add(prefix + ".ln.bias", {D}, 1);
          } else {
            add(prefix + ".ln.gain", {ch.rows_in * M}, 1);
            add(prefix + ".ln.bias", {ch.rows_in * M}, 1);
          }
          break;
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum:
          for (int l : cs.preds)
            for (int r : right_positions(cs)) {
              const int rn = cs.preds[static_cast<std::size_t>(r)];
              const std::string pp = pair_prefix(b.kind, l, rn);
              const std::size_t fl = sh.flat(l), fr = sh.flat(rn);
              add(pp + ".down.weight", {fl, spec.bottleneck}, fl);
              add(pp + ".down.bias", {spec.bottleneck}, 1);
              add(pp + ".up.weight", {spec.bottleneck, fr}, spec.bottleneck);
              add(pp + ".up.bias", {fr}, 1);
            }
          add(prefix + ".ln.gain", {ch.pairwise_width}, 1);
          add(prefix + ".ln.bias", {ch.pairwise_width}, 1);
          break;
      }
    }
  }
  add("head.weight", {sh.head_in, 1}, sh.head_in);
  add("head.bias", {1}, 1);
  return out;
}

ParamStore make_parameters(const SupernetSpec& spec, std::uint64_t seed) {
  ParamStore ps;
  for (const auto& d : declare_parameters(spec, compute_shapes(spec))) ps.emplace(d.name, init_weight(d.name, d.shape, d.fan_in, seed));
  return ps;
}

Value Network::logits(Graph& g, const MiniBatch& batch) {
  const ForwardPlan plan = hard_plan(g, spec, genome, mode);
  return forward_logits(g, spec, shapes, params, batch, plan);
}

Network full_supernet(const SupernetSpec& spec, std::uint64_t seed) {
  validate(spec);
  return Network{spec, compute_shapes(spec), all_ones_genome(spec), make_parameters(spec, seed), ForwardMode::Standalone};
}

CompactSubnet compact_subnet(const SupernetSpec& spec, const SubnetGenome& genome) {
  validate(spec, genome, GenomeRules{true, true});
  const SpecShapes sh = compute_shapes(spec);
  const std::size_t D = spec.embedding_dim;

  Graph g;
  ForwardPlan plan = hard_plan(g, spec, genome, ForwardMode::Masked);
  Builder act(g, spec, sh, nullptr, nullptr, plan);
  act.activities();

  CompactSubnet out;
  out.spec.dense_width = spec.dense_width;
  out.spec.num_embeddings = spec.num_embeddings;
  out.spec.embedding_dim = spec.embedding_dim;
  out.spec.bottleneck = spec.bottleneck;
  out.spec.mode = SearchMode::Full;

  std::map<int, int> node_map{{kDenseNode, kDenseNode}, {kEmbeddingNode, kEmbeddingNode}};
  for (std::size_t i = 0; i < spec.choices.size(); ++i)
    if (plan.alive[i]) {
      node_map[choice_node(i)] = choice_node(out.choice_map.size());
      out.choice_map.push_back(static_cast<int>(i));
    }

  std::map<int, std::vector<std::size_t>> flat_idx;
  auto fa = [&](int node) -> const std::vector<std::size_t>& {
    auto it = flat_idx.find(node);
    if (it == flat_idx.end()) it = flat_idx.emplace(node, active_indices(act.flat_activity_tensor(node))).first;
    return it->second;
  };
  auto slice = [&](std::string target, std::string source, std::vector<std::size_t> rows, std::vector<std::size_t> cols = {}) {
    out.slices.push_back({std::move(target), std::move(source), std::move(rows), std::move(cols)});
  };

  for (std::size_t ci = 0; ci < out.choice_map.size(); ++ci) {
    const std::size_t i = static_cast<std::size_t>(out.choice_map[ci]);
    const ChoiceSpec& cs = spec.choices[i];
    const ChoiceGenome& cg = genome.choices[i];
    bool conn_used = false, pair_used = false;
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (!cg.blocks[b]) continue;
      conn_used = conn_used || uses_connections(cs.blocks[b].kind);
      pair_used = pair_used || is_pairwise(cs.blocks[b].kind);
    }
    std::set<int> used;
    if (conn_used)
      for (std::size_t p = 0; p < cs.preds.size(); ++p)
        if (cg.connections[p]) used.insert(static_cast<int>(p));
    if (pair_used)
      for (auto [l, r] : cg.pairs) {
        used.insert(l);
        used.insert(r);
      }
    std::vector<int> upos(used.begin(), used.end());
    std::map<int, int> cpos;
    ChoiceSpec ccs;
    ChoiceGenome ccg;
    for (int p : upos) {
      cpos[p] = static_cast<int>(ccs.preds.size());
      ccs.preds.push_back(node_map.at(cs.preds[static_cast<std::size_t>(p)]));
      ccg.connections.push_back(conn_used ? cg.connections[static_cast<std::size_t>(p)] : 1);
    }
    if (pair_used) {
      std::set<int> rs;
      for (auto [l, r] : cg.pairs) {
        ccg.pairs.emplace_back(cpos[l], cpos[r]);
        rs.insert(cpos[r]);
      }
      std::sort(ccg.pairs.begin(), ccg.pairs.end());
      ccs.right_preds.assign(rs.begin(), rs.end());
    }
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (!cg.blocks[b]) continue;
      const BlockSpec& bs = cs.blocks[b];
      BlockSpec nb{bs.kind, {}, bs.activation};
      if (has_dimension(bs.kind)) nb.dims = {selected_dim(spec, genome, i, b)};
      ccs.blocks.push_back(nb);
      ccg.blocks.push_back(1);
      ccg.dims.push_back(0);
    }

    // Parameter slices.
    std::vector<std::size_t> lin_off(cs.preds.size()), row_off(cs.preds.size());
    for (std::size_t p = 1; p < cs.preds.size(); ++p) {
      const NodeShape& s = sh.nodes[static_cast<std::size_t>(cs.preds[p - 1])];
      lin_off[p] = lin_off[p - 1] + s.flat(D);
      row_off[p] = row_off[p - 1] + (s.width2d > 0 ? 1 : 0) + s.rows3d;
    }
    for (std::size_t b = 0; b < cs.blocks.size(); ++b) {
      if (!cg.blocks[b]) continue;
      const BlockKind k = cs.blocks[b].kind;
      const std::string src = block_prefix(i, k), dst = block_prefix(ci, k);
      const auto dim = static_cast<std::size_t>(selected_dim(spec, genome, i, b));
      switch (k) {
        case BlockKind::Linear: {
          std::vector<std::size_t> rows;
          for (int p : upos)
            for (std::size_t j : fa(cs.preds[static_cast<std::size_t>(p)])) rows.push_back(lin_off[static_cast<std::size_t>(p)] + j);
          slice(dst + ".weight", src + ".weight", rows, iota(dim));
          for (const char* t : {".bias", ".ln.gain", ".ln.bias"}) slice(dst + t, src + t, iota(dim));
          break;
        }
        case BlockKind::EmbedFC:
        case BlockKind::CompressedDot: {
          std::vector<std::size_t> in_rows;
          for (int p : upos) {
            const int node = cs.preds[static_cast<std::size_t>(p)];
            const NodeShape& s = sh.nodes[static_cast<std::size_t>(node)];
            std::size_t r = row_off[static_cast<std::size_t>(p)];
            if (s.width2d > 0) {
              if (act.present(node)) {
                in_rows.push_back(r);
                std::vector<std::size_t> a2;
                for (std::size_t j : fa(node))
                  if (j < s.width2d) a2.push_back(j);
                const std::string sa = src + ".adapt." + std::to_string(node), da = dst + ".adapt." + std::to_string(node_map.at(node));
                slice(da + ".weight", sa + ".weight", a2, iota(D));
                slice(da + ".bias", sa + ".bias", iota(D));
              }
              ++r;
            }
            std::set<std::size_t> rows3;
            for (std::size_t j : fa(node))
              if (j >= s.width2d) rows3.insert((j - s.width2d) / D);
            for (std::size_t k3 : rows3) in_rows.push_back(r + k3);
          }
          slice(dst + ".weight", src + ".weight", iota(dim), in_rows);
          slice(dst + ".bias", src + ".bias", iota(dim));
          if (k == BlockKind::EmbedFC) {
            slice(dst + ".ln.gain", src + ".ln.gain", iota(D));
            slice(dst + ".ln.bias", src + ".ln.bias", iota(D));
          } else {
            const std::size_t M = static_cast<std::size_t>(cs.blocks[b].max_dim());
            std::vector<std::size_t> ln;
            for (std::size_t r : in_rows)
              for (std::size_t m = 0; m < dim; ++m) ln.push_back(r * M + m);
            slice(dst + ".ln.gain", src + ".ln.gain", ln);
            slice(dst + ".ln.bias", src + ".ln.bias", ln);
          }
          break;
        }
        case BlockKind::PairwiseGating:
        case BlockKind::PairwiseSum: {
          std::size_t widest = 0;
          int widest_node = -1;
          for (auto [l, r] : cg.pairs) {
            const int ln = cs.preds[static_cast<std::size_t>(l)], rn = cs.preds[static_cast<std::size_t>(r)];
            const std::string sp = pair_prefix(k, ln, rn), dp = pair_prefix(k, node_map.at(ln), node_map.at(rn));
            slice(dp + ".down.weight", sp + ".down.weight", fa(ln), iota(spec.bottleneck));
            slice(dp + ".down.bias", sp + ".down.bias", iota(spec.bottleneck));
            slice(dp + ".up.weight", sp + ".up.weight", iota(spec.bottleneck), fa(rn));
            slice(dp + ".up.bias", sp + ".up.bias", fa(rn));
            if (widest_node < 0 || fa(rn).size() > widest) {
              widest = fa(rn).size();
              widest_node = rn;
            }
          }
          // Exact for a single pair; merged pairs share the widest operand's layout.
          slice(dst + ".ln.gain", src + ".ln.gain", fa(widest_node));
          slice(dst + ".ln.bias", src + ".ln.bias", fa(widest_node));
          break;
        }
      }
    }
    out.spec.choices.push_back(std::move(ccs));
    out.genome.choices.push_back(std::move(ccg));
  }
  const int last = choice_node(spec.choices.size() - 1);
  slice("head.weight", "head.weight", fa(last), {0});
  slice("head.bias", "head.bias", {0});
  out.spec.defaults = out.genome;
  validate(out.spec);
  return out;
}

Network transfer_weights(const CompactSubnet& compact, const ParamStore& supernet) {
  Network net{compact.spec, compute_shapes(compact.spec), compact.genome, ParamStore{}, ForwardMode::Standalone};
  std::map<std::string, const ParamSlice*> by_target;
  for (const auto& s : compact.slices) by_target.emplace(s.target, &s);
  for (const auto& d : declare_parameters(net.spec, net.shapes)) {
    auto it = by_target.find(d.name);
    if (it == by_target.end()) {
      // The compact spec declares every (left, right) combination of its
      // predecessors; combinations the genome never selects stay zero.
      if (d.name.rfind("pair.", 0) == 0) {
        net.params.emplace(d.name, Tensor(d.shape));
        continue;
      }
      throw TransferError("no supernet slice for '" + d.name + "'");
    }
    Tensor t = gather(supernet.at(it->second->source).value, *it->second);
    if (t.shape != d.shape)
      throw TransferError("slice for '" + d.name + "' has shape " + shape_string(t.shape) + ", expected " + shape_string(d.shape));
    net.params.emplace(d.name, std::move(t));
  }
  return net;
}

Network standalone_network(const SupernetSpec& spec, const SubnetGenome& genome, std::uint64_t seed) {
  CompactSubnet c = compact_subnet(spec, genome);
  Network net{c.spec, compute_shapes(c.spec), c.genome, make_parameters(c.spec, seed), ForwardMode::Standalone};
  return net;
}

}  // namespace ctrnas
