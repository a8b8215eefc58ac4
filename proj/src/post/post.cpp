#include "ctrnas/post.hpp"

#include <algorithm>
#include <cmath>

#include "ctrnas/errors.hpp"

namespace ctrnas {

std::string_view to_string(ScaleRule r) { return r == ScaleRule::EmbedFc3x ? "embedfc_3x" : "mixed_1p5x_2x"; }

ScaleRule scale_rule_from_string(std::string_view s) {
  if (s == "embedfc_3x") return ScaleRule::EmbedFc3x;
  if (s == "mixed_1p5x_2x") return ScaleRule::Mixed1p5x2x;
  throw ConfigError("unknown scaling rule '" + std::string(s) + "' (expected embedfc_3x or mixed_1p5x_2x)");
}

namespace {

double scale_factor(ScaleRule rule, BlockKind k) {
  if (rule == ScaleRule::EmbedFc3x) return k == BlockKind::EmbedFC ? 3.0 : 1.0;
  return has_dimension(k) ? 1.5 : 1.0;
}

// Adds `dim` to a block's options and returns its index; indices held by the
// defaults are remapped so they keep pointing at the same dimension.
int add_dimension(SupernetSpec& spec, std::size_t i, std::size_t b, int dim) {
  auto& dims = spec.choices[i].blocks[b].dims;
  const auto it = std::lower_bound(dims.begin(), dims.end(), dim);
  const int pos = static_cast<int>(it - dims.begin());
  if (it != dims.end() && *it == dim) return pos;
  dims.insert(it, dim);
  int& def = spec.defaults.choices[i].dims[b];
  if (def >= pos) ++def;
  return pos;
}

}  // namespace

ScaledModel naive_scale(const SubnetGenome& genome, const SupernetSpec& spec, ScaleRule rule) {
  validate(spec, genome, GenomeRules{true, true});
  ScaledModel out{spec, genome};
  bool pairwise_on = false;
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    for (std::size_t b = 0; b < spec.choices[i].blocks.size(); ++b) {
      if (!genome.choices[i].blocks[b]) continue;
      const BlockKind k = spec.choices[i].blocks[b].kind;
      pairwise_on = pairwise_on || is_pairwise(k);
      const double f = scale_factor(rule, k);
      if (f == 1.0) continue;
      // Other scaled blocks of this choice may have shifted this block's list.
      const int d = out.spec.choices[i].blocks[b].dims[static_cast<std::size_t>(out.genome.choices[i].dims[b])];
      out.genome.choices[i].dims[b] = add_dimension(out.spec, i, b, static_cast<int>(std::ceil(d * f)));
    }
  }
  if (rule == ScaleRule::Mixed1p5x2x && pairwise_on) out.spec.bottleneck *= 2;
  return out;
}

SubnetGenome merge_genomes(std::span<const SubnetGenome> genomes, const SupernetSpec& spec) {
  if (genomes.empty()) throw ArgumentError("merge needs at least one genome");
  for (const auto& g : genomes) {
    try {
      validate(spec, g, GenomeRules{true, true});
    } catch (const GenomeError& e) {
      throw ArgumentError(std::string("genome does not fit the merge spec: ") + e.what());
    }
  }
  SubnetGenome m = genomes[0];
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    ChoiceGenome& c = m.choices[i];
    for (std::size_t b = 0; b < c.blocks.size(); ++b) {
      int best_on = -1, best_any = -1;
      std::uint8_t on = 0;
      for (const auto& g : genomes) {
        const auto& s = g.choices[i];
        best_any = std::max(best_any, s.dims[b]);
        if (s.blocks[b]) best_on = std::max(best_on, s.dims[b]);
        on |= s.blocks[b];
      }
      c.blocks[b] = on;
      c.dims[b] = on ? best_on : best_any;
    }
    for (std::size_t p = 0; p < c.connections.size(); ++p)
      for (const auto& g : genomes) c.connections[p] |= g.choices[i].connections[p];
    for (const auto& g : genomes) c.pairs.insert(c.pairs.end(), g.choices[i].pairs.begin(), g.choices[i].pairs.end());
    std::sort(c.pairs.begin(), c.pairs.end());
    c.pairs.erase(std::unique(c.pairs.begin(), c.pairs.end()), c.pairs.end());
  }
  return m;
}

}  // namespace ctrnas
