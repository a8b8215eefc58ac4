#pragma once

#include <span>
#include <string_view>

#include "ctrnas/space.hpp"

namespace ctrnas {

enum class ScaleRule {
  EmbedFc3x,    ///< EmbedFC output dimensions x3
  Mixed1p5x2x,  ///< non-pairwise dims x1.5; pairwise bottleneck x2
};
std::string_view to_string(ScaleRule r);
ScaleRule scale_rule_from_string(std::string_view s);

struct ScaledModel {
  SupernetSpec spec;
  SubnetGenome genome;
};

/// Scales the enabled blocks of a genome. Scaled dimensions round up and are
/// added to the block's dimension options; the returned genome selects them.
ScaledModel naive_scale(const SubnetGenome& genome, const SupernetSpec& spec, ScaleRule rule);

/// Union of the enabled structure; each block takes the largest
/// dimension among the sources that enable it. Throws ArgumentError on an
/// empty list or a genome that does not fit the spec.
SubnetGenome merge_genomes(std::span<const SubnetGenome> genomes, const SupernetSpec& spec);

}  // namespace ctrnas
