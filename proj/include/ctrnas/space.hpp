#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/rng.hpp"

namespace ctrnas {

enum class BlockKind { Linear, EmbedFC, CompressedDot, PairwiseGating, PairwiseSum };

inline constexpr BlockKind kAllBlockKinds[] = {BlockKind::Linear, BlockKind::EmbedFC, BlockKind::CompressedDot,
                                               BlockKind::PairwiseGating, BlockKind::PairwiseSum};

std::string_view to_string(BlockKind k);
BlockKind block_kind_from_string(std::string_view s);
std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// Blocks with an internal linear projection whose output dimension is searched.
constexpr bool has_dimension(BlockKind k) {
  return k == BlockKind::Linear || k == BlockKind::EmbedFC || k == BlockKind::CompressedDot;
}
constexpr bool is_pairwise(BlockKind k) { return k == BlockKind::PairwiseGating || k == BlockKind::PairwiseSum; }
/// Blocks fed through the multi-hot connection mask (pairwise blocks use one left/right pair instead).
constexpr bool uses_connections(BlockKind k) { return has_dimension(k); }
constexpr bool produces_2d(BlockKind k) { return k != BlockKind::EmbedFC; }
/// Default activation: identity after dot-product style outputs, relu elsewhere.
constexpr Activation default_activation(BlockKind k) {
  return k == BlockKind::CompressedDot ? Activation::Identity : Activation::Relu;
}

enum class SearchMode { Full, DimsOnly, BlocksOnly };
std::string_view to_string(SearchMode m);
SearchMode search_mode_from_string(std::string_view s);

// Graph node ids: 0 = dense input [B x S], 1 = embeddings [B x N x D], 2 + i = choice i.
inline constexpr int kDenseNode = 0;
inline constexpr int kEmbeddingNode = 1;
inline constexpr int kFirstChoiceNode = 2;
constexpr int choice_node(std::size_t i) { return kFirstChoiceNode + static_cast<int>(i); }

struct BlockSpec {
  BlockKind kind = BlockKind::Linear;
  /// Output-dimension options, strictly increasing; empty for pairwise blocks.
  std::vector<int> dims;
  Activation activation = Activation::Relu;

  int max_dim() const { return dims.empty() ? 0 : dims.back(); }
  bool operator==(const BlockSpec&) const = default;
};

struct ChoiceSpec {
  std::vector<BlockSpec> blocks;
  /// Allowed predecessor node ids, strictly increasing and smaller than this choice's node.
  std::vector<int> preds;
  /// Positions into `preds` allowed as the right operand of a pairwise block; empty = all.
  std::vector<int> right_preds;

  std::optional<std::size_t> block_index(BlockKind k) const;
  bool has_block(BlockKind k) const { return block_index(k).has_value(); }
  bool right_allowed(int pos) const;
  bool operator==(const ChoiceSpec&) const = default;
};

/// Decision values of one choice. Sampled subnets have exactly one block and
/// (for pairwise blocks) one pair; the full supernet and merged models may
/// enable several.
struct ChoiceGenome {
  std::vector<std::uint8_t> blocks;       ///< per spec block: 1 = enabled
  std::vector<std::uint8_t> connections;  ///< per pred: multi-hot connection mask
  std::vector<std::pair<int, int>> pairs; ///< (left, right) positions into preds, sorted unique
  std::vector<int> dims;                  ///< per spec block: index into its dims (0 for pairwise)

  bool operator==(const ChoiceGenome&) const = default;
  auto operator<=>(const ChoiceGenome&) const = default;
};

struct SubnetGenome {
  std::vector<ChoiceGenome> choices;
  bool operator==(const SubnetGenome&) const = default;
  auto operator<=>(const SubnetGenome&) const = default;
};

struct SupernetSpec {
  static constexpr int kVersion = 1;

  std::size_t dense_width = 0;
  std::size_t num_embeddings = 0;
  std::size_t embedding_dim = 0;
  std::vector<ChoiceSpec> choices;
  /// Middle dimension of the two-layer pairwise projections.
  std::size_t bottleneck = 8;
  SearchMode mode = SearchMode::Full;
  /// Values of decisions frozen by the search mode (and the reference model).
  SubnetGenome defaults;

  std::size_t node_count() const { return choices.size() + kFirstChoiceNode; }
  bool operator==(const SupernetSpec&) const = default;
};

/// Static (all-enabled) tensor widths of every node and block.
struct NodeShape {
  std::size_t width2d = 0;  ///< 2D output width (0 = no 2D output)
  std::size_t rows3d = 0;   ///< 3D output rows (0 = no 3D output)
  std::size_t flat(std::size_t d) const { return width2d + rows3d * d; }
};

struct ChoiceShape {
  std::size_t linear_in = 0;   ///< flat2d adaptor width
  std::size_t rows_in = 0;     ///< concat3d adaptor rows
  std::size_t pairwise_width = 0;
};

struct SpecShapes {
  std::vector<NodeShape> nodes;
  std::vector<ChoiceShape> choices;
  std::size_t head_in = 0;
  std::size_t embedding_dim = 0;

  std::size_t flat(int node) const { return nodes.at(static_cast<std::size_t>(node)).flat(embedding_dim); }
  /// Width a block contributes to its choice's 2D output.
  std::size_t block_width(const SupernetSpec& spec, std::size_t choice, std::size_t block) const;
};

SpecShapes compute_shapes(const SupernetSpec& spec);

/// Throws SpecError on a malformed spec (cycles, empty choices, bad dims, bad defaults).
void validate(const SupernetSpec& spec);

struct GenomeRules {
  bool allow_multi_block = false;
  bool allow_multi_pair = false;
};

/// Throws GenomeError when the genome does not fit the spec or breaks a mask invariant.
void validate(const SupernetSpec& spec, const SubnetGenome& g, GenomeRules rules = {});

/// Every mask set to ones: all blocks, all connections, every (left, right)
/// pair, maximal dimensions.
SubnetGenome all_ones_genome(const SupernetSpec& spec);

/// Resets decisions with no effect (connections of a pairwise-only choice,
/// pairs of a choice without pairwise blocks, dims of disabled blocks) to the
/// spec defaults, so functionally identical genomes compare equal.
SubnetGenome canonicalize(const SupernetSpec& spec, SubnetGenome g);

/// Which choices feed the head through enabled blocks and connections.
std::vector<bool> active_choices(const SupernetSpec& spec, const SubnetGenome& g);

/// Leading-ones mask of length `max_dim` with `dim` ones.
std::vector<double> dimension_mask(int dim, int max_dim);

/// Selected dimension value of a block.
int selected_dim(const SupernetSpec& spec, const SubnetGenome& g, std::size_t choice, std::size_t block);

// ---- decisions -------------------------------------------------------------

enum class DecisionKind { Block, Connection, Left, Right, Dim };

/// One independent categorical decision of the search space.
struct Decision {
  DecisionKind kind;
  std::size_t choice;
  std::size_t index = 0;  ///< pred position (Connection) or block index (Dim)
  std::size_t options;
  bool operator==(const Decision&) const = default;
};

/// Free decisions under the spec's search mode, in a stable order.
std::vector<Decision> free_decisions(const SupernetSpec& spec);

/// Builds a genome from one option per free decision; frozen fields come from
/// the spec defaults. Connection decisions use option 1 = connected.
SubnetGenome genome_from_decisions(const SupernetSpec& spec, const std::vector<Decision>& decisions,
                                   const std::vector<int>& values);
/// Inverse of genome_from_decisions for single-block, single-pair genomes.
std::vector<int> decisions_from_genome(const SupernetSpec& spec, const std::vector<Decision>& decisions,
                                       const SubnetGenome& g);

/// True when every connection-using enabled block has at least one connection.
bool connections_nonempty(const SupernetSpec& spec, const SubnetGenome& g, std::size_t choice);

using BigInt = boost::multiprecision::cpp_int;

/// Exact number of subnets: product over free decisions of their option
/// counts, a choice's connection bits counting as 2^K - 1 non-empty patterns.
BigInt search_space_size(const SupernetSpec& spec);

/// Uniform random subnet; each connection bit is on with `connection_on_prob`
/// (resampled until non-empty), frozen decisions copied from defaults.
SubnetGenome sample_random_genome(const SupernetSpec& spec, Rng& rng, double connection_on_prob = 0.8);

/// All valid canonical genomes when the space has at most `limit` of them.
std::optional<std::vector<SubnetGenome>> enumerate_genomes(const SupernetSpec& spec, std::size_t limit);

// ---- growth ------------------------------------------------------------------

struct GrowOptions {
  std::vector<int> distances{1, 2, 3, 6, 9};
  int dim_options = 7;
  double dim_low = 0.5;
  double dim_high = 1.25;
};

/// Grows a single-block-per-choice seed (a production-like chain) into a
/// supernet: DAG-preserving random permutation, duplication of embedding
/// choices and block completion, then distance-based connections with
/// dimension options. Throws SpecError when the seed is not a valid chain.
SupernetSpec grow_supernet(const SupernetSpec& seed, Rng& rng, const GrowOptions& opts = {});

/// Dimension options floor(seed * f) for f uniformly spaced in [low, high];
/// duplicates from small seeds are dropped.
std::vector<int> grown_dimension_options(int seed_dim, const GrowOptions& opts = {});

// ---- serialization -----------------------------------------------------------

nlohmann::json to_json(const SupernetSpec& spec);
SupernetSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SubnetGenome& g);
SubnetGenome genome_from_json(const nlohmann::json& j);
/// Stable 16-hex-digit content hash of a genome's canonical serialization.
std::string genome_id(const SubnetGenome& g);

}  // namespace ctrnas
