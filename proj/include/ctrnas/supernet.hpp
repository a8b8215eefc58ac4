#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/data.hpp"
#include "ctrnas/params.hpp"
#include "ctrnas/space.hpp"

namespace ctrnas {

/// Standalone: plain network without masks (compact subnets, the full supernet
/// and the FLOPs oracle). Masked: hard genome applied through 0/1 masks over the
/// static supernet shapes. Relaxed: masks are differentiable soft values.
enum class ForwardMode { Standalone, Masked, Relaxed };

/// Mask values of one choice as graph values. Hard genomes use constants.
struct ChoiceGates {
  std::vector<Value> block;       ///< [1] per spec block
  std::vector<Value> connection;  ///< [1] per pred position
  std::vector<std::pair<std::pair<int, int>, Value>> pairs;  ///< (left, right) -> [1]; unlisted pairs are off
  std::vector<Value> dim_mask;    ///< [max_dim] per dimension-capable block
};
using Gates = std::vector<ChoiceGates>;

Gates hard_gates(Graph& g, const SupernetSpec& spec, const SubnetGenome& genome);

/// Gates built from per-decision probability vectors (one Value per free
/// decision, in free_decisions order); frozen decisions use the spec defaults.
/// A choice's pair gate is p_left[l] * p_right[r]; a relaxed dimension mask is
/// sum_k p_k * leading_ones(dim_k).
Gates relaxed_gates(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                    const std::vector<Value>& probs);

struct ForwardPlan {
  ForwardMode mode = ForwardMode::Masked;
  Gates gates;
  std::vector<bool> alive;  ///< choices to compute
};

ForwardPlan hard_plan(Graph& g, const SupernetSpec& spec, const SubnetGenome& genome, ForwardMode mode);
ForwardPlan relaxed_plan(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                         const std::vector<Value>& probs);

/// Logits [B x 1] of the network described by (spec, plan) on a batch.
Value forward_logits(Graph& g, const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& params,
                     const MiniBatch& batch, const ForwardPlan& plan);

/// Name and shape (with fan-in) for every tensor of the supernet.
struct ParamDecl {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
};
std::vector<ParamDecl> declare_parameters(const SupernetSpec& spec, const SpecShapes& shapes);
ParamStore make_parameters(const SupernetSpec& spec, std::uint64_t seed);

/// A spec + genome + weights bundle trained and evaluated as one network.
struct Network {
  SupernetSpec spec;
  SpecShapes shapes;
  SubnetGenome genome;
  ParamStore params;
  ForwardMode mode = ForwardMode::Standalone;

  Value logits(Graph& g, const MiniBatch& batch);
};

/// Unmasked network of the whole supernet (everything enabled).
Network full_supernet(const SupernetSpec& spec, std::uint64_t seed);

/// Smallest standalone network equivalent to a genome: only the choices that
/// reach the head, restricted to the enabled blocks
/// at their selected dimensions. `slices` maps each compact parameter onto the supernet
/// entries it inherits (leading/active rows and columns).
struct ParamSlice {
  std::string target;
  std::string source;
  std::vector<std::size_t> rows;  ///< gathered source indices along axis 0
  std::vector<std::size_t> cols;  ///< gathered source indices along axis 1 (matrices)
};

struct CompactSubnet {
  SupernetSpec spec;
  SubnetGenome genome;
  std::vector<int> choice_map;  ///< compact choice -> supernet choice
  std::vector<ParamSlice> slices;
};

CompactSubnet compact_subnet(const SupernetSpec& spec, const SubnetGenome& genome);

/// Copies the genome-selected slices of supernet weights into a fresh
/// standalone network. Throws TransferError on a missing or mis-shaped slice.
Network transfer_weights(const CompactSubnet& compact, const ParamStore& supernet);

/// Standalone network of a genome with fresh initialization.
Network standalone_network(const SupernetSpec& spec, const SubnetGenome& genome, std::uint64_t seed);

}  // namespace ctrnas
