#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/space.hpp"
#include "ctrnas/supernet.hpp"

namespace ctrnas {

struct FlopsReport {
  std::uint64_t flops = 0;
  std::uint64_t dense_params = 0;
  std::uint64_t n_choices = 0;
  std::uint64_t n_connections = 0;  ///< set connection bits of active choices, plus 2 per active pairwise block
  bool operator==(const FlopsReport&) const = default;
};

/// Closed-form count on the genome's compact network. Multiply and add count
/// separately; layer norm costs 7W+4 per row plus the activation
/// (relu 1, sigmoid 4 per element).
FlopsReport count_flops(const SupernetSpec& spec, const SubnetGenome& genome, std::size_t batch_size = 1);

/// Runs the compact network once at batch size 1 with every kernel counting
/// its scalar operations. Ground truth for count_flops.
FlopsReport oracle_count(const SupernetSpec& spec, const SubnetGenome& genome);

/// FLOPs (batch size 1) as a polynomial in the gate values: block gates weight
/// block costs, effective dimensions are sums of the dimension masks, and
/// choice liveness is 1 - prod(1 - use) over consumers. Equals count_flops for
/// hard gates of a single-block, single-pair genome.
Value expected_flops(Graph& g, const SupernetSpec& spec, const Gates& gates);
Value expected_flops(Graph& g, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                     const std::vector<Value>& probs);

struct SubnetStatistics {
  FlopsReport reference;
  std::vector<FlopsReport> samples;
};

/// Reports of `n_samples` random subnets plus the spec's default (reference) genome.
SubnetStatistics subnet_statistics(const SupernetSpec& spec, std::size_t n_samples, double connection_on_prob, Rng& rng);

/// Delimited table: kind,flops,dense_params,n_choices,n_connections,flops_ratio
/// with the reference row first (kind "reference") and one "sample" row per subnet.
void write_statistics_table(std::ostream& os, const SubnetStatistics& stats);

}  // namespace ctrnas
