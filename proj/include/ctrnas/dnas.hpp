#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "ctrnas/data.hpp"
#include "ctrnas/policy.hpp"
#include "ctrnas/supernet.hpp"

namespace ctrnas {

/// softmax((logits + noise) / tau); differentiable in the logits.
Value gumbel_softmax(Value logits, const Tensor& noise, double tau);
/// Same with freshly drawn Gumbel(0, 1) noise.
Value gumbel_softmax_sample(Value logits, double tau, Rng& rng);

/// One noise vector per decision.
std::vector<Tensor> draw_gumbel_noise(const std::vector<Decision>& decisions, Rng& rng);

/// Architecture logits, one trainable vector per free decision.
struct ArchParams {
  std::vector<Decision> decisions;
  std::vector<Parameter> logits;
  double tau = 1.0;
};

ArchParams make_arch(const SupernetSpec& spec);
/// Snapshot as a policy, for argmax extraction and serialization.
PolicyParams as_policy(const ArchParams& arch);

/// Relaxed decision vectors of one realization.
std::vector<Value> relaxed_decisions(Graph& g, ArchParams& arch, const std::vector<Tensor>& noise);

/// Cross entropy of the supernet with every hard mask replaced by the relaxed
/// decision vectors (block mixtures, soft connections, soft dimension masks).
Value relaxed_forward(Graph& g, const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& weights,
                      const std::vector<Decision>& decisions, const std::vector<Value>& probs, const MiniBatch& batch);

/// ce + lambda * |E[FLOPs] - c|, the FLOPs term evaluated on the same relaxed
/// decision vectors through the cost-model polynomial.
Value flops_regularized_loss(Value ce, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                             const std::vector<Value>& probs, double target, double lambda);

struct DnasConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 128;
  double target_flops = 0.0;
  double lambda = 0.0;
  /// Weight of the cross-entropy term; 0 gives a FLOPs-only search that
  /// never runs the network.
  double ce_weight = 1.0;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double weight_lr = 1e-2;
  double arch_lr = 5e-2;
  /// |FLOPs(argmax) - c| / c at which the search counts as converged.
  double flops_tolerance = 0.1;
  std::uint64_t seed = 0;
};

struct DnasTraceRow {
  std::int64_t step = 0;
  double ce_loss = 0.0;
  double expected_flops = 0.0;
  double tau = 0.0;
  double argmax_flops = 0.0;
  std::vector<double> max_prob;  ///< per decision
};

struct DnasResult {
  SubnetGenome genome;
  PolicyParams arch;
  ParamStore weights;
  std::vector<DnasTraceRow> trace;
  /// Optimizer steps until the argmax genome first came within tolerance of
  /// the FLOPs target (when a target is set).
  std::optional<std::int64_t> converged_after;
};

/// Geometric anneal from tau_start to tau_end over the run.
double tau_at(const DnasConfig& cfg, std::size_t step);

DnasResult dnas_search(const SupernetSpec& spec, const SynthTaskSpec& task, const DnasConfig& cfg);

struct DnasState {
  SupernetSpec spec;
  SpecShapes shapes;
  ParamStore weights;
  ArchParams arch;
  Adam weight_opt;
  Adam arch_opt;
  Rng gumbel;
  std::int64_t step = 0;
  std::vector<DnasTraceRow> trace;
  std::optional<std::int64_t> converged_after;
};

DnasState make_dnas_state(const SupernetSpec& spec, const DnasConfig& cfg);
void dnas_step(DnasState& state, const SynthTaskSpec& task, const DnasConfig& cfg);
/// Runs the remaining steps, calling `after_step` after each, and extracts the result.
DnasResult finish_dnas(DnasState& state, const SynthTaskSpec& task, const DnasConfig& cfg,
                       const std::function<void(const DnasState&)>& after_step = {});

nlohmann::json dnas_checkpoint(const DnasState& state);
DnasState restore_dnas_state(const SupernetSpec& spec, const DnasConfig& cfg, const nlohmann::json& j);

void write_dnas_trace(std::ostream& os, const std::vector<DnasTraceRow>& trace);

}  // namespace ctrnas
