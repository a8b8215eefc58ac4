#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string_view>
#include <vector>

#include "ctrnas/data.hpp"
#include "ctrnas/policy.hpp"
#include "ctrnas/supernet.hpp"

namespace ctrnas {

/// Relative batch NE of a subnet against the co-trained baseline; negative is better.
double ne_percent_reward(double ne_batch_subnet, double ne_batch_baseline);

enum class Penalty { L1, Relu };
std::string_view to_string(Penalty p);
Penalty penalty_from_string(std::string_view s);

/// ne_pct + alpha * |flops - c| (L1) or ne_pct + alpha * max(flops - c, 0) (ReLU).
double total_reward(double ne_pct, double flops, double target, double alpha, Penalty penalty);

struct OneShotConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 128;
  std::size_t samples_per_step = 8;  ///< M
  std::size_t offpolicy_updates = 50;  ///< K
  std::size_t offpolicy_batch = 8;
  std::size_t buffer_capacity = 10000;
  double policy_lr = 1e-2;
  PolicyOptimizerKind policy_optimizer = PolicyOptimizerKind::Sgd;
  double weight_lr = 1e-2;
  double alpha = 0.0;
  double target_flops = 0.0;
  Penalty penalty = Penalty::L1;
  /// Use NE_% rewards; false rewards the raw subnet batch NE.
  bool ne_percent = true;
  /// Reward is the FLOPs cost alone; no weights are trained.
  bool flops_only = false;
  std::uint64_t seed = 0;
};

struct OneShotTraceRow {
  std::int64_t step = 0;
  double mean_reward = 0.0;
  double baseline_ne = 0.0;
  double mean_entropy = 0.0;
  double argmax_flops = 0.0;
  std::int64_t policy_updates = 0;
};

/// Everything the search loop carries between steps.
struct OneShotState {
  SupernetSpec spec;
  SpecShapes shapes;
  ParamStore supernet;
  Adam supernet_opt;
  Network baseline;
  Adam baseline_opt;
  PolicyParams policy;
  PolicyOptimizer policy_opt;
  ReplayBuffer buffer;
  Rng rng;
  std::int64_t step = 0;
  std::vector<OneShotTraceRow> trace;
  /// Per sampled subnet: raw batch NE and NE_% (for variance diagnostics).
  std::vector<double> raw_batch_ne;
  std::vector<double> ne_pct;
};

OneShotState make_oneshot_state(const SupernetSpec& spec, const OneShotConfig& cfg);

/// Complete loop state; restoring and continuing matches an uninterrupted run exactly.
nlohmann::json oneshot_checkpoint(const OneShotState& state);
OneShotState restore_oneshot_state(const SupernetSpec& spec, const OneShotConfig& cfg, const nlohmann::json& j);

/// One step: train the baseline on the batch, sample M subnets and train each
/// on the shared weights (sequentially), one on-policy update, push the
/// samples to the buffer, then K off-policy updates.
void joint_search_step(OneShotState& state, const SynthTaskSpec& task, const OneShotConfig& cfg);

struct OneShotResult {
  SubnetGenome genome;
  PolicyParams policy;
  std::vector<OneShotTraceRow> trace;
  std::vector<double> raw_batch_ne;
  std::vector<double> ne_pct;
};

OneShotResult oneshot_search(const SupernetSpec& spec, const SynthTaskSpec& task, const OneShotConfig& cfg);
/// Runs the remaining steps of `state` (up to cfg.steps), calling `after_step` after each.
OneShotResult finish_oneshot(OneShotState& state, const SynthTaskSpec& task, const OneShotConfig& cfg,
                             const std::function<void(const OneShotState&)>& after_step = {});

void write_oneshot_trace(std::ostream& os, const std::vector<OneShotTraceRow>& trace);

}  // namespace ctrnas
