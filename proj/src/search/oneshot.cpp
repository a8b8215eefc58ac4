#include "ctrnas/oneshot.hpp"

#include <cmath>
#include <iomanip>

#include "ctrnas/cost.hpp"
#include "ctrnas/errors.hpp"
#include "ctrnas/metrics.hpp"
#include "ctrnas/train.hpp"

namespace ctrnas {

double ne_percent_reward(double ne_batch_subnet, double ne_batch_baseline) {
  if (!(ne_batch_baseline > 0.0)) throw MetricError("NE_% needs a positive baseline NE");
  return (ne_batch_subnet - ne_batch_baseline) / ne_batch_baseline;
}

std::string_view to_string(Penalty p) { return p == Penalty::L1 ? "l1" : "relu"; }

Penalty penalty_from_string(std::string_view s) {
  if (s == "l1") return Penalty::L1;
  if (s == "relu") return Penalty::Relu;
  throw ConfigError("unknown penalty '" + std::string(s) + "' (expected l1 or relu)");
}

double total_reward(double ne_pct, double flops, double target, double alpha, Penalty penalty) {
  const double gap = flops - target;
  return ne_pct + alpha * (penalty == Penalty::L1 ? std::abs(gap) : std::max(gap, 0.0));
}

OneShotState make_oneshot_state(const SupernetSpec& spec, const OneShotConfig& cfg) {
  validate(spec);
  if (cfg.samples_per_step == 0) throw ArgumentError("at least one sampled subnet per step is required");
  return OneShotState{spec,
                      compute_shapes(spec),
                      make_parameters(spec, substream_seed(cfg.seed, "supernet")),
                      Adam(AdamConfig{cfg.weight_lr}),
                      standalone_network(spec, spec.defaults, substream_seed(cfg.seed, "baseline")),
                      Adam(AdamConfig{cfg.weight_lr}),
                      make_policy(spec),
                      PolicyOptimizer(cfg.policy_lr, cfg.policy_optimizer),
                      ReplayBuffer(cfg.buffer_capacity),
                      make_rng(cfg.seed, "policy"),
                      0,
                      {},
                      {},
                      {}};
}

void joint_search_step(OneShotState& st, const SynthTaskSpec& task, const OneShotConfig& cfg) {
  double base_ne = 0.0;
  MiniBatch batch;
  if (!cfg.flops_only) {
    batch = next_batch(task, cfg.batch_size, st.step);
    base_ne = batch_ne(train_step(st.baseline, st.baseline_opt, batch), batch.labels);
  }
  std::vector<ScoredGenome> scored;
  std::vector<RewardSample> fresh;
  double reward_sum = 0.0;
  for (std::size_t m = 0; m < cfg.samples_per_step; ++m) {
    PolicySample s = sample_genome(st.policy, st.spec, st.rng);
    const double flops = static_cast<double>(count_flops(st.spec, s.genome).flops);
    double r;
    if (cfg.flops_only) {
      r = total_reward(0.0, flops, cfg.target_flops, cfg.alpha, cfg.penalty);
    } else {
      const auto z = shared_train_step(st.spec, st.shapes, st.supernet, st.supernet_opt, s.genome, batch);
      const double sub_ne = batch_ne(z, batch.labels);
      const double pct = ne_percent_reward(sub_ne, base_ne);
      st.raw_batch_ne.push_back(sub_ne);
      st.ne_pct.push_back(pct);
      r = total_reward(cfg.ne_percent ? pct : sub_ne, flops, cfg.target_flops, cfg.alpha, cfg.penalty);
    }
    reward_sum += r;
    scored.push_back({s.values, r});
    fresh.push_back({std::move(s.values), std::move(s.chosen_probs), r, st.step});
  }
  reinforce_update(st.policy, st.policy_opt, scored);
  for (auto& f : fresh) st.buffer.push(std::move(f));
  for (std::size_t k = 0; k < cfg.offpolicy_updates; ++k)
    offpolicy_update(st.policy, st.policy_opt, st.buffer, cfg.offpolicy_batch, st.rng);

  OneShotTraceRow row;
  row.step = st.step;
  row.mean_reward = reward_sum / static_cast<double>(cfg.samples_per_step);
  row.baseline_ne = base_ne;
  row.mean_entropy = mean_entropy(st.policy);
  row.argmax_flops = static_cast<double>(count_flops(st.spec, extract_best_genome(st.policy, st.spec)).flops);
  row.policy_updates = st.policy_opt.updates();
  st.trace.push_back(row);
  ++st.step;
}

OneShotResult finish_oneshot(OneShotState& st, const SynthTaskSpec& task, const OneShotConfig& cfg,
                             const std::function<void(const OneShotState&)>& after_step) {
  while (st.step < static_cast<std::int64_t>(cfg.steps)) {
    joint_search_step(st, task, cfg);
    if (after_step) after_step(st);
  }
  return OneShotResult{extract_best_genome(st.policy, st.spec), st.policy, st.trace, st.raw_batch_ne, st.ne_pct};
}

OneShotResult oneshot_search(const SupernetSpec& spec, const SynthTaskSpec& task, const OneShotConfig& cfg) {
  OneShotState st = make_oneshot_state(spec, cfg);
  return finish_oneshot(st, task, cfg);
}

nlohmann::json oneshot_checkpoint(const OneShotState& st) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : st.trace)
    trace.push_back({r.step, r.mean_reward, r.baseline_ne, r.mean_entropy, r.argmax_flops, r.policy_updates});
  return {{"step", st.step},
          {"supernet", params_to_json(st.supernet)},
          {"supernet_opt", st.supernet_opt.to_json()},
          {"baseline", params_to_json(st.baseline.params)},
          {"baseline_opt", st.baseline_opt.to_json()},
          {"policy", to_json(st.policy)},
          {"policy_opt", st.policy_opt.to_json()},
          {"buffer", st.buffer.to_json()},
          {"rng", rng_state(st.rng)},
          {"trace", trace},
          {"raw_batch_ne", st.raw_batch_ne},
          {"ne_pct", st.ne_pct}};
}

OneShotState restore_oneshot_state(const SupernetSpec& spec, const OneShotConfig& cfg, const nlohmann::json& j) {
  OneShotState st = make_oneshot_state(spec, cfg);
  st.step = j.at("step").get<std::int64_t>();
  st.supernet = params_from_json(j.at("supernet"));
  st.supernet_opt = Adam::from_json(j.at("supernet_opt"));
  st.baseline.params = params_from_json(j.at("baseline"));
  st.baseline_opt = Adam::from_json(j.at("baseline_opt"));
  st.policy = policy_from_json(j.at("policy"));
  if (st.policy.decisions != free_decisions(spec)) throw ConfigError("checkpoint policy does not match the search space");
  st.policy_opt = PolicyOptimizer::from_json(j.at("policy_opt"));
  st.buffer = ReplayBuffer::from_json(j.at("buffer"));
  st.rng = rng_from_state(j.at("rng").get<std::string>());
  for (const auto& r : j.at("trace"))
    st.trace.push_back({r[0].get<std::int64_t>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                        r[4].get<double>(), r[5].get<std::int64_t>()});
  st.raw_batch_ne = j.at("raw_batch_ne").get<std::vector<double>>();
  st.ne_pct = j.at("ne_pct").get<std::vector<double>>();
  return st;
}

void write_oneshot_trace(std::ostream& os, const std::vector<OneShotTraceRow>& trace) {
  os << "step,mean_reward,baseline_ne,mean_entropy,argmax_flops,policy_updates\n" << std::setprecision(10);
  for (const auto& r : trace)
    os << r.step << ',' << r.mean_reward << ',' << r.baseline_ne << ',' << r.mean_entropy << ',' << r.argmax_flops << ','
       << r.policy_updates << '\n';
}

}  // namespace ctrnas
