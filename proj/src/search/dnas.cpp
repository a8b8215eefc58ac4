#include "ctrnas/dnas.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "ctrnas/cost.hpp"
#include "ctrnas/errors.hpp"

namespace ctrnas {

Value gumbel_softmax(Value logits, const Tensor& noise, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("Gumbel-Softmax temperature must be positive");
  Graph& g = *logits.graph();
  return softmax(mul_scalar(add(logits, g.constant(noise)), 1.0 / tau));
}

Value gumbel_softmax_sample(Value logits, double tau, Rng& rng) {
  Tensor noise(logits.shape());
  for (auto& x : noise.data) x = standard_gumbel(rng);
  return gumbel_softmax(logits, noise, tau);
}

std::vector<Tensor> draw_gumbel_noise(const std::vector<Decision>& decisions, Rng& rng) {
  std::vector<Tensor> out;
  for (const auto& d : decisions) {
    Tensor t(Shape{d.options});
    for (auto& x : t.data) x = standard_gumbel(rng);
    out.push_back(std::move(t));
  }
  return out;
}

ArchParams make_arch(const SupernetSpec& spec) {
  ArchParams a;
  a.decisions = free_decisions(spec);
  for (const auto& d : a.decisions) a.logits.emplace_back(Tensor(Shape{d.options}));
  return a;
}

PolicyParams as_policy(const ArchParams& arch) {
  PolicyParams p;
  p.decisions = arch.decisions;
  for (const auto& l : arch.logits) p.logits.push_back(l.value);
  return p;
}

std::vector<Value> relaxed_decisions(Graph& g, ArchParams& arch, const std::vector<Tensor>& noise) {
  std::vector<Value> out;
  for (std::size_t d = 0; d < arch.logits.size(); ++d) out.push_back(gumbel_softmax(g.param(arch.logits[d]), noise[d], arch.tau));
  return out;
}

Value relaxed_forward(Graph& g, const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& weights,
                      const std::vector<Decision>& decisions, const std::vector<Value>& probs, const MiniBatch& batch) {
  const Value z = forward_logits(g, spec, shapes, weights, batch, relaxed_plan(g, spec, decisions, probs));
  const Value ce = bce_with_logits(z, batch.labels);
  if (!std::isfinite(ce.value()[0])) throw TrainingError("non-finite relaxed loss");
  return ce;
}

Value flops_regularized_loss(Value ce, const SupernetSpec& spec, const std::vector<Decision>& decisions,
                             const std::vector<Value>& probs, double target, double lambda) {
  if (lambda < 0.0) throw ArgumentError("FLOPs regularizer weight must be nonnegative");
  if (lambda == 0.0) return ce;
  if (!(target > 0.0)) throw ArgumentError("FLOPs target must be positive");
  Graph& g = *ce.graph();
  const Value e = expected_flops(g, spec, decisions, probs);
  return add(ce, mul_scalar(abs(add_scalar(e, -target)), lambda));
}

double tau_at(const DnasConfig& cfg, std::size_t step) {
  if (cfg.steps <= 1) return cfg.tau_start;
  const double f = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
  return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, f);
}

DnasState make_dnas_state(const SupernetSpec& spec, const DnasConfig& cfg) {
  validate(spec);
  if (!(cfg.tau_start > 0.0 && cfg.tau_end > 0.0)) throw ArgumentError("temperatures must be positive");
  return DnasState{spec,
                   compute_shapes(spec),
                   make_parameters(spec, substream_seed(cfg.seed, "supernet")),
                   make_arch(spec),
                   Adam(AdamConfig{cfg.weight_lr}),
                   Adam(AdamConfig{cfg.arch_lr}),
                   make_rng(cfg.seed, "gumbel"),
                   0,
                   {},
                   std::nullopt};
}

void dnas_step(DnasState& st, const SynthTaskSpec& task, const DnasConfig& cfg) {
  const auto step = static_cast<std::size_t>(st.step);
  const bool run_net = cfg.ce_weight != 0.0;
  ArchParams& arch = st.arch;
  arch.tau = tau_at(cfg, step);
  const auto noise = draw_gumbel_noise(arch.decisions, st.gumbel);
  Graph g;
  const auto probs = relaxed_decisions(g, arch, noise);
  Value ce = g.scalar(0.0);
  if (run_net) {
    const MiniBatch batch = next_batch(task, cfg.batch_size, st.step);
    ce = mul_scalar(relaxed_forward(g, st.spec, st.shapes, st.weights, arch.decisions, probs, batch), cfg.ce_weight);
  }
  const Value loss = flops_regularized_loss(ce, st.spec, arch.decisions, probs, cfg.target_flops, cfg.lambda);
  if (!std::isfinite(loss.value()[0])) throw TrainingError("non-finite DNAS loss at step " + std::to_string(step));

  DnasTraceRow row;
  row.step = st.step;
  row.ce_loss = run_net ? ce.value()[0] / cfg.ce_weight : 0.0;
  row.expected_flops = expected_flops(g, st.spec, arch.decisions, probs).value()[0];
  row.tau = arch.tau;

  st.weights.zero_grad();
  for (auto& l : arch.logits) l.zero_grad();
  g.backward(loss);
  if (run_net) st.weight_opt.step(st.weights);
  for (std::size_t d = 0; d < arch.logits.size(); ++d)
    if (arch.logits[d].touched) st.arch_opt.step_tensor("arch." + std::to_string(d), arch.logits[d].value, arch.logits[d].grad);

  const PolicyParams pol = as_policy(arch);
  row.argmax_flops = static_cast<double>(count_flops(st.spec, extract_best_genome(pol, st.spec)).flops);
  for (const auto& l : pol.logits) {
    const auto p = decision_probs(l);
    row.max_prob.push_back(*std::max_element(p.begin(), p.end()));
  }
  if (!st.converged_after && cfg.target_flops > 0.0 &&
      std::abs(row.argmax_flops - cfg.target_flops) <= cfg.flops_tolerance * cfg.target_flops)
    st.converged_after = st.step + 1;
  st.trace.push_back(std::move(row));
  ++st.step;
}

DnasResult finish_dnas(DnasState& st, const SynthTaskSpec& task, const DnasConfig& cfg,
                       const std::function<void(const DnasState&)>& after_step) {
  while (st.step < static_cast<std::int64_t>(cfg.steps)) {
    dnas_step(st, task, cfg);
    if (after_step) after_step(st);
  }
  DnasResult r;
  r.arch = as_policy(st.arch);
  r.genome = extract_best_genome(r.arch, st.spec);
  r.weights = st.weights;
  r.trace = st.trace;
  r.converged_after = st.converged_after;
  return r;
}

DnasResult dnas_search(const SupernetSpec& spec, const SynthTaskSpec& task, const DnasConfig& cfg) {
  DnasState st = make_dnas_state(spec, cfg);
  return finish_dnas(st, task, cfg);
}

nlohmann::json dnas_checkpoint(const DnasState& st) {
  nlohmann::json logits = nlohmann::json::array(), trace = nlohmann::json::array();
  for (const auto& l : st.arch.logits) logits.push_back(l.value.data);
  for (const auto& r : st.trace)
    trace.push_back({{"step", r.step}, {"ce_loss", r.ce_loss}, {"expected_flops", r.expected_flops}, {"tau", r.tau},
                     {"argmax_flops", r.argmax_flops}, {"max_prob", r.max_prob}});
  nlohmann::json j{{"step", st.step},
                   {"weights", params_to_json(st.weights)},
                   {"arch", logits},
                   {"weight_opt", st.weight_opt.to_json()},
                   {"arch_opt", st.arch_opt.to_json()},
                   {"gumbel", rng_state(st.gumbel)},
                   {"trace", trace},
                   {"converged_after", nullptr}};
  if (st.converged_after) j["converged_after"] = *st.converged_after;
  return j;
}

DnasState restore_dnas_state(const SupernetSpec& spec, const DnasConfig& cfg, const nlohmann::json& j) {
  DnasState st = make_dnas_state(spec, cfg);
  st.step = j.at("step").get<std::int64_t>();
  st.weights = params_from_json(j.at("weights"));
  const auto& logits = j.at("arch");
  if (logits.size() != st.arch.logits.size()) throw ConfigError("checkpoint architecture does not match the search space");
  for (std::size_t d = 0; d < logits.size(); ++d) {
    auto v = logits[d].get<std::vector<double>>();
    if (v.size() != st.arch.decisions[d].options) throw ConfigError("checkpoint architecture does not match the search space");
    st.arch.logits[d].value.data = std::move(v);
  }
  st.weight_opt = Adam::from_json(j.at("weight_opt"));
  st.arch_opt = Adam::from_json(j.at("arch_opt"));
  st.gumbel = rng_from_state(j.at("gumbel").get<std::string>());
  for (const auto& r : j.at("trace"))
    st.trace.push_back({r.at("step").get<std::int64_t>(), r.at("ce_loss").get<double>(), r.at("expected_flops").get<double>(),
                        r.at("tau").get<double>(), r.at("argmax_flops").get<double>(),
                        r.at("max_prob").get<std::vector<double>>()});
  if (!j.at("converged_after").is_null()) st.converged_after = j.at("converged_after").get<std::int64_t>();
  return st;
}

void write_dnas_trace(std::ostream& os, const std::vector<DnasTraceRow>& trace) {
  os << "step,ce_loss,expected_flops,tau,argmax_flops,max_prob\n" << std::setprecision(10);
  for (const auto& r : trace) {
    os << r.step << ',' << r.ce_loss << ',' << r.expected_flops << ',' << r.tau << ',' << r.argmax_flops << ',';
    for (std::size_t d = 0; d < r.max_prob.size(); ++d) os << (d ? ";" : "") << r.max_prob[d];
    os << '\n';
  }
}

}  // namespace ctrnas
