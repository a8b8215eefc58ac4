#include "ctrnas/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctrnas/errors.hpp"

namespace ctrnas {

PolicyParams make_policy(const SupernetSpec& spec) {
  PolicyParams p;
  p.decisions = free_decisions(spec);
  for (const auto& d : p.decisions) p.logits.emplace_back(Shape{d.options});
  return p;
}

std::vector<double> decision_probs(const Tensor& logits) {
  const double mx = *std::max_element(logits.data.begin(), logits.data.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) z += p[k] = std::exp(logits[k] - mx);
  for (auto& x : p) x /= z;
  return p;
}

double genome_log_prob(const PolicyParams& policy, const std::vector<int>& values) {
  double lp = 0.0;
  for (std::size_t d = 0; d < values.size(); ++d) lp += std::log(decision_probs(policy.logits[d])[static_cast<std::size_t>(values[d])]);
  return lp;
}

double mean_entropy(const PolicyParams& policy) {
  if (policy.logits.empty()) return 0.0;
  double h = 0.0;
  for (const auto& l : policy.logits)
    for (double p : decision_probs(l))
      if (p > 0.0) h -= p * std::log(p);
  return h / static_cast<double>(policy.logits.size());
}

namespace {

bool inputs_nonempty(const SupernetSpec& spec, const SubnetGenome& g) {
  for (std::size_t i = 0; i < spec.choices.size(); ++i)
    if (!connections_nonempty(spec, g, i)) return false;
  return true;
}

}  // namespace

PolicySample sample_genome(const PolicyParams& policy, const SupernetSpec& spec, Rng& rng) {
  constexpr int kMaxDraws = 10000;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    PolicySample s;
    for (const auto& l : policy.logits) {
      const auto p = decision_probs(l);
      const double u = uniform01(rng);
      std::size_t k = 0;
      double acc = p[0];
      while (u >= acc && k + 1 < p.size()) acc += p[++k];
      s.values.push_back(static_cast<int>(k));
      s.chosen_probs.push_back(p[k]);
      s.log_prob += std::log(p[k]);
    }
    s.genome = genome_from_decisions(spec, policy.decisions, s.values);
    if (inputs_nonempty(spec, s.genome)) return s;
  }
  throw InternalError("policy keeps sampling genomes without inputs");
}

std::vector<int> argmax_values(const PolicyParams& policy) {
  std::vector<int> v;
  for (const auto& l : policy.logits)
    v.push_back(static_cast<int>(std::max_element(l.data.begin(), l.data.end()) - l.data.begin()));
  return v;
}

SubnetGenome extract_best_genome(const PolicyParams& policy, const SupernetSpec& spec) {
  std::vector<int> v = argmax_values(policy);
  SubnetGenome g = genome_from_decisions(spec, policy.decisions, v);
  for (std::size_t i = 0; i < spec.choices.size(); ++i) {
    if (connections_nonempty(spec, g, i)) continue;
    std::optional<std::size_t> best;
    double best_p = -1.0;
    for (std::size_t d = 0; d < policy.decisions.size(); ++d) {
      const auto& dec = policy.decisions[d];
      if (dec.kind != DecisionKind::Connection || dec.choice != i) continue;
      const double p_on = decision_probs(policy.logits[d])[1];
      if (p_on > best_p) best_p = p_on, best = d;
    }
    if (best) v[*best] = 1;
    g = genome_from_decisions(spec, policy.decisions, v);
  }
  return g;
}

namespace {

PolicyGradient zero_gradient(const PolicyParams& policy) {
  PolicyGradient g;
  for (const auto& l : policy.logits) g.emplace_back(l.shape);
  return g;
}

// grad log P(a) wrt the logits is onehot(a) - p per decision.
void add_score(PolicyGradient& g, const std::vector<std::vector<double>>& probs, const std::vector<int>& a, double coef) {
  for (std::size_t d = 0; d < g.size(); ++d) {
    for (std::size_t k = 0; k < probs[d].size(); ++k) g[d][k] -= coef * probs[d][k];
    g[d][static_cast<std::size_t>(a[d])] += coef;
  }
}

std::vector<std::vector<double>> all_probs(const PolicyParams& policy) {
  std::vector<std::vector<double>> p;
  for (const auto& l : policy.logits) p.push_back(decision_probs(l));
  return p;
}

}  // namespace

PolicyGradient reinforce_gradient(const PolicyParams& policy, std::span<const ScoredGenome> batch) {
  PolicyGradient g = zero_gradient(policy);
  std::vector<const ScoredGenome*> kept;
  for (const auto& s : batch)
    if (std::isfinite(s.reward)) kept.push_back(&s);
  if (kept.empty()) return g;
  double lo = kept[0]->reward, b = 0.0;
  for (const auto* s : kept) lo = std::min(lo, s->reward);
  // Centering on the minimum first keeps b exact when every reward is equal.
  for (const auto* s : kept) b += s->reward - lo;
  b = lo + b / static_cast<double>(kept.size());
  const auto probs = all_probs(policy);
  const double inv_n = 1.0 / static_cast<double>(kept.size());
  for (const auto* s : kept) add_score(g, probs, s->values, (s->reward - b) * inv_n);
  return g;
}

double wis_weight(double p_now, double p_then, double eps, double clip) { return std::min(p_now / (p_then + eps), clip); }

std::optional<PolicyGradient> offpolicy_gradient(const PolicyParams& policy, std::span<const RewardSample> batch) {
  if (batch.empty()) return std::nullopt;
  const auto probs = all_probs(policy);
  std::vector<double> w;
  double lo = batch[0].reward, b = 0.0, wsum = 0.0;
  for (const auto& s : batch) lo = std::min(lo, s.reward);
  for (const auto& s : batch) {
    double now = 1.0, then = 1.0;
    for (std::size_t d = 0; d < s.values.size(); ++d) {
      now *= probs[d][static_cast<std::size_t>(s.values[d])];
      then *= s.chosen_probs[d];
    }
    w.push_back(wis_weight(now, then));
    wsum += w.back();
    b += s.reward - lo;
  }
  if (!(wsum > 0.0)) return std::nullopt;
  b = lo + b / static_cast<double>(batch.size());
  PolicyGradient g = zero_gradient(policy);
  for (std::size_t i = 0; i < batch.size(); ++i) add_score(g, probs, batch[i].values, (w[i] / wsum) * (batch[i].reward - b));
  return g;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ArgumentError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(RewardSample s) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(s));
}

std::vector<RewardSample> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t m = std::min(n, idx.size());
  for (std::size_t k = 0; k < m; ++k) std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
  std::vector<RewardSample> out;
  for (std::size_t k = 0; k < m; ++k) out.push_back(items_[idx[k]]);
  return out;
}

nlohmann::json ReplayBuffer::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : items_)
    items.push_back({{"values", s.values}, {"chosen_probs", s.chosen_probs}, {"reward", s.reward}, {"step", s.step}});
  return {{"capacity", capacity_}, {"items", items}};
}

ReplayBuffer ReplayBuffer::from_json(const nlohmann::json& j) {
  ReplayBuffer b(j.at("capacity").get<std::size_t>());
  for (const auto& e : j.at("items"))
    b.push({e.at("values").get<std::vector<int>>(), e.at("chosen_probs").get<std::vector<double>>(),
            e.at("reward").get<double>(), e.at("step").get<std::int64_t>()});
  return b;
}

PolicyOptimizer::PolicyOptimizer(double lr, PolicyOptimizerKind kind) : lr_(lr), kind_(kind), adam_(AdamConfig{lr}) {}

void PolicyOptimizer::apply(PolicyParams& policy, const PolicyGradient& grad) {
  for (std::size_t d = 0; d < policy.logits.size(); ++d) {
    if (!grad[d].all_finite()) throw TrainingError("non-finite policy gradient");
    if (kind_ == PolicyOptimizerKind::Adam) {
      adam_.step_tensor("decision." + std::to_string(d), policy.logits[d], grad[d]);
    } else {
      for (std::size_t k = 0; k < grad[d].size(); ++k) policy.logits[d][k] -= lr_ * grad[d][k];
    }
  }
  ++updates_;
}

nlohmann::json PolicyOptimizer::to_json() const {
  return {{"lr", lr_}, {"kind", kind_ == PolicyOptimizerKind::Adam ? "adam" : "sgd"}, {"adam", adam_.to_json()},
          {"updates", updates_}};
}

PolicyOptimizer PolicyOptimizer::from_json(const nlohmann::json& j) {
  PolicyOptimizer o(j.at("lr").get<double>(),
                    j.at("kind").get<std::string>() == "adam" ? PolicyOptimizerKind::Adam : PolicyOptimizerKind::Sgd);
  o.adam_ = Adam::from_json(j.at("adam"));
  o.updates_ = j.at("updates").get<std::int64_t>();
  return o;
}

bool reinforce_update(PolicyParams& policy, PolicyOptimizer& opt, std::span<const ScoredGenome> batch) {
  if (batch.empty()) throw ArgumentError("reinforce_update needs a nonempty batch");
  if (std::none_of(batch.begin(), batch.end(), [](const ScoredGenome& s) { return std::isfinite(s.reward); })) return false;
  opt.apply(policy, reinforce_gradient(policy, batch));
  return true;
}

bool offpolicy_update(PolicyParams& policy, PolicyOptimizer& opt, const ReplayBuffer& buffer, std::size_t minibatch,
                      Rng& rng) {
  if (buffer.empty()) return false;
  const auto batch = buffer.sample(minibatch, rng);
  const auto g = offpolicy_gradient(policy, batch);
  if (!g) return false;
  opt.apply(policy, *g);
  return true;
}

namespace {

nlohmann::json decision_json(const Decision& d) {
  static constexpr const char* kKinds[] = {"block", "connection", "left", "right", "dim"};
  return {{"kind", kKinds[static_cast<int>(d.kind)]}, {"choice", d.choice}, {"index", d.index}, {"options", d.options}};
}

Decision decision_from(const nlohmann::json& j) {
  static const std::vector<std::string> kKinds = {"block", "connection", "left", "right", "dim"};
  const auto it = std::find(kKinds.begin(), kKinds.end(), j.at("kind").get<std::string>());
  if (it == kKinds.end()) throw ConfigError("unknown decision kind '" + j.at("kind").get<std::string>() + "'");
  return Decision{static_cast<DecisionKind>(it - kKinds.begin()), j.at("choice").get<std::size_t>(),
                  j.at("index").get<std::size_t>(), j.at("options").get<std::size_t>()};
}

}  // namespace

nlohmann::json to_json(const PolicyParams& p) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t d = 0; d < p.decisions.size(); ++d) {
    auto e = decision_json(p.decisions[d]);
    e["logits"] = p.logits[d].data;
    j.push_back(e);
  }
  return j;
}

PolicyParams policy_from_json(const nlohmann::json& j) {
  PolicyParams p;
  for (const auto& e : j) {
    p.decisions.push_back(decision_from(e));
    auto l = e.at("logits").get<std::vector<double>>();
    if (l.size() != p.decisions.back().options) throw ConfigError("policy logits do not match the option count");
    p.logits.push_back(Tensor::vector(std::move(l)));
  }
  return p;
}

}  // namespace ctrnas
