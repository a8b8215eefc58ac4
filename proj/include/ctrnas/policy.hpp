#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnas/params.hpp"
#include "ctrnas/rng.hpp"
#include "ctrnas/space.hpp"

namespace ctrnas {

// Sign convention: rewards are costs. Every policy update descends the
// expected reward, so lower NE and lower FLOPs penalties are preferred.

/// One independent multinomial per free decision of a spec.
struct PolicyParams {
  std::vector<Decision> decisions;
  std::vector<Tensor> logits;  ///< [options] per decision
};

PolicyParams make_policy(const SupernetSpec& spec);
std::vector<double> decision_probs(const Tensor& logits);
double genome_log_prob(const PolicyParams& policy, const std::vector<int>& values);
/// Mean entropy (nats) over decisions.
double mean_entropy(const PolicyParams& policy);

struct PolicySample {
  std::vector<int> values;
  SubnetGenome genome;
  double log_prob = 0.0;
  std::vector<double> chosen_probs;  ///< sampling-time probability of each chosen option
};

/// Independent draw per decision. Draws that leave a connection-using block
/// without inputs are redrawn.
PolicySample sample_genome(const PolicyParams& policy, const SupernetSpec& spec, Rng& rng);

/// Per-decision argmax (lowest index on ties). When an argmax connection
/// pattern is empty the most likely connection of that choice is switched on.
SubnetGenome extract_best_genome(const PolicyParams& policy, const SupernetSpec& spec);
std::vector<int> argmax_values(const PolicyParams& policy);

using PolicyGradient = std::vector<Tensor>;

struct ScoredGenome {
  std::vector<int> values;
  double reward = 0.0;
};

/// Gradient of (1/n) sum_i (R_i - b) log P(a_i) with b = mean(R); samples
/// with non-finite rewards are dropped.
PolicyGradient reinforce_gradient(const PolicyParams& policy, std::span<const ScoredGenome> batch);

/// Clipped importance ratio min(p_now / (p_then + eps), clip).
double wis_weight(double p_now, double p_then, double eps = 1e-8, double clip = 1e4);

struct RewardSample {
  std::vector<int> values;
  std::vector<double> chosen_probs;
  double reward = 0.0;
  std::int64_t step = 0;
};

/// Self-normalized importance-weighted gradient over replayed samples:
/// sum_i (w_i / sum_j w_j) (R_i - b') grad log P(a_i), b' = mean(R).
/// Returns nullopt when every weight is zero.
std::optional<PolicyGradient> offpolicy_gradient(const PolicyParams& policy, std::span<const RewardSample> batch);

/// Bounded FIFO of reward samples; the oldest entry is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);
  void push(RewardSample s);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const RewardSample& operator[](std::size_t i) const { return items_[i]; }
  /// Uniform draw without replacement (the whole buffer when smaller).
  std::vector<RewardSample> sample(std::size_t n, Rng& rng) const;

  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& j);

 private:
  std::size_t capacity_;
  std::deque<RewardSample> items_;
};

enum class PolicyOptimizerKind { Sgd, Adam };

/// Gradient descent on policy logits.
class PolicyOptimizer {
 public:
  explicit PolicyOptimizer(double lr = 1e-2, PolicyOptimizerKind kind = PolicyOptimizerKind::Sgd);
  void apply(PolicyParams& policy, const PolicyGradient& grad);
  std::int64_t updates() const { return updates_; }

  nlohmann::json to_json() const;
  static PolicyOptimizer from_json(const nlohmann::json& j);

 private:
  double lr_;
  PolicyOptimizerKind kind_;
  Adam adam_;
  std::int64_t updates_ = 0;
};

/// One on-policy REINFORCE step. Returns false when no finite reward remained.
bool reinforce_update(PolicyParams& policy, PolicyOptimizer& opt, std::span<const ScoredGenome> batch);

/// One off-policy step on a uniform minibatch of the buffer. Returns false
/// when the step was skipped (empty buffer or all weights zero).
bool offpolicy_update(PolicyParams& policy, PolicyOptimizer& opt, const ReplayBuffer& buffer, std::size_t minibatch,
                      Rng& rng);

nlohmann::json to_json(const PolicyParams& p);
PolicyParams policy_from_json(const nlohmann::json& j);

}  // namespace ctrnas
