#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnas/tensor.hpp"

namespace ctrnas {

struct MiniBatch {
  Tensor dense;                 ///< [B x S]
  Tensor embeddings;            ///< [B x N x D]
  std::vector<double> labels;   ///< 0/1
  std::vector<double> truth;    ///< ground-truth click probabilities (diagnostics only)
  std::int64_t step = 0;

  std::size_t size() const { return labels.size(); }
};

/// Ground-truth interaction term beta * <e_i, e_j>.
struct PairTerm {
  std::size_t i = 0;
  std::size_t j = 0;
  double beta = 0.0;
};

/// Piecewise-constant shift of the ground truth from `step` onwards.
struct DriftEvent {
  std::int64_t step = 0;
  double bias_shift = 0.0;
  double weight_scale = 1.0;
};

/// Synthetic CTR task. Score = logit(base_ctr) + shift + scale * (w . x + sum beta <e_i, e_j>)
/// with x ~ N(0, 1), embedding entries ~ N(0, 1/sqrt(D)) so each dot product has unit
/// variance, and w_k = dense_scale * N(0, 1) / sqrt(S) drawn once from the task seed.
struct SynthTaskSpec {
  std::size_t dense_width = 8;
  std::size_t num_embeddings = 4;
  std::size_t embedding_dim = 4;
  double base_ctr = 0.25;
  double dense_scale = 1.0;
  std::vector<PairTerm> pairs;
  std::vector<DriftEvent> drift;
  std::uint64_t seed = 0;
};

void validate(const SynthTaskSpec& task);
nlohmann::json to_json(const SynthTaskSpec& task);
SynthTaskSpec task_from_json(const nlohmann::json& j);

/// Dense weights of the ground truth.
std::vector<double> ground_truth_dense_weights(const SynthTaskSpec& task);

/// Deterministic batch for (task, batch_size, step).
MiniBatch next_batch(const SynthTaskSpec& task, std::size_t batch_size, std::int64_t step);

/// Held-out stream: steps far away from any training step.
inline constexpr std::int64_t kEvalStepOffset = std::int64_t{1} << 40;
MiniBatch eval_batch(const SynthTaskSpec& task, std::size_t batch_size, std::int64_t index);

/// NE of the true click probability: expected log loss (analytic in the
/// label, Monte-Carlo in the features) over the entropy of the mean rate.
double bayes_optimal_ne(const SynthTaskSpec& task, std::size_t n_samples, std::int64_t step = 0);

}  // namespace ctrnas
