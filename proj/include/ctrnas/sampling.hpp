#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "ctrnas/cost.hpp"
#include "ctrnas/data.hpp"
#include "ctrnas/params.hpp"
#include "ctrnas/space.hpp"
#include "ctrnas/train.hpp"

namespace ctrnas {

enum class ProxyKind { EarlyStop, WeightSharing };
std::string_view to_string(ProxyKind k);
ProxyKind proxy_kind_from_string(std::string_view s);

struct TrialRecord {
  SubnetGenome genome;
  ProxyKind proxy = ProxyKind::EarlyStop;
  std::size_t budget = 0;
  double proxy_ne = 0.0;  ///< NaN when the trial failed
  std::size_t examples = 0;
  std::optional<double> long_ne;
  FlopsReport flops;
  bool failed = false;
};

/// Trains the genome's standalone network from fresh weights (seeded by
/// `seed` alone) and reports the window NE. Divergence marks the trial failed.
TrialRecord early_stop_proxy(const SupernetSpec& spec, const SubnetGenome& genome, const SynthTaskSpec& task,
                             std::size_t budget_examples, const TrainConfig& cfg, std::uint64_t seed);

struct PretrainConfig {
  std::size_t total_budget = 64000;
  double warm_fraction = 0.10;
  double subnet_prob = 0.75;
  TrainConfig train;
  std::uint64_t seed = 0;
};

/// Per-step flags: true = train a uniform-random subnet, false = all-ones.
/// The first warm_fraction of the steps are never subnet steps.
std::vector<bool> pretrain_schedule(std::size_t steps, double warm_fraction, double subnet_prob, Rng& rng);

struct PretrainedSupernet {
  SupernetSpec spec;
  ParamStore params;
  std::size_t steps = 0;
  std::size_t subnet_steps = 0;
};

PretrainedSupernet pretrain_supernet(const SupernetSpec& spec, const SynthTaskSpec& task, const PretrainConfig& cfg);

/// Copies the genome's slices of the shared weights into a standalone subnet
/// and fine-tunes the copy. With a zero budget the proxy is the held-out NE
/// of the transferred subnet over `eval_batches` batches.
TrialRecord weight_sharing_proxy(const PretrainedSupernet& pretrained, const SubnetGenome& genome, const SynthTaskSpec& task,
                                 std::size_t finetune_budget, const TrainConfig& cfg, std::size_t eval_batches = 8);

// ---- neural predictor -----------------------------------------------------

/// Concatenated one-hot vectors, one per free decision.
std::vector<double> encode_genome(const SupernetSpec& spec, const std::vector<Decision>& decisions, const SubnetGenome& g);

struct PredictorConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 400;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Two-hidden-layer ReLU MLP from genome encoding to proxy NE, fitted with
/// full-batch Adam on standardized targets.
class PredictorModel {
 public:
  void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y, const PredictorConfig& cfg);
  double predict(const std::vector<double>& x) const;
  double training_mse() const { return mse_; }

 private:
  Value forward(Graph& g, const Tensor& x) const;
  mutable ParamStore params_;
  double mean_ = 0.0, scale_ = 1.0, mse_ = 0.0;
  std::size_t in_ = 0;
};

struct PredictorRoundConfig {
  PredictorConfig predictor;
  /// Spaces with at most this many genomes are scored exhaustively instead
  /// of through the policy sampler.
  std::size_t enumerate_limit = 4096;
  std::size_t policy_steps = 200;
  std::size_t policy_samples = 16;
  double policy_lr = 0.5;
};

struct PredictorRound {
  std::vector<SubnetGenome> proposals;
  bool fell_back = false;  ///< degenerate history: proposals are random
};

/// Fits the predictor on the successful trials and proposes the n genomes
/// with the lowest predicted NE that are not in the history.
PredictorRound predictor_round(const std::vector<TrialRecord>& history, const SupernetSpec& spec, std::size_t n_propose,
                               Rng& rng, const PredictorRoundConfig& cfg = {});

// ---- successive halving ---------------------------------------------------

struct HalvingResult {
  std::vector<std::vector<std::size_t>> survivors;  ///< candidate indices kept after each rung
  std::vector<std::vector<double>> scores;          ///< scores of the candidates trained at each rung
};

/// Scores every remaining candidate at each rung budget and keeps the best
/// ceil(keep_fraction * n) (lower is better, ties by index).
HalvingResult successive_halving(std::size_t n_candidates, const std::vector<std::size_t>& rungs, double keep_fraction,
                                 const std::function<double(std::size_t, std::size_t)>& score);

/// Same with early-stop proxies as scores; failed trials score +inf.
HalvingResult successive_halving(const SupernetSpec& spec, const std::vector<SubnetGenome>& candidates,
                                 const SynthTaskSpec& task, const std::vector<std::size_t>& rungs, double keep_fraction,
                                 const TrainConfig& cfg, std::uint64_t seed);

// ---- proxy study ----------------------------------------------------------

struct StudyConfig {
  std::size_t n_models = 20;
  std::vector<std::size_t> proxy_budgets{2560, 5120, 10240};
  std::size_t ground_truth_budget = 40960;
  std::size_t pretrain_budget = 40960;
  std::size_t bootstrap = 200;
  TrainConfig train;
  std::uint64_t seed = 0;
};

struct StudyRow {
  ProxyKind proxy = ProxyKind::EarlyStop;
  std::size_t budget = 0;
  double tau = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

struct StudyResult {
  std::vector<SubnetGenome> genomes;
  std::vector<double> ground_truth;
  std::vector<StudyRow> rows;
};

StudyResult proxy_rank_study(const SupernetSpec& spec, const SynthTaskSpec& task, const StudyConfig& cfg);

/// 25% and 75% quantiles of Kendall tau over bootstrap resamples of the models.
std::pair<double, double> bootstrap_tau_band(const std::vector<double>& x, const std::vector<double>& y, std::size_t rounds,
                                             Rng& rng);

void write_study_table(std::ostream& os, const std::vector<StudyRow>& rows);

// ---- driver ---------------------------------------------------------------

struct SamplingConfig {
  std::size_t n_random = 100;
  std::size_t rounds = 5;
  std::size_t per_round = 20;
  ProxyKind proxy = ProxyKind::EarlyStop;
  std::size_t budget = 10240;
  TrainConfig train;
  PretrainConfig pretrain;  ///< used by the weight-sharing proxy
  PredictorRoundConfig predictor;
  std::uint64_t seed = 0;
};

struct SamplingResult {
  std::vector<TrialRecord> history;
  SubnetGenome best;
  std::size_t fallbacks = 0;
};

/// Resumption support: trials already evaluated are reused in order instead
/// of being retrained; `on_trial` sees the history after every trial.
struct SamplingHooks {
  std::vector<TrialRecord> completed;
  std::function<void(const std::vector<TrialRecord>&)> on_trial;
};

/// Random trials followed by predictor rounds; returns the best trial by proxy NE.
SamplingResult sampling_search(const SupernetSpec& spec, const SynthTaskSpec& task, const SamplingConfig& cfg,
                               const SamplingHooks& hooks = {});

nlohmann::json to_json(const TrialRecord& r);
TrialRecord trial_from_json(const nlohmann::json& j);

/// Delimited trial ledger: genome_id, proxy, budget, window_ne, flops, dense_params, long_ne, status.
void write_trial_ledger(std::ostream& os, const std::vector<TrialRecord>& records);

}  // namespace ctrnas
