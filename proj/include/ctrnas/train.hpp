#pragma once

#include <cstddef>
#include <cstdint>

#include "ctrnas/data.hpp"
#include "ctrnas/metrics.hpp"
#include "ctrnas/params.hpp"
#include "ctrnas/supernet.hpp"

namespace ctrnas {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-2;
  /// Data-stream step of the first batch; consecutive batches follow.
  std::int64_t start_step = 0;
  double window_fraction = 0.25;
};

struct TrainResult {
  NeAccumulator progressive;  ///< NE of each batch measured before its update
  std::size_t examples = 0;
  std::size_t steps = 0;
  double window_fraction = 0.25;
  double window_ne() const { return progressive.window_ne(window_fraction); }
};

/// Number of whole batches in a budget. Throws ArgumentError below one batch.
std::size_t budget_steps(std::size_t budget_examples, std::size_t batch_size);

/// One Adam step of `net` on `batch`. Returns the batch logits seen before the
/// update. Throws TrainingError on a non-finite loss or gradient.
std::vector<double> train_step(Network& net, Adam& opt, const MiniBatch& batch);

/// One Adam step of the supernet weights under a hard genome applied through
/// masks (Masked mode). Returns the pre-update logits.
std::vector<double> shared_train_step(const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& params, Adam& opt,
                                      const SubnetGenome& genome, const MiniBatch& batch);

/// Logits of a network on a batch without touching its gradients.
std::vector<double> predict(Network& net, const MiniBatch& batch);

/// Trains on the task stream for `budget_examples` (whole batches) and
/// records progressive NE, so window_ne() is the NE over the last window.
TrainResult train_network(Network& net, const SynthTaskSpec& task, std::size_t budget_examples, const TrainConfig& cfg = {});

/// NE of a network on `n_batches` held-out batches.
double evaluate_ne(Network& net, const SynthTaskSpec& task, std::size_t n_batches, std::size_t batch_size);

}  // namespace ctrnas
