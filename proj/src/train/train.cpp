#include "ctrnas/train.hpp"

#include <cmath>

#include "ctrnas/errors.hpp"

namespace ctrnas {

std::size_t budget_steps(std::size_t budget_examples, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (budget_examples < batch_size)
    throw ArgumentError("budget of " + std::to_string(budget_examples) + " examples is below one batch");
  return budget_examples / batch_size;
}

std::vector<double> train_step(Network& net, Adam& opt, const MiniBatch& batch) {
  Graph g;
  const Value z = net.logits(g, batch);
  const Value loss = bce_with_logits(z, batch.labels);
  if (!std::isfinite(loss.value()[0])) throw TrainingError("non-finite training loss");
  std::vector<double> out(z.value().data.begin(), z.value().data.end());
  net.params.zero_grad();
  g.backward(loss);
  opt.step(net.params);
  return out;
}

std::vector<double> shared_train_step(const SupernetSpec& spec, const SpecShapes& shapes, ParamStore& params, Adam& opt,
                                      const SubnetGenome& genome, const MiniBatch& batch) {
  Graph g;
  const Value z = forward_logits(g, spec, shapes, params, batch, hard_plan(g, spec, genome, ForwardMode::Masked));
  const Value loss = bce_with_logits(z, batch.labels);
  if (!std::isfinite(loss.value()[0])) throw TrainingError("non-finite supernet loss");
  std::vector<double> out(z.value().data.begin(), z.value().data.end());
  params.zero_grad();
  g.backward(loss);
  opt.step(params);
  return out;
}

std::vector<double> predict(Network& net, const MiniBatch& batch) {
  Graph g;
  const Value z = net.logits(g, batch);
  return {z.value().data.begin(), z.value().data.end()};
}

TrainResult train_network(Network& net, const SynthTaskSpec& task, std::size_t budget_examples, const TrainConfig& cfg) {
  const std::size_t steps = budget_steps(budget_examples, cfg.batch_size);
  Adam opt(AdamConfig{cfg.lr});
  TrainResult r;
  r.window_fraction = cfg.window_fraction;
  for (std::size_t k = 0; k < steps; ++k) {
    const MiniBatch b = next_batch(task, cfg.batch_size, cfg.start_step + static_cast<std::int64_t>(k));
    const auto z = train_step(net, opt, b);
    r.progressive.add_batch(z, b.labels);
    r.examples += b.size();
    ++r.steps;
  }
  return r;
}

double evaluate_ne(Network& net, const SynthTaskSpec& task, std::size_t n_batches, std::size_t batch_size) {
  NeAccumulator acc;
  for (std::size_t k = 0; k < n_batches; ++k) {
    const MiniBatch b = eval_batch(task, batch_size, static_cast<std::int64_t>(k));
    acc.add_batch(predict(net, b), b.labels);
  }
  return acc.total_ne();
}

}  // namespace ctrnas
