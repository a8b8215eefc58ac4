#include "ctrnas/data.hpp"

#include <cmath>

#include "ctrnas/errors.hpp"
#include "ctrnas/rng.hpp"

namespace ctrnas {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

const DriftEvent* active_drift(const SynthTaskSpec& task, std::int64_t step) {
  const DriftEvent* cur = nullptr;
  for (const auto& e : task.drift)
    if (e.step <= step && (cur == nullptr || e.step >= cur->step)) cur = &e;
  return cur;
}

// Fills one example's features and returns its ground-truth score.
double draw_example(const SynthTaskSpec& task, const std::vector<double>& w, std::int64_t step, Rng& rng, double* dense,
                    double* emb) {
  const std::size_t S = task.dense_width, N = task.num_embeddings, D = task.embedding_dim;
  const double emb_sd = 1.0 / std::sqrt(std::sqrt(static_cast<double>(D)));
  double signal = 0.0;
  for (std::size_t k = 0; k < S; ++k) {
    dense[k] = standard_normal(rng);
    signal += w[k] * dense[k];
  }
  for (std::size_t n = 0; n < N * D; ++n) emb[n] = emb_sd * standard_normal(rng);
  for (const auto& t : task.pairs) {
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += emb[t.i * D + d] * emb[t.j * D + d];
    signal += t.beta * dot;
  }
  double shift = 0.0, scale = 1.0;
  if (const DriftEvent* e = active_drift(task, step)) {
    shift = e->bias_shift;
    scale = e->weight_scale;
  }
  return logit(task.base_ctr) + shift + scale * signal;
}

}  // namespace

void validate(const SynthTaskSpec& task) {
  if (task.dense_width == 0 || task.num_embeddings == 0 || task.embedding_dim == 0)
    throw ConfigError("task: shapes must be positive");
  if (!(task.base_ctr > 0.0 && task.base_ctr < 1.0)) throw ConfigError("task: base_ctr must lie in (0, 1)");
  for (const auto& t : task.pairs)
    if (t.i >= task.num_embeddings || t.j >= task.num_embeddings) throw ConfigError("task: pair term index out of range");
}

nlohmann::json to_json(const SynthTaskSpec& t) {
  nlohmann::json pairs = nlohmann::json::array(), drift = nlohmann::json::array();
  for (const auto& p : t.pairs) pairs.push_back({{"i", p.i}, {"j", p.j}, {"beta", p.beta}});
  for (const auto& d : t.drift) drift.push_back({{"step", d.step}, {"bias_shift", d.bias_shift}, {"weight_scale", d.weight_scale}});
  return {{"dense_width", t.dense_width}, {"num_embeddings", t.num_embeddings}, {"embedding_dim", t.embedding_dim},
          {"base_ctr", t.base_ctr},       {"dense_scale", t.dense_scale},       {"pairs", pairs},
          {"drift", drift},               {"seed", t.seed}};
}

SynthTaskSpec task_from_json(const nlohmann::json& j) {
  SynthTaskSpec t;
  try {
    t.dense_width = j.value("dense_width", t.dense_width);
    t.num_embeddings = j.value("num_embeddings", t.num_embeddings);
    t.embedding_dim = j.value("embedding_dim", t.embedding_dim);
    t.base_ctr = j.value("base_ctr", t.base_ctr);
    t.dense_scale = j.value("dense_scale", t.dense_scale);
    t.seed = j.value("seed", t.seed);
    for (const auto& p : j.value("pairs", nlohmann::json::array()))
      t.pairs.push_back({p.at("i").get<std::size_t>(), p.at("j").get<std::size_t>(), p.at("beta").get<double>()});
    for (const auto& d : j.value("drift", nlohmann::json::array()))
      t.drift.push_back({d.at("step").get<std::int64_t>(), d.value("bias_shift", 0.0), d.value("weight_scale", 1.0)});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  validate(t);
  return t;
}

std::vector<double> ground_truth_dense_weights(const SynthTaskSpec& task) {
  Rng rng = make_rng(task.seed, "task.dense_weights");
  std::vector<double> w(task.dense_width);
  const double s = task.dense_scale / std::sqrt(static_cast<double>(task.dense_width));
  for (double& v : w) v = s * standard_normal(rng);
  return w;
}

MiniBatch next_batch(const SynthTaskSpec& task, std::size_t batch_size, std::int64_t step) {
  if (batch_size == 0) throw ArgumentError("next_batch: batch size must be positive");
  const std::size_t S = task.dense_width, N = task.num_embeddings, D = task.embedding_dim;
  const auto w = ground_truth_dense_weights(task);
  Rng rng(substream_seed(task.seed, "task.batch", static_cast<std::uint64_t>(step)));
  MiniBatch mb;
  mb.step = step;
  mb.dense = Tensor({batch_size, S});
  mb.embeddings = Tensor({batch_size, N, D});
  mb.labels.resize(batch_size);
  mb.truth.resize(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const double score = draw_example(task, w, step, rng, &mb.dense.data[b * S], &mb.embeddings.data[b * N * D]);
    const double p = sigmoid(score);
    mb.truth[b] = p;
    mb.labels[b] = uniform01(rng) < p ? 1.0 : 0.0;
  }
  return mb;
}

MiniBatch eval_batch(const SynthTaskSpec& task, std::size_t batch_size, std::int64_t index) {
  return next_batch(task, batch_size, kEvalStepOffset + index);
}

double bayes_optimal_ne(const SynthTaskSpec& task, std::size_t n_samples, std::int64_t step) {
  if (n_samples == 0) throw ArgumentError("bayes_optimal_ne: n_samples must be positive");
  const auto w = ground_truth_dense_weights(task);
  Rng rng(substream_seed(task.seed, "task.bayes", static_cast<std::uint64_t>(step)));
  std::vector<double> dense(task.dense_width), emb(task.num_embeddings * task.embedding_dim);
  double ce = 0.0, psum = 0.0;
  auto xlogx = [](double p) { return p > 0.0 ? p * std::log(p) : 0.0; };
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double p = sigmoid(draw_example(task, w, step, rng, dense.data(), emb.data()));
    ce -= xlogx(p) + xlogx(1.0 - p);
    psum += p;
  }
  const double pbar = psum / static_cast<double>(n_samples);
  const double h = -(xlogx(pbar) + xlogx(1.0 - pbar));
  if (h <= 0.0) throw MetricError("bayes_optimal_ne: degenerate base rate");
  return (ce / static_cast<double>(n_samples)) / h;
}

}  // namespace ctrnas
