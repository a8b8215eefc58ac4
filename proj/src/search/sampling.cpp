#include "ctrnas/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>

#include "ctrnas/errors.hpp"
#include "ctrnas/metrics.hpp"
#include "ctrnas/policy.hpp"
#include "ctrnas/supernet.hpp"

namespace ctrnas {

std::string_view to_string(ProxyKind k) { return k == ProxyKind::EarlyStop ? "early_stop" : "weight_sharing"; }

ProxyKind proxy_kind_from_string(std::string_view s) {
  if (s == "early_stop") return ProxyKind::EarlyStop;
  if (s == "weight_sharing") return ProxyKind::WeightSharing;
  throw ConfigError("unknown proxy '" + std::string(s) + "' (expected early_stop or weight_sharing)");
}

namespace {

constexpr double kFailed = std::numeric_limits<double>::quiet_NaN();

TrialRecord base_record(const SupernetSpec& spec, const SubnetGenome& genome, ProxyKind kind, std::size_t budget) {
  TrialRecord r;
  r.genome = genome;
  r.proxy = kind;
  r.budget = budget;
  r.flops = count_flops(spec, genome);
  return r;
}

}  // namespace

TrialRecord early_stop_proxy(const SupernetSpec& spec, const SubnetGenome& genome, const SynthTaskSpec& task,
                             std::size_t budget_examples, const TrainConfig& cfg, std::uint64_t seed) {
  TrialRecord r = base_record(spec, genome, ProxyKind::EarlyStop, budget_examples);
  budget_steps(budget_examples, cfg.batch_size);
  Network net = standalone_network(spec, genome, substream_seed(seed, "early_stop"));
  try {
    const TrainResult t = train_network(net, task, budget_examples, cfg);
    r.proxy_ne = t.window_ne();
    r.examples = t.examples;
  } catch (const TrainingError&) {
    r.failed = true;
    r.proxy_ne = kFailed;
  }
  return r;
}

std::vector<bool> pretrain_schedule(std::size_t steps, double warm_fraction, double subnet_prob, Rng& rng) {
  if (!(warm_fraction >= 0.0 && warm_fraction <= 1.0) || !(subnet_prob >= 0.0 && subnet_prob <= 1.0))
    throw ArgumentError("pretraining fractions must lie in [0, 1]");
  const auto warm = static_cast<std::size_t>(std::ceil(warm_fraction * static_cast<double>(steps)));
  std::vector<bool> s(steps, false);
  for (std::size_t k = warm; k < steps; ++k) s[k] = bernoulli(rng, subnet_prob);
  return s;
}

PretrainedSupernet pretrain_supernet(const SupernetSpec& spec, const SynthTaskSpec& task, const PretrainConfig& cfg) {
  validate(spec);
  const std::size_t steps = budget_steps(cfg.total_budget, cfg.train.batch_size);
  Rng rng = make_rng(cfg.seed, "pretrain");
  const auto schedule = pretrain_schedule(steps, cfg.warm_fraction, cfg.subnet_prob, rng);
  PretrainedSupernet out{spec, make_parameters(spec, substream_seed(cfg.seed, "supernet")), steps, 0};
  const SpecShapes shapes = compute_shapes(spec);
  const SubnetGenome full = all_ones_genome(spec);
  Adam opt(AdamConfig{cfg.train.lr});
  for (std::size_t k = 0; k < steps; ++k) {
    const MiniBatch b = next_batch(task, cfg.train.batch_size, cfg.train.start_step + static_cast<std::int64_t>(k));
    const SubnetGenome g = schedule[k] ? sample_random_genome(spec, rng) : full;
    out.subnet_steps += schedule[k];
    try {
      shared_train_step(spec, shapes, out.params, opt, g, b);
    } catch (const TrainingError& e) {
      throw TrainingError("supernet pretraining diverged at step " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

TrialRecord weight_sharing_proxy(const PretrainedSupernet& pre, const SubnetGenome& genome, const SynthTaskSpec& task,
                                 std::size_t finetune_budget, const TrainConfig& cfg, std::size_t eval_batches) {
  TrialRecord r = base_record(pre.spec, genome, ProxyKind::WeightSharing, finetune_budget);
  Network net = transfer_weights(compact_subnet(pre.spec, genome), pre.params);
  if (finetune_budget == 0) {
    r.proxy_ne = evaluate_ne(net, task, eval_batches, cfg.batch_size);
    r.examples = eval_batches * cfg.batch_size;
    return r;
  }
  try {
    const TrainResult t = train_network(net, task, finetune_budget, cfg);
    r.proxy_ne = t.window_ne();
    r.examples = t.examples;
  } catch (const TrainingError&) {
    r.failed = true;
    r.proxy_ne = kFailed;
  }
  return r;
}

// ---- predictor ----------------------------------------------------------------

std::vector<double> encode_genome(const SupernetSpec& spec, const std::vector<Decision>& decisions, const SubnetGenome& g) {
  const auto v = decisions_from_genome(spec, decisions, g);
  std::vector<double> x;
  for (std::size_t d = 0; d < decisions.size(); ++d)
    for (std::size_t k = 0; k < decisions[d].options; ++k) x.push_back(static_cast<int>(k) == v[d] ? 1.0 : 0.0);
  return x;
}

Value PredictorModel::forward(Graph& g, const Tensor& x) const {
  Value h = relu(matmul(g.constant(x), g.param(params_.at("l1.weight")), g.param(params_.at("l1.bias"))));
  h = relu(matmul(h, g.param(params_.at("l2.weight")), g.param(params_.at("l2.bias"))));
  return matmul(h, g.param(params_.at("out.weight")), g.param(params_.at("out.bias")));
}

void PredictorModel::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y, const PredictorConfig& cfg) {
  if (x.empty() || x.size() != y.size()) throw ArgumentError("predictor needs matching, nonempty training data");
  in_ = x[0].size();
  const std::size_t n = x.size(), h = cfg.hidden;
  mean_ = 0.0;
  for (double v : y) mean_ += v;
  mean_ /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean_) * (v - mean_);
  scale_ = std::sqrt(var / static_cast<double>(n));
  if (!(scale_ > 0.0)) scale_ = 1.0;

  params_ = ParamStore{};
  const std::pair<const char*, Shape> shapes[] = {{"l1.weight", {in_, h}}, {"l1.bias", {h}},   {"l2.weight", {h, h}},
                                                  {"l2.bias", {h}},        {"out.weight", {h, 1}}, {"out.bias", {1}}};
  for (const auto& [name, shape] : shapes) params_.emplace(name, init_weight(name, shape, shape[0], cfg.seed));

  Tensor X({n, in_}), Y({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != in_) throw ArgumentError("predictor encodings differ in length");
    std::copy(x[i].begin(), x[i].end(), X.data.begin() + static_cast<std::ptrdiff_t>(i * in_));
    Y[i] = (y[i] - mean_) / scale_;
  }
  Adam opt(AdamConfig{cfg.lr});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Graph g;
    const Value d = sub(forward(g, X), g.constant(Y));
    const Value loss = mean(mul(d, d));
    mse_ = loss.value()[0];
    params_.zero_grad();
    g.backward(loss);
    opt.step(params_);
  }
}

double PredictorModel::predict(const std::vector<double>& x) const {
  if (x.size() != in_) throw ArgumentError("encoding length does not match the fitted predictor");
  Graph g;
  return forward(g, Tensor({1, in_}, x)).value()[0] * scale_ + mean_;
}

namespace {

std::vector<SubnetGenome> random_proposals(const SupernetSpec& spec, std::set<SubnetGenome>& taken, std::size_t n, Rng& rng) {
  std::vector<SubnetGenome> out;
  for (std::size_t attempt = 0; out.size() < n && attempt < 100 * n + 100; ++attempt) {
    SubnetGenome g = canonicalize(spec, sample_random_genome(spec, rng));
    if (taken.insert(g).second) out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

PredictorRound predictor_round(const std::vector<TrialRecord>& history, const SupernetSpec& spec, std::size_t n_propose,
                               Rng& rng, const PredictorRoundConfig& cfg) {
  if (history.empty()) throw ArgumentError("predictor round needs a nonempty history");
  const auto decisions = free_decisions(spec);
  std::set<SubnetGenome> taken;
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : history) {
    taken.insert(canonicalize(spec, r.genome));
    if (r.failed || !std::isfinite(r.proxy_ne)) continue;
    x.push_back(encode_genome(spec, decisions, r.genome));
    y.push_back(r.proxy_ne);
  }
  PredictorRound out;
  const bool flat_y = y.empty() || std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
  const bool flat_x = x.empty() || std::all_of(x.begin(), x.end(), [&](const auto& v) { return v == x[0]; });
  if (flat_y || flat_x) {
    out.fell_back = true;
    out.proposals = random_proposals(spec, taken, n_propose, rng);
    return out;
  }
  PredictorModel model;
  model.fit(x, y, cfg.predictor);

  std::set<SubnetGenome> pool;
  if (auto all = enumerate_genomes(spec, cfg.enumerate_limit)) {
    pool.insert(all->begin(), all->end());
  } else {
    // Policy sampler against predicted NE; every sampled genome is a candidate.
    PolicyParams policy = make_policy(spec);
    PolicyOptimizer opt(cfg.policy_lr);
    for (std::size_t step = 0; step < cfg.policy_steps; ++step) {
      std::vector<ScoredGenome> batch;
      for (std::size_t m = 0; m < cfg.policy_samples; ++m) {
        PolicySample s = sample_genome(policy, spec, rng);
        const SubnetGenome g = canonicalize(spec, s.genome);
        batch.push_back({s.values, model.predict(encode_genome(spec, decisions, g))});
        pool.insert(g);
      }
      reinforce_update(policy, opt, batch);
    }
    pool.insert(canonicalize(spec, extract_best_genome(policy, spec)));
  }
  std::vector<std::pair<double, SubnetGenome>> scored;
  for (const auto& g : pool)
    if (!taken.count(g)) scored.emplace_back(model.predict(encode_genome(spec, decisions, g)), g);
  std::sort(scored.begin(), scored.end());
  for (std::size_t k = 0; k < scored.size() && out.proposals.size() < n_propose; ++k) {
    taken.insert(scored[k].second);
    out.proposals.push_back(scored[k].second);
  }
  if (out.proposals.size() < n_propose && !enumerate_genomes(spec, cfg.enumerate_limit)) {
    auto extra = random_proposals(spec, taken, n_propose - out.proposals.size(), rng);
    out.proposals.insert(out.proposals.end(), extra.begin(), extra.end());
  }
  return out;
}

// ---- successive halving -------------------------------------------------------

HalvingResult successive_halving(std::size_t n_candidates, const std::vector<std::size_t>& rungs, double keep_fraction,
                                 const std::function<double(std::size_t, std::size_t)>& score) {
  if (n_candidates == 0) throw ArgumentError("successive halving needs at least one candidate");
  if (rungs.empty()) throw ArgumentError("successive halving needs at least one rung");
  for (std::size_t k = 1; k < rungs.size(); ++k)
    if (rungs[k] <= rungs[k - 1]) throw ArgumentError("rung budgets must increase");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("keep fraction must lie in (0, 1]");
  std::vector<std::size_t> alive(n_candidates);
  for (std::size_t i = 0; i < n_candidates; ++i) alive[i] = i;
  HalvingResult r;
  for (std::size_t budget : rungs) {
    std::vector<double> s;
    for (std::size_t i : alive) s.push_back(score(i, budget));
    r.scores.push_back(s);
    std::vector<std::size_t> order(alive.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
    const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(alive.size()) - 1e-12));
    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < std::max<std::size_t>(keep, 1); ++k) next.push_back(alive[order[k]]);
    std::sort(next.begin(), next.end());
    alive = next;
    r.survivors.push_back(alive);
  }
  return r;
}

HalvingResult successive_halving(const SupernetSpec& spec, const std::vector<SubnetGenome>& candidates,
                                 const SynthTaskSpec& task, const std::vector<std::size_t>& rungs, double keep_fraction,
                                 const TrainConfig& cfg, std::uint64_t seed) {
  return successive_halving(candidates.size(), rungs, keep_fraction, [&](std::size_t i, std::size_t budget) {
    const TrialRecord t = early_stop_proxy(spec, candidates[i], task, budget, cfg, seed);
    return t.failed ? std::numeric_limits<double>::infinity() : t.proxy_ne;
  });
}

// ---- proxy study --------------------------------------------------------------

std::pair<double, double> bootstrap_tau_band(const std::vector<double>& x, const std::vector<double>& y, std::size_t rounds,
                                             Rng& rng) {
  if (rounds == 0) throw ArgumentError("bootstrap needs at least one round");
  const std::size_t n = x.size();
  std::vector<double> taus;
  std::vector<double> bx(n), by(n);
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = uniform_index(rng, n);
      bx[k] = x[i];
      by[k] = y[i];
    }
    taus.push_back(kendall_tau(bx, by));
  }
  std::sort(taus.begin(), taus.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(taus.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, taus.size() - 1);
    return taus[lo] + (pos - static_cast<double>(lo)) * (taus[hi] - taus[lo]);
  };
  return {q(0.25), q(0.75)};
}

StudyResult proxy_rank_study(const SupernetSpec& spec, const SynthTaskSpec& task, const StudyConfig& cfg) {
  if (cfg.n_models < 10) throw ArgumentError("the proxy study needs at least 10 models");
  validate(spec);
  Rng rng = make_rng(cfg.seed, "study");
  StudyResult out;
  std::set<SubnetGenome> seen;
  for (std::size_t attempt = 0; out.genomes.size() < cfg.n_models && attempt < 1000 * cfg.n_models; ++attempt) {
    SubnetGenome g = canonicalize(spec, sample_random_genome(spec, rng));
    if (seen.insert(g).second) out.genomes.push_back(std::move(g));
  }
  if (out.genomes.size() < cfg.n_models) throw ArgumentError("search space holds fewer distinct genomes than n_models");

  const std::uint64_t trial_seed = substream_seed(cfg.seed, "trial");
  for (const auto& g : out.genomes) {
    const auto t = early_stop_proxy(spec, g, task, cfg.ground_truth_budget, cfg.train, trial_seed);
    out.ground_truth.push_back(t.failed ? std::numeric_limits<double>::infinity() : t.proxy_ne);
  }
  Rng boot = make_rng(cfg.seed, "bootstrap");
  auto add_row = [&](ProxyKind kind, std::size_t budget, const std::vector<double>& proxy) {
    StudyRow row{kind, budget, kendall_tau(proxy, out.ground_truth), 0.0, 0.0};
    std::tie(row.q25, row.q75) = bootstrap_tau_band(proxy, out.ground_truth, cfg.bootstrap, boot);
    out.rows.push_back(row);
  };
  for (std::size_t budget : cfg.proxy_budgets) {
    std::vector<double> p;
    for (const auto& g : out.genomes) {
      const auto t = early_stop_proxy(spec, g, task, budget, cfg.train, trial_seed);
      p.push_back(t.failed ? std::numeric_limits<double>::infinity() : t.proxy_ne);
    }
    add_row(ProxyKind::EarlyStop, budget, p);
  }
  if (cfg.pretrain_budget > 0) {
    PretrainConfig pc;
    pc.total_budget = cfg.pretrain_budget;
    pc.train = cfg.train;
    pc.seed = substream_seed(cfg.seed, "pretrain");
    const PretrainedSupernet pre = pretrain_supernet(spec, task, pc);
    TrainConfig ft = cfg.train;
    ft.start_step = cfg.train.start_step + static_cast<std::int64_t>(pre.steps);
    for (std::size_t budget : cfg.proxy_budgets) {
      std::vector<double> p;
      for (const auto& g : out.genomes) {
        const auto t = weight_sharing_proxy(pre, g, task, budget, ft);
        p.push_back(t.failed ? std::numeric_limits<double>::infinity() : t.proxy_ne);
      }
      add_row(ProxyKind::WeightSharing, budget, p);
    }
  }
  return out;
}

void write_study_table(std::ostream& os, const std::vector<StudyRow>& rows) {
  os << "proxy,budget,tau,q25,q75\n" << std::setprecision(10);
  for (const auto& r : rows) os << to_string(r.proxy) << ',' << r.budget << ',' << r.tau << ',' << r.q25 << ',' << r.q75 << '\n';
}

// ---- driver ---------------------------------------------------------------------

SamplingResult sampling_search(const SupernetSpec& spec, const SynthTaskSpec& task, const SamplingConfig& cfg,
                               const SamplingHooks& hooks) {
  validate(spec);
  if (cfg.n_random == 0) throw ArgumentError("sampling search needs at least one random trial");
  Rng rng = make_rng(cfg.seed, "sampling");
  const std::uint64_t trial_seed = substream_seed(cfg.seed, "trial");
  std::optional<PretrainedSupernet> pre;
  TrainConfig ft = cfg.train;
  if (cfg.proxy == ProxyKind::WeightSharing) {
    PretrainConfig pc = cfg.pretrain;
    pc.seed = substream_seed(cfg.seed, "pretrain");
    pre = pretrain_supernet(spec, task, pc);
    ft.start_step = pc.train.start_step + static_cast<std::int64_t>(pre->steps);
  }
  SamplingResult out;
  auto evaluate = [&](const SubnetGenome& g) {
    const std::size_t i = out.history.size();
    if (i < hooks.completed.size()) {
      if (hooks.completed[i].genome != g) throw ConfigError("checkpointed trials do not match this configuration");
      return hooks.completed[i];
    }
    return cfg.proxy == ProxyKind::EarlyStop ? early_stop_proxy(spec, g, task, cfg.budget, cfg.train, trial_seed)
                                             : weight_sharing_proxy(*pre, g, task, cfg.budget, ft);
  };
  auto record = [&](const SubnetGenome& g) {
    out.history.push_back(evaluate(g));
    if (hooks.on_trial) hooks.on_trial(out.history);
  };
  std::set<SubnetGenome> taken;
  auto first = random_proposals(spec, taken, cfg.n_random, rng);
  for (const auto& g : first) record(g);
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    PredictorRoundConfig pc = cfg.predictor;
    pc.predictor.seed = substream_seed(cfg.seed, "predictor", round);
    const PredictorRound pr = predictor_round(out.history, spec, cfg.per_round, rng, pc);
    out.fallbacks += pr.fell_back;
    for (const auto& g : pr.proposals) record(g);
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : out.history)
    if (!r.failed && r.proxy_ne < best) best = r.proxy_ne, out.best = r.genome;
  if (!std::isfinite(best)) throw TrainingError("every sampling trial failed");
  return out;
}

nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json j{{"genome", to_json(r.genome)},
                   {"proxy", to_string(r.proxy)},
                   {"budget", r.budget},
                   {"proxy_ne", nullptr},
                   {"examples", r.examples},
                   {"long_ne", nullptr},
                   {"flops", {r.flops.flops, r.flops.dense_params, r.flops.n_choices, r.flops.n_connections}},
                   {"failed", r.failed}};
  if (!r.failed) j["proxy_ne"] = r.proxy_ne;
  if (r.long_ne) j["long_ne"] = *r.long_ne;
  return j;
}

TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.genome = genome_from_json(j.at("genome"));
  r.proxy = proxy_kind_from_string(j.at("proxy").get<std::string>());
  r.budget = j.at("budget").get<std::size_t>();
  r.failed = j.at("failed").get<bool>();
  r.proxy_ne = j.at("proxy_ne").is_null() ? kFailed : j.at("proxy_ne").get<double>();
  r.examples = j.at("examples").get<std::size_t>();
  if (!j.at("long_ne").is_null()) r.long_ne = j.at("long_ne").get<double>();
  const auto& f = j.at("flops");
  r.flops = FlopsReport{f[0].get<std::uint64_t>(), f[1].get<std::uint64_t>(), f[2].get<std::uint64_t>(),
                        f[3].get<std::uint64_t>()};
  return r;
}

void write_trial_ledger(std::ostream& os, const std::vector<TrialRecord>& records) {
  os << "genome_id,proxy,budget,window_ne,flops,dense_params,long_ne,status\n" << std::setprecision(10);
  for (const auto& r : records) {
    os << genome_id(r.genome) << ',' << to_string(r.proxy) << ',' << r.budget << ',';
    if (r.failed) {
      os << "nan";
    } else {
      os << r.proxy_ne;
    }
    os << ',' << r.flops.flops << ',' << r.flops.dense_params << ',';
    if (r.long_ne) os << *r.long_ne;
    os << ',' << (r.failed ? "failed" : "ok") << '\n';
  }
}

}  // namespace ctrnas
