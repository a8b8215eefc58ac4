#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ctrnas/errors.hpp"
#include "ctrnas/sampling.hpp"
#include "fixtures.hpp"

using namespace ctrnas;
using namespace ctrnas::testing;

namespace {

TrainConfig small_train() {
  TrainConfig c;
  c.batch_size = 32;
  return c;
}

// Synthetic proxy over a 2x3 bandit: additive, minimum at values (2, 1).
double synthetic_ne(const std::vector<int>& v) { return 0.7 + 0.01 * std::pow(v[0] - 2, 2) + 0.02 * std::pow(v[1] - 1, 2); }

std::vector<TrialRecord> bandit_history(const SupernetSpec& spec, bool skip_best) {
  const auto dec = free_decisions(spec);
  std::vector<TrialRecord> h;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      if (skip_best && a == 2 && b == 1) continue;
      TrialRecord r;
      r.genome = canonicalize(spec, genome_from_decisions(spec, dec, {a, b}));
      r.proxy_ne = synthetic_ne({a, b});
      h.push_back(r);
    }
  return h;
}

}  // namespace

TEST(EarlyStop, DeterministicPerSeed) {
  const auto spec = seed_chain();
  const auto task = interaction_task();
  const auto a = early_stop_proxy(spec, spec.defaults, task, 32 * 40, small_train(), 5);
  const auto b = early_stop_proxy(spec, spec.defaults, task, 32 * 40, small_train(), 5);
  ASSERT_FALSE(a.failed);
  EXPECT_EQ(a.proxy_ne, b.proxy_ne);
  EXPECT_EQ(a.examples, 32u * 40u);
  EXPECT_EQ(a.flops.flops, count_flops(spec, spec.defaults).flops);
}

TEST(EarlyStop, BudgetBelowOneBatchRejected) {
  const auto spec = seed_chain();
  EXPECT_THROW(early_stop_proxy(spec, spec.defaults, interaction_task(), 10, small_train(), 1), ArgumentError);
}

TEST(Pretrain, ScheduleRates) {
  Rng rng(3);
  const auto none = pretrain_schedule(1000, 0.1, 0.0, rng);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
  const auto warm = pretrain_schedule(1000, 1.0, 1.0, rng);
  EXPECT_EQ(std::count(warm.begin(), warm.end(), true), 0);

  const auto s = pretrain_schedule(10000, 0.1, 0.75, rng);
  for (std::size_t k = 0; k < 1000; ++k) EXPECT_FALSE(s[k]);
  const double rate = static_cast<double>(std::count(s.begin() + 1000, s.end(), true)) / 9000.0;
  EXPECT_NEAR(rate, 0.75, 0.02);
  EXPECT_THROW(pretrain_schedule(10, 1.5, 0.5, rng), ArgumentError);
}

TEST(WeightSharing, ZeroBudgetIsTransferredEvalNe) {
  const auto spec = seed_chain_space();
  const auto task = interaction_task();
  PretrainConfig pc;
  pc.total_budget = 32 * 30;
  pc.train = small_train();
  pc.seed = 4;
  const auto pre = pretrain_supernet(spec, task, pc);
  EXPECT_EQ(pre.steps, 30u);
  const ParamStore before = pre.params;

  Rng rng(9);
  const SubnetGenome g = sample_random_genome(spec, rng);
  const auto r = weight_sharing_proxy(pre, g, task, 0, small_train(), 4);
  Network net = transfer_weights(compact_subnet(spec, g), pre.params);
  EXPECT_EQ(r.proxy_ne, evaluate_ne(net, task, 4, 32));
  EXPECT_EQ(pre.params, before);

  const auto t = weight_sharing_proxy(pre, g, task, 32 * 10, small_train());
  EXPECT_FALSE(t.failed);
  EXPECT_TRUE(std::isfinite(t.proxy_ne));
}

TEST(Predictor, FitsAdditiveTargets) {
  const auto spec = bandit_spec(2, 3);
  const auto dec = free_decisions(spec);
  const auto h = bandit_history(spec, false);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : h) x.push_back(encode_genome(spec, dec, r.genome)), y.push_back(r.proxy_ne);
  PredictorModel m;
  m.fit(x, y, PredictorConfig{});
  EXPECT_LT(m.training_mse(), 1e-2);
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (m.predict(x[i]) < m.predict(x[best])) best = i;
  EXPECT_EQ(y[best], *std::min_element(y.begin(), y.end()));
}

TEST(Predictor, ProposesHeldOutBest) {
  const auto spec = bandit_spec(2, 3);
  const auto dec = free_decisions(spec);
  Rng rng(1);
  const auto round = predictor_round(bandit_history(spec, true), spec, 1, rng);
  ASSERT_EQ(round.proposals.size(), 1u);
  EXPECT_FALSE(round.fell_back);
  EXPECT_EQ(decisions_from_genome(spec, dec, round.proposals[0]), (std::vector<int>{2, 1}));
}

TEST(Predictor, ProposalsAreNewAndDistinct) {
  const auto spec = bandit_spec(2, 3);
  auto h = bandit_history(spec, false);
  h.resize(5);
  Rng rng(2);
  const auto round = predictor_round(h, spec, 10, rng);
  // Only four genomes remain unseen.
  ASSERT_EQ(round.proposals.size(), 4u);
  std::set<SubnetGenome> seen;
  for (const auto& r : h) seen.insert(r.genome);
  for (const auto& g : round.proposals) EXPECT_TRUE(seen.insert(g).second);
}

TEST(Predictor, FlatHistoryFallsBackToRandom) {
  const auto spec = seed_chain_space();
  std::vector<TrialRecord> flat;
  Rng rng(4);
  for (int k = 0; k < 6; ++k) {
    TrialRecord r;
    r.genome = canonicalize(spec, sample_random_genome(spec, rng));
    r.proxy_ne = 0.8;
    flat.push_back(r);
  }
  const auto round = predictor_round(flat, spec, 5, rng);
  EXPECT_TRUE(round.fell_back);
  EXPECT_EQ(round.proposals.size(), 5u);
  EXPECT_THROW(predictor_round({}, spec, 5, rng), ArgumentError);
}

TEST(Predictor, PolicySamplerPathOnLargeSpace) {
  const auto spec = seed_chain_space();
  Rng rng(5);
  std::vector<TrialRecord> h;
  for (int k = 0; k < 12; ++k) {
    TrialRecord r;
    r.genome = canonicalize(spec, sample_random_genome(spec, rng));
    r.proxy_ne = 0.7 + 1e-6 * static_cast<double>(count_flops(spec, r.genome).flops);
    h.push_back(r);
  }
  PredictorRoundConfig cfg;
  cfg.enumerate_limit = 0;
  cfg.policy_steps = 20;
  cfg.predictor.epochs = 100;
  const auto round = predictor_round(h, spec, 6, rng, cfg);
  EXPECT_EQ(round.proposals.size(), 6u);
  std::set<SubnetGenome> seen;
  for (const auto& r : h) seen.insert(r.genome);
  for (const auto& g : round.proposals) EXPECT_TRUE(seen.insert(g).second);
}

TEST(Halving, SurvivorCountsAndBruteForce) {
  auto score = [](std::size_t i, std::size_t budget) {
    return std::sin(static_cast<double>(i * 7 + 3)) + 1e-4 * static_cast<double>(budget) * static_cast<double>(i % 3);
  };
  const std::vector<std::size_t> rungs{100, 200, 400};
  const auto r = successive_halving(8, rungs, 0.5, score);
  ASSERT_EQ(r.survivors.size(), 3u);
  EXPECT_EQ(r.survivors[0].size(), 4u);
  EXPECT_EQ(r.survivors[1].size(), 2u);
  EXPECT_EQ(r.survivors[2].size(), 1u);

  // Independent simulation: repeatedly sort (score, index) pairs.
  std::vector<std::size_t> alive{0, 1, 2, 3, 4, 5, 6, 7};
  for (std::size_t k = 0; k < rungs.size(); ++k) {
    std::vector<std::pair<double, std::size_t>> s;
    for (std::size_t i : alive) s.emplace_back(score(i, rungs[k]), i);
    std::sort(s.begin(), s.end());
    alive.clear();
    for (std::size_t j = 0; j < (s.size() + 1) / 2; ++j) alive.push_back(s[j].second);
    std::sort(alive.begin(), alive.end());
    EXPECT_EQ(r.survivors[k], alive);
  }
}

TEST(Halving, EdgeCases) {
  auto score = [](std::size_t i, std::size_t) { return static_cast<double>(i); };
  EXPECT_EQ(successive_halving(1, {10, 20}, 0.5, score).survivors.back(), std::vector<std::size_t>{0});
  EXPECT_EQ(successive_halving(3, {10}, 1.0, score).survivors[0].size(), 3u);
  auto tie = [](std::size_t, std::size_t) { return 1.0; };
  EXPECT_EQ(successive_halving(4, {10}, 0.5, tie).survivors[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(successive_halving(0, {10}, 0.5, score), ArgumentError);
  EXPECT_THROW(successive_halving(4, {20, 10}, 0.5, score), ArgumentError);
  EXPECT_THROW(successive_halving(4, {10}, 0.0, score), ArgumentError);
}

TEST(Study, ProxyAtGroundTruthBudgetRanksPerfectly) {
  StudyConfig cfg;
  cfg.n_models = 10;
  cfg.ground_truth_budget = 32 * 20;
  cfg.proxy_budgets = {32 * 5, 32 * 20};
  cfg.pretrain_budget = 0;
  cfg.bootstrap = 50;
  cfg.train = small_train();
  cfg.seed = 3;
  const auto r = proxy_rank_study(seed_chain_space(), interaction_task(), cfg);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.genomes.size(), 10u);
  EXPECT_DOUBLE_EQ(r.rows[1].tau, 1.0);
  for (const auto& row : r.rows) {
    EXPECT_GE(row.tau, -1.0);
    EXPECT_LE(row.tau, 1.0);
    EXPECT_LE(row.q25, row.q75);
  }
  std::ostringstream os;
  write_study_table(os, r.rows);
  EXPECT_EQ(os.str().substr(0, 24), "proxy,budget,tau,q25,q75");
}

TEST(Study, BootstrapBandOfIdenticalRankingIsOne) {
  Rng rng(1);
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  const auto [lo, hi] = bootstrap_tau_band(x, x, 100, rng);
  EXPECT_DOUBLE_EQ(lo, 1.0);
  EXPECT_DOUBLE_EQ(hi, 1.0);
}

TEST(Ledger, Format) {
  const auto spec = seed_chain();
  TrialRecord ok;
  ok.genome = spec.defaults;
  ok.budget = 100;
  ok.proxy_ne = 0.75;
  ok.flops = count_flops(spec, spec.defaults);
  ok.long_ne = 0.7;
  TrialRecord bad = ok;
  bad.failed = true;
  bad.proxy_ne = std::nan("");
  bad.long_ne.reset();
  std::ostringstream os;
  write_trial_ledger(os, {ok, bad});
  std::istringstream is(os.str());
  std::string header, l1, l2;
  std::getline(is, header), std::getline(is, l1), std::getline(is, l2);
  EXPECT_EQ(header, "genome_id,proxy,budget,window_ne,flops,dense_params,long_ne,status");
  EXPECT_EQ(std::count(l1.begin(), l1.end(), ','), 7);
  EXPECT_NE(l1.find(",early_stop,100,0.75,"), std::string::npos);
  EXPECT_EQ(l1.substr(l1.size() - 7), ",0.7,ok");
  EXPECT_NE(l2.find(",nan,"), std::string::npos);
  EXPECT_EQ(l2.substr(l2.size() - 8), ",,failed");
}

TEST(SamplingSearch, SmallRunIsDeterministicAndPicksBest) {
  SamplingConfig cfg;
  cfg.n_random = 4;
  cfg.rounds = 2;
  cfg.per_round = 2;
  cfg.budget = 32 * 10;
  cfg.train = small_train();
  cfg.predictor.predictor.epochs = 100;
  cfg.seed = 11;
  const auto spec = bandit_spec(2, 3);
  auto task = interaction_task(1, 3, 2, 2);
  task.pairs = {{0, 1, 1.5}};
  const auto a = sampling_search(spec, task, cfg);
  const auto b = sampling_search(spec, task, cfg);
  ASSERT_EQ(a.history.size(), 8u);
  std::set<SubnetGenome> distinct;
  for (const auto& r : a.history) distinct.insert(r.genome);
  EXPECT_EQ(distinct.size(), 8u);
  EXPECT_EQ(a.best, b.best);
  const auto best = std::min_element(a.history.begin(), a.history.end(),
                                     [](const auto& x, const auto& y) { return x.proxy_ne < y.proxy_ne; });
  EXPECT_EQ(best->genome, a.best);
}
