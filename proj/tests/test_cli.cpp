#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <gtest/gtest.h>
#include <boost/multiprecision/cpp_int.hpp>

#include "ctrnas/cli.hpp"
#include "ctrnas/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("ctrnas_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const json& j) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return ctrnas::cli::run(args, out_, err_);
  }

  int run_cmd(const std::string& group, const std::string& leaf, const fs::path& config, const fs::path& out,
              std::vector<std::string> extra = {}) {
    std::vector<std::string> a{group, leaf, "--config", config.string(), "--out-dir", out.string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  // Every file of `a` exists in `b` with identical bytes.
  static void expect_same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      ++n;
      const fs::path other = b / e.path().filename();
      ASSERT_TRUE(fs::exists(other)) << other;
      EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path().filename();
    }
    EXPECT_GT(n, 1u);
  }

  static json tiny_config() {
    return json::parse(R"({
      "schema_version": 1, "seed": 3, "checkpoint_every": 2,
      "space": {"source": "grow", "grow": {"distances": [1, 2], "dim_options": 3}},
      "train": {"batch_size": 32, "budget": 640, "eval_batches": 2},
      "stats": {"samples": 20},
      "sampling": {"n_random": 4, "rounds": 1, "per_round": 2, "budget": 320,
                   "predictor": {"epochs": 50, "policy_steps": 5}},
      "oneshot": {"steps": 4, "samples_per_step": 2, "offpolicy_updates": 3, "alpha": 0.0001, "target_flops": 800},
      "dnas": {"steps": 4, "target_flops": 800, "lambda": 0.001},
      "study": {"n_models": 10, "proxy_budgets": [64, 320], "ground_truth_budget": 320, "pretrain_budget": 320,
                "bootstrap": 20}
    })");
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

const std::vector<std::pair<std::string, std::string>> kCommands = {
    {"space", "grow"},      {"space", "stats"},   {"space", "size"},  {"train", "eval"},
    {"search", "sampling"}, {"search", "oneshot"}, {"search", "dnas"}, {"study", "proxies"}};

}  // namespace

TEST_F(CliTest, SpaceSizeOfDimsOnlyChainsIsExact) {
  for (int n : {93, 28, 19}) {
    const auto cfg = write_config("size.json", {{"schema_version", 1}, {"space", {{"source", "chain"}, {"chain", {{"decisions", n}, {"options", 9}}}}}});
    ASSERT_EQ(run_cmd("space", "size", cfg, dir_ / "size"), 0) << err_.str();
    boost::multiprecision::cpp_int expect = 1;
    for (int k = 0; k < n; ++k) expect *= 9;
    EXPECT_NE(out_.str().find(expect.str() + "\n"), std::string::npos) << out_.str();
    EXPECT_EQ(slurp(dir_ / "size" / "size.csv"), "decisions,size\n" + std::to_string(n) + "," + expect.str() + "\n");
  }
}

TEST_F(CliTest, EverySubcommandIsDeterministic) {
  const auto cfg = write_config("tiny.json", tiny_config());
  for (const auto& [g, l] : kCommands) {
    ASSERT_EQ(run_cmd(g, l, cfg, dir_ / "a" / (g + "_" + l)), 0) << g << ' ' << l << ": " << err_.str();
    ASSERT_EQ(run_cmd(g, l, cfg, dir_ / "b" / (g + "_" + l)), 0) << err_.str();
    expect_same_tree(dir_ / "a" / (g + "_" + l), dir_ / "b" / (g + "_" + l));
  }
  auto post = tiny_config();
  const auto best = [&](const std::string& s) { return (dir_ / "a" / ("search_" + s) / "best_genome.json").string(); };
  post["post"] = {{"genomes", {best("oneshot"), best("dnas"), best("sampling")}}, {"genome", best("dnas")}, {"rule", "mixed_1p5x_2x"}};
  post["report"] = {{"ledgers", {(dir_ / "a" / "search_sampling" / "trials.csv").string(), (dir_ / "a" / "train_eval" / "eval.csv").string()}}};
  const auto pcfg = write_config("post.json", post);
  for (const auto& [g, l] : std::vector<std::pair<std::string, std::string>>{{"post", "merge"}, {"post", "scale"}, {"report", "pareto"}}) {
    ASSERT_EQ(run_cmd(g, l, pcfg, dir_ / "a" / (g + "_" + l)), 0) << g << ' ' << l << ": " << err_.str();
    ASSERT_EQ(run_cmd(g, l, pcfg, dir_ / "b" / (g + "_" + l)), 0) << err_.str();
    expect_same_tree(dir_ / "a" / (g + "_" + l), dir_ / "b" / (g + "_" + l));
  }
}

TEST_F(CliTest, ManifestRecordsHashSeedAndVersion) {
  auto c = tiny_config();
  const auto cfg = write_config("tiny.json", c);
  ASSERT_EQ(run({"space", "size", "--config", cfg.string(), "--out-dir", (dir_ / "o").string(), "--seed", "11"}), 0);
  const json m = json::parse(slurp(dir_ / "o" / "manifest.json"));
  c["seed"] = 11;
  EXPECT_EQ(m.at("seed"), 11);
  EXPECT_EQ(m.at("config"), c);
  EXPECT_EQ(m.at("config_hash"), ctrnas::cli::config_hash(c));
  EXPECT_EQ(m.at("code_version"), ctrnas::cli::kCodeVersion);
  EXPECT_EQ(m.at("command"), "space size");
}

TEST_F(CliTest, SeedOverrideChangesResults) {
  const auto cfg = write_config("tiny.json", tiny_config());
  ASSERT_EQ(run({"space", "stats", "--config", cfg.string(), "--out-dir", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run({"space", "stats", "--config", cfg.string(), "--out-dir", (dir_ / "b").string(), "--seed", "4"}), 0);
  EXPECT_NE(slurp(dir_ / "a" / "stats.csv"), slurp(dir_ / "b" / "stats.csv"));
}

TEST_F(CliTest, InvalidConfigReportsFieldsWithExitOne) {
  auto c = tiny_config();
  c["train"]["batch_size"] = -1;
  c["oneshot"]["penalty"] = "l3";
  c["dnas"]["mystery"] = true;
  const auto cfg = write_config("bad.json", c);
  EXPECT_EQ(run_cmd("search", "oneshot", cfg, dir_ / "o"), ctrnas::cli::kConfigError);
  EXPECT_NE(err_.str().find("train.batch_size"), std::string::npos) << err_.str();
  EXPECT_NE(err_.str().find("oneshot.penalty"), std::string::npos);
  EXPECT_NE(err_.str().find("dnas.mystery: unknown field"), std::string::npos);

  const auto no_version = write_config("nov.json", {{"seed", 1}});
  EXPECT_EQ(run_cmd("space", "size", no_version, dir_ / "o"), 1);
  EXPECT_NE(err_.str().find("schema_version"), std::string::npos);
  EXPECT_EQ(run_cmd("space", "size", dir_ / "missing.json", dir_ / "o"), 1);
  EXPECT_EQ(run({"space", "--config", no_version.string()}), 1);
  EXPECT_EQ(run({"space", "size"}), 1);
}

TEST_F(CliTest, RuntimeFailureExitsTwo) {
  // Labels without a single click leave NE undefined at run time.
  auto c = tiny_config();
  c["task"] = {{"base_ctr", 1e-12}, {"dense_scale", 0.0}, {"pairs", json::array()}};
  EXPECT_EQ(run_cmd("train", "eval", write_config("t.json", c), dir_ / "t"), ctrnas::cli::kRuntimeError);
  EXPECT_NE(err_.str().find("error:"), std::string::npos);

  auto d = tiny_config();
  d["post"] = {{"genome", (dir_ / "nope.json").string()}};
  EXPECT_EQ(run_cmd("post", "scale", write_config("p.json", d), dir_ / "p"), 1);
}

TEST_F(CliTest, ResumedRunsMatchUninterruptedRuns) {
  const auto cfg = write_config("tiny.json", tiny_config());
  for (const std::string leaf : {"oneshot", "dnas", "sampling"}) {
    ASSERT_EQ(run_cmd("search", leaf, cfg, dir_ / ("full_" + leaf)), 0) << err_.str();
    const fs::path part = dir_ / ("part_" + leaf);
    ASSERT_EQ(run_cmd("search", leaf, cfg, part, {"--stop-after", "1"}), 0) << err_.str();
    EXPECT_NE(out_.str().find("stopped at step 1"), std::string::npos);
    EXPECT_FALSE(fs::exists(part / "best_genome.json"));
    ASSERT_EQ(run_cmd("search", leaf, cfg, part, {"--resume", "--stop-after", "2"}), 0) << err_.str();
    ASSERT_EQ(run_cmd("search", leaf, cfg, part, {"--resume"}), 0) << err_.str();
    EXPECT_NE(out_.str().find("resuming from"), std::string::npos);
    expect_same_tree(dir_ / ("full_" + leaf), part);
  }
  // A checkpoint from another config is refused.
  auto other = tiny_config();
  other["seed"] = 99;
  EXPECT_EQ(run_cmd("search", "dnas", write_config("other.json", other), dir_ / "part_dnas", {"--resume"}), 1);
}

TEST_F(CliTest, ParetoReportMatchesDominanceOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> ne(900, 1000), fl(100, 200);
  std::vector<std::tuple<std::string, double, double>> pts;
  json ledgers = json::array();
  for (int l = 0; l < 3; ++l) {
    const fs::path p = dir_ / ("ledger" + std::to_string(l) + ".csv");
    std::ofstream f(p);
    f << "genome_id,proxy,budget,window_ne,flops,dense_params,long_ne,status\n";
    for (int i = 0; i < 40; ++i) {
      const std::string id = "g" + std::to_string(l) + "_" + std::to_string(i);
      const double n = ne(rng) / 1000.0, x = fl(rng);
      const bool failed = i % 13 == 7;
      f << id << ",early_stop,100," << (failed ? "nan" : std::to_string(n)) << ',' << x << ",1,," << (failed ? "failed" : "ok") << '\n';
      if (!failed) pts.emplace_back(id, std::stod(std::to_string(n)), x);
    }
    ledgers.push_back(p.string());
  }
  auto c = tiny_config();
  c["report"] = {{"ledgers", ledgers}};
  ASSERT_EQ(run_cmd("report", "pareto", write_config("r.json", c), dir_ / "r"), 0) << err_.str();

  std::set<std::string> expect;
  for (const auto& [id, n, x] : pts) {
    bool dominated = false;
    for (const auto& [id2, n2, x2] : pts)
      if (n2 <= n && x2 <= x && (n2 < n || x2 < x)) dominated = true;
    if (!dominated) expect.insert(id);
  }
  std::set<std::string> got;
  std::istringstream is(slurp(dir_ / "r" / "pareto.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "source,genome_id,ne,flops");
  while (std::getline(is, line)) got.insert(line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1));
  EXPECT_EQ(got, expect);
}
