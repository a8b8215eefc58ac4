#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "ctrnas/cli.hpp"
#include "ctrnas/cost.hpp"
#include "ctrnas/errors.hpp"
#include "ctrnas/metrics.hpp"
#include "ctrnas/train.hpp"

namespace ctrnas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_hash(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

namespace {

struct Context {
  std::string command;
  json config;  // effective document (seed override applied)
  RunConfig cfg;
  fs::path out_dir;
  bool resume = false;
  std::optional<std::int64_t> stop_after;
  std::int64_t progressed = 0;
  std::ostream* out;
};

// Thrown after the requested number of steps; the checkpoint is already on disk.
struct Stopped {
  std::int64_t at;
};

// Write-then-rename so an interrupted run never leaves a truncated file.
void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void emit(Context& ctx, const std::string& name, const std::string& content) {
  write_file(ctx.out_dir / name, content);
  *ctx.out << "wrote " << (ctx.out_dir / name).string() << '\n';
}

void write_manifest(const Context& ctx) {
  const json m{{"schema_version", kSchemaVersion}, {"command", ctx.command},     {"code_version", kCodeVersion},
               {"seed", ctx.cfg.seed},            {"config_hash", config_hash(ctx.config)}, {"config", ctx.config}};
  write_file(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

SubnetGenome read_genome(const fs::path& p, const SupernetSpec& spec, GenomeRules rules = {}) {
  SubnetGenome g;
  try {
    g = genome_from_json(read_json(p));
    validate(spec, g, rules);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
  return g;
}

std::string genome_text(const SubnetGenome& g) { return to_json(g).dump(2) + "\n"; }

std::string flops_row(const std::string& label, const SubnetGenome& g, const FlopsReport& f) {
  std::ostringstream os;
  os << label << ',' << genome_id(g) << ',' << f.flops << ',' << f.dense_params << ',' << f.n_choices << ','
     << f.n_connections << '\n';
  return os.str();
}

constexpr const char* kFlopsHeader = "model,genome_id,flops,dense_params,n_choices,n_connections\n";

// ---- checkpoints ---------------------------------------------------------------

std::optional<json> load_checkpoint(const Context& ctx) {
  const fs::path p = ctx.out_dir / "checkpoint.json";
  if (!ctx.resume || !fs::exists(p)) return std::nullopt;
  json j = read_json(p);
  if (j.value("command", "") != ctx.command || j.value("config_hash", "") != config_hash(ctx.config))
    throw ConfigError("checkpoint in " + ctx.out_dir.string() + " belongs to a different command or config");
  *ctx.out << "resuming from " << p.string() << '\n';
  return j.at("state");
}

void save_checkpoint(const Context& ctx, json state) {
  const json j{{"command", ctx.command}, {"config_hash", config_hash(ctx.config)}, {"state", std::move(state)}};
  write_file(ctx.out_dir / "checkpoint.json", j.dump() + "\n");
}

bool checkpoint_due(const Context& ctx, std::int64_t done, std::size_t total) {
  const auto every = static_cast<std::int64_t>(ctx.cfg.checkpoint_every);
  return every > 0 && (done % every == 0 || done == static_cast<std::int64_t>(total));
}

// Called after every search step with a checkpoint writer for the current state.
template <class Save>
void after_step(Context& ctx, std::int64_t done, std::size_t total, Save&& save) {
  ++ctx.progressed;
  const bool stop = ctx.stop_after && ctx.progressed >= *ctx.stop_after && done < static_cast<std::int64_t>(total);
  if (stop || checkpoint_due(ctx, done, total)) save();
  if (stop) throw Stopped{done};
}

// ---- subcommands ---------------------------------------------------------------

void space_grow(Context& ctx) { emit(ctx, "spec.json", to_json(ctx.cfg.spec).dump(2) + "\n"); }

void space_stats(Context& ctx) {
  Rng rng = make_rng(ctx.cfg.seed, "stats");
  const auto stats = subnet_statistics(ctx.cfg.spec, ctx.cfg.stats_samples, ctx.cfg.stats_connection_prob, rng);
  std::ostringstream os;
  write_statistics_table(os, stats);
  emit(ctx, "stats.csv", os.str());
}

void space_size(Context& ctx) {
  const BigInt n = search_space_size(ctx.cfg.spec);
  std::ostringstream os;
  os << "decisions,size\n" << free_decisions(ctx.cfg.spec).size() << ',' << n << '\n';
  emit(ctx, "size.csv", os.str());
  *ctx.out << n << '\n';
}

SubnetGenome configured_genome(const Context& ctx) {
  const auto& spec = ctx.cfg.spec;
  const auto& kind = ctx.cfg.genome.kind;
  if (kind == "defaults") return spec.defaults;
  if (kind == "all_ones") return all_ones_genome(spec);
  if (kind == "random") {
    Rng rng = make_rng(ctx.cfg.seed, "genome");
    return sample_random_genome(spec, rng);
  }
  return read_genome(ctx.cfg.genome.file, spec, {true, true});
}

void train_eval(Context& ctx) {
  const auto& c = ctx.cfg;
  const SubnetGenome g = configured_genome(ctx);
  Network net = standalone_network(c.spec, g, substream_seed(c.seed, "train"));
  const TrainResult r = train_network(net, c.task, c.train_budget, c.train);
  const double held_out = evaluate_ne(net, c.task, c.eval_batches, c.train.batch_size);
  const FlopsReport f = count_flops(c.spec, g);
  std::ostringstream os;
  os << std::setprecision(10) << "genome_id,budget,window_ne,heldout_ne,flops,dense_params,status\n"
     << genome_id(g) << ',' << r.examples << ',' << r.window_ne() << ',' << held_out << ',' << f.flops << ','
     << f.dense_params << ",ok\n";
  emit(ctx, "genome.json", genome_text(g));
  emit(ctx, "eval.csv", os.str());
}

void write_search_outputs(Context& ctx, const SubnetGenome& best) {
  const FlopsReport f = count_flops(ctx.cfg.spec, best);
  emit(ctx, "best_genome.json", genome_text(best));
  emit(ctx, "best.csv", std::string(kFlopsHeader) + flops_row("best", best, f));
}

void search_sampling(Context& ctx) {
  SamplingHooks hooks;
  if (auto state = load_checkpoint(ctx))
    for (const auto& t : state->at("trials")) hooks.completed.push_back(trial_from_json(t));
  const std::size_t total = ctx.cfg.sampling.n_random + ctx.cfg.sampling.rounds * ctx.cfg.sampling.per_round;
  hooks.on_trial = [&](const std::vector<TrialRecord>& h) {
    if (h.size() <= hooks.completed.size()) return;  // replayed from the checkpoint
    after_step(ctx, static_cast<std::int64_t>(h.size()), total, [&] {
      json trials = json::array();
      for (const auto& t : h) trials.push_back(to_json(t));
      save_checkpoint(ctx, {{"trials", trials}});
    });
  };
  const SamplingResult r = sampling_search(ctx.cfg.spec, ctx.cfg.task, ctx.cfg.sampling, hooks);
  std::ostringstream os;
  write_trial_ledger(os, r.history);
  emit(ctx, "trials.csv", os.str());
  write_search_outputs(ctx, r.best);
}

void search_oneshot(Context& ctx) {
  const auto& c = ctx.cfg;
  auto state = load_checkpoint(ctx);
  OneShotState st = state ? restore_oneshot_state(c.spec, c.oneshot, *state) : make_oneshot_state(c.spec, c.oneshot);
  const OneShotResult r = finish_oneshot(st, c.task, c.oneshot, [&](const OneShotState& s) {
    after_step(ctx, s.step, c.oneshot.steps, [&] { save_checkpoint(ctx, oneshot_checkpoint(s)); });
  });
  std::ostringstream os;
  write_oneshot_trace(os, r.trace);
  emit(ctx, "trace.csv", os.str());
  emit(ctx, "policy.json", to_json(r.policy).dump(2) + "\n");
  write_search_outputs(ctx, r.genome);
}

void search_dnas(Context& ctx) {
  const auto& c = ctx.cfg;
  auto state = load_checkpoint(ctx);
  DnasState st = state ? restore_dnas_state(c.spec, c.dnas, *state) : make_dnas_state(c.spec, c.dnas);
  const DnasResult r = finish_dnas(st, c.task, c.dnas, [&](const DnasState& s) {
    after_step(ctx, s.step, c.dnas.steps, [&] { save_checkpoint(ctx, dnas_checkpoint(s)); });
  });
  std::ostringstream os;
  write_dnas_trace(os, r.trace);
  emit(ctx, "trace.csv", os.str());
  emit(ctx, "arch.json", to_json(r.arch).dump(2) + "\n");
  write_search_outputs(ctx, r.genome);
}

void study_proxies(Context& ctx) {
  const StudyResult r = proxy_rank_study(ctx.cfg.spec, ctx.cfg.task, ctx.cfg.study);
  std::ostringstream table, truth;
  write_study_table(table, r.rows);
  truth << "genome_id,ground_truth_ne,flops\n" << std::setprecision(10);
  for (std::size_t i = 0; i < r.genomes.size(); ++i)
    truth << genome_id(r.genomes[i]) << ',' << r.ground_truth[i] << ',' << count_flops(ctx.cfg.spec, r.genomes[i]).flops << '\n';
  emit(ctx, "study.csv", table.str());
  emit(ctx, "ground_truth.csv", truth.str());
}

void post_merge(Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.merge_inputs.empty()) throw ConfigError("post.genomes: required for post merge");
  std::vector<SubnetGenome> gs;
  std::string table = kFlopsHeader;
  for (const auto& p : c.merge_inputs) {
    gs.push_back(read_genome(p, c.spec, {true, true}));
    table += flops_row("source", gs.back(), count_flops(c.spec, gs.back()));
  }
  const SubnetGenome m = merge_genomes(gs, c.spec);
  table += flops_row("merged", m, count_flops(c.spec, m));
  emit(ctx, "merged_genome.json", genome_text(m));
  emit(ctx, "flops.csv", table);
}

void post_scale(Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.scale_input.empty()) throw ConfigError("post.genome: required for post scale");
  const SubnetGenome g = read_genome(c.scale_input, c.spec);
  const ScaledModel s = naive_scale(g, c.spec, c.scale_rule);
  std::string table = kFlopsHeader;
  table += flops_row("source", g, count_flops(c.spec, g));
  table += flops_row(std::string(to_string(c.scale_rule)), s.genome, count_flops(s.spec, s.genome));
  emit(ctx, "scaled_spec.json", to_json(s.spec).dump(2) + "\n");
  emit(ctx, "scaled_genome.json", genome_text(s.genome));
  emit(ctx, "flops.csv", table);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct LedgerPoint {
  std::string source;
  std::string genome_id;
  ParetoPoint p;
};

std::vector<LedgerPoint> read_ledger(const fs::path& path, const std::string& ne_column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ledger " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty ledger");
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id = col("genome_id"), ne = col(ne_column), fl = col("flops"), status = col("status");
  if (!id || !ne || !fl) throw ConfigError(path.string() + ": ledger needs genome_id, " + ne_column + " and flops columns");
  std::vector<LedgerPoint> out;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw ConfigError(path.string() + ":" + std::to_string(row) + ": wrong column count");
    if (status && cells[*status] != "ok") continue;
    try {
      const double n = std::stod(cells[*ne]), f = std::stod(cells[*fl]);
      if (std::isfinite(n) && std::isfinite(f)) out.push_back({path.filename().string(), cells[*id], {n, f}});
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(row) + ": unreadable number");
    }
  }
  return out;
}

void report_pareto(Context& ctx) {
  if (ctx.cfg.ledgers.empty()) throw ConfigError("report.ledgers: required for report pareto");
  std::vector<LedgerPoint> all;
  for (const auto& l : ctx.cfg.ledgers) {
    auto pts = read_ledger(l, ctx.cfg.ne_column);
    all.insert(all.end(), pts.begin(), pts.end());
  }
  std::vector<ParetoPoint> pts;
  for (const auto& a : all) pts.push_back(a.p);
  auto front = pareto_front(pts);
  std::stable_sort(front.begin(), front.end(), [&](std::size_t a, std::size_t b) { return pts[a].flops < pts[b].flops; });
  std::ostringstream os;
  os << "source,genome_id,ne,flops\n" << std::setprecision(10);
  for (std::size_t i : front) os << all[i].source << ',' << all[i].genome_id << ',' << all[i].p.ne << ',' << all[i].p.flops << '\n';
  emit(ctx, "pareto.csv", os.str());
}

using Handler = void (*)(Context&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h{
      {"space grow", space_grow},         {"space stats", space_stats},       {"space size", space_size},
      {"train eval", train_eval},         {"search sampling", search_sampling}, {"search oneshot", search_oneshot},
      {"search dnas", search_dnas},       {"study proxies", study_proxies},   {"post merge", post_merge},
      {"post scale", post_scale},         {"report pareto", report_pareto}};
  return h;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Search CTR ranking architectures on synthetic tasks"};
  app.name("ctrnas");
  app.require_subcommand(1);
  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool resume = false;
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--seed", seed, "Root seed (overrides the config)");
  app.add_option("--out-dir", out_dir, "Directory for outputs and the manifest");
  app.add_flag("--resume", resume, "Continue from checkpoint.json in the output directory");
  std::optional<std::int64_t> stop_after;
  app.add_option("--stop-after", stop_after, "Checkpoint and stop after this many search steps or trials")
      ->check(CLI::PositiveNumber);

  const std::map<std::string, std::vector<std::pair<std::string, std::string>>> groups{
      {"space", {{"grow", "Grow the supernet and write its spec"},
                 {"stats", "FLOPs and parameter statistics of random subnets"},
                 {"size", "Exact number of subnets"}}},
      {"train", {{"eval", "Train one genome and report its window NE"}}},
      {"search", {{"sampling", "Random and predictor-guided sampling"},
                  {"oneshot", "Weight-sharing supernet with a REINFORCE policy"},
                  {"dnas", "Gumbel-softmax differentiable search"}}},
      {"study", {{"proxies", "Kendall tau of cheap proxies against long training"}}},
      {"post", {{"merge", "Union of several genomes"}, {"scale", "Widen a genome by a fixed rule"}}},
      {"report", {{"pareto", "NE/FLOPs Pareto front of result ledgers"}}}};
  std::string command;
  for (const auto& [group, leaves] : groups) {
    CLI::App* g = app.add_subcommand(group);
    g->require_subcommand(1);
    g->fallthrough();
    for (const auto& [leaf, help] : leaves) {
      CLI::App* l = g->add_subcommand(leaf, help);
      l->fallthrough();
      l->callback([&command, name = group + " " + leaf] { command = name; });
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  Context ctx;
  ctx.command = command;
  ctx.out_dir = out_dir;
  ctx.resume = resume;
  ctx.stop_after = stop_after;
  ctx.out = &out;
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config " + config_path);
    try {
      ctx.config = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(config_path + ": " + e.what());
    }
    if (seed) ctx.config["seed"] = *seed;
    ctx.cfg = parse_config(ctx.config, fs::path(config_path).parent_path());
    fs::create_directories(ctx.out_dir);
    write_manifest(ctx);
    handlers().at(command)(ctx);
  } catch (const Stopped& s) {
    out << "stopped at step " << s.at << "; continue with --resume\n";
    return kOk;
  } catch (const std::invalid_argument& e) {
    // ConfigError plus errors thrown while applying bad config values.
    err << "config error:\n" << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace ctrnas::cli
