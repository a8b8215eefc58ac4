#include "config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ctrnas/cli.hpp"
#include "ctrnas/errors.hpp"

namespace ctrnas::cli {

namespace {

using nlohmann::json;

class Diagnostics {
 public:
  void add(const std::string& field, const std::string& msg) { errors_.push_back(field + ": " + msg); }
  bool empty() const { return errors_.empty(); }
  std::string joined() const {
    std::string s;
    for (const auto& e : errors_) s += (s.empty() ? "" : "\n") + e;
    return s;
  }

 private:
  std::vector<std::string> errors_;
};

std::string shown(const json& v) {
  std::string s = v.dump();
  return s.size() > 40 ? s.substr(0, 37) + "..." : s;
}

// One object of the document. Reads are typed and range-checked;
// keys never read count as unknown fields.
class Section {
 public:
  Section(const json* j, std::string path, Diagnostics& d) : j_(j), path_(std::move(path)), d_(&d) {
    if (j_ && !j_->is_object()) {
      d_->add(path_.empty() ? "<root>" : path_, "expected an object");
      j_ = nullptr;
    }
  }

  bool present() const { return j_ != nullptr; }
  bool has(const std::string& key) const { return j_ && j_->contains(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  Section sub(const std::string& key) {
    return Section(find(key), field(key), *d_);
  }

  const json* raw(const std::string& key) { return find(key); }

  double number(const std::string& key, double def, double lo = -std::numeric_limits<double>::infinity(),
                double hi = std::numeric_limits<double>::infinity(), bool lo_open = false) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number()) return bad(key, "expected a number", *v), def;
    const double x = v->get<double>();
    if (!std::isfinite(x) || x < lo || x > hi || (lo_open && x == lo)) {
      std::ostringstream os;
      os << "expected a number in " << (lo_open ? "(" : "[") << lo << ", " << hi << "]";
      return bad(key, os.str(), *v), def;
    }
    return x;
  }

  std::uint64_t count(const std::string& key, std::uint64_t def, std::uint64_t lo = 0) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      return bad(key, "expected a nonnegative integer", *v), def;
    const auto x = v->get<std::uint64_t>();
    if (x < lo) return bad(key, "expected an integer >= " + std::to_string(lo), *v), def;
    return x;
  }

  bool flag(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) return bad(key, "expected true or false", *v), def;
    return v->get<bool>();
  }

  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
    const json* v = find(key);
    if (!v) return def;
    if (v->is_string()) {
      const auto s = v->get<std::string>();
      for (const auto& a : allowed)
        if (s == a) return s;
    }
    std::string opts;
    for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
    return bad(key, "expected one of " + opts, *v), def;
  }

  std::string text(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) return bad(key, "expected a string", *v), def;
    return v->get<std::string>();
  }

  std::vector<std::uint64_t> counts(const std::string& key, std::vector<std::uint64_t> def, std::uint64_t lo = 0) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_array() || v->empty()) return bad(key, "expected a nonempty array of integers", *v), def;
    std::vector<std::uint64_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < static_cast<std::int64_t>(lo))
        return bad(key, "expected integers >= " + std::to_string(lo), *v), def;
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  }

  void finish() {
    if (!j_) return;
    for (const auto& [k, _] : j_->items())
      if (!read_.count(k)) d_->add(field(k), "unknown field");
  }

  void bad(const std::string& key, const std::string& msg, const json& v) { d_->add(field(key), msg + ", got " + shown(v)); }
  Diagnostics& diagnostics() { return *d_; }

 private:
  const json* find(const std::string& key) {
    read_.insert(key);
    if (!j_ || !j_->contains(key)) return nullptr;
    return &j_->at(key);
  }

  const json* j_;
  std::string path_;
  Diagnostics* d_;
  std::set<std::string> read_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path q(p);
  return q.is_absolute() ? q : base / q;
}

SupernetSpec chain_from_json(Section s) {
  SupernetSpec spec;
  spec.dense_width = s.count("dense_width", 6, 1);
  spec.num_embeddings = s.count("num_embeddings", 3, 1);
  spec.embedding_dim = s.count("embedding_dim", 4, 1);
  spec.bottleneck = s.count("bottleneck", 4, 1);
  const json* blocks = s.raw("blocks");
  if (!blocks) {
    s.diagnostics().add(s.field("blocks"), "missing");
  } else if (!blocks->is_array() || blocks->empty()) {
    s.bad("blocks", "expected a nonempty array", *blocks);
  } else {
    for (std::size_t i = 0; i < blocks->size(); ++i) {
      Section b(&(*blocks)[i], s.field("blocks") + "[" + std::to_string(i) + "]", s.diagnostics());
      const auto kind = block_kind_from_string(
          b.choice("kind", "linear", {"linear", "embed_fc", "compressed_dot", "pairwise_gating", "pairwise_sum"}));
      BlockSpec block{kind, {}, default_activation(kind)};
      if (has_dimension(kind)) block.dims = {static_cast<int>(b.count("dim", 4, 1))};
      ChoiceSpec c{{block}, {}, {}};
      for (auto p : b.counts("preds", {i == 0 ? 0u : static_cast<std::uint64_t>(choice_node(i - 1))}))
        c.preds.push_back(static_cast<int>(p));
      ChoiceGenome g;
      g.blocks = {1};
      g.dims = {0};
      g.connections.assign(c.preds.size(), 1);
      if (is_pairwise(kind)) {
        const auto pair = b.counts("pair", {0, c.preds.size() > 1 ? 1u : 0u});
        if (pair.size() != 2) b.bad("pair", "expected [left, right]", json(pair));
        else g.pairs = {{static_cast<int>(pair[0]), static_cast<int>(pair[1])}};
      }
      b.finish();
      spec.choices.push_back(std::move(c));
      spec.defaults.choices.push_back(std::move(g));
    }
  }
  s.finish();
  return spec;
}

SupernetSpec space_from_config(Section s, const std::filesystem::path& base, std::uint64_t seed) {
  const auto source = s.choice("source", "grow", {"grow", "seed", "chain", "file"});
  const auto mode = s.choice("mode", source == "chain" ? "dims_only" : "full", {"full", "dims_only", "blocks_only"});
  SupernetSpec spec;
  const json default_chain = default_seed_chain();
  Section chain = s.has("seed_chain") ? s.sub("seed_chain") : Section(&default_chain, s.field("seed_chain"), s.diagnostics());
  if (!s.has("seed_chain")) s.sub("seed_chain");
  Section grow = s.sub("grow");
  GrowOptions opts;
  std::vector<int> distances;
  for (auto d : grow.counts("distances", {1, 2, 3, 6, 9}, 1)) distances.push_back(static_cast<int>(d));
  opts.distances = distances;
  opts.dim_options = static_cast<int>(grow.count("dim_options", 7, 1));
  opts.dim_low = grow.number("dim_low", 0.5, 0.0, 100.0, true);
  opts.dim_high = grow.number("dim_high", 1.25, 0.0, 100.0, true);
  grow.finish();
  Section chain_dims = s.sub("chain");
  const auto decisions = chain_dims.count("decisions", 28, 1);
  const auto options = chain_dims.count("options", 9, 1);
  chain_dims.finish();
  const std::string file = s.text("file", "");

  if (source == "grow" || source == "seed") {
    spec = chain_from_json(chain);
    if (source == "grow" && s.diagnostics().empty()) {
      try {
        Rng rng = make_rng(seed, "space");
        spec = grow_supernet(spec, rng, opts);
      } catch (const std::exception& e) {
        s.diagnostics().add(s.field("seed_chain"), e.what());
      }
    }
  } else if (source == "chain") {
    spec.dense_width = 4;
    spec.num_embeddings = 2;
    spec.embedding_dim = 2;
    std::vector<int> dims;
    for (std::uint64_t k = 1; k <= options; ++k) dims.push_back(static_cast<int>(k));
    for (std::size_t i = 0; i < decisions; ++i) {
      BlockSpec b{BlockKind::Linear, dims, default_activation(BlockKind::Linear)};
      spec.choices.push_back(ChoiceSpec{{b}, {i == 0 ? kDenseNode : choice_node(i - 1)}, {}});
      spec.defaults.choices.push_back(ChoiceGenome{{1}, {1}, {}, {0}});
    }
  } else {
    if (file.empty()) {
      s.diagnostics().add(s.field("file"), "required when source is file");
    } else {
      try {
        std::ifstream in(resolve(base, file));
        if (!in) throw ConfigError("cannot open " + resolve(base, file).string());
        spec = spec_from_json(json::parse(in));
      } catch (const std::exception& e) {
        s.diagnostics().add(s.field("file"), e.what());
      }
    }
  }
  if (s.has("mode") || source != "file") spec.mode = search_mode_from_string(mode);
  s.finish();
  if (s.diagnostics().empty()) {
    try {
      validate(spec);
    } catch (const std::exception& e) {
      s.diagnostics().add(s.field("source"), std::string("invalid search space: ") + e.what());
    }
  }
  return spec;
}

SynthTaskSpec task_from_config(Section s, const SupernetSpec& spec, std::uint64_t seed) {
  SynthTaskSpec t;
  t.dense_width = s.count("dense_width", spec.dense_width, 1);
  t.num_embeddings = s.count("num_embeddings", spec.num_embeddings, 1);
  t.embedding_dim = s.count("embedding_dim", spec.embedding_dim, 1);
  t.base_ctr = s.number("base_ctr", 0.25, 0.0, 1.0, true);
  t.dense_scale = s.number("dense_scale", 0.5, 0.0);
  t.seed = s.count("seed", substream_seed(seed, "data"));
  if (const json* pairs = s.raw("pairs")) {
    bool ok = pairs->is_array();
    if (ok)
      for (const auto& p : *pairs) {
        if (!p.is_array() || p.size() != 3 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned() || !p[2].is_number()) {
          ok = false;
          break;
        }
        t.pairs.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<double>()});
      }
    if (!ok) s.bad("pairs", "expected [[i, j, beta], ...]", *pairs);
  } else if (t.num_embeddings >= 2) {
    t.pairs = {{0, 1, 1.5}};
  }
  if (const json* drift = s.raw("drift")) {
    bool ok = drift->is_array();
    if (ok)
      for (const auto& d : *drift) {
        if (!d.is_array() || d.size() != 3 || !d[0].is_number_integer() || !d[1].is_number() || !d[2].is_number()) {
          ok = false;
          break;
        }
        t.drift.push_back({d[0].get<std::int64_t>(), d[1].get<double>(), d[2].get<double>()});
      }
    if (!ok) s.bad("drift", "expected [[step, bias_shift, weight_scale], ...]", *drift);
  }
  s.finish();
  if (t.dense_width != spec.dense_width || t.num_embeddings != spec.num_embeddings || t.embedding_dim != spec.embedding_dim)
    s.diagnostics().add(s.field("dense_width"), "task feature shapes must match the search space inputs");
  try {
    validate(t);
  } catch (const std::exception& e) {
    s.diagnostics().add(s.field("pairs"), e.what());
  }
  return t;
}

TrainConfig train_from(Section& s, TrainConfig def) {
  def.batch_size = s.count("batch_size", def.batch_size, 1);
  def.lr = s.number("lr", def.lr, 0.0, 10.0, true);
  def.window_fraction = s.number("window_fraction", def.window_fraction, 0.0, 1.0, true);
  return def;
}

}  // namespace

json default_seed_chain() {
  return json::parse(R"({
    "dense_width": 6, "num_embeddings": 3, "embedding_dim": 4, "bottleneck": 4,
    "blocks": [
      {"kind": "linear", "dim": 8, "preds": [0, 1]},
      {"kind": "compressed_dot", "dim": 3, "preds": [1, 2]},
      {"kind": "embed_fc", "dim": 2, "preds": [1, 2]},
      {"kind": "pairwise_gating", "preds": [2, 3, 4], "pair": [0, 1]},
      {"kind": "linear", "dim": 6, "preds": [3, 4, 5]}
    ]})");
}

RunConfig parse_config(const json& doc, const std::filesystem::path& base) {
  Diagnostics d;
  Section root(&doc, "", d);
  RunConfig c;
  const auto version = root.count("schema_version", 0);
  if (!root.has("schema_version")) d.add("schema_version", "missing (expected " + std::to_string(kSchemaVersion) + ")");
  else if (version != static_cast<std::uint64_t>(kSchemaVersion))
    d.add("schema_version", "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kSchemaVersion) + ")");
  c.seed = root.count("seed", 0);
  c.checkpoint_every = root.count("checkpoint_every", 25);

  c.spec = space_from_config(root.sub("space"), base, c.seed);
  if (!d.empty()) throw ConfigError(d.joined());
  c.task = task_from_config(root.sub("task"), c.spec, c.seed);

  Section train = root.sub("train");
  c.train = train_from(train, {});
  c.train_budget = train.count("budget", 40960, 1);
  c.eval_batches = train.count("eval_batches", 8, 1);
  train.finish();

  Section genome = root.sub("genome");
  c.genome.kind = genome.choice("source", "defaults", {"defaults", "all_ones", "random", "file"});
  c.genome.file = resolve(base, genome.text("file", ""));
  if (c.genome.kind == "file" && !genome.has("file")) d.add("genome.file", "required when source is file");
  genome.finish();

  Section stats = root.sub("stats");
  c.stats_samples = stats.count("samples", 1000, 1);
  c.stats_connection_prob = stats.number("connection_on_prob", 0.8, 0.0, 1.0, true);
  stats.finish();

  Section sp = root.sub("sampling");
  auto& sc = c.sampling;
  sc.n_random = sp.count("n_random", sc.n_random, 1);
  sc.rounds = sp.count("rounds", sc.rounds);
  sc.per_round = sp.count("per_round", sc.per_round, 1);
  sc.proxy = proxy_kind_from_string(sp.choice("proxy", "early_stop", {"early_stop", "weight_sharing"}));
  sc.budget = sp.count("budget", sc.budget);
  sc.train = c.train;
  Section pre = sp.sub("pretrain");
  sc.pretrain.total_budget = pre.count("budget", sc.pretrain.total_budget, 1);
  sc.pretrain.warm_fraction = pre.number("warm_fraction", sc.pretrain.warm_fraction, 0.0, 1.0);
  sc.pretrain.subnet_prob = pre.number("subnet_prob", sc.pretrain.subnet_prob, 0.0, 1.0);
  sc.pretrain.train = c.train;
  pre.finish();
  Section pred = sp.sub("predictor");
  auto& pc = sc.predictor;
  pc.predictor.hidden = pred.count("hidden", pc.predictor.hidden, 1);
  pc.predictor.epochs = pred.count("epochs", pc.predictor.epochs, 1);
  pc.predictor.lr = pred.number("lr", pc.predictor.lr, 0.0, 10.0, true);
  pc.enumerate_limit = pred.count("enumerate_limit", pc.enumerate_limit);
  pc.policy_steps = pred.count("policy_steps", pc.policy_steps, 1);
  pc.policy_samples = pred.count("policy_samples", pc.policy_samples, 1);
  pc.policy_lr = pred.number("policy_lr", pc.policy_lr, 0.0, 100.0, true);
  pred.finish();
  sp.finish();
  if (sc.proxy == ProxyKind::EarlyStop && sc.budget < sc.train.batch_size)
    d.add("sampling.budget", "must cover at least one batch of train.batch_size");
  sc.seed = substream_seed(c.seed, "sampling");

  Section os = root.sub("oneshot");
  auto& oc = c.oneshot;
  oc.steps = os.count("steps", oc.steps, 1);
  oc.batch_size = c.train.batch_size;
  oc.samples_per_step = os.count("samples_per_step", oc.samples_per_step, 1);
  oc.offpolicy_updates = os.count("offpolicy_updates", oc.offpolicy_updates);
  oc.offpolicy_batch = os.count("offpolicy_batch", oc.offpolicy_batch, 1);
  oc.buffer_capacity = os.count("buffer_capacity", oc.buffer_capacity, 1);
  oc.policy_lr = os.number("policy_lr", oc.policy_lr, 0.0, 100.0, true);
  oc.policy_optimizer =
      os.choice("policy_optimizer", "sgd", {"sgd", "adam"}) == "adam" ? PolicyOptimizerKind::Adam : PolicyOptimizerKind::Sgd;
  oc.weight_lr = os.number("weight_lr", c.train.lr, 0.0, 10.0, true);
  oc.alpha = os.number("alpha", oc.alpha, 0.0);
  oc.target_flops = os.number("target_flops", oc.target_flops, 0.0);
  oc.penalty = penalty_from_string(os.choice("penalty", "l1", {"l1", "relu"}));
  oc.ne_percent = os.flag("ne_percent", oc.ne_percent);
  oc.flops_only = os.flag("flops_only", oc.flops_only);
  os.finish();
  oc.seed = substream_seed(c.seed, "oneshot");

  Section dn = root.sub("dnas");
  auto& dc = c.dnas;
  dc.steps = dn.count("steps", dc.steps, 1);
  dc.batch_size = c.train.batch_size;
  dc.target_flops = dn.number("target_flops", dc.target_flops, 0.0);
  dc.lambda = dn.number("lambda", dc.lambda, 0.0);
  dc.ce_weight = dn.number("ce_weight", dc.ce_weight, 0.0);
  dc.tau_start = dn.number("tau_start", dc.tau_start, 0.0, 1e6, true);
  dc.tau_end = dn.number("tau_end", dc.tau_end, 0.0, 1e6, true);
  dc.weight_lr = dn.number("weight_lr", c.train.lr, 0.0, 10.0, true);
  dc.arch_lr = dn.number("arch_lr", dc.arch_lr, 0.0, 100.0, true);
  dc.flops_tolerance = dn.number("flops_tolerance", dc.flops_tolerance, 0.0, 1.0, true);
  dn.finish();
  dc.seed = substream_seed(c.seed, "dnas");

  Section st = root.sub("study");
  auto& stc = c.study;
  stc.n_models = st.count("n_models", stc.n_models, 10);
  std::vector<std::uint64_t> def_budgets(stc.proxy_budgets.begin(), stc.proxy_budgets.end());
  stc.proxy_budgets.clear();
  for (auto b : st.counts("proxy_budgets", def_budgets, 1)) stc.proxy_budgets.push_back(b);
  stc.ground_truth_budget = st.count("ground_truth_budget", stc.ground_truth_budget, 1);
  stc.pretrain_budget = st.count("pretrain_budget", stc.pretrain_budget);
  stc.bootstrap = st.count("bootstrap", stc.bootstrap, 1);
  st.finish();
  stc.train = c.train;
  stc.seed = substream_seed(c.seed, "study");
  for (auto b : stc.proxy_budgets)
    if (b < c.train.batch_size) d.add("study.proxy_budgets", "every budget must cover at least one batch");

  Section post = root.sub("post");
  for (const auto& p : [&] {
         std::vector<std::string> v;
         if (const json* g = post.raw("genomes")) {
           if (!g->is_array() || g->empty()) post.bad("genomes", "expected a nonempty array of file paths", *g);
           else
             for (const auto& e : *g) {
               if (!e.is_string()) {
                 post.bad("genomes", "expected file paths", *g);
                 break;
               }
               v.push_back(e.get<std::string>());
             }
         }
         return v;
       }())
    c.merge_inputs.push_back(resolve(base, p));
  if (post.has("genome")) c.scale_input = resolve(base, post.text("genome", ""));
  c.scale_rule = scale_rule_from_string(post.choice("rule", "embedfc_3x", {"embedfc_3x", "mixed_1p5x_2x"}));
  post.finish();

  Section report = root.sub("report");
  if (const json* l = report.raw("ledgers")) {
    if (!l->is_array() || l->empty()) {
      report.bad("ledgers", "expected a nonempty array of file paths", *l);
    } else {
      for (const auto& e : *l) {
        if (!e.is_string()) {
          report.bad("ledgers", "expected file paths", *l);
          break;
        }
        c.ledgers.push_back(resolve(base, e.get<std::string>()));
      }
    }
  }
  c.ne_column = report.text("ne_column", c.ne_column);
  report.finish();

  root.finish();
  if (!d.empty()) throw ConfigError(d.joined());
  return c;
}

}  // namespace ctrnas::cli
