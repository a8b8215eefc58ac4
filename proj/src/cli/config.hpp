#pragma once

// Typed view of a run configuration. Parsing collects every field-level
// problem before failing so one run reports them all.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnas/data.hpp"
#include "ctrnas/dnas.hpp"
#include "ctrnas/oneshot.hpp"
#include "ctrnas/post.hpp"
#include "ctrnas/sampling.hpp"
#include "ctrnas/space.hpp"

namespace ctrnas::cli {

struct GenomeSource {
  std::string kind = "defaults";  // defaults | all_ones | random | file
  std::filesystem::path file;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 25;

  SupernetSpec spec;
  SynthTaskSpec task;

  TrainConfig train;
  std::size_t train_budget = 40960;
  std::size_t eval_batches = 8;
  GenomeSource genome;

  std::size_t stats_samples = 1000;
  double stats_connection_prob = 0.8;

  SamplingConfig sampling;
  OneShotConfig oneshot;
  DnasConfig dnas;
  StudyConfig study;

  std::vector<std::filesystem::path> merge_inputs;
  std::filesystem::path scale_input;
  ScaleRule scale_rule = ScaleRule::EmbedFc3x;

  std::vector<std::filesystem::path> ledgers;
  std::string ne_column = "window_ne";
};

/// Throws ConfigError listing every invalid field. Relative file references
/// resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Seed chain used when a config does not describe its own: a production-like
/// linear -> compressed dot -> EmbedFC -> gating -> linear stack.
nlohmann::json default_seed_chain();

}  // namespace ctrnas::cli
