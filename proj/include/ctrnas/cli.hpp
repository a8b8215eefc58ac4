#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctrnas::cli {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

/// Parses the command line (without the program name) and runs one subcommand.
/// Diagnostics go to `err`; short progress lines go to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 16 hex digits of FNV-1a over the compact serialization.
std::string config_hash(const nlohmann::json& config);

}  // namespace ctrnas::cli
