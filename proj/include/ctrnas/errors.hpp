#pragma once

#include <stdexcept>
#include <string>

namespace ctrnas {

// Error taxonomy shared by all modules. Each maps to one failure class of the
// public contracts so callers (and the CLI exit-code mapping) can tell them apart.

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricError : std::domain_error {
  using std::domain_error::domain_error;
};

struct GenomeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TransferError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace ctrnas
