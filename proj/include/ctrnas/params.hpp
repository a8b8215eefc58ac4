#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/rng.hpp"

namespace ctrnas {

/// Hierarchically named parameters ("choice.3.linear.weight"). Ordered so that
/// iteration and serialization are deterministic.
class ParamStore {
 public:
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& emplace(const std::string& name, Tensor value);
  std::size_t total_size() const;
  void zero_grad();
  bool all_finite() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  bool operator==(const ParamStore& o) const;

 private:
  std::map<std::string, Parameter> params_;
};

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices
/// ([fan_in x fan_out] or, for middle-axis mixes, [out x fan_in]), zeros for
/// biases, ones for layer-norm gains. Each tensor is drawn from a sub-stream
/// keyed by its name, so init does not depend on creation order.
Tensor init_weight(const std::string& name, const Shape& shape, std::size_t fan_in, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One bias-corrected Adam update of every touched parameter; clears grads.
  /// Throws TrainingError (without modifying anything) on a non-finite gradient.
  void step(ParamStore& params);
  /// Same update for a single tensor, used by optimizers over non-store arrays.
  void step_tensor(const std::string& key, Tensor& value, const Tensor& grad);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

  nlohmann::json to_json() const;
  static Adam from_json(const nlohmann::json& j);

 private:
  void update(AdamMoments& mom, Tensor& value, const Tensor& grad, std::int64_t t) const;

  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, AdamMoments> moments_;
  std::map<std::string, std::int64_t> tensor_steps_;
};

// Parameter checkpoints: portable JSON map name -> {shape, values}. Doubles are
// written with round-trip precision so load(save(x)) == x exactly.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const ParamStore& p);
ParamStore params_from_json(const nlohmann::json& j);
void save_params(const ParamStore& p, const std::filesystem::path& path);
ParamStore load_params(const std::filesystem::path& path);

}  // namespace ctrnas
