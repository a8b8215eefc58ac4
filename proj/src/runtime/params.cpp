#include "ctrnas/params.hpp"

#include <cmath>
#include <fstream>

#include "ctrnas/errors.hpp"

namespace ctrnas {

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw TransferError("missing parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw TransferError("missing parameter '" + name + "'");
  return it->second;
}

Parameter& ParamStore::emplace(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.insert_or_assign(name, Parameter(std::move(value)));
  (void)inserted;
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

bool ParamStore::all_finite() const {
  for (const auto& [_, p] : params_)
    if (!p.value.all_finite()) return false;
  return true;
}

bool ParamStore::operator==(const ParamStore& o) const {
  if (params_.size() != o.params_.size()) return false;
  auto a = params_.begin();
  auto b = o.params_.begin();
  for (; a != params_.end(); ++a, ++b)
    if (a->first != b->first || a->second.value != b->second.value) return false;
  return true;
}

Tensor init_weight(const std::string& name, const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".gain")) return Tensor(shape, 1.0);
  if (ends_with(".bias")) return Tensor(shape, 0.0);
  Rng rng(substream_seed(seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(shape);
  for (double& v : t.data) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

void Adam::update(AdamMoments& mom, Tensor& value, const Tensor& grad, std::int64_t t) const {
  if (mom.m.shape != value.shape) {
    mom.m = Tensor(value.shape);
    mom.v = Tensor(value.shape);
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad.data[i];
    mom.m.data[i] = cfg_.beta1 * mom.m.data[i] + (1.0 - cfg_.beta1) * g;
    mom.v.data[i] = cfg_.beta2 * mom.v.data[i] + (1.0 - cfg_.beta2) * g * g;
    const double mhat = mom.m.data[i] / bc1;
    const double vhat = mom.v.data[i] / bc2;
    value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

void Adam::step(ParamStore& params) {
  for (const auto& [name, p] : params) {
    if (!p.touched) continue;
    if (p.grad.shape != p.value.shape) throw InternalError("gradient shape mismatch for '" + name + "'");
    if (!p.grad.all_finite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
  }
  ++step_;
  for (auto& [name, p] : params) {
    if (!p.touched) continue;
    auto& t = tensor_steps_[name];
    ++t;
    update(moments_[name], p.value, p.grad, t);
  }
  params.zero_grad();
}

void Adam::step_tensor(const std::string& key, Tensor& value, const Tensor& grad) {
  if (grad.shape != value.shape) throw DimensionError("adam: gradient shape mismatch for '" + key + "'");
  if (!grad.all_finite()) throw TrainingError("non-finite gradient for '" + key + "'");
  auto& t = tensor_steps_[key];
  ++t;
  step_ = std::max(step_, t);
  update(moments_[key], value, grad, t);
}

nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape}, {"values", t.data}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

nlohmann::json Adam::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, mom] : moments_) {
    m[k] = {{"m", tensor_to_json(mom.m)}, {"v", tensor_to_json(mom.v)}, {"t", tensor_steps_.at(k)}};
  }
  return {{"lr", cfg_.lr}, {"beta1", cfg_.beta1}, {"beta2", cfg_.beta2}, {"eps", cfg_.eps}, {"step", step_}, {"moments", m}};
}

Adam Adam::from_json(const nlohmann::json& j) {
  Adam a(AdamConfig{j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                    j.at("eps").get<double>()});
  a.step_ = j.at("step").get<std::int64_t>();
  for (const auto& [k, v] : j.at("moments").items()) {
    a.moments_[k] = AdamMoments{tensor_from_json(v.at("m")), tensor_from_json(v.at("v"))};
    a.tensor_steps_[k] = v.at("t").get<std::int64_t>();
  }
  return a;
}

nlohmann::json params_to_json(const ParamStore& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, param] : p) j[name] = tensor_to_json(param.value);
  return j;
}

ParamStore params_from_json(const nlohmann::json& j) {
  ParamStore p;
  for (const auto& [name, t] : j.items()) p.emplace(name, tensor_from_json(t));
  return p;
}

void save_params(const ParamStore& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << params_to_json(p).dump() << '\n';
}

ParamStore load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return params_from_json(nlohmann::json::parse(in));
}

}  // namespace ctrnas
