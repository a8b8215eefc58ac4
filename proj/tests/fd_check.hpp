#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/params.hpp"

namespace ctrnas::testing {

// Relative error with a small absolute floor so gradients that are zero up to
// rounding do not blow the ratio up.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central differences of a scalar loss over every entry of `leaves`. The
// builder receives Values bound to the current leaf tensors and returns the loss.
inline FdResult fd_check_leaves(std::vector<Tensor> leaves,
                                const std::function<Value(Graph&, const std::vector<Value>&)>& build,
                                double h = 1e-4) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Value> vs;
    for (const auto& t : leaves) vs.push_back(g.variable(t));
    Value loss = build(g, vs);
    g.backward(loss);
    for (auto v : vs) analytic.push_back(g.grad(v));
  }
  auto eval = [&]() {
    Graph g;
    std::vector<Value> vs;
    for (const auto& t : leaves) vs.push_back(g.variable(t));
    return build(g, vs).value().data[0];
  };
  FdResult r;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double x0 = leaves[l].data[i];
      leaves[l].data[i] = x0 + h;
      const double fp = eval();
      leaves[l].data[i] = x0 - h;
      const double fm = eval();
      leaves[l].data[i] = x0;
      const double num = (fp - fm) / (2 * h);
      r.max_rel = std::max(r.max_rel, rel_err(analytic[l].data[i], num));
      ++r.checked;
    }
  }
  return r;
}

// Same check over every entry of every parameter in a store.
inline FdResult fd_check_params(ParamStore& params, const std::function<Value(Graph&)>& build, double h = 1e-4) {
  params.zero_grad();
  {
    Graph g;
    Value loss = build(g);
    g.backward(loss);
  }
  FdResult r;
  for (auto& [name, p] : params) {
    const Tensor analytic = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value.data[i];
      p.value.data[i] = x0 + h;
      double fp, fm;
      {
        Graph g;
        fp = build(g).value().data[0];
      }
      p.value.data[i] = x0 - h;
      {
        Graph g;
        fm = build(g).value().data[0];
      }
      p.value.data[i] = x0;
      r.max_rel = std::max(r.max_rel, rel_err(analytic.data[i], (fp - fm) / (2 * h)));
      ++r.checked;
    }
  }
  params.zero_grad();
  return r;
}

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

}  // namespace ctrnas::testing
