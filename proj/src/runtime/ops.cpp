#include <cmath>
#include <string>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/errors.hpp"

namespace ctrnas {
namespace {

Graph& graph_of(Value a) {
  if (!a.valid()) throw InternalError("operation on an empty Value");
  return *a.graph();
}

Graph& same_graph(Value a, Value b) {
  if (a.graph() != b.graph()) throw InternalError("values from different graphs");
  return graph_of(a);
}

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
  throw DimensionError(op + ": " + what);
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) dim_error(op, "expected rank " + std::to_string(r) + ", got " + shape_string(t.shape));
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double act_forward(double a, Activation act) {
  switch (act) {
    case Activation::Relu: return a > 0 ? a : 0.0;
    case Activation::Sigmoid: return sigmoid_scalar(a);
    case Activation::Identity: break;
  }
  return a;
}

// Derivative expressed through the activation output y (and input a for relu).
double act_derivative(double a, double y, Activation act) {
  switch (act) {
    case Activation::Relu: return a > 0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Identity: break;
  }
  return 1.0;
}

std::uint64_t act_flops(Activation act) {
  switch (act) {
    case Activation::Relu: return 1;
    case Activation::Sigmoid: return 4;
    case Activation::Identity: break;
  }
  return 0;
}

}  // namespace

Value matmul(Value a, Value w, std::optional<Value> bias) {
  Graph& g = same_graph(a, w);
  const Tensor& A = a.value();
  const Tensor& W = w.value();
  require_rank(A, 2, "matmul");
  require_rank(W, 2, "matmul");
  const std::size_t B = A.dim(0), K = A.dim(1), M = W.dim(1);
  if (W.dim(0) != K) dim_error("matmul", "inner dims disagree: " + shape_string(A.shape) + " * " + shape_string(W.shape));
  if (bias) {
    same_graph(a, *bias);
    if (bias->value().shape != Shape{M}) dim_error("matmul", "bias shape " + shape_string(bias->value().shape));
  }
  Tensor Y({B, M});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t m = 0; m < M; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A.data[b * K + k] * W.data[k * M + m];
      if (bias) acc += bias->value().data[m];
      Y.data[b * M + m] = acc;
    }
  }
  g.count(B * M * (2 * K + (bias ? 1 : 0)));
  std::vector<int> ins{a.id(), w.id()};
  if (bias) ins.push_back(bias->id());
  const int ia = a.id(), iw = w.id(), ib = bias ? bias->id() : -1;
  return g.push(std::move(Y), ins, [ia, iw, ib, B, K, M](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& A = gr.value_of(ia);
    const Tensor& W = gr.value_of(iw);
    if (gr.needs_grad(ia)) {
      Tensor& dA = gr.grad_of(ia);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::size_t m = 0; m < M; ++m) acc += dY.data[b * M + m] * W.data[k * M + m];
          dA.data[b * K + k] += acc;
        }
    }
    if (gr.needs_grad(iw)) {
      Tensor& dW = gr.grad_of(iw);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
          const double av = A.data[b * K + k];
          if (av == 0.0) continue;
          for (std::size_t m = 0; m < M; ++m) dW.data[k * M + m] += av * dY.data[b * M + m];
        }
    }
    if (ib >= 0 && gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m) dB.data[m] += dY.data[b * M + m];
    }
  });
}

Value bmm(Value a, Value b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& Bt = b.value();
  require_rank(A, 3, "bmm");
  require_rank(Bt, 3, "bmm");
  const std::size_t NB = A.dim(0), N = A.dim(1), D = A.dim(2), M = Bt.dim(2);
  if (Bt.dim(0) != NB) dim_error("bmm", "batch sizes differ");
  if (Bt.dim(1) != D) dim_error("bmm", "inner dims disagree: " + shape_string(A.shape) + " * " + shape_string(Bt.shape));
  Tensor Y({NB, N, M});
  for (std::size_t s = 0; s < NB; ++s)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < M; ++m) {
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += A.data[(s * N + n) * D + d] * Bt.data[(s * D + d) * M + m];
        Y.data[(s * N + n) * M + m] = acc;
      }
  g.count(NB * N * M * 2 * D);
  const int ia = a.id(), ib = b.id();
  return g.push(std::move(Y), {ia, ib}, [ia, ib, NB, N, D, M](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& A = gr.value_of(ia);
    const Tensor& Bt = gr.value_of(ib);
    if (gr.needs_grad(ia)) {
      Tensor& dA = gr.grad_of(ia);
      for (std::size_t s = 0; s < NB; ++s)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (std::size_t m = 0; m < M; ++m) acc += dY.data[(s * N + n) * M + m] * Bt.data[(s * D + d) * M + m];
            dA.data[(s * N + n) * D + d] += acc;
          }
    }
    if (gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t s = 0; s < NB; ++s)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t m = 0; m < M; ++m) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) acc += A.data[(s * N + n) * D + d] * dY.data[(s * N + n) * M + m];
            dB.data[(s * D + d) * M + m] += acc;
          }
    }
  });
}

Value transpose12(Value a) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_rank(A, 3, "transpose12");
  const std::size_t NB = A.dim(0), N = A.dim(1), M = A.dim(2);
  Tensor Y({NB, M, N});
  for (std::size_t s = 0; s < NB; ++s)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < M; ++m) Y.data[(s * M + m) * N + n] = A.data[(s * N + n) * M + m];
  const int ia = a.id();
  return g.push(std::move(Y), {ia}, [ia, NB, N, M](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    Tensor& dA = gr.grad_of(ia);
    for (std::size_t s = 0; s < NB; ++s)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < M; ++m) dA.data[(s * N + n) * M + m] += dY.data[(s * M + m) * N + n];
  });
}

Value mix_middle(Value x, Value w, std::optional<Value> bias) {
  Graph& g = same_graph(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_rank(X, 3, "mix_middle");
  require_rank(W, 2, "mix_middle");
  const std::size_t NB = X.dim(0), N = X.dim(1), D = X.dim(2), M = W.dim(0);
  if (W.dim(1) != N) dim_error("mix_middle", "weight " + shape_string(W.shape) + " vs input " + shape_string(X.shape));
  if (bias && bias->value().shape != Shape{M}) dim_error("mix_middle", "bias shape " + shape_string(bias->value().shape));
  Tensor Y({NB, M, D});
  for (std::size_t s = 0; s < NB; ++s)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) acc += W.data[m * N + n] * X.data[(s * N + n) * D + d];
        if (bias) acc += bias->value().data[m];
        Y.data[(s * M + m) * D + d] = acc;
      }
  g.count(NB * M * D * (2 * N + (bias ? 1 : 0)));
  std::vector<int> ins{x.id(), w.id()};
  if (bias) ins.push_back(bias->id());
  const int ix = x.id(), iw = w.id(), ib = bias ? bias->id() : -1;
  return g.push(std::move(Y), ins, [ix, iw, ib, NB, N, D, M](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& X = gr.value_of(ix);
    const Tensor& W = gr.value_of(iw);
    if (gr.needs_grad(ix)) {
      Tensor& dX = gr.grad_of(ix);
      for (std::size_t s = 0; s < NB; ++s)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (std::size_t m = 0; m < M; ++m) acc += W.data[m * N + n] * dY.data[(s * M + m) * D + d];
            dX.data[(s * N + n) * D + d] += acc;
          }
    }
    if (gr.needs_grad(iw)) {
      Tensor& dW = gr.grad_of(iw);
      for (std::size_t s = 0; s < NB; ++s)
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += dY.data[(s * M + m) * D + d] * X.data[(s * N + n) * D + d];
            dW.data[m * N + n] += acc;
          }
    }
    if (ib >= 0 && gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t s = 0; s < NB; ++s)
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t d = 0; d < D; ++d) dB.data[m] += dY.data[(s * M + m) * D + d];
    }
  });
}

Value layer_norm_act(Value x, Value gain, Value bias, Activation act, std::optional<Value> weights, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  const Tensor& X = x.value();
  if (X.rank() < 2 || X.rank() > 3) dim_error("layer_norm_act", "expected rank 2 or 3, got " + shape_string(X.shape));
  const std::size_t S = X.shape.back();
  if (S == 0) dim_error("layer_norm_act", "normalized axis has size 0");
  const std::size_t rows = X.size() / S;
  if (gain.value().shape != Shape{S} || bias.value().shape != Shape{S})
    dim_error("layer_norm_act", "gain/bias must have length " + std::to_string(S));
  const Tensor* Wt = nullptr;
  if (weights) {
    same_graph(x, *weights);
    if (weights->value().shape != Shape{S}) dim_error("layer_norm_act", "weights must have length " + std::to_string(S));
    Wt = &weights->value();
  }
  const Tensor& G = gain.value();
  const Tensor& Bv = bias.value();

  Tensor Y(X.shape);
  Tensor Z(X.shape);
  std::vector<double> means(rows), stds(rows);
  double wsum = 0.0;
  if (Wt != nullptr) {
    for (std::size_t j = 0; j < S; ++j) wsum += Wt->data[j];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &X.data[r * S];
    double mu = 0.0, var = 0.0;
    if (Wt == nullptr) {
      for (std::size_t j = 0; j < S; ++j) mu += xr[j];
      mu /= static_cast<double>(S);
      for (std::size_t j = 0; j < S; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(S);
    } else if (wsum > 0.0) {
      for (std::size_t j = 0; j < S; ++j) mu += Wt->data[j] * xr[j];
      mu /= wsum;
      for (std::size_t j = 0; j < S; ++j) var += Wt->data[j] * ((xr[j] - mu) * (xr[j] - mu));
      var /= wsum;
    }
    const double sd = std::sqrt(var + eps);
    means[r] = mu;
    stds[r] = sd;
    for (std::size_t j = 0; j < S; ++j) {
      const double z = (xr[j] - mu) / sd;
      Z.data[r * S + j] = z;
      Y.data[r * S + j] = act_forward(G.data[j] * z + Bv.data[j], act);
    }
  }
  g.count(rows * (7 * S + 4) + rows * S * act_flops(act));

  std::vector<int> ins{x.id(), gain.id(), bias.id()};
  if (weights) ins.push_back(weights->id());
  const int ix = x.id(), ig = gain.id(), ibias = bias.id(), iw = weights ? weights->id() : -1;
  return g.push(std::move(Y), ins,
                [ix, ig, ibias, iw, act, rows, S, wsum, Z = std::move(Z), means = std::move(means),
                 stds = std::move(stds)](Graph& gr, int self) {
                  const Tensor& dY = gr.grad_of(self);
                  const Tensor& Yv = gr.value_of(self);
                  const Tensor& X = gr.value_of(ix);
                  const Tensor& G = gr.value_of(ig);
                  const Tensor* Wt = iw >= 0 ? &gr.value_of(iw) : nullptr;
                  const Tensor& Bv = gr.value_of(ibias);
                  Tensor* dX = gr.needs_grad(ix) ? &gr.grad_of(ix) : nullptr;
                  Tensor* dG = gr.needs_grad(ig) ? &gr.grad_of(ig) : nullptr;
                  Tensor* dB = gr.needs_grad(ibias) ? &gr.grad_of(ibias) : nullptr;
                  Tensor* dW = (iw >= 0 && gr.needs_grad(iw)) ? &gr.grad_of(iw) : nullptr;
                  std::vector<double> dz(S);
                  const double n = Wt == nullptr ? static_cast<double>(S) : wsum;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double mu = means[r], sd = stds[r];
                    double sum_dz = 0.0, sum_dz_z = 0.0;
                    for (std::size_t j = 0; j < S; ++j) {
                      const std::size_t idx = r * S + j;
                      const double z = Z.data[idx];
                      const double pre = G.data[j] * z + Bv.data[j];
                      const double da = dY.data[idx] * act_derivative(pre, Yv.data[idx], act);
                      if (dG) dG->data[j] += da * z;
                      if (dB) dB->data[j] += da;
                      dz[j] = da * G.data[j];
                      sum_dz += dz[j];
                      sum_dz_z += dz[j] * z;
                    }
                    if (!dX && !dW) continue;
                    if (n <= 0.0) continue;  // all weights zero: statistics are constants
                    const double dmu_direct = -sum_dz / sd;
                    const double dsd = -sum_dz_z / sd;
                    const double dvar = dsd / (2.0 * sd);
                    const double* xr = &X.data[r * S];
                    double sum_we = 0.0;
                    for (std::size_t j = 0; j < S; ++j) sum_we += (Wt ? Wt->data[j] : 1.0) * (xr[j] - mu);
                    const double dmu = dmu_direct + dvar * (-2.0 * sum_we / n);
                    double v_noeps = 0.0;
                    if (dW) {
                      for (std::size_t j = 0; j < S; ++j) v_noeps += Wt->data[j] * (xr[j] - mu) * (xr[j] - mu);
                      v_noeps /= n;
                    }
                    for (std::size_t j = 0; j < S; ++j) {
                      const double w = Wt ? Wt->data[j] : 1.0;
                      const double e = xr[j] - mu;
                      if (dX) dX->data[r * S + j] += dz[j] / sd + dvar * 2.0 * w * e / n + dmu * w / n;
                      if (dW) dW->data[j] += dvar * (e * e - v_noeps) / n + dmu * e / n;
                    }
                  }
                });
}

Value zero_pad_sum(std::span<const Value> xs, std::size_t min_width) {
  if (xs.empty()) throw ArgumentError("zero_pad_sum: empty input list");
  Graph& g = graph_of(xs[0]);
  const Tensor& first = xs[0].value();
  if (first.rank() < 1 || first.rank() > 2) dim_error("zero_pad_sum", "expected rank 1 or 2");
  const std::size_t rank = first.rank();
  const std::size_t rows = rank == 2 ? first.dim(0) : 1;
  std::size_t width = min_width;
  std::vector<int> ins;
  std::vector<std::size_t> widths;
  for (const auto& v : xs) {
    same_graph(xs[0], v);
    const Tensor& t = v.value();
    if (t.rank() != rank || (rank == 2 && t.dim(0) != rows)) dim_error("zero_pad_sum", "inputs disagree on leading dims");
    width = std::max(width, t.shape.back());
    widths.push_back(t.shape.back());
    ins.push_back(v.id());
  }
  Tensor Y(rank == 2 ? Shape{rows, width} : Shape{width});
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& t = xs[i].value();
    const std::size_t w = widths[i];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) {
        if (i == 0)
          Y.data[r * width + j] = t.data[r * w + j];
        else
          Y.data[r * width + j] += t.data[r * w + j];
      }
    if (i > 0) flops += rows * w;
  }
  g.count(flops);
  return g.push(std::move(Y), ins, [ins, widths, rows, width](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (!gr.needs_grad(ins[i])) continue;
      Tensor& dX = gr.grad_of(ins[i]);
      const std::size_t w = widths[i];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) dX.data[r * w + j] += dY.data[r * width + j];
    }
  });
}

Value concat_last(std::span<const Value> xs) {
  if (xs.empty()) throw ArgumentError("concat_last: empty input list");
  Graph& g = graph_of(xs[0]);
  const std::size_t rank = xs[0].value().rank();
  if (rank < 1 || rank > 2) dim_error("concat_last", "expected rank 1 or 2");
  const std::size_t rows = rank == 2 ? xs[0].value().dim(0) : 1;
  std::size_t width = 0;
  std::vector<int> ins;
  std::vector<std::size_t> widths;
  for (const auto& v : xs) {
    same_graph(xs[0], v);
    const Tensor& t = v.value();
    if (t.rank() != rank || (rank == 2 && t.dim(0) != rows)) dim_error("concat_last", "inputs disagree on leading dims");
    widths.push_back(t.shape.back());
    width += t.shape.back();
    ins.push_back(v.id());
  }
  Tensor Y(rank == 2 ? Shape{rows, width} : Shape{width});
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& t = xs[i].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[i]; ++j) Y.data[r * width + off + j] = t.data[r * widths[i] + j];
    off += widths[i];
  }
  return g.push(std::move(Y), ins, [ins, widths, rows, width](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (gr.needs_grad(ins[i])) {
        Tensor& dX = gr.grad_of(ins[i]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[i]; ++j) dX.data[r * widths[i] + j] += dY.data[r * width + off + j];
      }
      off += widths[i];
    }
  });
}

Value concat_mid(std::span<const Value> xs) {
  if (xs.empty()) throw ArgumentError("concat_mid: empty input list");
  Graph& g = graph_of(xs[0]);
  const Tensor& f = xs[0].value();
  require_rank(f, 3, "concat_mid");
  const std::size_t NB = f.dim(0), D = f.dim(2);
  std::size_t total = 0;
  std::vector<int> ins;
  std::vector<std::size_t> counts;
  for (const auto& v : xs) {
    same_graph(xs[0], v);
    const Tensor& t = v.value();
    require_rank(t, 3, "concat_mid");
    if (t.dim(0) != NB || t.dim(2) != D) dim_error("concat_mid", "mismatched batch or embedding dim: " + shape_string(t.shape));
    counts.push_back(t.dim(1));
    total += t.dim(1);
    ins.push_back(v.id());
  }
  Tensor Y({NB, total, D});
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& t = xs[i].value();
    for (std::size_t s = 0; s < NB; ++s)
      for (std::size_t n = 0; n < counts[i]; ++n)
        for (std::size_t d = 0; d < D; ++d) Y.data[(s * total + off + n) * D + d] = t.data[(s * counts[i] + n) * D + d];
    off += counts[i];
  }
  return g.push(std::move(Y), ins, [ins, counts, NB, D, total](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (gr.needs_grad(ins[i])) {
        Tensor& dX = gr.grad_of(ins[i]);
        for (std::size_t s = 0; s < NB; ++s)
          for (std::size_t n = 0; n < counts[i]; ++n)
            for (std::size_t d = 0; d < D; ++d)
              dX.data[(s * counts[i] + n) * D + d] += dY.data[(s * total + off + n) * D + d];
      }
      off += counts[i];
    }
  });
}

Value reshape(Value x, Shape s) {
  Graph& g = graph_of(x);
  if (shape_numel(s) != x.value().size())
    dim_error("reshape", shape_string(x.value().shape) + " -> " + shape_string(s));
  Tensor Y(std::move(s), x.value().data);
  const int ix = x.id();
  return g.push(std::move(Y), {ix}, [ix](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    Tensor& dX = gr.grad_of(ix);
    for (std::size_t i = 0; i < dY.size(); ++i) dX.data[i] += dY.data[i];
  });
}

Value scale_axis(Value x, Value v, std::size_t axis) {
  Graph& g = same_graph(x, v);
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  if (axis >= X.rank()) dim_error("scale_axis", "axis out of range");
  if (V.rank() != 1 || V.dim(0) != X.dim(axis))
    dim_error("scale_axis", "vector " + shape_string(V.shape) + " vs axis " + std::to_string(axis) + " of " + shape_string(X.shape));
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < X.rank(); ++i) inner *= X.dim(i);
  const std::size_t len = X.dim(axis);
  const std::size_t outer = X.size() / (inner * len);
  Tensor Y(X.shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (o * len + a) * inner + i;
        Y.data[idx] = X.data[idx] * V.data[a];
      }
  g.count(X.size());
  const int ix = x.id(), iv = v.id();
  return g.push(std::move(Y), {ix, iv}, [ix, iv, outer, len, inner](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& X = gr.value_of(ix);
    const Tensor& V = gr.value_of(iv);
    Tensor* dX = gr.needs_grad(ix) ? &gr.grad_of(ix) : nullptr;
    Tensor* dV = gr.needs_grad(iv) ? &gr.grad_of(iv) : nullptr;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < len; ++a)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (o * len + a) * inner + i;
          if (dX) dX->data[idx] += dY.data[idx] * V.data[a];
          if (dV) dV->data[a] += dY.data[idx] * X.data[idx];
        }
  });
}

Value scale(Value x, Value s) {
  Graph& g = same_graph(x, s);
  if (s.value().size() != 1) dim_error("scale", "scalar expected, got " + shape_string(s.value().shape));
  const double c = s.value().data[0];
  Tensor Y(x.value().shape);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] = x.value().data[i] * c;
  g.count(Y.size());
  const int ix = x.id(), is = s.id();
  return g.push(std::move(Y), {ix, is}, [ix, is](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& X = gr.value_of(ix);
    const double c = gr.value_of(is).data[0];
    if (gr.needs_grad(ix)) {
      Tensor& dX = gr.grad_of(ix);
      for (std::size_t i = 0; i < dY.size(); ++i) dX.data[i] += dY.data[i] * c;
    }
    if (gr.needs_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < dY.size(); ++i) acc += dY.data[i] * X.data[i];
      gr.grad_of(is).data[0] += acc;
    }
  });
}

namespace {

enum class Binary { Add, Sub, Mul };

Value binary(Value a, Value b, Binary kind, const char* name) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape != B.shape) dim_error(name, shape_string(A.shape) + " vs " + shape_string(B.shape));
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < Y.size(); ++i) {
    switch (kind) {
      case Binary::Add: Y.data[i] = A.data[i] + B.data[i]; break;
      case Binary::Sub: Y.data[i] = A.data[i] - B.data[i]; break;
      case Binary::Mul: Y.data[i] = A.data[i] * B.data[i]; break;
    }
  }
  g.count(Y.size());
  const int ia = a.id(), ib = b.id();
  return g.push(std::move(Y), {ia, ib}, [ia, ib, kind](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& A = gr.value_of(ia);
    const Tensor& B = gr.value_of(ib);
    if (gr.needs_grad(ia)) {
      Tensor& dA = gr.grad_of(ia);
      for (std::size_t i = 0; i < dY.size(); ++i) dA.data[i] += kind == Binary::Mul ? dY.data[i] * B.data[i] : dY.data[i];
    }
    if (gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t i = 0; i < dY.size(); ++i) {
        switch (kind) {
          case Binary::Add: dB.data[i] += dY.data[i]; break;
          case Binary::Sub: dB.data[i] -= dY.data[i]; break;
          case Binary::Mul: dB.data[i] += dY.data[i] * A.data[i]; break;
        }
      }
    }
  });
}

// Element-wise map with derivative f'(x, y).
template <class Fwd, class Deriv>
Value unary(Value x, std::uint64_t flops_per_elem, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] = fwd(X.data[i]);
  g.count(Y.size() * flops_per_elem);
  const int ix = x.id();
  return g.push(std::move(Y), {ix}, [ix, deriv](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& X = gr.value_of(ix);
    const Tensor& Y = gr.value_of(self);
    Tensor& dX = gr.grad_of(ix);
    for (std::size_t i = 0; i < dY.size(); ++i) dX.data[i] += dY.data[i] * deriv(X.data[i], Y.data[i]);
  });
}

}  // namespace

Value add(Value a, Value b) { return binary(a, b, Binary::Add, "add"); }
Value sub(Value a, Value b) { return binary(a, b, Binary::Sub, "sub"); }
Value mul(Value a, Value b) { return binary(a, b, Binary::Mul, "mul"); }

Value add_scalar(Value x, double c) {
  return unary(x, 1, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Value mul_scalar(Value x, double c) {
  return unary(x, 1, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Value sigmoid(Value x) {
  return unary(x, 4, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Value relu(Value x) {
  return unary(x, 1, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Value log(Value x) {
  return unary(x, 1, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Value abs(Value x) {
  return unary(x, 1, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Value apply_activation(Value x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: break;
  }
  return x;
}

Value sum(Value x) {
  Graph& g = graph_of(x);
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  g.count(x.value().size());
  const int ix = x.id();
  return g.push(Tensor({1}, acc), {ix}, [ix](Graph& gr, int self) {
    const double d = gr.grad_of(self).data[0];
    Tensor& dX = gr.grad_of(ix);
    for (double& v : dX.data) v += d;
  });
}

Value mean(Value x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) dim_error("mean", "empty tensor");
  return mul_scalar(sum(x), 1.0 / n);
}

Value softmax(Value x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 1, "softmax");
  if (X.size() == 0) dim_error("softmax", "empty vector");
  double mx = X.data[0];
  for (double v : X.data) mx = std::max(mx, v);
  Tensor Y(X.shape);
  double z = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) z += (Y.data[i] = std::exp(X.data[i] - mx));
  for (double& v : Y.data) v /= z;
  const int ix = x.id();
  return g.push(std::move(Y), {ix}, [ix](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& Y = gr.value_of(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < Y.size(); ++i) dot += dY.data[i] * Y.data[i];
    Tensor& dX = gr.grad_of(ix);
    for (std::size_t i = 0; i < Y.size(); ++i) dX.data[i] += Y.data[i] * (dY.data[i] - dot);
  });
}

Value bce_with_logits(Value logits, std::span<const double> labels) {
  Graph& g = graph_of(logits);
  const Tensor& Z = logits.value();
  if (Z.rank() != 2 || Z.dim(1) != 1) dim_error("bce_with_logits", "logits must be [B x 1], got " + shape_string(Z.shape));
  const std::size_t B = Z.dim(0);
  if (labels.size() != B) dim_error("bce_with_logits", "label count differs from batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ArgumentError("bce_with_logits: label " + std::to_string(y) + " is not binary");
    const double z = Z.data[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  std::vector<double> ys(labels.begin(), labels.end());
  const int iz = logits.id();
  return g.push(Tensor({1}, total / static_cast<double>(B)), {iz}, [iz, ys = std::move(ys)](Graph& gr, int self) {
    const double d = gr.grad_of(self).data[0];
    const Tensor& Z = gr.value_of(iz);
    Tensor& dZ = gr.grad_of(iz);
    const auto B = static_cast<double>(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) dZ.data[i] += d * (sigmoid_scalar(Z.data[i]) - ys[i]) / B;
  });
}

Value repeat_each(Value v, std::size_t times) {
  Graph& g = graph_of(v);
  const Tensor& V = v.value();
  require_rank(V, 1, "repeat_each");
  Tensor Y({V.size() * times});
  for (std::size_t i = 0; i < V.size(); ++i)
    for (std::size_t t = 0; t < times; ++t) Y.data[i * times + t] = V.data[i];
  const int iv = v.id();
  return g.push(std::move(Y), {iv}, [iv, times](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    Tensor& dV = gr.grad_of(iv);
    for (std::size_t i = 0; i < dV.size(); ++i)
      for (std::size_t t = 0; t < times; ++t) dV.data[i] += dY.data[i * times + t];
  });
}

Value outer_flat(Value a, Value b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 1, "outer_flat");
  require_rank(B, 1, "outer_flat");
  const std::size_t n = A.size(), m = B.size();
  Tensor Y({n * m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) Y.data[i * m + j] = A.data[i] * B.data[j];
  g.count(n * m);
  const int ia = a.id(), ib = b.id();
  return g.push(std::move(Y), {ia, ib}, [ia, ib, n, m](Graph& gr, int self) {
    const Tensor& dY = gr.grad_of(self);
    const Tensor& A = gr.value_of(ia);
    const Tensor& B = gr.value_of(ib);
    if (gr.needs_grad(ia)) {
      Tensor& dA = gr.grad_of(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) dA.data[i] += dY.data[i * m + j] * B.data[j];
    }
    if (gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) dB.data[j] += dY.data[i * m + j] * A.data[i];
    }
  });
}

Value pick(Value v, std::size_t k) {
  Graph& g = graph_of(v);
  const Tensor& V = v.value();
  require_rank(V, 1, "pick");
  if (k >= V.size()) dim_error("pick", "index out of range");
  const int iv = v.id();
  return g.push(Tensor({1}, V.data[k]), {iv}, [iv, k](Graph& gr, int self) {
    gr.grad_of(iv).data[k] += gr.grad_of(self).data[0];
  });
}

}  // namespace ctrnas
