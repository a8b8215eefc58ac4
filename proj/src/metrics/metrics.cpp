#include "ctrnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctrnas/errors.hpp"

namespace ctrnas {

double bernoulli_entropy(double p) {
  if (!(p > 0.0 && p < 1.0)) throw MetricError("NE undefined for base rate " + std::to_string(p));
  return -(p * std::log(p) + (1.0 - p) * std::log1p(-p));
}

double normalized_entropy(double logloss_mean, double base_rate) { return logloss_mean / bernoulli_entropy(base_rate); }

double logloss_sum(std::span<const double> logits, std::span<const double> labels) {
  if (logits.size() != labels.size()) throw ArgumentError("logloss: logits and labels differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    // -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - y z + log(1 + e^-|z|)
    s += std::max(z, 0.0) - labels[i] * z + std::log1p(std::exp(-std::abs(z)));
  }
  return s;
}

double batch_ne(std::span<const double> logits, std::span<const double> labels) {
  if (labels.empty()) throw MetricError("batch_ne: empty batch");
  const double n = static_cast<double>(labels.size());
  const double pos = std::accumulate(labels.begin(), labels.end(), 0.0);
  return normalized_entropy(logloss_sum(logits, labels) / n, pos / n);
}

void NeAccumulator::add(double loss, std::size_t count, double positives) {
  if (count == 0) return;
  batches_.push_back({loss, count, positives});
  total_loss_ += loss;
  total_count_ += count;
  total_pos_ += positives;
}

void NeAccumulator::add_batch(std::span<const double> logits, std::span<const double> labels) {
  add(logloss_sum(logits, labels), labels.size(), std::accumulate(labels.begin(), labels.end(), 0.0));
}

double NeAccumulator::total_ne() const {
  if (empty()) throw MetricError("NE of an empty accumulator");
  const double n = static_cast<double>(total_count_);
  return normalized_entropy(total_loss_ / n, total_pos_ / n);
}

double NeAccumulator::window_ne(double fraction) const {
  if (empty()) throw MetricError("window NE of an empty accumulator");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("window fraction must lie in (0, 1]");
  const double target = fraction * static_cast<double>(total_count_);
  double loss = 0.0, pos = 0.0;
  std::size_t count = 0;
  for (auto it = batches_.rbegin(); it != batches_.rend() && static_cast<double>(count) < target; ++it) {
    loss += it->loss;
    pos += it->positives;
    count += it->count;
  }
  const double n = static_cast<double>(count);
  return normalized_entropy(loss / n, pos / n);
}

namespace {

// Merge sort that returns the number of inversions (swaps).
std::uint64_t sort_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = sort_count(v, buf, lo, mid) + sort_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// Sum over runs of equal values of run*(run-1)/2, on a sorted range.
template <class Eq>
std::uint64_t tie_pairs(std::size_t n, Eq eq) {
  std::uint64_t t = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && eq(i - 1, i)) {
      ++run;
    } else {
      t += run * (run - 1) / 2;
      run = 1;
    }
  }
  return t;
}

}  // namespace

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("kendall_tau: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw ArgumentError("kendall_tau: need at least two points");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b] || (xs[a] == xs[b] && ys[a] < ys[b]); });
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = tie_pairs(n, [&](std::size_t a, std::size_t b) { return xs[idx[a]] == xs[idx[b]]; });
  const std::uint64_t n3 =
      tie_pairs(n, [&](std::size_t a, std::size_t b) { return xs[idx[a]] == xs[idx[b]] && ys[idx[a]] == ys[idx[b]]; });
  std::vector<double> y(n), buf(n);
  for (std::size_t k = 0; k < n; ++k) y[k] = ys[idx[k]];
  const std::uint64_t swaps = sort_count(y, buf, 0, n);
  const std::uint64_t n2 = tie_pairs(n, [&](std::size_t a, std::size_t b) { return y[a] == y[b]; });
  const double denom = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  if (denom == 0.0) return 0.0;
  const double num = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) + static_cast<double>(n3) -
                     2.0 * static_cast<double>(swaps);
  return std::clamp(num / denom, -1.0, 1.0);
}

std::vector<std::size_t> pareto_front(std::span<const ParetoPoint> points) {
  const std::size_t n = points.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return points[a].flops < points[b].flops || (points[a].flops == points[b].flops && points[a].ne < points[b].ne);
  });
  std::vector<std::size_t> front;
  double best = INFINITY;  // lowest NE among strictly cheaper points
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && points[idx[end]].flops == points[idx[k]].flops) ++end;
    const double group_min = points[idx[k]].ne;
    if (group_min < best)
      for (std::size_t m = k; m < end && points[idx[m]].ne == group_min; ++m) front.push_back(idx[m]);
    best = std::min(best, group_min);
    k = end;
  }
  std::sort(front.begin(), front.end());
  return front;
}

}  // namespace ctrnas
