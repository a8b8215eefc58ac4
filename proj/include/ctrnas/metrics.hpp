#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

namespace ctrnas {

/// Entropy (nats) of a Bernoulli(p) label.
double bernoulli_entropy(double p);

/// Mean log loss over the entropy of the base rate. Throws MetricError unless 0 < p < 1.
double normalized_entropy(double logloss_mean, double base_rate);

/// model - baseline; negative is an improvement.
inline double ne_gain(double ne_model, double ne_baseline) { return ne_model - ne_baseline; }

/// Summed log loss of logits against 0/1 labels (stable form).
double logloss_sum(std::span<const double> logits, std::span<const double> labels);

/// NE of one batch with the batch's own label rate.
double batch_ne(std::span<const double> logits, std::span<const double> labels);

/// Running NE over a stream of batches.
class NeAccumulator {
 public:
  void add(double logloss_sum, std::size_t count, double positives);
  void add_batch(std::span<const double> logits, std::span<const double> labels);

  bool empty() const { return batches_.empty(); }
  std::size_t examples() const { return total_count_; }
  double total_ne() const;
  /// NE over the trailing batches that make up `fraction` of all examples
  /// (whole batches, taken until the count reaches the fraction), with the
  /// window's own label rate.
  double window_ne(double fraction = 0.25) const;

 private:
  struct Batch {
    double loss;
    std::size_t count;
    double positives;
  };
  std::deque<Batch> batches_;
  double total_loss_ = 0.0, total_pos_ = 0.0;
  std::size_t total_count_ = 0;
};

/// Kendall tau-b in O(n log n) (Knight's merge-sort algorithm). Returns 0 when
/// either input is constant. Throws ArgumentError on length mismatch or n < 2.
double kendall_tau(std::span<const double> xs, std::span<const double> ys);

struct ParetoPoint {
  double ne = 0.0;
  double flops = 0.0;
};

/// Indices of the non-dominated points in input order. A point is dominated
/// when another has no larger NE and FLOPs and is strictly better in one.
std::vector<std::size_t> pareto_front(std::span<const ParetoPoint> points);

}  // namespace ctrnas
