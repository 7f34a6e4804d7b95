#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vlarl/rng.hpp"

namespace vlarl {

struct CurriculumConfig {
  double alpha = 0.1;
  double tau = 0.25;
  double prior = 0.5;
  /// Ignore success rates and sample tasks uniformly.
  bool uniform = false;

  friend bool operator==(const CurriculumConfig&, const CurriculumConfig&) = default;
};

/// Per-task exponential moving average of episode success, driving the
/// sampling weights exp((0.5 - s_j) / tau).
class SuccessTracker {
 public:
  SuccessTracker() = default;
  SuccessTracker(std::size_t num_tasks, CurriculumConfig cfg);

  void update(std::size_t task, bool success);

  std::size_t size() const noexcept { return rates_.size(); }
  const CurriculumConfig& config() const noexcept { return cfg_; }
  double rate(std::size_t task) const;
  std::uint64_t count(std::size_t task) const;
  const std::vector<double>& rates() const noexcept { return rates_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  /// Sampling distribution; sums to 1.
  std::vector<double> probabilities() const;

  /// Replaces the tracked statistics, e.g. when loading a checkpoint.
  void restore(std::vector<double> rates, std::vector<std::uint64_t> counts);

  friend bool operator==(const SuccessTracker&, const SuccessTracker&) = default;

 private:
  CurriculumConfig cfg_;
  std::vector<double> rates_;
  std::vector<std::uint64_t> counts_;
};

/// Inverse-CDF draw from `probs` with one uniform variate.
std::size_t sample_index(const std::vector<double>& probs, CounterRng& rng);

}  // namespace vlarl
