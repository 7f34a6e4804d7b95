#include "vlarl/curriculum.hpp"

#include <algorithm>
#include <cmath>

#include "vlarl/error.hpp"

namespace vlarl {

SuccessTracker::SuccessTracker(std::size_t num_tasks, CurriculumConfig cfg)
    : cfg_(cfg), rates_(num_tasks, cfg.prior), counts_(num_tasks, 0) {
  if (num_tasks == 0) throw invalid_argument("curriculum needs at least one task");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw config_error("curriculum alpha must be in (0, 1]");
  if (!(cfg.tau > 0.0)) throw config_error("curriculum tau must be positive");
  if (!(cfg.prior >= 0.0 && cfg.prior <= 1.0)) throw config_error("curriculum prior must be in [0, 1]");
}

void SuccessTracker::update(std::size_t task, bool success) {
  if (task >= rates_.size()) throw invalid_argument("unknown task " + std::to_string(task));
  rates_[task] = (1.0 - cfg_.alpha) * rates_[task] + cfg_.alpha * (success ? 1.0 : 0.0);
  ++counts_[task];
}

double SuccessTracker::rate(std::size_t task) const {
  if (task >= rates_.size()) throw invalid_argument("unknown task " + std::to_string(task));
  return rates_[task];
}

std::uint64_t SuccessTracker::count(std::size_t task) const {
  if (task >= counts_.size()) throw invalid_argument("unknown task " + std::to_string(task));
  return counts_[task];
}

std::vector<double> SuccessTracker::probabilities() const {
  const std::size_t n = rates_.size();
  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  if (cfg_.uniform) return p;
  // Shift by the largest exponent; the softmax is invariant to it.
  double top = -INFINITY;
  for (double s : rates_) top = std::max(top, (0.5 - s) / cfg_.tau);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = std::exp((0.5 - rates_[j]) / cfg_.tau - top);
    total += p[j];
  }
  for (double& x : p) x /= total;
  return p;
}

void SuccessTracker::restore(std::vector<double> rates, std::vector<std::uint64_t> counts) {
  if (rates.size() != rates_.size() || counts.size() != counts_.size()) {
    throw invalid_argument("tracker state has " + std::to_string(rates.size()) +
                           " tasks, expected " + std::to_string(rates_.size()));
  }
  for (double s : rates)
    if (!(s >= 0.0 && s <= 1.0)) throw invalid_argument("tracked success rate outside [0, 1]");
  rates_ = std::move(rates);
  counts_ = std::move(counts);
}

std::size_t sample_index(const std::vector<double>& probs, CounterRng& rng) {
  if (probs.empty()) throw invalid_argument("cannot sample from an empty distribution");
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    acc += probs[j];
    if (u < acc) return j;
  }
  for (std::size_t j = probs.size(); j-- > 0;)
    if (probs[j] > 0.0) return j;
  return 0;
}

}  // namespace vlarl
