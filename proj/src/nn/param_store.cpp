#include "vlarl/nn/param_store.hpp"

#include <cmath>

#include "vlarl/error.hpp"

namespace vlarl::nn {

void ParamStore::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) throw invalid_argument("duplicate parameter '" + name + "'");
  if (!value.all_finite()) throw numeric_error("parameter '" + name + "' is not finite");
  Tensor zeros(value.shape);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), zeros, zeros});
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw invalid_argument("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw invalid_argument("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParamStore::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::reset_optimizer() {
  for (auto& e : entries_) {
    std::fill(e.first_moment.data.begin(), e.first_moment.data.end(), 0.0);
    std::fill(e.second_moment.data.begin(), e.second_moment.data.end(), 0.0);
  }
  step_count_ = 0;
}

void ParamStore::adam_step(const GradMap& grads, const AdamConfig& cfg) {
  if (grads.size() != entries_.size()) {
    throw invalid_argument("gradient set has " + std::to_string(grads.size()) +
                           " entries, store has " + std::to_string(entries_.size()));
  }
  for (const auto& e : entries_) {
    auto it = grads.find(e.name);
    if (it == grads.end()) throw invalid_argument("missing gradient for '" + e.name + "'");
    if (it->second.size() != e.value.size()) {
      throw invalid_argument("gradient shape mismatch for '" + e.name + "'");
    }
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : entries_) {
    const auto& g = grads.at(e.name).data;
    auto& p = e.value.data;
    auto& m = e.first_moment.data;
    auto& v = e.second_moment.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

GradMap ParamStore::zero_grads() const {
  GradMap out;
  for (const auto& e : entries_) out.emplace(e.name, Tensor(e.value.shape));
  return out;
}

bool operator==(const ParamStore::Entry& a, const ParamStore::Entry& b) {
  return a.name == b.name && a.value == b.value && a.first_moment == b.first_moment &&
         a.second_moment == b.second_moment;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  return a.step_count_ == b.step_count_ && a.entries_ == b.entries_;
}

double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto& [_, g] : grads)
      for (double& v : g.data) v *= f;
  }
  return norm;
}

}  // namespace vlarl::nn
