#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlarl/nn/tensor.hpp"

namespace vlarl::nn {

using GradMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters plus adaptive-moment optimizer state. Entries keep
/// insertion order; names are unique.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  void add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries_mut() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const noexcept;

  std::uint64_t step_count() const noexcept { return step_count_; }
  void set_step_count(std::uint64_t s) noexcept { step_count_ = s; }

  /// Zeroes the moments and the step counter.
  void reset_optimizer();

  /// Bias-corrected adaptive-moment update. `grads` must name exactly the
  /// entries of the store.
  void adam_step(const GradMap& grads, const AdamConfig& cfg);

  /// Gradient map of zeros covering every entry.
  GradMap zero_grads() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_count_ = 0;
};

bool operator==(const ParamStore::Entry& a, const ParamStore::Entry& b);

/// L2 norm over every tensor in the map.
double global_norm(const GradMap& grads);
/// Rescales so the global norm is at most max_norm; returns the norm before.
double clip_global_norm(GradMap& grads, double max_norm);

}  // namespace vlarl::nn
