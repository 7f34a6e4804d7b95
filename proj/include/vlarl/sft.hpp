#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vlarl/nn/param_store.hpp"
#include "vlarl/policy.hpp"
#include "vlarl/sim/env.hpp"
#include "vlarl/sim/suite.hpp"

namespace vlarl {

/// One step of a logged episode; observation is taken before the action.
struct TrajectoryStep {
  sim::Observation obs;
  ActionVector action{};
  TokenBins tokens;
  double gripper_open = 1.0;
  sim::Vec3 gripper_pos{};
  double sparse_reward = 0.0;
  bool done = false;
};

struct Trajectory {
  std::int64_t episode_id = 0;
  int task_id = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::vector<TrajectoryStep> steps;
};

struct DemoDataset {
  std::vector<Trajectory> episodes;
  int episodes_per_task = 0;
  std::uint64_t seed = 0;
  std::size_t attempted = 0;
  std::vector<std::string> warnings;

  std::size_t step_count() const noexcept;
  /// FNV-1a over task ids, seeds, features and actions.
  std::string digest() const;
};

/// Runs the scripted expert on every listed task and keeps successful
/// episodes. Seeds are derived from (seed, task, episode).
DemoDataset generate_demos(const sim::TaskSuite& suite, std::span<const std::size_t> task_indices,
                           int episodes_per_task, std::uint64_t seed,
                           const sim::SimConfig& sim_cfg);

struct BcConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 11;
};

struct BcReport {
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;
};

/// Mean per-token cross-entropy against the quantized expert actions.
/// Value-head parameters receive no gradient.
BcReport bc_train(Policy& policy, const DemoDataset& data, const BcConfig& cfg,
                  const std::function<void(int, double)>& on_epoch = {});

/// Mean per-token cross-entropy of the policy on the dataset.
double bc_loss(const Policy& policy, const DemoDataset& data);

/// Fraction of dataset steps where greedy decoding reproduces every expert token.
double greedy_token_match(const Policy& policy, const DemoDataset& data);

}  // namespace vlarl
