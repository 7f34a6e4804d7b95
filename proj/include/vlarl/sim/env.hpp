#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vlarl/rng.hpp"
#include "vlarl/tokenizer.hpp"

namespace vlarl::sim {

using Vec3 = std::array<double, 3>;

inline constexpr std::size_t kObjectsPerScene = 3;
inline constexpr std::size_t kRegionsPerScene = 4;
inline constexpr std::size_t kMaxStages = 2;

struct SimConfig {
  int horizon = 60;
  double scale_t = 0.08;
  double scale_r = 0.3;
  double grasp_radius = 0.08;
  double yaw_tol = 0.4;
  double region_radius = 0.12;
  double h_place = 0.15;
  double table_z = -0.5;
  double start_height = 0.5;
};

enum class Suite { spatial, object, goal, long_horizon };

const char* suite_name(Suite s) noexcept;
Suite suite_from_name(const std::string& name);

struct Stage {
  int object = 0;
  int region = 0;
  friend bool operator==(const Stage&, const Stage&) = default;
};

struct PlacementBox {
  double x_lo = -0.3, x_hi = 0.3, y_lo = -0.3, y_hi = 0.3;
  friend bool operator==(const PlacementBox&, const PlacementBox&) = default;
};

struct TaskSpec {
  Suite suite = Suite::spatial;
  int task_id = 0;  // global index within the generated suite list
  std::string instruction;
  TokenSequence instruction_tokens;
  std::vector<Stage> stages;
  std::array<int, kObjectsPerScene> object_colors{};  // palette ids per slot
  PlacementBox box;
  double region_jitter = 0.05;
  std::uint64_t seed_base = 0;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct ObjectState {
  Vec3 pos{};
  double yaw = 0.0;
  bool attached = false;
  friend bool operator==(const ObjectState&, const ObjectState&) = default;
};

struct Region {
  Vec3 center{};
  double radius = 0.0;
  friend bool operator==(const Region&, const Region&) = default;
};

struct WorldState {
  Vec3 gripper_pos{};
  double gripper_yaw = 0.0;
  double gripper_open = 1.0;
  std::array<ObjectState, kObjectsPerScene> objects{};
  std::array<Region, kRegionsPerScene> regions{};
  int step_index = 0;
  int stage = 0;
  bool done = false;
  bool success = false;

  int attached_index() const noexcept;
  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct Observation {
  std::vector<double> features;
  TokenSequence instruction_tokens;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct StepInfo {
  bool success = false;
  int stage = 0;
  bool truncated = false;
  int episode_length = 0;
};

struct StepResult {
  Observation next_obs;
  double sparse_reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// gripper pos 3, yaw sin/cos 2, openness 1, per object (relative pos 3,
/// relative yaw 1, attached 1, color code 1), active target 3, stage 2.
inline constexpr std::size_t kFeatureDim = 3 + 2 + 1 + kObjectsPerScene * 6 + 3 + kMaxStages;

double wrap_angle(double a) noexcept;

Observation observe(const WorldState& s, const TaskSpec& task, const SimConfig& cfg);

/// Deterministic initial state for (task, seed).
WorldState initial_state(const TaskSpec& task, std::uint64_t seed, const SimConfig& cfg);

/// Advances one step in place. Throws if the episode is already done.
StepResult step_state(WorldState& s, const TaskSpec& task, const ActionVector& a,
                      const SimConfig& cfg);

class Env {
 public:
  explicit Env(SimConfig cfg = {}) : cfg_(cfg) {}

  Observation reset(const TaskSpec& task, std::uint64_t seed);
  StepResult step(const ActionVector& a);

  const WorldState& state() const noexcept { return state_; }
  WorldState& state_mut() noexcept { return state_; }
  const TaskSpec& task() const noexcept { return task_; }
  const SimConfig& config() const noexcept { return cfg_; }
  Observation observation() const { return observe(state_, task_, cfg_); }
  /// Restores a previously captured (task, state) pair.
  void restore(const TaskSpec& task, const WorldState& state) {
    task_ = task;
    state_ = state;
  }

 private:
  SimConfig cfg_;
  TaskSpec task_;
  WorldState state_;
};

/// Proportional controller toward the current stage's object, then region.
ActionVector expert_action(const WorldState& s, const TaskSpec& task, const SimConfig& cfg);

/// Picks the next task index for an environment that needs a reset.
using TaskSampler = std::function<std::size_t(std::size_t env_id, CounterRng& rng)>;

/// One environment plus its private RNG stream and current task index.
struct EnvSlot {
  Env env;
  CounterRng rng;
  std::size_t task_index = 0;
};

/// Steps one slot; on done, samples a task through `sampler`, resets, and
/// replaces next_obs with the reset observation.
StepResult step_with_autoreset(EnvSlot& slot, std::size_t env_id, const ActionVector& a,
                               std::span<const TaskSpec> tasks, const TaskSampler& sampler);

/// Sequential batch of independent environments.
class VecEnv {
 public:
  VecEnv(SimConfig cfg, std::vector<TaskSpec> tasks, std::size_t num_envs,
         std::uint64_t master_seed);

  std::size_t size() const noexcept { return slots_.size(); }
  std::vector<Observation> reset(const std::vector<std::size_t>& task_indices,
                                 const std::vector<std::uint64_t>& seeds);
  std::vector<StepResult> step(const std::vector<ActionVector>& actions,
                               const TaskSampler& sampler);

  const EnvSlot& slot(std::size_t i) const { return slots_.at(i); }
  std::span<const TaskSpec> tasks() const noexcept { return tasks_; }

 private:
  std::vector<TaskSpec> tasks_;
  std::vector<EnvSlot> slots_;
};

}  // namespace vlarl::sim
