#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "vlarl/policy.hpp"
#include "vlarl/sim/env.hpp"

namespace vlarl::orch {

/// Persistent worker threads that run one job per shard and meet at a
/// barrier. Shard 0 runs on the calling thread.
class ShardPool {
 public:
  explicit ShardPool(std::size_t shards);
  ~ShardPool();
  ShardPool(const ShardPool&) = delete;
  ShardPool& operator=(const ShardPool&) = delete;

  std::size_t size() const noexcept { return shards_; }

  /// Runs job(k) for every shard k and waits for all of them. If any job
  /// throws, the exception of the lowest failing shard is rethrown.
  void run(const std::function<void(std::size_t)>& job);

 private:
  void worker(std::size_t shard);

  std::size_t shards_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  std::uint64_t generation_ = 0;
  std::size_t pending_ = 0;
  bool stop_ = false;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::vector<std::exception_ptr> errors_;
};

/// Observations of every live environment in env-id order.
struct InferenceBatch {
  std::uint64_t epoch = 0;
  std::vector<std::size_t> env_ids;
  std::vector<const sim::Observation*> obs;
};

struct PhaseTimes {
  double env = 0.0;
  double inference = 0.0;
  double learn = 0.0;
};

/// Environments partitioned into contiguous shards, each stepped by its own
/// worker. Per-environment RNG streams are keyed by (master seed, env id), so
/// results do not depend on the shard count.
class Orchestrator {
 public:
  Orchestrator(sim::SimConfig cfg, std::vector<sim::TaskSpec> tasks, std::size_t num_envs,
               std::size_t num_shards, std::uint64_t master_seed);

  std::size_t num_envs() const noexcept { return slots_.size(); }
  std::size_t num_shards() const noexcept { return pool_.size(); }
  std::span<const sim::TaskSpec> tasks() const noexcept { return tasks_; }
  /// First env id of shard k; shard k owns [shard_begin(k), shard_begin(k + 1)).
  std::size_t shard_begin(std::size_t shard) const noexcept;

  /// Samples a task and seed for every environment and resets it.
  void reset(const sim::TaskSampler& sampler);

  /// Throws if a shard lags behind (barrier violation) or an environment has
  /// no observation because its last step failed.
  InferenceBatch gather_observations() const;

  /// Steps every environment with its action; shards run concurrently.
  std::vector<sim::StepResult> scatter_actions(std::span<const ActionVector> actions,
                                               const sim::TaskSampler& sampler);

  std::uint64_t epoch() const noexcept { return epoch_; }
  const sim::EnvSlot& slot(std::size_t env_id) const { return slots_.at(env_id); }
  /// Per-environment decode streams, keyed like the environment streams.
  std::vector<CounterRng>& decode_rngs() noexcept { return decode_rngs_; }
  const std::vector<CounterRng>& decode_rngs() const noexcept { return decode_rngs_; }

  /// Reinstates one environment, e.g. from a checkpoint.
  void restore_env(std::size_t env_id, std::size_t task_index, const sim::WorldState& state,
                   CounterRng rng);

  PhaseTimes& times() noexcept { return times_; }

 private:
  std::vector<sim::TaskSpec> tasks_;
  std::vector<sim::EnvSlot> slots_;
  std::vector<std::optional<sim::Observation>> obs_;
  std::vector<CounterRng> decode_rngs_;
  std::vector<std::uint64_t> shard_epochs_;
  std::uint64_t epoch_ = 0;
  PhaseTimes times_;
  ShardPool pool_;
};

/// Immutable policy copy handed to the rollout phase.
struct WeightSnapshot {
  std::shared_ptr<const Policy> policy;
  std::uint64_t version = 0;
};

/// Owns the current snapshot; refuses to publish while a rollout is running.
class WeightBroadcaster {
 public:
  WeightSnapshot broadcast(const Policy& learner);
  const WeightSnapshot& current() const noexcept { return current_; }

  void begin_rollout();
  void end_rollout() noexcept { active_ = false; }
  bool rollout_active() const noexcept { return active_; }

 private:
  WeightSnapshot current_;
  bool active_ = false;
};

/// Scoped rollout phase on a broadcaster.
class RolloutPhase {
 public:
  explicit RolloutPhase(WeightBroadcaster& b) : b_(b) { b_.begin_rollout(); }
  ~RolloutPhase() { b_.end_rollout(); }
  RolloutPhase(const RolloutPhase&) = delete;
  RolloutPhase& operator=(const RolloutPhase&) = delete;

 private:
  WeightBroadcaster& b_;
};

/// Decodes every row of the batch with the matching per-env stream
/// (rngs is indexed by env id). Row results equal sequential decoding.
std::vector<DecodeResult> batched_decode(const WeightSnapshot& snapshot, const InferenceBatch& batch,
                                         double temperature, std::span<CounterRng> rngs);

}  // namespace vlarl::orch
