#include "vlarl/orchestrator.hpp"

#include <chrono>

#include "vlarl/error.hpp"

namespace vlarl::orch {

ShardPool::ShardPool(std::size_t shards) : shards_(shards), errors_(shards) {
  if (shards == 0) throw config_error("shard count must be positive");
  for (std::size_t k = 1; k < shards; ++k) threads_.emplace_back([this, k] { worker(k); });
}

ShardPool::~ShardPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void ShardPool::worker(std::size_t shard) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(std::size_t)>* job = nullptr;
    {
      std::unique_lock lock(mu_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      job = job_;
    }
    std::exception_ptr err;
    try {
      (*job)(shard);
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard lock(mu_);
      errors_[shard] = err;
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }
}

void ShardPool::run(const std::function<void(std::size_t)>& job) {
  if (shards_ == 1) {
    job(0);
    return;
  }
  {
    std::lock_guard lock(mu_);
    job_ = &job;
    pending_ = shards_ - 1;
    std::fill(errors_.begin(), errors_.end(), nullptr);
    ++generation_;
  }
  start_cv_.notify_all();
  try {
    job(0);
  } catch (...) {
    errors_[0] = std::current_exception();
  }
  std::unique_lock lock(mu_);
  done_cv_.wait(lock, [&] { return pending_ == 0; });
  job_ = nullptr;
  for (const auto& e : errors_)
    if (e) std::rethrow_exception(e);
}

Orchestrator::Orchestrator(sim::SimConfig cfg, std::vector<sim::TaskSpec> tasks,
                           std::size_t num_envs, std::size_t num_shards, std::uint64_t master_seed)
    : tasks_(std::move(tasks)),
      obs_(num_envs),
      shard_epochs_(num_shards, 0),
      pool_(num_shards) {
  if (num_envs == 0) throw config_error("need at least one environment");
  if (num_shards > num_envs) {
    throw config_error("more shards (" + std::to_string(num_shards) + ") than environments (" +
                       std::to_string(num_envs) + ")");
  }
  if (tasks_.empty()) throw config_error("orchestrator needs at least one task");
  for (std::size_t i = 0; i < num_envs; ++i) {
    slots_.push_back(sim::EnvSlot{sim::Env(cfg), CounterRng::stream(master_seed, i), 0});
    decode_rngs_.push_back(CounterRng::stream(master_seed, 0x10000 + i));
  }
}

std::size_t Orchestrator::shard_begin(std::size_t shard) const noexcept {
  return shard * slots_.size() / pool_.size();
}

void Orchestrator::reset(const sim::TaskSampler& sampler) {
  pool_.run([&](std::size_t k) {
    for (std::size_t i = shard_begin(k); i < shard_begin(k + 1); ++i) {
      auto& s = slots_[i];
      obs_[i].reset();
      s.task_index = sampler(i, s.rng);
      if (s.task_index >= tasks_.size()) {
        throw invalid_argument("sampler returned task index " + std::to_string(s.task_index) +
                               " for env " + std::to_string(i));
      }
      obs_[i] = s.env.reset(tasks_[s.task_index], s.rng.next_u64());
    }
  });
  std::fill(shard_epochs_.begin(), shard_epochs_.end(), epoch_);
}

InferenceBatch Orchestrator::gather_observations() const {
  InferenceBatch batch;
  batch.epoch = epoch_;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!obs_[i]) {
      throw state_error("environment " + std::to_string(i) +
                        " has no observation; its last step failed");
    }
  }
  for (std::size_t k = 0; k < shard_epochs_.size(); ++k) {
    if (shard_epochs_[k] != epoch_) {
      throw state_error("shard " + std::to_string(k) + " is at step epoch " +
                        std::to_string(shard_epochs_[k]) + ", expected " + std::to_string(epoch_));
    }
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    batch.env_ids.push_back(i);
    batch.obs.push_back(&*obs_[i]);
  }
  return batch;
}

std::vector<sim::StepResult> Orchestrator::scatter_actions(
    std::span<const ActionVector> actions, const sim::TaskSampler& sampler) {
  if (actions.empty()) return {};
  if (actions.size() != slots_.size()) {
    throw invalid_argument("action batch has " + std::to_string(actions.size()) + " entries for " +
                           std::to_string(slots_.size()) + " environments");
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<sim::StepResult> out(slots_.size());
  const std::uint64_t next = epoch_ + 1;
  pool_.run([&](std::size_t k) {
    for (std::size_t i = shard_begin(k); i < shard_begin(k + 1); ++i) {
      try {
        out[i] = sim::step_with_autoreset(slots_[i], i, actions[i], tasks_, sampler);
      } catch (const Error& e) {
        obs_[i].reset();
        throw Error(e.kind(), "environment " + std::to_string(i) + " crashed: " + e.what());
      }
      obs_[i] = out[i].next_obs;
    }
    shard_epochs_[k] = next;
  });
  epoch_ = next;
  times_.env += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void Orchestrator::restore_env(std::size_t env_id, std::size_t task_index,
                               const sim::WorldState& state, CounterRng rng) {
  if (env_id >= slots_.size()) throw invalid_argument("unknown env " + std::to_string(env_id));
  if (task_index >= tasks_.size()) throw invalid_argument("unknown task index");
  auto& s = slots_[env_id];
  s.task_index = task_index;
  s.rng = rng;
  s.env.restore(tasks_[task_index], state);
  obs_[env_id] = s.env.observation();
}

WeightSnapshot WeightBroadcaster::broadcast(const Policy& learner) {
  if (active_) throw state_error("cannot broadcast weights during an active rollout phase");
  current_ = WeightSnapshot{std::make_shared<const Policy>(learner), current_.version + 1};
  return current_;
}

void WeightBroadcaster::begin_rollout() {
  if (!current_.policy) throw state_error("no weight snapshot has been broadcast");
  if (active_) throw state_error("rollout phase already active");
  active_ = true;
}

std::vector<DecodeResult> batched_decode(const WeightSnapshot& snapshot, const InferenceBatch& batch,
                                         double temperature, std::span<CounterRng> rngs) {
  if (!snapshot.policy) throw state_error("decode without a weight snapshot");
  std::vector<CounterRng> local;
  local.reserve(batch.env_ids.size());
  for (std::size_t id : batch.env_ids) {
    if (id >= rngs.size()) throw invalid_argument("no RNG stream for env " + std::to_string(id));
    local.push_back(rngs[id]);
  }
  auto out = snapshot.policy->sample_batch(batch.obs, temperature, local);
  for (std::size_t r = 0; r < batch.env_ids.size(); ++r) rngs[batch.env_ids[r]] = local[r];
  return out;
}

}  // namespace vlarl::orch
