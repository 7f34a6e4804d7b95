#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlarl/curriculum.hpp"
#include "vlarl/orchestrator.hpp"
#include "vlarl/policy.hpp"
#include "vlarl/rprm.hpp"

namespace vlarl::rl {

struct Transition {
  sim::Observation obs;
  TokenBins tokens;
  ActionVector action{};
  /// Densified reward.
  double reward = 0.0;
  double sparse_reward = 0.0;
  /// True when obs is the first observation of an episode that followed a
  /// terminal step inside the buffer's history.
  bool done_before = false;
  double behavior_log_prob = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  std::size_t task_index = 0;
};

/// N environments by M steps; transition (t, e) lives at t * N + e.
struct RolloutBuffer {
  std::size_t num_envs = 0;
  std::size_t steps = 0;
  std::vector<Transition> data;
  std::vector<double> bootstrap_values;
  /// Whether the step after the last stored one starts a new episode.
  std::vector<std::uint8_t> next_done;

  Transition& at(std::size_t t, std::size_t e) { return data[t * num_envs + e]; }
  const Transition& at(std::size_t t, std::size_t e) const { return data[t * num_envs + e]; }
  std::size_t size() const noexcept { return data.size(); }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Backward recursion over one environment's sequence:
///   delta_t = r_t + gamma (1 - d_{t+1}) V_{t+1} - V_t
///   A_t     = delta_t + gamma lambda (1 - d_{t+1}) A_{t+1}
/// where d_{t+1} is done_before of the next step (next_done for the last).
void gae_sequence(std::span<const double> rewards, std::span<const double> values,
                  std::span<const std::uint8_t> done_before, bool next_done, double bootstrap,
                  double gamma, double lambda, std::span<double> advantages);

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

/// Mean 0, standard deviation 1 (population), with 1e-8 added to the std.
std::vector<double> normalize_advantages(std::span<const double> adv);

/// Clipped objective min(r A, clip(r, 1 - eps, 1 + eps) A) and its derivative
/// with respect to log r.
struct Surrogate {
  double objective = 0.0;
  double d_log_ratio = 0.0;
  bool clipped = false;
};
Surrogate clipped_surrogate(double ratio, double advantage, double clip_eps);

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  std::size_t minibatch = 256;
  double value_coef = 0.5;
  double entropy_coef = 0.003;
  double lr = 2e-5;
  double max_grad_norm = 1.0;
  double target_kl = 0.02;
  bool clip_value = false;
  int warmup_iters = 5;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
};

/// Clipped-surrogate update over `epochs` shuffled passes. Advantages are
/// normalized over the whole buffer first. Stops after an epoch whose mean
/// approximate divergence exceeds target_kl.
PpoStats ppo_update(Policy& policy, const RolloutBuffer& buffer, const GaeResult& gae,
                    const PpoConfig& cfg, std::uint64_t shuffle_seed);

/// Regresses only the value head on the buffer's returns; every other
/// parameter is left bit-identical. Returns the mean squared error over the
/// last epoch.
double value_regression(Policy& policy, const RolloutBuffer& buffer, const GaeResult& gae,
                        const PpoConfig& cfg, std::uint64_t shuffle_seed);

struct RolloutConfig {
  std::size_t steps_per_env = 256;
  double temperature = 1.5;
  /// Dense reward weight; 0 disables reward-model scoring.
  double beta = 0.1;
};

struct EpisodeEnd {
  std::size_t env_id = 0;
  std::size_t task_index = 0;
  bool success = false;
  int length = 0;
  double episode_return = 0.0;
};

/// Per-environment bookkeeping carried across rollout phases.
struct RolloutState {
  std::vector<std::uint8_t> next_done;
  std::vector<double> episode_return;

  explicit RolloutState(std::size_t num_envs = 0)
      : next_done(num_envs, 0), episode_return(num_envs, 0.0) {}
  friend bool operator==(const RolloutState&, const RolloutState&) = default;
};

struct RolloutStats {
  std::vector<EpisodeEnd> episodes;
  double mean_entropy = 0.0;
};

/// Collects M steps from every environment with the snapshot policy. Tasks
/// for auto-resets are drawn from the tracker's probabilities at phase start;
/// finished episodes update the tracker afterwards in (step, env id) order.
RolloutBuffer collect_rollout(orch::Orchestrator& orch, orch::WeightBroadcaster& weights,
                              const rprm::RewardModel* reward_model, SuccessTracker& tracker,
                              RolloutState& state, const RolloutConfig& cfg, RolloutStats* stats);

/// Task sampler bound to a fixed probability vector.
sim::TaskSampler make_sampler(std::vector<double> probs);

struct EvalResult {
  std::vector<std::size_t> successes;
  std::vector<std::size_t> episodes;
  std::vector<double> mean_success_length;
  double success_rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Batched action source: one action per observation.
using ActionFn = std::function<std::vector<ActionVector>(
    std::span<const sim::Observation* const>, std::span<const sim::Env* const>)>;

/// Runs episodes_per_task episodes of every listed task with seeds derived
/// from (seed, task, episode); fully deterministic.
EvalResult evaluate(const ActionFn& act, std::span<const sim::TaskSpec> tasks,
                    int episodes_per_task, std::uint64_t seed, const sim::SimConfig& sim_cfg);

/// Greedy decoding of the policy.
ActionFn greedy_actions(const Policy& policy);
/// The scripted expert.
ActionFn expert_actions();

/// Wilson score interval at 95%.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n);

struct TrainConfig {
  PpoConfig ppo;
  RolloutConfig rollout;
  CurriculumConfig curriculum;
  std::size_t num_envs = 16;
  /// 0 selects min(4, num_envs).
  std::size_t shards = 0;
  std::uint64_t seed = 1;
};

struct IterationMetrics {
  int iter = 0;
  std::uint64_t env_steps = 0;
  double mean_return = 0.0;
  double mean_episode_len = 0.0;
  double mean_success_len = 0.0;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double entropy = 0.0;
  PpoStats ppo;
  std::vector<double> per_task_success;
  orch::PhaseTimes wall_times;
};

/// Critic warmup followed by alternating rollout and PPO phases.
class Trainer {
 public:
  Trainer(TrainConfig cfg, Policy policy, std::optional<rprm::RewardModel> reward_model,
          std::vector<sim::TaskSpec> tasks, sim::SimConfig sim_cfg);

  /// Runs the configured number of value-only cycles with the current policy.
  /// Returns the mean squared value error of each cycle.
  std::vector<double> critic_warmup();

  IterationMetrics iterate();

  const TrainConfig& config() const noexcept { return cfg_; }
  const Policy& policy() const noexcept { return policy_; }
  Policy& policy_mut() noexcept { return policy_; }
  const SuccessTracker& tracker() const noexcept { return tracker_; }
  SuccessTracker& tracker_mut() noexcept { return tracker_; }
  orch::Orchestrator& orchestrator() noexcept { return orch_; }
  const orch::Orchestrator& orchestrator() const noexcept { return orch_; }
  const RolloutState& rollout_state() const noexcept { return state_; }
  RolloutState& rollout_state_mut() noexcept { return state_; }
  int iteration() const noexcept { return iter_; }
  std::uint64_t env_steps() const noexcept { return env_steps_; }
  bool warmed_up() const noexcept { return warmed_; }
  std::uint64_t weight_version() const noexcept { return weights_.current().version; }

  /// Restores counters after loading policy, tracker and env state.
  void set_progress(int iter, std::uint64_t env_steps, bool warmed) noexcept {
    iter_ = iter;
    env_steps_ = env_steps;
    warmed_ = warmed;
  }

  /// (dx, dy) of every action in the most recent rollout.
  const std::vector<std::pair<double, double>>& last_actions() const noexcept {
    return last_actions_;
  }

 private:
  RolloutBuffer rollout(RolloutStats* stats);

  TrainConfig cfg_;
  Policy policy_;
  std::optional<rprm::RewardModel> reward_model_;
  orch::Orchestrator orch_;
  orch::WeightBroadcaster weights_;
  SuccessTracker tracker_;
  RolloutState state_;
  int iter_ = 0;
  std::uint64_t env_steps_ = 0;
  bool warmed_ = false;
  std::vector<std::pair<double, double>> last_actions_;
};

}  // namespace vlarl::rl
