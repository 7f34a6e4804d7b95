#include "vlarl/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "vlarl/error.hpp"

namespace vlarl::rl {

using nn::Tensor;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void shuffle(std::vector<std::size_t>& idx, CounterRng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

void gae_sequence(std::span<const double> rewards, std::span<const double> values,
                  std::span<const std::uint8_t> done_before, bool next_done, double bootstrap,
                  double gamma, double lambda, std::span<double> advantages) {
  const std::size_t M = rewards.size();
  if (values.size() != M || done_before.size() != M || advantages.size() != M) {
    throw invalid_argument("GAE inputs differ in length");
  }
  double next_adv = 0.0;
  for (std::size_t t = M; t-- > 0;) {
    const bool cut = t + 1 == M ? next_done : done_before[t + 1] != 0;
    const double next_value = t + 1 == M ? bootstrap : values[t + 1];
    const double live = cut ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * live * next_value - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    advantages[t] = next_adv;
  }
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw config_error("gamma must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw config_error("lambda must be in [0, 1]");
  const std::size_t N = buffer.num_envs, M = buffer.steps;
  if (buffer.data.size() != N * M || buffer.bootstrap_values.size() != N ||
      buffer.next_done.size() != N) {
    throw invalid_argument("rollout buffer is not rectangular");
  }
  GaeResult out;
  out.advantages.resize(N * M);
  out.returns.resize(N * M);
  std::vector<double> r(M), v(M), adv(M);
  std::vector<std::uint8_t> d(M);
  for (std::size_t e = 0; e < N; ++e) {
    for (std::size_t t = 0; t < M; ++t) {
      const Transition& tr = buffer.at(t, e);
      r[t] = tr.reward;
      v[t] = tr.value;
      d[t] = tr.done_before ? 1 : 0;
    }
    gae_sequence(r, v, d, buffer.next_done[e] != 0, buffer.bootstrap_values[e], gamma, lambda, adv);
    for (std::size_t t = 0; t < M; ++t) {
      out.advantages[t * N + e] = adv[t];
      out.returns[t * N + e] = adv[t] + v[t];
    }
  }
  return out;
}

std::vector<double> normalize_advantages(std::span<const double> adv) {
  if (adv.empty()) return {};
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mean) / (std + 1e-8);
  return out;
}

Surrogate clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  if (unclipped <= clipped) return {unclipped, unclipped, false};
  return {clipped, 0.0, true};
}

namespace {

void check_ppo_config(const PpoConfig& cfg) {
  if (!(cfg.clip_eps > 0.0)) throw config_error("clip epsilon must be positive");
  if (cfg.minibatch == 0) throw config_error("minibatch size must be positive");
  if (cfg.epochs < 0) throw config_error("epoch count must be non-negative");
  if (!(cfg.lr > 0.0)) throw config_error("learning rate must be positive");
}

}  // namespace

PpoStats ppo_update(Policy& policy, const RolloutBuffer& buffer, const GaeResult& gae,
                    const PpoConfig& cfg, std::uint64_t shuffle_seed) {
  check_ppo_config(cfg);
  const std::size_t total = buffer.size();
  if (gae.advantages.size() != total || gae.returns.size() != total) {
    throw invalid_argument("advantages do not match the buffer");
  }
  const auto adv = normalize_advantages(gae.advantages);
  const nn::AdamConfig adam{.lr = cfg.lr};
  CounterRng rng = CounterRng::stream(shuffle_seed, 0x990);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);

  PpoStats stats;
  std::size_t batches = 0, samples = 0, clipped = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_kl = 0.0;
    std::size_t epoch_samples = 0;
    for (std::size_t start = 0; start < total; start += cfg.minibatch) {
      const std::size_t B = std::min(cfg.minibatch, total - start);
      std::vector<const sim::Observation*> obs(B);
      std::vector<TokenBins> paths(B);
      for (std::size_t k = 0; k < B; ++k) {
        const Transition& tr = buffer.data[order[start + k]];
        obs[k] = &tr.obs;
        paths[k] = tr.tokens;
      }
      PolicyGraph pg = build_policy_graph(policy.config(), obs, paths);
      pg.graph.forward(pg.bindings, policy.params());
      const auto logp = path_log_probs(pg, policy.config());
      const auto ent = path_entropies(pg, policy.config());
      const Tensor& values = pg.graph.value(pg.value);

      const std::size_t D = policy.config().action_dims;
      const double inv = 1.0 / static_cast<double>(B);
      Tensor ce_seed = Tensor::matrix(B * D, 2);
      Tensor v_seed = Tensor::matrix(B, 1);
      double pol = 0.0, vl = 0.0, en = 0.0;
      for (std::size_t k = 0; k < B; ++k) {
        const std::size_t i = order[start + k];
        const Transition& tr = buffer.data[i];
        const double log_ratio = logp[k] - tr.behavior_log_prob;
        const double ratio = std::exp(log_ratio);
        const Surrogate s = clipped_surrogate(ratio, adv[i], cfg.clip_eps);
        if (std::abs(ratio - 1.0) > cfg.clip_eps) ++clipped;
        epoch_kl += (ratio - 1.0) - log_ratio;
        pol -= s.objective;
        en += ent[k];
        for (std::size_t d = 0; d < D; ++d) {
          ce_seed.at(k * D + d, 0) = s.d_log_ratio * inv;
          ce_seed.at(k * D + d, 1) = -cfg.entropy_coef * inv;
        }
        const double v = values.at(k, 0);
        const double target = gae.returns[i];
        double err = v - target;
        double grad = 2.0 * err;
        if (cfg.clip_value) {
          const double delta = std::clamp(v - tr.value, -cfg.clip_eps, cfg.clip_eps);
          const double err_clip = tr.value + delta - target;
          if (err_clip * err_clip > err * err) {
            err = err_clip;
            grad = std::abs(v - tr.value) < cfg.clip_eps ? 2.0 * err_clip : 0.0;
          }
        }
        vl += err * err;
        v_seed.at(k, 0) = cfg.value_coef * grad * inv;
      }
      if (!std::isfinite(pol) || !std::isfinite(vl) || !std::isfinite(en)) {
        throw numeric_error("PPO loss is not finite in epoch " + std::to_string(epoch));
      }
      stats.policy_loss += pol * inv;
      stats.value_loss += vl * inv;
      stats.entropy += en * inv;
      ++batches;
      samples += B;
      epoch_samples += B;

      pg.graph.backward({{pg.token_ce, std::move(ce_seed)}, {pg.value, std::move(v_seed)}});
      auto grads = pg.graph.parameter_gradients(policy.params());
      nn::clip_global_norm(grads, cfg.max_grad_norm);
      policy.params_mut().adam_step(grads, adam);
    }
    ++stats.epochs_run;
    const double kl = epoch_samples ? epoch_kl / static_cast<double>(epoch_samples) : 0.0;
    stats.approx_kl = kl;
    if (kl > cfg.target_kl) {
      stats.early_stopped = epoch + 1 < cfg.epochs;
      break;
    }
  }
  if (batches) {
    stats.policy_loss /= static_cast<double>(batches);
    stats.value_loss /= static_cast<double>(batches);
    stats.entropy /= static_cast<double>(batches);
    stats.clip_frac = static_cast<double>(clipped) / static_cast<double>(samples);
  }
  return stats;
}

double value_regression(Policy& policy, const RolloutBuffer& buffer, const GaeResult& gae,
                        const PpoConfig& cfg, std::uint64_t shuffle_seed) {
  check_ppo_config(cfg);
  const std::size_t total = buffer.size();
  if (gae.returns.size() != total) throw invalid_argument("returns do not match the buffer");
  const nn::AdamConfig adam{.lr = cfg.lr};
  CounterRng rng = CounterRng::stream(shuffle_seed, 0x7A1);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t W = policy.config().trunk.width;
  double last = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double sq = 0.0;
    for (std::size_t start = 0; start < total; start += cfg.minibatch) {
      const std::size_t B = std::min(cfg.minibatch, total - start);
      std::vector<const sim::Observation*> obs(B);
      for (std::size_t k = 0; k < B; ++k) obs[k] = &buffer.data[order[start + k]].obs;
      const Tensor ctx = policy.forward_context(obs);
      const Tensor& w = policy.params().get("value_w");
      const Tensor& b = policy.params().get("value_b");
      nn::GradMap grads = policy.params().zero_grads();
      Tensor& gw = grads.at("value_w");
      Tensor& gb = grads.at("value_b");
      const double inv = 1.0 / static_cast<double>(B);
      for (std::size_t k = 0; k < B; ++k) {
        double v = 0.0;
        affine_row(ctx.row(k), w, b, std::span<double>(&v, 1));
        const double err = v - gae.returns[order[start + k]];
        sq += err * err;
        const double g = cfg.value_coef * 2.0 * err * inv;
        const auto row = ctx.row(k);
        for (std::size_t j = 0; j < W; ++j) gw.data[j] += g * row[j];
        gb.data[0] += g;
      }
      if (!std::isfinite(sq)) throw numeric_error("value loss is not finite");
      nn::clip_global_norm(grads, cfg.max_grad_norm);
      policy.params_mut().adam_step(grads, adam);
    }
    last = sq / static_cast<double>(total);
  }
  return last;
}

sim::TaskSampler make_sampler(std::vector<double> probs) {
  return [probs = std::move(probs)](std::size_t, CounterRng& rng) {
    return sample_index(probs, rng);
  };
}

RolloutBuffer collect_rollout(orch::Orchestrator& orch, orch::WeightBroadcaster& weights,
                              const rprm::RewardModel* reward_model, SuccessTracker& tracker,
                              RolloutState& state, const RolloutConfig& cfg, RolloutStats* stats) {
  const std::size_t N = orch.num_envs(), M = cfg.steps_per_env;
  if (state.next_done.size() != N || state.episode_return.size() != N) {
    throw invalid_argument("rollout state does not match the environment count");
  }
  if (!(cfg.beta >= 0.0)) throw config_error("beta must be non-negative");
  const bool score = reward_model != nullptr && cfg.beta > 0.0;
  orch::RolloutPhase phase(weights);
  const orch::WeightSnapshot snapshot = weights.current();
  const sim::TaskSampler sampler = make_sampler(tracker.probabilities());

  RolloutBuffer buf;
  buf.num_envs = N;
  buf.steps = M;
  buf.data.resize(N * M);
  std::vector<EpisodeEnd> ends;
  double entropy_sum = 0.0;
  std::vector<ActionVector> actions(N);
  std::vector<double> scores(N, 0.0);
  for (std::size_t t = 0; t < M; ++t) {
    const orch::InferenceBatch batch = orch.gather_observations();
    const auto t0 = std::chrono::steady_clock::now();
    const auto decoded = orch::batched_decode(snapshot, batch, cfg.temperature, orch.decode_rngs());
    if (score) {
      std::vector<const TokenBins*> toks(N);
      for (std::size_t e = 0; e < N; ++e) toks[e] = &decoded[e].bins;
      scores = reward_model->score_batch(batch.obs, toks);
    }
    orch.times().inference += seconds_since(t0);
    for (std::size_t e = 0; e < N; ++e) {
      Transition& tr = buf.at(t, e);
      const DecodeResult& d = decoded[e];
      tr.obs = *batch.obs[e];
      tr.tokens = d.bins;
      tr.action = action_from_bins(to_action_bins(d.bins));
      tr.done_before = state.next_done[e] != 0;
      tr.behavior_log_prob = d.log_prob();
      tr.value = d.value;
      tr.entropy = d.entropy;
      tr.task_index = orch.slot(e).task_index;
      if (!std::isfinite(tr.behavior_log_prob) || !std::isfinite(tr.value)) {
        std::string dump;
        for (double f : tr.obs.features) dump += " " + std::to_string(f);
        throw numeric_error("non-finite log-prob or value at step " + std::to_string(t) +
                            ", env " + std::to_string(e) + "; features:" + dump);
      }
      actions[e] = tr.action;
      entropy_sum += d.entropy;
    }
    const auto results = orch.scatter_actions(actions, sampler);
    for (std::size_t e = 0; e < N; ++e) {
      Transition& tr = buf.at(t, e);
      const sim::StepResult& res = results[e];
      tr.sparse_reward = res.sparse_reward;
      tr.reward = score ? rprm::densify(res.sparse_reward, scores[e], cfg.beta) : res.sparse_reward;
      state.episode_return[e] += tr.reward;
      state.next_done[e] = res.done ? 1 : 0;
      if (res.done) {
        ends.push_back({e, tr.task_index, res.info.success, res.info.episode_length,
                        state.episode_return[e]});
        state.episode_return[e] = 0.0;
      }
    }
  }
  const orch::InferenceBatch last = orch.gather_observations();
  const auto t0 = std::chrono::steady_clock::now();
  buf.bootstrap_values = snapshot.policy->values(last.obs);
  orch.times().inference += seconds_since(t0);
  buf.next_done = state.next_done;
  for (const auto& end : ends) tracker.update(end.task_index, end.success);
  if (stats) {
    stats->episodes = std::move(ends);
    stats->mean_entropy = M * N > 0 ? entropy_sum / static_cast<double>(M * N) : 0.0;
  }
  return buf;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double denom = 1.0 + z * z / nn;
  const double center = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

EvalResult evaluate(const ActionFn& act, std::span<const sim::TaskSpec> tasks,
                    int episodes_per_task, std::uint64_t seed, const sim::SimConfig& sim_cfg) {
  if (episodes_per_task < 0) throw config_error("episodes per task must be non-negative");
  struct Run {
    std::size_t task;
    sim::Env env;
    sim::Observation obs;
  };
  EvalResult out;
  out.successes.assign(tasks.size(), 0);
  out.episodes.assign(tasks.size(), 0);
  out.mean_success_length.assign(tasks.size(), 0.0);
  std::vector<Run> runs;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (int ep = 0; ep < episodes_per_task; ++ep) {
      const std::uint64_t s = splitmix64(
          seed ^ splitmix64((static_cast<std::uint64_t>(tasks[ti].task_id) << 32) |
                            static_cast<std::uint32_t>(ep)));
      Run r{ti, sim::Env(sim_cfg), {}};
      r.obs = r.env.reset(tasks[ti], s);
      runs.push_back(std::move(r));
    }
  }
  std::vector<Run*> live;
  for (auto& r : runs) live.push_back(&r);
  while (!live.empty()) {
    std::vector<const sim::Observation*> obs;
    std::vector<const sim::Env*> envs;
    for (Run* r : live) {
      obs.push_back(&r->obs);
      envs.push_back(&r->env);
    }
    const auto actions = act(obs, envs);
    if (actions.size() != live.size()) throw invalid_argument("action source returned wrong count");
    std::vector<Run*> next;
    for (std::size_t k = 0; k < live.size(); ++k) {
      Run* r = live[k];
      sim::StepResult res = r->env.step(actions[k]);
      if (res.done) {
        ++out.episodes[r->task];
        if (res.info.success) {
          ++out.successes[r->task];
          out.mean_success_length[r->task] += res.info.episode_length;
        }
      } else {
        r->obs = std::move(res.next_obs);
        next.push_back(r);
      }
    }
    live = std::move(next);
  }
  std::size_t s = 0, n = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    if (out.successes[ti]) out.mean_success_length[ti] /= static_cast<double>(out.successes[ti]);
    s += out.successes[ti];
    n += out.episodes[ti];
  }
  out.success_rate = n ? static_cast<double>(s) / static_cast<double>(n) : 0.0;
  std::tie(out.ci_low, out.ci_high) = wilson_interval(s, n);
  return out;
}

ActionFn greedy_actions(const Policy& policy) {
  return [&policy](std::span<const sim::Observation* const> obs, std::span<const sim::Env* const>) {
    std::vector<ActionVector> out;
    for (std::size_t i = 0; i < obs.size(); i += 256) {
      const auto chunk = obs.subspan(i, std::min<std::size_t>(256, obs.size() - i));
      for (const auto& d : policy.sample_batch(chunk, 0.0, {}))
        out.push_back(action_from_bins(to_action_bins(d.bins)));
    }
    return out;
  };
}

ActionFn expert_actions() {
  return [](std::span<const sim::Observation* const>, std::span<const sim::Env* const> envs) {
    std::vector<ActionVector> out;
    for (const sim::Env* e : envs) out.push_back(sim::expert_action(e->state(), e->task(), e->config()));
    return out;
  };
}

Trainer::Trainer(TrainConfig cfg, Policy policy, std::optional<rprm::RewardModel> reward_model,
                 std::vector<sim::TaskSpec> tasks, sim::SimConfig sim_cfg)
    : cfg_(cfg),
      policy_(std::move(policy)),
      reward_model_(std::move(reward_model)),
      orch_(sim_cfg, tasks, cfg.num_envs,
            cfg.shards ? cfg.shards : std::min<std::size_t>(4, cfg.num_envs), cfg.seed),
      tracker_(tasks.size(), cfg.curriculum),
      state_(cfg.num_envs) {
  if (cfg_.rollout.steps_per_env == 0) throw config_error("steps per env must be positive");
  if (cfg_.ppo.warmup_iters < 0) throw config_error("warmup iterations must be non-negative");
  policy_.params_mut().reset_optimizer();
  orch_.reset(make_sampler(tracker_.probabilities()));
}

RolloutBuffer Trainer::rollout(RolloutStats* stats) {
  weights_.broadcast(policy_);
  const rprm::RewardModel* rm = reward_model_ ? &*reward_model_ : nullptr;
  RolloutBuffer buf = collect_rollout(orch_, weights_, rm, tracker_, state_, cfg_.rollout, stats);
  env_steps_ += buf.size();
  last_actions_.clear();
  for (const auto& tr : buf.data) last_actions_.emplace_back(tr.action[0], tr.action[1]);
  return buf;
}

std::vector<double> Trainer::critic_warmup() {
  std::vector<double> losses;
  if (warmed_) return losses;
  std::vector<nn::ParamStore::Entry> frozen;
  for (const auto& e : policy_.params().entries())
    if (!is_value_param(e.name)) frozen.push_back(e);
  for (int w = 0; w < cfg_.ppo.warmup_iters; ++w) {
    const RolloutBuffer buf = rollout(nullptr);
    const GaeResult gae = compute_gae(buf, cfg_.ppo.gamma, cfg_.ppo.lambda);
    losses.push_back(value_regression(policy_, buf, gae, cfg_.ppo,
                                      splitmix64(cfg_.seed ^ (0xC0FFEEull + static_cast<std::uint64_t>(w)))));
  }
  std::size_t k = 0;
  for (const auto& e : policy_.params().entries()) {
    if (is_value_param(e.name)) continue;
    if (e.value != frozen[k].value) {
      throw state_error("critic warmup changed policy tensor '" + e.name + "'");
    }
    ++k;
  }
  warmed_ = true;
  return losses;
}

IterationMetrics Trainer::iterate() {
  if (!warmed_) critic_warmup();
  orch_.times() = {};
  RolloutStats stats;
  const RolloutBuffer buf = rollout(&stats);
  const auto t0 = std::chrono::steady_clock::now();
  const GaeResult gae = compute_gae(buf, cfg_.ppo.gamma, cfg_.ppo.lambda);
  IterationMetrics m;
  m.ppo = ppo_update(policy_, buf, gae, cfg_.ppo,
                     splitmix64(cfg_.seed ^ static_cast<std::uint64_t>(iter_)));
  orch_.times().learn += seconds_since(t0);

  m.iter = iter_;
  m.env_steps = env_steps_;
  m.episodes = stats.episodes.size();
  double ret = 0.0, len = 0.0, slen = 0.0;
  for (const auto& e : stats.episodes) {
    ret += e.episode_return;
    len += e.length;
    if (e.success) {
      ++m.successes;
      slen += e.length;
    }
  }
  if (m.episodes) {
    m.mean_return = ret / static_cast<double>(m.episodes);
    m.mean_episode_len = len / static_cast<double>(m.episodes);
  }
  if (m.successes) m.mean_success_len = slen / static_cast<double>(m.successes);
  m.entropy = stats.mean_entropy;
  m.per_task_success = tracker_.rates();
  m.wall_times = orch_.times();
  ++iter_;
  return m;
}

}  // namespace vlarl::rl
