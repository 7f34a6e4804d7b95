#include "vlarl/sft.hpp"

#include <cmath>
#include <cstring>
#include <cstdio>
#include <numeric>

#include "vlarl/error.hpp"

namespace vlarl {

std::size_t DemoDataset::step_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  return n;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
};

}  // namespace

std::string DemoDataset::digest() const {
  Fnv1a f;
  for (const auto& e : episodes) {
    f.value(e.task_id);
    f.value(e.seed);
    for (const auto& s : e.steps) {
      f.bytes(s.obs.features.data(), s.obs.features.size() * sizeof(double));
      f.bytes(s.action.data(), s.action.size() * sizeof(double));
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(f.h));
  return buf;
}

DemoDataset generate_demos(const sim::TaskSuite& suite, std::span<const std::size_t> task_indices,
                           int episodes_per_task, std::uint64_t seed,
                           const sim::SimConfig& sim_cfg) {
  DemoDataset data;
  data.episodes_per_task = episodes_per_task;
  data.seed = seed;
  std::int64_t next_id = 0;
  for (std::size_t ti : task_indices) {
    const sim::TaskSpec& task = suite.tasks.at(ti);
    int failures = 0;
    for (int ep = 0; ep < episodes_per_task; ++ep) {
      const std::uint64_t ep_seed =
          splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(ti) << 32) |
                                       static_cast<std::uint32_t>(ep)));
      sim::Env env(sim_cfg);
      Trajectory traj;
      traj.episode_id = next_id++;
      traj.task_id = task.task_id;
      traj.seed = ep_seed;
      sim::Observation obs = env.reset(task, ep_seed);
      bool done = false;
      while (!done) {
        TrajectoryStep step;
        step.obs = obs;
        step.gripper_open = env.state().gripper_open;
        step.gripper_pos = env.state().gripper_pos;
        step.action = sim::expert_action(env.state(), task, sim_cfg);
        step.tokens = to_token_bins(bins_from_action(step.action));
        sim::StepResult r = env.step(step.action);
        step.sparse_reward = r.sparse_reward;
        step.done = r.done;
        done = r.done;
        traj.success = r.info.success;
        obs = std::move(r.next_obs);
        traj.steps.push_back(std::move(step));
      }
      ++data.attempted;
      if (traj.success) {
        data.episodes.push_back(std::move(traj));
      } else {
        ++failures;
      }
    }
    if (episodes_per_task > 0 && failures > 0.05 * episodes_per_task) {
      data.warnings.push_back("expert failed " + std::to_string(failures) + "/" +
                              std::to_string(episodes_per_task) + " episodes on task " +
                              std::to_string(task.task_id));
    }
  }
  return data;
}

namespace {

struct StepRef {
  const sim::Observation* obs;
  const TokenBins* tokens;
};

std::vector<StepRef> flatten(const DemoDataset& data) {
  std::vector<StepRef> out;
  for (const auto& e : data.episodes)
    for (const auto& s : e.steps) out.push_back({&s.obs, &s.tokens});
  return out;
}

// Forward (and optionally backward) over one batch; returns summed CE.
double batch_ce(const Policy& policy, std::span<const StepRef> batch, nn::GradMap* grads,
                double grad_scale) {
  std::vector<const sim::Observation*> obs;
  std::vector<TokenBins> paths;
  for (const auto& s : batch) {
    obs.push_back(s.obs);
    paths.push_back(*s.tokens);
  }
  PolicyGraph pg = build_policy_graph(policy.config(), obs, paths);
  pg.graph.forward(pg.bindings, policy.params());
  const nn::Tensor& ce = pg.graph.value(pg.token_ce);
  double total = 0.0;
  for (std::size_t r = 0; r < ce.rows(); ++r) total += ce.at(r, 0);
  if (grads) {
    nn::Tensor seed = nn::Tensor::matrix(ce.rows(), 2);
    for (std::size_t r = 0; r < ce.rows(); ++r) seed.at(r, 0) = grad_scale;
    pg.graph.backward({{pg.token_ce, std::move(seed)}});
    *grads = pg.graph.parameter_gradients(policy.params());
  }
  return total;
}

}  // namespace

double bc_loss(const Policy& policy, const DemoDataset& data) {
  const auto steps = flatten(data);
  if (steps.empty()) throw invalid_argument("empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < steps.size(); i += 512) {
    const std::size_t n = std::min<std::size_t>(512, steps.size() - i);
    total += batch_ce(policy, std::span(steps).subspan(i, n), nullptr, 0.0);
  }
  return total / static_cast<double>(steps.size() * policy.config().action_dims);
}

BcReport bc_train(Policy& policy, const DemoDataset& data, const BcConfig& cfg,
                  const std::function<void(int, double)>& on_epoch) {
  auto steps = flatten(data);
  if (steps.empty()) throw invalid_argument("behavior cloning needs a nonempty dataset");
  if (cfg.batch_size == 0) throw config_error("bc batch size must be positive");
  BcReport report;
  report.initial_loss = bc_loss(policy, data);
  policy.params_mut().reset_optimizer();
  const nn::AdamConfig adam{.lr = cfg.lr};
  CounterRng rng = CounterRng::stream(cfg.seed, 0xBC);
  const double dims = static_cast<double>(policy.config().action_dims);
  int above = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = steps.size(); i > 1; --i) std::swap(steps[i - 1], steps[rng.below(i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < steps.size(); i += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, steps.size() - i);
      nn::GradMap grads;
      total += batch_ce(policy, std::span(steps).subspan(i, n), &grads,
                        1.0 / (static_cast<double>(n) * dims));
      for (auto& [name, g] : grads)
        if (is_value_param(name)) std::fill(g.data.begin(), g.data.end(), 0.0);
      policy.params_mut().adam_step(grads, adam);
    }
    const double loss = total / (static_cast<double>(steps.size()) * dims);
    if (!std::isfinite(loss)) throw numeric_error("behavior cloning loss is not finite");
    report.epoch_losses.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
    above = loss > 2.0 * report.initial_loss ? above + 1 : 0;
    if (above >= 3) {
      throw numeric_error("behavior cloning diverged: epoch " + std::to_string(epoch) +
                          " loss " + std::to_string(loss) + " vs initial " +
                          std::to_string(report.initial_loss));
    }
  }
  return report;
}

double greedy_token_match(const Policy& policy, const DemoDataset& data) {
  const auto steps = flatten(data);
  if (steps.empty()) return 0.0;
  std::size_t match = 0;
  for (std::size_t i = 0; i < steps.size(); i += 512) {
    const std::size_t n = std::min<std::size_t>(512, steps.size() - i);
    std::vector<const sim::Observation*> obs;
    for (std::size_t k = 0; k < n; ++k) obs.push_back(steps[i + k].obs);
    const auto decoded = policy.sample_batch(obs, 0.0, {});
    for (std::size_t k = 0; k < n; ++k)
      if (decoded[k].bins == *steps[i + k].tokens) ++match;
  }
  return static_cast<double>(match) / static_cast<double>(steps.size());
}

}  // namespace vlarl
