#include "checks.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vlarl/app/store.hpp"
#include "vlarl/curriculum.hpp"
#include "vlarl/orchestrator.hpp"
#include "vlarl/sft.hpp"

namespace vlarl::testkit {

double gae_oracle_error() {
  struct Case {
    std::size_t envs, steps;
    std::vector<std::pair<std::size_t, std::size_t>> dones;
    std::vector<std::uint8_t> next_done;
  };
  const std::vector<Case> cases = {
      {1, 1, {}, {0}},
      {1, 1, {}, {1}},
      {1, 6, {{3, 0}}, {0}},
      {2, 5, {{1, 0}, {2, 0}, {4, 1}}, {1, 0}},
      {4, 6, {{2, 0}, {5, 0}, {1, 1}, {3, 2}, {4, 2}, {5, 3}}, {0, 1, 0, 1}},
      {4, 6, {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}}, {1, 1, 1, 1}},
      {3, 4, {}, {0, 0, 0}},
  };
  double worst = 0.0;
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    for (auto [gamma, lambda] : {std::pair{0.99, 0.95}, std::pair{0.9, 0.0}, std::pair{1.0, 1.0},
                                 std::pair{0.5, 0.7}}) {
      const auto buf = synthetic_buffer(c.envs, c.steps, c.dones, c.next_done, seed++);
      const auto got = rl::compute_gae(buf, gamma, lambda);
      const auto want = gae_direct_sum(buf, gamma, lambda);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        worst = std::max(worst, std::abs(got.advantages[i] - want.advantages[i]));
        worst = std::max(worst, std::abs(got.returns[i] - want.returns[i]));
      }
    }
  }
  return worst;
}

double curriculum_oracle_error() {
  SuccessTracker tracker(3, CurriculumConfig{});
  for (auto [task, success] : {std::pair{0, true}, std::pair{0, true}, std::pair{1, false},
                               std::pair{2, true}, std::pair{1, false}, std::pair{1, false}})
    tracker.update(static_cast<std::size_t>(task), success);
  // 0.5 -> 0.55 -> 0.595; 0.5 -> 0.45 -> 0.405 -> 0.3645; 0.5 -> 0.55.
  const double rates[3] = {0.595, 0.3645, 0.55};
  // Normalized exp((0.5 - s) / 0.25) of the rates above.
  const double probs[3] = {0.21224521805976335, 0.5336511216395131, 0.2541036603007235};
  double worst = 0.0;
  const auto p = tracker.probabilities();
  for (int j = 0; j < 3; ++j) {
    worst = std::max(worst, std::abs(tracker.rate(j) - rates[j]));
    worst = std::max(worst, std::abs(p[j] - probs[j]));
  }
  // Two tasks at the extremes: exp(-2) and exp(2) normalized.
  SuccessTracker two(2, CurriculumConfig{});
  two.restore({1.0, 0.0}, {4, 4});
  const auto q = two.probabilities();
  worst = std::max(worst, std::abs(q[0] - 0.01798620996209156));
  worst = std::max(worst, std::abs(q[1] - 0.9820137900379085));
  CurriculumConfig uni;
  uni.uniform = true;
  SuccessTracker flat(4, uni);
  flat.update(0, true);
  for (double x : flat.probabilities()) worst = std::max(worst, std::abs(x - 0.25));
  return worst;
}

int ppo_worked_examples_exact() {
  struct Example {
    double ratio, adv, eps, objective, d_log_ratio;
    bool clipped;
  };
  // Exactly representable inputs so the expected values are exact.
  const Example ex[3] = {
      {1.5, 2.0, 0.25, 2.5, 0.0, true},       // min(3.0, 1.25 * 2)
      {0.5, -1.0, 0.25, -0.75, 0.0, true},    // min(-0.5, 0.75 * -1)
      {1.125, 4.0, 0.25, 4.5, 4.5, false},    // inside the trust region
  };
  int exact = 0;
  for (const auto& e : ex) {
    const auto s = rl::clipped_surrogate(e.ratio, e.adv, e.eps);
    if (s.objective == e.objective && s.d_log_ratio == e.d_log_ratio && s.clipped == e.clipped)
      ++exact;
  }
  return exact;
}

double tokenizer_round_trip_error(int samples) {
  const Vocabulary vocab({"pick", "place"});
  CounterRng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    ActionVector a;
    for (double& x : a) x = rng.uniform(-1.0, 1.0);
    if (i == 0) a = {-1.0, 1.0, 0.0, -1.0 + 1e-15, 1.0 - 1e-15, kBinWidth, -kBinWidth};
    const ActionVector back = decode_tokens(encode_action(a, vocab), vocab);
    for (std::size_t d = 0; d < kActionDims; ++d) worst = std::max(worst, std::abs(back[d] - a[d]));
  }
  return worst;
}

namespace {

DemoDataset small_demos(const sim::TaskSuite& suite) {
  const std::vector<std::size_t> tasks = {0, 3, 6};
  return generate_demos(suite, tasks, 1, 5, sim::SimConfig{});
}

}  // namespace

FdChecks gradient_checks(int directions) {
  const sim::TaskSuite suite = small_suite();
  const PolicyConfig pcfg = small_policy_config(suite, 12, 6);
  Policy policy(pcfg, 3);
  perturb(policy.params_mut(), 0.2, 31);
  const auto obs_all = sample_observations(suite, 4, 77);
  const sim::Observation& obs = obs_all[2];
  const TokenBins path = random_paths(1, pcfg.action_dims, pcfg.bins, 4)[0];
  const sim::Observation* op = &obs;
  FdChecks out;

  {
    PolicyGraph pg = build_policy_graph(pcfg, std::span(&op, 1), std::span(&path, 1));
    pg.graph.forward(pg.bindings, policy.params());
    nn::Tensor seed = nn::Tensor::matrix(pcfg.action_dims, 2);
    for (std::size_t i = 0; i < pcfg.action_dims; ++i) seed.at(i, 0) = -1.0;
    pg.graph.backward({{pg.token_ce, seed}});
    out.action_log_prob = directional_fd(
        [&](const nn::ParamStore& p) { return Policy(pcfg, p).action_log_prob(obs, path); },
        policy.params(), pg.graph.parameter_gradients(policy.params()), directions, 11);
  }
  {
    PolicyGraph pg = build_policy_graph(pcfg, std::span(&op, 1), std::span(&path, 1));
    pg.graph.forward(pg.bindings, policy.params());
    pg.graph.backward(pg.value);
    out.value = directional_fd(
        [&](const nn::ParamStore& p) { return Policy(pcfg, p).value(obs); }, policy.params(),
        pg.graph.parameter_gradients(policy.params()), directions, 12);
  }
  {
    const DemoDataset data = small_demos(suite);
    std::vector<const sim::Observation*> o;
    std::vector<TokenBins> paths;
    for (const auto& e : data.episodes)
      for (const auto& s : e.steps) {
        o.push_back(&s.obs);
        paths.push_back(s.tokens);
      }
    PolicyGraph pg = build_policy_graph(pcfg, o, paths);
    pg.graph.forward(pg.bindings, policy.params());
    const std::size_t rows = o.size() * pcfg.action_dims;
    nn::Tensor seed = nn::Tensor::matrix(rows, 2);
    for (std::size_t r = 0; r < rows; ++r) seed.at(r, 0) = 1.0 / static_cast<double>(rows);
    pg.graph.backward({{pg.token_ce, seed}});
    out.bc_loss = directional_fd(
        [&](const nn::ParamStore& p) { return vlarl::bc_loss(Policy(pcfg, p), data); },
        policy.params(), pg.graph.parameter_gradients(policy.params()), directions, 13);
  }
  {
    const DemoDataset data = small_demos(suite);
    const auto labels = rprm::label_dataset(data.episodes, rprm::LabelConfig{});
    const auto steps = rprm::join_labels(data, labels);
    const auto rcfg = small_reward_config(suite, 12);
    rprm::RewardModel model(rcfg, 8);
    perturb(model.params_mut(), 0.2, 32);
    std::vector<const sim::Observation*> o;
    std::vector<const TokenBins*> toks;
    std::vector<std::int32_t> lab;
    for (const auto& s : steps) {
      o.push_back(s.obs);
      toks.push_back(s.tokens);
      lab.push_back(s.label);
    }
    auto rg = rprm::build_reward_graph(rcfg, o, toks, lab);
    rg.graph.forward(rg.bindings, model.params());
    nn::Tensor seed = nn::Tensor::matrix(o.size(), 2);
    for (std::size_t r = 0; r < o.size(); ++r) seed.at(r, 0) = 1.0 / static_cast<double>(o.size());
    rg.graph.backward({{rg.ce, seed}});
    out.rprm_loss = directional_fd(
        [&](const nn::ParamStore& p) {
          return rprm::reward_loss(rprm::RewardModel(rcfg, p), steps);
        },
        model.params(), rg.graph.parameter_gradients(model.params()), directions, 14);
  }
  return out;
}

double two_step_normalization_error() {
  const sim::TaskSuite suite = small_suite();
  PolicyConfig cfg = small_policy_config(suite, 10, 5);
  cfg.action_dims = 2;
  cfg.bins = 3;
  const auto obs = sample_observations(suite, 6, 5);
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 4; ++k) {
    Policy policy(cfg, 40 + k);
    perturb(policy.params_mut(), 1.0, 50 + k);
    for (const auto& o : obs) {
      double total = 0.0;
      for (std::int32_t a = 0; a < 3; ++a)
        for (std::int32_t b = 0; b < 3; ++b) total += std::exp(policy.action_log_prob(o, {a, b}));
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return worst;
}

int golden_label_matches(std::string* detail) {
  const auto trajs = app::read_trajectory_jsonl(fixture_path("label_trajectories.jsonl"));
  const auto run = rprm::label_dataset(trajs, rprm::LabelConfig{});
  std::vector<nlohmann::json> got, want;
  for (const auto& line : app::read_lines(fixture_path("label_expected.jsonl")))
    want.push_back(nlohmann::json::parse(line));
  const std::string text = rprm::labels_to_jsonl(run);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    got.push_back(nlohmann::json::parse(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  int matches = 0;
  for (const auto& traj : trajs) {
    std::vector<nlohmann::json> g, w;
    for (const auto& j : got)
      if (j["episode_id"] == traj.episode_id) g.push_back(j);
    for (const auto& j : want)
      if (j["episode_id"] == traj.episode_id) w.push_back(j);
    if (g == w && !w.empty()) {
      ++matches;
    } else if (detail) {
      *detail += "episode " + std::to_string(traj.episode_id) + " differs; ";
    }
  }
  return matches;
}

namespace {

struct RolloutRun {
  std::vector<rl::RolloutBuffer> buffers;
  SuccessTracker tracker;
};

RolloutRun sharded_rollouts(std::size_t shards, const sim::TaskSuite& suite, const Policy& policy,
                            const rprm::RewardModel& rm) {
  sim::SimConfig sim_cfg;
  sim_cfg.horizon = 9;
  RolloutRun run{{}, SuccessTracker(suite.tasks.size(), CurriculumConfig{})};
  orch::Orchestrator orch(sim_cfg, suite.tasks, 16, shards, 21);
  orch.reset(rl::make_sampler(run.tracker.probabilities()));
  orch::WeightBroadcaster weights;
  weights.broadcast(policy);
  rl::RolloutState state(16);
  rl::RolloutConfig cfg;
  cfg.steps_per_env = 12;
  for (int phase = 0; phase < 2; ++phase)
    run.buffers.push_back(rl::collect_rollout(orch, weights, &rm, run.tracker, state, cfg, nullptr));
  return run;
}

}  // namespace

ShardCheck shard_and_decode_check() {
  ShardCheck out;
  const sim::TaskSuite suite = small_suite();
  {
    Policy policy(small_policy_config(suite), 6);
    perturb(policy.params_mut(), 0.3, 61);
    rprm::RewardModel rm(small_reward_config(suite), 7);
    perturb(rm.params_mut(), 0.3, 62);
    const RolloutRun base = sharded_rollouts(1, suite, policy, rm);
    out.buffers_identical = true;
    for (std::size_t shards : {2u, 4u}) {
      const RolloutRun other = sharded_rollouts(shards, suite, policy, rm);
      for (std::size_t k = 0; k < base.buffers.size(); ++k) {
        std::string why;
        if (!same_buffer(base.buffers[k], other.buffers[k], &why)) {
          out.buffers_identical = false;
          out.detail += std::to_string(shards) + " shards, phase " + std::to_string(k) + ": " + why + "; ";
        }
      }
      if (!(base.tracker == other.tracker)) {
        out.buffers_identical = false;
        out.detail += std::to_string(shards) + " shards: tracker differs; ";
      }
    }
  }
  {
    PolicyConfig cfg;
    cfg.trunk.instruction_vocab = suite.vocab.instruction_size();
    Policy policy(cfg, 9);
    perturb(policy.params_mut(), 0.05, 63);
    const auto obs = sample_observations(suite, 16, 64);
    std::vector<const sim::Observation*> ptrs;
    std::vector<CounterRng> batch_rngs, seq_rngs;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      ptrs.push_back(&obs[i]);
      batch_rngs.push_back(CounterRng::stream(5, i));
    }
    seq_rngs = batch_rngs;
    const auto batched = policy.sample_batch(ptrs, 1.5, batch_rngs);
    out.decode_identical = true;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const auto one = policy.sample_action_tokens(obs[i], 1.5, seq_rngs[i]);
      if (one.bins != batched[i].bins || one.log_probs != batched[i].log_probs ||
          one.value != batched[i].value || one.entropy != batched[i].entropy) {
        out.decode_identical = false;
        out.detail += "decode row " + std::to_string(i) + " differs; ";
      }
    }
    if (batch_rngs != seq_rngs) {
      out.decode_identical = false;
      out.detail += "rng streams advanced differently; ";
    }
  }
  return out;
}

}  // namespace vlarl::testkit
