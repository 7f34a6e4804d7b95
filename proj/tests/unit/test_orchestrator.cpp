#include <gtest/gtest.h>

#include <atomic>

#include "testkit.hpp"
#include "vlarl/error.hpp"
#include "vlarl/orchestrator.hpp"
#include "vlarl/rl.hpp"

using namespace vlarl;
using namespace vlarl::orch;

TEST(ShardPool, RunsEveryShardAndPropagatesLowestError) {
  ShardPool pool(4);
  std::vector<int> hits(4, 0);
  for (int round = 0; round < 20; ++round) pool.run([&](std::size_t k) { ++hits[k]; });
  for (int h : hits) EXPECT_EQ(h, 20);
  try {
    pool.run([](std::size_t k) {
      if (k >= 2) throw invalid_argument("shard " + std::to_string(k));
    });
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "shard 2");
  }
  std::atomic<int> n{0};
  pool.run([&](std::size_t) { ++n; });
  EXPECT_EQ(n.load(), 4);
}

TEST(Orchestrator, ShardsPartitionEnvironments) {
  const auto suite = testkit::small_suite();
  Orchestrator o(sim::SimConfig{}, suite.tasks, 10, 4, 3);
  EXPECT_EQ(o.shard_begin(0), 0u);
  EXPECT_EQ(o.shard_begin(4), 10u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_LE(o.shard_begin(k), o.shard_begin(k + 1));
  EXPECT_THROW(Orchestrator(sim::SimConfig{}, suite.tasks, 2, 3, 1), Error);
}

TEST(Orchestrator, GatherScatterKeepsEnvOrder) {
  const auto suite = testkit::small_suite();
  Orchestrator o(sim::SimConfig{}, suite.tasks, 6, 3, 3);
  const sim::TaskSampler sampler = [](std::size_t env, CounterRng&) { return env % 8; };
  o.reset(sampler);
  const InferenceBatch b = o.gather_observations();
  ASSERT_EQ(b.env_ids.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(b.env_ids[i], i);
    EXPECT_EQ(*b.obs[i], o.slot(i).env.observation());
    EXPECT_EQ(o.slot(i).task_index, i);
  }
  const std::vector<ActionVector> acts(6, ActionVector{});
  o.scatter_actions(acts, sampler);
  EXPECT_EQ(o.epoch(), b.epoch + 1);
  EXPECT_THROW(o.scatter_actions(std::vector<ActionVector>(5), sampler), Error);
}

TEST(Orchestrator, FailedStepBlocksGather) {
  const auto suite = testkit::small_suite();
  Orchestrator o(sim::SimConfig{}, suite.tasks, 4, 2, 3);
  const sim::TaskSampler sampler = [](std::size_t, CounterRng&) { return std::size_t{0}; };
  o.reset(sampler);
  std::vector<ActionVector> acts(4, ActionVector{});
  acts[3][0] = std::nan("");
  EXPECT_THROW(o.scatter_actions(acts, sampler), Error);
  EXPECT_THROW(o.gather_observations(), Error);
}

TEST(WeightBroadcaster, RefusesToPublishDuringRollout) {
  const auto suite = testkit::small_suite();
  const Policy p(testkit::small_policy_config(suite), 1);
  WeightBroadcaster w;
  const auto s1 = w.broadcast(p);
  {
    RolloutPhase phase(w);
    EXPECT_TRUE(w.rollout_active());
    EXPECT_THROW(w.broadcast(p), Error);
    EXPECT_THROW(w.begin_rollout(), Error);
  }
  EXPECT_FALSE(w.rollout_active());
  const auto s2 = w.broadcast(p);
  EXPECT_EQ(s2.version, s1.version + 1);
  EXPECT_NE(s1.policy.get(), s2.policy.get());
}

TEST(BatchedDecode, UsesPerEnvironmentStreams) {
  const auto suite = testkit::small_suite();
  Policy p(testkit::small_policy_config(suite), 1);
  testkit::perturb(p.params_mut(), 0.3, 2);
  Orchestrator o(sim::SimConfig{}, suite.tasks, 5, 1, 3);
  o.reset([](std::size_t env, CounterRng&) { return env; });
  WeightBroadcaster w;
  const auto snap = w.broadcast(p);
  const auto batch = o.gather_observations();
  auto rngs = o.decode_rngs();
  const auto got = batched_decode(snap, batch, 1.5, rngs);
  auto again = o.decode_rngs();
  for (std::size_t e = 0; e < 5; ++e) {
    const auto one = p.sample_action_tokens(*batch.obs[e], 1.5, again[e]);
    EXPECT_EQ(one.bins, got[e].bins);
    EXPECT_EQ(one.log_probs, got[e].log_probs);
  }
}
