#include <gtest/gtest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "testkit.hpp"
#include "vlarl/error.hpp"
#include "vlarl/rl.hpp"
#include "vlarl/sim/env.hpp"
#include "vlarl/sim/suite.hpp"

using namespace vlarl;
using namespace vlarl::sim;

namespace {

const TaskSpec& first_task(const TaskSuite& s, Suite which) { return s.tasks[s.indices_of(which).at(0)]; }

ActionVector zero_action(bool close) {
  ActionVector a{};
  a[6] = close ? 1.0 : -1.0;
  return a;
}

}  // namespace

TEST(Suite, CountsStagesAndUniqueInstructions) {
  const TaskSuite suite = make_suite(SuiteConfig{});
  EXPECT_EQ(suite.tasks.size(), 40u);
  std::set<std::string> instructions;
  for (const auto& t : suite.tasks) {
    instructions.insert(t.instruction);
    EXPECT_EQ(t.instruction_tokens.size(), kInstructionLength);
    EXPECT_EQ(t.stages.size(), t.suite == Suite::long_horizon ? 2u : 1u);
  }
  EXPECT_EQ(instructions.size(), suite.tasks.size());
  for (Suite s : {Suite::spatial, Suite::object, Suite::goal, Suite::long_horizon})
    EXPECT_EQ(suite.indices_of(s).size(), 10u);
  EXPECT_EQ(make_suite(SuiteConfig{}), suite);
  const auto j = nlohmann::json::parse(suite_to_json(suite));
  ASSERT_TRUE(j.contains("tasks"));
  EXPECT_EQ(j["tasks"].size(), 40u);
}

TEST(Suite, RejectsImpossibleCounts) {
  SuiteConfig c;
  c.object = 11;
  EXPECT_THROW(make_suite(c), Error);
  c.object = -1;
  EXPECT_THROW(make_suite(c), Error);
}

TEST(Env, ObservationLayoutAndDeterminism) {
  const TaskSuite suite = testkit::small_suite();
  const SimConfig cfg;
  const TaskSpec& task = suite.tasks[0];
  const WorldState a = initial_state(task, 11, cfg), b = initial_state(task, 11, cfg);
  EXPECT_EQ(a, b);
  EXPECT_NE(initial_state(task, 12, cfg), a);
  const Observation obs = observe(a, task, cfg);
  EXPECT_EQ(obs.features.size(), kFeatureDim);
  EXPECT_EQ(obs.instruction_tokens, task.instruction_tokens);
  EXPECT_EQ(obs.features[5], 1.0);  // gripper starts open
  for (const auto& o : a.objects) EXPECT_EQ(o.pos[2], cfg.table_z);
}

TEST(Env, TruncatesAtHorizonWithoutReward) {
  const TaskSuite suite = testkit::small_suite();
  SimConfig cfg;
  cfg.horizon = 7;
  Env env(cfg);
  env.reset(suite.tasks[0], 3);
  StepResult r;
  for (int i = 0; i < 7; ++i) {
    ASSERT_FALSE(env.state().done);
    r = env.step(zero_action(false));
    EXPECT_EQ(r.sparse_reward, 0.0);
  }
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.info.truncated);
  EXPECT_FALSE(r.info.success);
  EXPECT_EQ(r.info.episode_length, 7);
  EXPECT_THROW(env.step(zero_action(false)), Error);
}

TEST(Env, GraspNeedsProximityAndYawAlignment) {
  const TaskSuite suite = testkit::small_suite();
  const SimConfig cfg;
  const TaskSpec& task = first_task(suite, Suite::object);
  WorldState s = initial_state(task, 5, cfg);
  const int target = task.stages[0].object;
  s.gripper_pos = s.objects[target].pos;
  s.gripper_yaw = s.objects[target].yaw + 2.0 * cfg.yaw_tol;
  WorldState misaligned = s;
  step_state(misaligned, task, zero_action(true), cfg);
  EXPECT_EQ(misaligned.attached_index(), -1);

  s.gripper_yaw = s.objects[target].yaw;
  step_state(s, task, zero_action(true), cfg);
  EXPECT_EQ(s.attached_index(), target);
  EXPECT_EQ(s.gripper_open, 0.0);
}

TEST(Env, PlacementInRegionCompletesSingleStageTask) {
  const TaskSuite suite = testkit::small_suite();
  const SimConfig cfg;
  const TaskSpec& task = first_task(suite, Suite::goal);
  WorldState s = initial_state(task, 9, cfg);
  const Stage st = task.stages[0];
  s.objects[st.object].attached = true;
  s.gripper_open = 0.0;
  s.gripper_pos = {s.regions[st.region].center[0], s.regions[st.region].center[1],
                   cfg.table_z + 0.05};
  WorldState too_high = s;
  too_high.gripper_pos[2] = cfg.table_z + cfg.h_place + 0.05;
  const StepResult miss = step_state(too_high, task, zero_action(false), cfg);
  EXPECT_FALSE(miss.done);
  EXPECT_EQ(too_high.stage, 0);
  EXPECT_EQ(too_high.objects[st.object].pos[2], cfg.table_z);

  const StepResult hit = step_state(s, task, zero_action(false), cfg);
  EXPECT_TRUE(hit.done);
  EXPECT_TRUE(hit.info.success);
  EXPECT_EQ(hit.sparse_reward, 1.0);
}

TEST(Env, WrongObjectDoesNotAdvance) {
  const TaskSuite suite = testkit::small_suite();
  const SimConfig cfg;
  const TaskSpec& task = first_task(suite, Suite::object);
  WorldState s = initial_state(task, 9, cfg);
  const Stage st = task.stages[0];
  const int other = (st.object + 1) % static_cast<int>(kObjectsPerScene);
  s.objects[other].attached = true;
  s.gripper_open = 0.0;
  s.gripper_pos = s.regions[st.region].center;
  const StepResult r = step_state(s, task, zero_action(false), cfg);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(s.stage, 0);
}

TEST(Env, ExpertSolvesEverySuite) {
  const TaskSuite suite = testkit::small_suite();
  const SimConfig cfg;
  const auto r = rl::evaluate(rl::expert_actions(), suite.tasks, 5, 21, cfg);
  for (std::size_t t = 0; t < suite.tasks.size(); ++t)
    EXPECT_GE(r.successes[t], 4u) << "task " << t;
  EXPECT_GE(r.success_rate, 0.95);
}

TEST(Env, RejectsNonFiniteActions) {
  const TaskSuite suite = testkit::small_suite();
  Env env;
  env.reset(suite.tasks[0], 1);
  ActionVector a{};
  a[2] = std::nan("");
  EXPECT_THROW(env.step(a), Error);
}

TEST(VecEnv, AutoResetUsesSamplerAndFreshObservation) {
  const TaskSuite suite = testkit::small_suite();
  SimConfig cfg;
  cfg.horizon = 2;
  VecEnv venv(cfg, suite.tasks, 3, 17);
  venv.reset({0, 1, 2}, {1, 2, 3});
  const TaskSampler sampler = [](std::size_t env_id, CounterRng&) { return env_id + 4; };
  const std::vector<ActionVector> acts(3, zero_action(false));
  auto first = venv.step(acts, sampler);
  for (const auto& r : first) EXPECT_FALSE(r.done);
  auto second = venv.step(acts, sampler);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(second[i].done);
    EXPECT_EQ(venv.slot(i).task_index, i + 4);
    EXPECT_EQ(venv.slot(i).env.state().step_index, 0);
    EXPECT_EQ(second[i].next_obs, venv.slot(i).env.observation());
  }
  const TaskSampler bad = [](std::size_t, CounterRng&) { return std::size_t{99}; };
  venv.step(acts, sampler);
  EXPECT_THROW(venv.step(acts, bad), Error);
}

TEST(Env, WrapAngleStaysInRange) {
  CounterRng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-50.0, 50.0);
    const double w = wrap_angle(a);
    EXPECT_GE(w, -std::numbers::pi);
    EXPECT_LT(w, std::numbers::pi);
    EXPECT_NEAR(std::remainder(a - w, 2.0 * std::numbers::pi), 0.0, 1e-9);
  }
}
