#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "vlarl/vlarl.h"

namespace {

std::string get(const vlarl_config* c, const char* key) {
  size_t need = 0;
  EXPECT_EQ(vlarl_config_get(c, key, nullptr, 0, &need), VLARL_OK);
  std::vector<char> buf(need);
  EXPECT_EQ(vlarl_config_get(c, key, buf.data(), buf.size(), &need), VLARL_OK);
  return buf.data();
}

}  // namespace

TEST(CApi, ConfigLifecycleAndBufferProtocol) {
  vlarl_config* c = nullptr;
  ASSERT_EQ(vlarl_config_new(&c), VLARL_OK);
  EXPECT_EQ(get(c, "ppo.clip_eps"), "0.2");
  EXPECT_EQ(vlarl_config_set(c, "ppo.clip_eps", "0.3"), VLARL_OK);
  EXPECT_EQ(get(c, "ppo.clip_eps"), "0.3");
  EXPECT_EQ(vlarl_config_assign(c, "seed=4"), VLARL_OK);
  EXPECT_EQ(get(c, "seed"), "4");

  size_t need = 0;
  char tiny[2];
  EXPECT_EQ(vlarl_config_get(c, "rl.suite", tiny, sizeof(tiny), &need), VLARL_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(need, std::strlen("\"object\"") + 1);
  EXPECT_EQ(vlarl_config_get(c, "nope", nullptr, 0, &need), VLARL_ERR_CONFIG);
  EXPECT_NE(std::string(vlarl_last_error()).find("nope"), std::string::npos);
  EXPECT_EQ(vlarl_config_assign(c, "ppo.epochs=x"), VLARL_ERR_CONFIG);
  EXPECT_EQ(vlarl_config_load(c, "/nonexistent/c.json"), VLARL_ERR_IO);
  EXPECT_EQ(vlarl_config_digest(c, nullptr, 0, &need), VLARL_OK);
  EXPECT_EQ(need, 17u);
  vlarl_config_free(c);
  vlarl_config_free(nullptr);
}

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(vlarl_config_new(nullptr), VLARL_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(vlarl_cmd_sft(nullptr), VLARL_ERR_INVALID_ARGUMENT);
  EXPECT_STREQ(vlarl_status_name(VLARL_ERR_NUMERIC), "numeric failure");
  EXPECT_NE(std::string(vlarl_version()), "");
}

TEST(CApi, EnvironmentStepping) {
  vlarl_config* c = nullptr;
  ASSERT_EQ(vlarl_config_new(&c), VLARL_OK);
  size_t tasks = 0;
  ASSERT_EQ(vlarl_task_count(c, &tasks), VLARL_OK);
  EXPECT_EQ(tasks, 40u);
  vlarl_env* env = nullptr;
  EXPECT_EQ(vlarl_env_new(c, tasks, 1, &env), VLARL_ERR_INVALID_ARGUMENT);
  ASSERT_EQ(vlarl_env_new(c, 0, 1, &env), VLARL_OK);
  std::vector<double> obs(vlarl_feature_dim());
  EXPECT_EQ(vlarl_env_observe(env, obs.data(), obs.size()), VLARL_OK);
  EXPECT_EQ(vlarl_env_observe(env, obs.data(), obs.size() - 1), VLARL_ERR_INVALID_ARGUMENT);
  std::vector<double> action(vlarl_action_dims(), 0.0);
  double reward = -1.0;
  int done = 0, success = 0, steps = 0;
  while (!done) {
    ASSERT_EQ(vlarl_env_step(env, action.data(), &reward, &done, &success), VLARL_OK);
    ++steps;
  }
  EXPECT_EQ(steps, 60);
  EXPECT_EQ(success, 0);
  EXPECT_EQ(vlarl_env_step(env, action.data(), &reward, &done, &success), VLARL_ERR_STATE);
  vlarl_env_free(env);
  vlarl_config_free(c);
}

TEST(CApi, PipelineThroughCommands) {
  const auto dir = std::filesystem::temp_directory_path() / "vlarl_capi_pipeline";
  std::filesystem::remove_all(dir);
  vlarl_config* c = nullptr;
  ASSERT_EQ(vlarl_config_new(&c), VLARL_OK);
  vlarl_set_log_callback(nullptr, nullptr);
  ASSERT_EQ(vlarl_config_set(c, "run_dir", dir.c_str()), VLARL_OK);
  for (const char* kv : {"suite.spatial=1", "suite.object=2", "suite.goal=1", "suite.long=1",
                         "demos.episodes_per_task=2", "policy.width=16", "policy.head_width=8",
                         "bc.epochs=1", "rprm.beta=0", "rl.num_envs=2", "rl.steps_per_env=8",
                         "rl.iterations=1", "eval.episodes_per_task=1", "ppo.warmup_iters=0"})
    ASSERT_EQ(vlarl_config_assign(c, kv), VLARL_OK) << kv;
  EXPECT_EQ(vlarl_cmd_train(c, 0), VLARL_ERR_IO);
  ASSERT_EQ(vlarl_cmd_gen_demos(c), VLARL_OK) << vlarl_last_error();
  ASSERT_EQ(vlarl_cmd_sft(c), VLARL_OK) << vlarl_last_error();
  ASSERT_EQ(vlarl_cmd_train(c, 0), VLARL_OK) << vlarl_last_error();

  size_t need = 0;
  std::vector<char> dirbuf(4096);
  ASSERT_EQ(vlarl_rl_dir(c, dirbuf.data(), dirbuf.size(), &need), VLARL_OK);
  const std::string policy = std::string(dirbuf.data()) + "/policy.ckpt";
  vlarl_policy* p = nullptr;
  ASSERT_EQ(vlarl_policy_load(policy.c_str(), &p), VLARL_OK) << vlarl_last_error();
  vlarl_env* env = nullptr;
  ASSERT_EQ(vlarl_env_new(c, 0, 3, &env), VLARL_OK);
  std::vector<double> action(vlarl_action_dims());
  ASSERT_EQ(vlarl_policy_act(p, env, action.data(), action.size()), VLARL_OK) << vlarl_last_error();
  for (double a : action) {
    EXPECT_GE(a, -1.0);
    EXPECT_LE(a, 1.0);
  }
  std::vector<char> report(1 << 16);
  ASSERT_EQ(vlarl_cmd_eval(c, policy.c_str(), "object", 1, "", report.data(), report.size(), &need),
            VLARL_OK)
      << vlarl_last_error();
  EXPECT_NE(std::string(report.data()).find("success_rate"), std::string::npos);
  const std::string csv = (dir / "m.csv").string();
  EXPECT_EQ(vlarl_cmd_export(c, nullptr, "metrics", csv.c_str()), VLARL_OK) << vlarl_last_error();
  EXPECT_TRUE(std::filesystem::exists(csv));
  EXPECT_EQ(vlarl_policy_load((dir / "nothing.ckpt").c_str(), &p), VLARL_ERR_IO);
  vlarl_env_free(env);
  vlarl_policy_free(p);
  vlarl_config_free(c);
  std::filesystem::remove_all(dir);
}
