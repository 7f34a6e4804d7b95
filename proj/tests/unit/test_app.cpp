#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "testkit.hpp"
#include "vlarl/app/checkpoint.hpp"
#include "vlarl/app/commands.hpp"
#include "vlarl/app/config.hpp"
#include "vlarl/app/store.hpp"
#include "vlarl/error.hpp"

using namespace vlarl;
using namespace vlarl::app;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vlarl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no vlarl::Error thrown";
  return ErrorKind::state;
}

std::string read_error(const fs::path& p) {
  try {
    read_checkpoint(p);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsOverridesAndValidation) {
  RunConfig c;
  EXPECT_EQ(c.real("ppo.gamma"), 0.99);
  EXPECT_EQ(c.integer("ppo.minibatch"), 256);
  EXPECT_EQ(c.real("rl.temperature"), 1.5);
  EXPECT_EQ(c.integer("rl.num_envs"), 16);
  EXPECT_EQ(c.real("rprm.beta"), 0.1);
  const std::string d0 = c.digest();
  c.set("ppo.lr=2e-4");
  EXPECT_EQ(c.real("ppo.lr"), 2e-4);
  EXPECT_NE(c.digest(), d0);
  c.set("curriculum.uniform", "true");
  EXPECT_TRUE(c.flag("curriculum.uniform"));
  c.set("rl.suite=goal");
  EXPECT_EQ(c.text("rl.suite"), "goal");
  c.set("ppo.gamma=1");
  EXPECT_EQ(c.real("ppo.gamma"), 1.0);
  EXPECT_EQ(kind_of([&] { c.set("nope=1"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { c.set("ppo.epochs=2.5"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { c.set("ppo.epochs"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { c.merge(nlohmann::json{{"curriculum.uniform", 3}}); }), ErrorKind::config);
}

TEST(Config, ResumeDigestIgnoresIterationCount) {
  RunConfig a, b;
  b.set("rl.iterations=99");
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.resume_digest(), b.resume_digest());
  b.set("ppo.lr=1e-4");
  EXPECT_NE(a.resume_digest(), b.resume_digest());
}

TEST(Config, FileLoadAndRunTags) {
  const fs::path dir = scratch("config");
  write_text(dir / "c.json", R"({"seed": 3, "rprm.beta": 0.0, "ppo.warmup_iters": 0})");
  RunConfig c;
  c.load_file(dir / "c.json");
  EXPECT_EQ(run_tag(c), "no-rprm-warmup0-seed3");
  RunConfig d;
  EXPECT_EQ(run_tag(d), "default-seed1");
  d.set("rl.tag=mine");
  EXPECT_EQ(run_tag(d), "mine");
  write_text(dir / "bad.json", "{not json");
  EXPECT_EQ(kind_of([&] { c.load_file(dir / "bad.json"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { c.load_file(dir / "missing.json"); }), ErrorKind::io);
  fs::remove_all(dir);
}

TEST(Config, EnvironmentOverridesRunDir) {
  RunConfig c;
  c.set("run_dir=/tmp/a");
  ::setenv(kRunDirEnv, "/tmp/b", 1);
  EXPECT_EQ(c.run_dir(), fs::path("/tmp/b"));
  ::unsetenv(kRunDirEnv);
  EXPECT_EQ(c.run_dir(), fs::path("/tmp/a"));
}

TEST(Checkpoint, PolicyRoundTrip) {
  const fs::path dir = scratch("ckpt");
  const auto suite = testkit::small_suite();
  Policy p(testkit::small_policy_config(suite), 4);
  testkit::perturb(p.params_mut(), 0.1, 5);
  nn::GradMap g = p.params().zero_grads();
  for (auto& [_, t] : g)
    for (double& v : t.data) v = 0.01;
  p.params_mut().adam_step(g, nn::AdamConfig{});
  save_policy(dir / "p.ckpt", p);
  const Policy q = load_policy(dir / "p.ckpt");
  ASSERT_EQ(q.params().size(), p.params().size());
  for (std::size_t i = 0; i < p.params().size(); ++i)
    EXPECT_EQ(q.params().entries()[i].value, p.params().entries()[i].value);
  EXPECT_EQ(q.config().trunk.width, p.config().trunk.width);
  EXPECT_EQ(kind_of([&] { load_reward_model(dir / "p.ckpt"); }), ErrorKind::io);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionNamesTheField) {
  const fs::path dir = scratch("corrupt");
  Checkpoint ck;
  ck.tensors.push_back({"a", nn::Tensor({2, 3}, 1.5)});
  ck.meta["x"] = 1;
  write_checkpoint(dir / "ok.ckpt", ck);
  const auto back = read_checkpoint(dir / "ok.ckpt");
  EXPECT_EQ(back.tensor("a"), ck.tensors[0].value);
  EXPECT_EQ(back.meta["x"], 1);
  const std::string bytes = read_text(dir / "ok.ckpt");

  auto variant = [&](const std::string& name, std::string data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return read_error(dir / name);
  };
  std::string m = bytes;
  m[0] = 'X';
  EXPECT_NE(variant("magic", m).find("magic"), std::string::npos);
  std::string v = bytes;
  v[8] = 9;
  EXPECT_NE(variant("version", v).find("version"), std::string::npos);
  EXPECT_NE(variant("short", bytes.substr(0, 14)).find("header_length"), std::string::npos);
  EXPECT_NE(variant("payload", bytes.substr(0, bytes.size() - 8)).find("payload"), std::string::npos);
  std::string h = bytes;
  const auto pos = h.find("\"shape\":[2,3]");
  ASSERT_NE(pos, std::string::npos);
  h.replace(pos, 13, "\"shape\":[2,4]");
  EXPECT_NE(variant("shape", h).find("tensors[0]"), std::string::npos);
  EXPECT_NE(read_error(dir / "absent.ckpt").find("absent"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Store, DemoRoundTripAndManifest) {
  const fs::path dir = scratch("demos");
  const auto suite = testkit::small_suite();
  const auto data = generate_demos(suite, std::vector<std::size_t>{0, 5}, 2, 4, sim::SimConfig{});
  save_demos(DemoFiles{dir}, data, suite);
  const auto back = load_demos(DemoFiles{dir}.data());
  EXPECT_EQ(back.digest(), data.digest());
  ASSERT_EQ(back.episodes.size(), data.episodes.size());
  EXPECT_EQ(back.episodes[1].steps.back().obs, data.episodes[1].steps.back().obs);
  EXPECT_EQ(back.episodes[1].steps[2].tokens, data.episodes[1].steps[2].tokens);
  const auto manifest = nlohmann::json::parse(read_text(DemoFiles{dir}.manifest()));
  EXPECT_EQ(manifest["episodes"], data.episodes.size());
  EXPECT_EQ(manifest["digest"], data.digest());
  EXPECT_EQ(Vocabulary::from_tsv(read_text(DemoFiles{dir}.vocab())), suite.vocab);
  fs::remove_all(dir);
}

TEST(Store, TrajectoryJsonlErrors) {
  const fs::path dir = scratch("traj");
  write_text(dir / "a.jsonl", "{\"episode_id\": 1, \"success\": true}\n");
  EXPECT_EQ(kind_of([&] { read_trajectory_jsonl(dir / "a.jsonl"); }), ErrorKind::io);
  write_text(dir / "b.jsonl", "\n{\"episode_id\": 1, \"task_id\": 0, \"success\": true, \"steps\": "
                              "[{\"gripper_open\": 1, \"gripper_pos\": [0, 0, 0]}]}\n\n");
  EXPECT_EQ(read_trajectory_jsonl(dir / "b.jsonl").size(), 1u);
  fs::remove_all(dir);
}

namespace {

struct ResumeSetup {
  sim::TaskSuite suite = testkit::small_suite();
  sim::SimConfig sim_cfg;
  rl::TrainConfig cfg;
  Policy policy;
  rprm::RewardModel rm;

  ResumeSetup() {
    sim_cfg.horizon = 10;
    cfg.num_envs = 8;
    cfg.rollout.steps_per_env = 12;
    cfg.ppo.minibatch = 32;
    cfg.ppo.epochs = 2;
    cfg.ppo.lr = 1e-3;
    cfg.ppo.warmup_iters = 1;
    policy = Policy(testkit::small_policy_config(suite), 2);
    testkit::perturb(policy.params_mut(), 0.2, 3);
    rm = rprm::RewardModel(testkit::small_reward_config(suite), 4);
    testkit::perturb(rm.params_mut(), 0.2, 5);
  }
  rl::Trainer make() const { return rl::Trainer(cfg, policy, rm, suite.tasks, sim_cfg); }
};

}  // namespace

TEST(Resume, OneIterationAfterRestoreIsBitIdentical) {
  const fs::path dir = scratch("resume");
  ResumeSetup s;
  rl::Trainer straight = s.make();
  straight.iterate();
  write_checkpoint(dir / "mid.ckpt", trainer_checkpoint(straight, s.rm, "cfg"));
  const auto expected = straight.iterate();

  rl::Trainer resumed = s.make();
  restore_trainer(resumed, read_checkpoint(dir / "mid.ckpt"), "cfg");
  EXPECT_EQ(resumed.iteration(), 1);
  EXPECT_TRUE(resumed.warmed_up());
  const auto got = resumed.iterate();
  EXPECT_TRUE(resumed.policy().params() == straight.policy().params());
  EXPECT_EQ(resumed.policy().params().step_count(), straight.policy().params().step_count());
  EXPECT_TRUE(resumed.tracker() == straight.tracker());
  EXPECT_TRUE(resumed.rollout_state() == straight.rollout_state());
  EXPECT_EQ(resumed.orchestrator().decode_rngs(), straight.orchestrator().decode_rngs());
  EXPECT_EQ(got.mean_return, expected.mean_return);
  EXPECT_EQ(got.ppo.policy_loss, expected.ppo.policy_loss);
  auto a = metrics_json(got), b = metrics_json(expected);
  a.erase("wall_times");
  b.erase("wall_times");
  EXPECT_EQ(a.dump(), b.dump());

  rl::Trainer other = s.make();
  EXPECT_EQ(kind_of([&] { restore_trainer(other, read_checkpoint(dir / "mid.ckpt"), "different"); }),
            ErrorKind::config);
  fs::remove_all(dir);
}

namespace {

RunConfig tiny_config(const fs::path& dir) {
  RunConfig c;
  c.set("run_dir", dir.string());
  for (const char* kv :
       {"suite.spatial=2", "suite.object=2", "suite.goal=2", "suite.long=2", "demos.episodes_per_task=3",
        "policy.width=16", "policy.head_width=8", "bc.epochs=2", "rprm.epochs=1", "rl.num_envs=4",
        "rl.steps_per_env=16", "rl.iterations=2", "rl.eval_every=1", "rl.checkpoint_every=1",
        "eval.episodes_per_task=1", "sim.horizon=20", "ppo.warmup_iters=1", "ppo.minibatch=32"})
    c.set(kv);
  return c;
}

std::vector<std::string> metrics_without_wall_times(const fs::path& file) {
  std::vector<std::string> out;
  for (const auto& line : read_lines(file)) {
    auto j = nlohmann::ordered_json::parse(line);
    j.erase("wall_times");
    out.push_back(j.dump());
  }
  return out;
}

}  // namespace

TEST(Commands, PipelineRerunAndResumeReproduceMetrics) {
  const fs::path dir = scratch("pipeline");
  set_log_sink([](const std::string&) {});
  RunConfig c = tiny_config(dir);
  const auto demos = cmd_gen_demos(c);
  EXPECT_GT(demos.manifest["episodes"].get<int>(), 0);
  const auto sft = cmd_sft(c);
  EXPECT_EQ(read_lines(RunPaths{dir}.sft_loss()).size(), 3u);
  const auto lab = cmd_label(c);
  EXPECT_EQ(lab.skipped_unsuccessful, 0u);
  cmd_train_rprm(c);
  const auto first = cmd_train(c, false);
  const auto stream = metrics_without_wall_times(RlPaths{first.dir}.metrics());
  ASSERT_EQ(stream.size(), 2u);
  const std::string final_policy = read_text(RlPaths{first.dir}.policy());

  cmd_train(c, false);
  EXPECT_EQ(metrics_without_wall_times(RlPaths{first.dir}.metrics()), stream);
  EXPECT_EQ(read_text(RlPaths{first.dir}.policy()), final_policy);

  RunConfig shorter = c;
  shorter.set("rl.iterations=1");
  cmd_train(shorter, false);
  cmd_train(c, true);
  EXPECT_EQ(metrics_without_wall_times(RlPaths{first.dir}.metrics()), stream);
  EXPECT_EQ(read_text(RlPaths{first.dir}.policy()), final_policy);
  EXPECT_EQ(read_text(RlPaths{first.dir}.config()), c.dump());

  const auto report = cmd_eval(c, RlPaths{first.dir}.policy().string(), "all", 1);
  EXPECT_EQ(report["episodes"], 8);
  const std::string csv = cmd_export(first.dir, "metrics", dir / "m.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const std::string cov = cmd_export(first.dir, "action-coverage");
  EXPECT_EQ(cov.rfind("source,dx,dy\n", 0), 0u);
  EXPECT_EQ(kind_of([&] { cmd_export(first.dir, "bogus"); }), ErrorKind::config);

  RunConfig wrong = c;
  wrong.set("policy.width=32");
  EXPECT_EQ(kind_of([&] { cmd_train(wrong, false); }), ErrorKind::config);
  set_log_sink(nullptr);
  fs::remove_all(dir);
}

TEST(Commands, MissingArtifactsAreIoErrors) {
  const fs::path dir = scratch("missing");
  RunConfig c = tiny_config(dir);
  set_log_sink([](const std::string&) {});
  EXPECT_EQ(kind_of([&] { cmd_sft(c); }), ErrorKind::io);
  EXPECT_EQ(kind_of([&] { cmd_train(c, false); }), ErrorKind::io);
  set_log_sink(nullptr);
  fs::remove_all(dir);
}
