#include "vlarl/app/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>

#include "vlarl/app/checkpoint.hpp"
#include "vlarl/app/store.hpp"
#include "vlarl/error.hpp"

namespace vlarl::app {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::mutex log_mu;
LogSink& sink() {
  static LogSink s = [](const std::string& msg) { std::cerr << msg << '\n'; };
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string num(double v) { return fmt("%.17g", v); }

void echo_config(const RunConfig& cfg, const std::filesystem::path& path) {
  write_text(path, cfg.dump());
}

RunPaths paths_of(const RunConfig& cfg) { return RunPaths{cfg.run_dir()}; }

void require(const std::filesystem::path& p, const std::string& producer) {
  if (!std::filesystem::exists(p))
    throw io_error("missing " + p.string() + " (run '" + producer + "' first)");
}

std::vector<sim::TaskSpec> select_tasks(const sim::TaskSuite& suite, const std::string& name) {
  std::vector<sim::TaskSpec> tasks;
  for (std::size_t i : suite_task_indices(suite, name)) tasks.push_back(suite.tasks[i]);
  return tasks;
}

void check_policy_config(const Policy& p, const PolicyConfig& want) {
  if (policy_config_json(p.config()) != policy_config_json(want))
    throw config_error("checkpoint policy architecture " + policy_config_json(p.config()).dump() +
                       " does not match the configured " + policy_config_json(want).dump());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void set_log_sink(LogSink s) {
  std::lock_guard lock(log_mu);
  sink() = s ? std::move(s) : [](const std::string&) {};
}

void log_message(const std::string& msg) {
  std::lock_guard lock(log_mu);
  sink()(msg);
}

std::vector<std::size_t> suite_task_indices(const sim::TaskSuite& suite, const std::string& name) {
  std::vector<std::size_t> out;
  if (name == "all") {
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) out.push_back(i);
  } else {
    sim::Suite s;
    try {
      s = sim::suite_from_name(name);
    } catch (const Error&) {
      throw config_error("unknown suite '" + name + "' (expected spatial, object, goal, long or all)");
    }
    out = suite.indices_of(s);
  }
  if (out.empty()) throw config_error("suite '" + name + "' has no tasks");
  return out;
}

GenDemosResult cmd_gen_demos(const RunConfig& cfg) {
  const RunPaths paths = paths_of(cfg);
  std::filesystem::create_directories(paths.root);
  echo_config(cfg, paths.config());
  const sim::TaskSuite suite = sim::make_suite(suite_config(cfg));
  const auto indices = suite_task_indices(suite, cfg.text("demos.suites"));
  const int per_task = static_cast<int>(cfg.integer("demos.episodes_per_task"));
  if (per_task < 0) throw config_error("demos.episodes_per_task must be non-negative");
  const DemoDataset data =
      generate_demos(suite, indices, per_task, cfg.u64("demos.seed"), sim_config(cfg));
  for (const auto& w : data.warnings) log_message("warning: " + w);
  const DemoFiles files{paths.demos_dir()};
  save_demos(files, data, suite);
  log_message("gen-demos: " + std::to_string(data.episodes.size()) + "/" +
              std::to_string(data.attempted) + " successful episodes, " +
              std::to_string(data.step_count()) + " steps -> " + files.dir.string());
  return {files.dir, demo_manifest(data, suite)};
}

SftResult cmd_sft(const RunConfig& cfg) {
  const RunPaths paths = paths_of(cfg);
  require(paths.demos(), "gen-demos");
  echo_config(cfg, paths.config());
  const sim::TaskSuite suite = sim::make_suite(suite_config(cfg));
  const DemoDataset data = load_demos(paths.demos());
  Policy policy(policy_config(cfg, suite), cfg.u64("policy.seed"));
  std::string loss_lines;
  const BcReport report = bc_train(policy, data, bc_config(cfg), [&](int epoch, double loss) {
    log_message("sft: epoch " + std::to_string(epoch) + " loss " + fmt("%.5f", loss));
  });
  ordered_json first;
  first["epoch"] = 0;
  first["loss"] = report.initial_loss;
  loss_lines += first.dump() + "\n";
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    ordered_json j;
    j["epoch"] = e + 1;
    j["loss"] = report.epoch_losses[e];
    loss_lines += j.dump() + "\n";
  }
  write_text(paths.sft_loss(), loss_lines);
  save_policy(paths.sft(), policy, {{"config_digest", cfg.digest()}});
  log_message("sft: wrote " + paths.sft().string());
  return {paths.sft(), report};
}

LabelResult cmd_label(const RunConfig& cfg, const std::filesystem::path& input,
                      const std::filesystem::path& output) {
  const RunPaths paths = paths_of(cfg);
  LabelResult res;
  res.output = output.empty() ? paths.labels() : output;
  std::vector<Trajectory> episodes;
  if (input.empty()) {
    require(paths.demos(), "gen-demos");
    episodes = load_demos(paths.demos()).episodes;
  } else {
    episodes = read_trajectory_jsonl(input);
  }
  if (output.empty()) echo_config(cfg, paths.config());
  const rprm::LabelRun run = rprm::label_dataset(episodes, label_config(cfg));
  write_text(res.output, rprm::labels_to_jsonl(run));
  res.labeled_episodes = run.episodes.size();
  res.skipped_unsuccessful = run.skipped_unsuccessful;
  for (const auto& e : run.episodes) {
    res.labels += e.labels.size();
    for (const auto& l : e.labels) res.positives += l.positive ? 1 : 0;
  }
  if (run.skipped_unsuccessful > 0) {
    log_message("warning: skipped " + std::to_string(run.skipped_unsuccessful) +
                " unsuccessful episode(s)");
  }
  log_message("label: " + std::to_string(res.labels) + " labels (" +
              std::to_string(res.positives) + " positive) over " +
              std::to_string(res.labeled_episodes) + " episodes -> " + res.output.string());
  return res;
}

RprmResult cmd_train_rprm(const RunConfig& cfg) {
  const RunPaths paths = paths_of(cfg);
  require(paths.demos(), "gen-demos");
  require(paths.labels(), "label");
  echo_config(cfg, paths.config());
  const sim::TaskSuite suite = sim::make_suite(suite_config(cfg));
  const DemoDataset data = load_demos(paths.demos());
  const rprm::LabelRun labels = read_labels_jsonl(paths.labels());
  const auto steps = rprm::join_labels(data, labels);
  rprm::RewardModel model(reward_model_config(cfg, suite), cfg.u64("rprm.seed"));
  const rprm::RprmReport report = rprm::train_rprm(model, steps, rprm_train_config(cfg));
  save_reward_model(paths.rprm(), model, {{"config_digest", cfg.digest()}});
  ordered_json r;
  r["initial_loss"] = report.initial_loss;
  r["epoch_losses"] = report.epoch_losses;
  r["heldout_accuracy"] = report.heldout_accuracy;
  r["positive_mean_score"] = report.positive_mean_score;
  r["negative_mean_score"] = report.negative_mean_score;
  r["train_steps"] = report.train_steps;
  r["heldout_steps"] = report.heldout_steps;
  write_text(paths.rprm_report(), r.dump(2) + "\n");
  log_message("train-rprm: loss " + fmt("%.4f", report.initial_loss) + " -> " +
              fmt("%.4f", report.epoch_losses.empty() ? report.initial_loss
                                                      : report.epoch_losses.back()) +
              ", held-out accuracy " + fmt("%.3f", report.heldout_accuracy));
  return {paths.rprm(), report};
}

ordered_json metrics_json(const rl::IterationMetrics& m) {
  ordered_json j;
  j["iter"] = m.iter;
  j["env_steps"] = m.env_steps;
  j["episodes"] = m.episodes;
  j["successes"] = m.successes;
  j["success_rate"] = m.episodes ? static_cast<double>(m.successes) / static_cast<double>(m.episodes) : 0.0;
  j["mean_return"] = m.mean_return;
  j["mean_episode_len"] = m.mean_episode_len;
  j["mean_success_len"] = m.mean_success_len;
  j["entropy"] = m.entropy;
  j["policy_loss"] = m.ppo.policy_loss;
  j["value_loss"] = m.ppo.value_loss;
  j["approx_kl"] = m.ppo.approx_kl;
  j["clip_frac"] = m.ppo.clip_frac;
  j["ppo_epochs"] = m.ppo.epochs_run;
  j["early_stopped"] = m.ppo.early_stopped;
  j["per_task_success"] = m.per_task_success;
  j["wall_times"] = {{"env", m.wall_times.env},
                     {"inference", m.wall_times.inference},
                     {"learn", m.wall_times.learn}};
  return j;
}

ordered_json eval_report(const rl::EvalResult& r, std::span<const sim::TaskSpec> tasks) {
  ordered_json per_task = ordered_json::array();
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_suite;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto [lo, hi] = rl::wilson_interval(r.successes[i], r.episodes[i]);
    ordered_json t;
    t["task_id"] = tasks[i].task_id;
    t["suite"] = sim::suite_name(tasks[i].suite);
    t["instruction"] = tasks[i].instruction;
    t["successes"] = r.successes[i];
    t["episodes"] = r.episodes[i];
    t["success_rate"] = r.episodes[i] ? static_cast<double>(r.successes[i]) / static_cast<double>(r.episodes[i]) : 0.0;
    t["ci_low"] = lo;
    t["ci_high"] = hi;
    t["mean_success_length"] = r.mean_success_length[i];
    per_task.push_back(t);
    auto& agg = per_suite[sim::suite_name(tasks[i].suite)];
    agg.first += r.successes[i];
    agg.second += r.episodes[i];
  }
  ordered_json suites = ordered_json::object();
  for (const auto& [name, agg] : per_suite) {
    const auto [lo, hi] = rl::wilson_interval(agg.first, agg.second);
    suites[name] = {{"successes", agg.first},
                    {"episodes", agg.second},
                    {"success_rate", agg.second ? static_cast<double>(agg.first) / static_cast<double>(agg.second) : 0.0},
                    {"ci_low", lo},
                    {"ci_high", hi}};
  }
  std::size_t succ = 0, eps = 0;
  double len = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    succ += r.successes[i];
    eps += r.episodes[i];
    len += r.mean_success_length[i] * static_cast<double>(r.successes[i]);
  }
  ordered_json out;
  out["success_rate"] = r.success_rate;
  out["ci_low"] = r.ci_low;
  out["ci_high"] = r.ci_high;
  out["successes"] = succ;
  out["episodes"] = eps;
  out["mean_success_length"] = succ ? len / static_cast<double>(succ) : 0.0;
  out["suites"] = suites;
  out["tasks"] = per_task;
  return out;
}

namespace {

void write_coverage(const std::filesystem::path& path,
                    const std::vector<std::pair<double, double>>& actions) {
  std::string text;
  for (const auto& [dx, dy] : actions) text += num(dx) + "," + num(dy) + "\n";
  write_text(path, text);
}

void truncate_jsonl(const std::filesystem::path& path, const std::string& key, std::int64_t limit) {
  std::string kept;
  for (const auto& line : read_lines(path)) {
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains(key)) throw io_error(path.string() + ": malformed line");
    if (j[key].get<std::int64_t>() < limit) kept += line + "\n";
  }
  write_text(path, kept);
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, bool resume) {
  const auto t_start = std::chrono::steady_clock::now();
  const RunPaths paths = paths_of(cfg);
  require(paths.sft(), "sft");
  const sim::TaskSuite suite = sim::make_suite(suite_config(cfg));
  const std::vector<sim::TaskSpec> tasks = select_tasks(suite, cfg.text("rl.suite"));
  const sim::SimConfig sim_cfg = sim_config(cfg);
  const rl::TrainConfig tc = train_config(cfg);
  const int iterations = static_cast<int>(cfg.integer("rl.iterations"));
  const int eval_every = static_cast<int>(cfg.integer("rl.eval_every"));
  const int ckpt_every = static_cast<int>(cfg.integer("rl.checkpoint_every"));
  if (iterations < 0) throw config_error("rl.iterations must be non-negative");
  if (eval_every <= 0 || ckpt_every <= 0)
    throw config_error("rl.eval_every and rl.checkpoint_every must be positive");
  const int eval_eps = static_cast<int>(cfg.integer("eval.episodes_per_task"));
  if (eval_eps <= 0) throw config_error("eval.episodes_per_task must be positive");
  const std::uint64_t eval_seed = cfg.u64("eval.seed");

  Policy policy = load_policy(paths.sft());
  check_policy_config(policy, policy_config(cfg, suite));
  std::optional<rprm::RewardModel> rm;
  if (tc.rollout.beta > 0.0) {
    require(paths.rprm(), "train-rprm");
    rm = load_reward_model(paths.rprm());
  }

  const std::string tag = run_tag(cfg);
  const RlPaths rp{paths.rl_dir(tag)};
  std::filesystem::create_directories(rp.dir);
  const std::string digest = cfg.resume_digest();

  rl::Trainer trainer(tc, std::move(policy), rm, tasks, sim_cfg);
  auto evaluate_now = [&](const Policy& p) {
    return rl::evaluate(rl::greedy_actions(p), tasks, eval_eps, eval_seed, sim_cfg);
  };
  auto eval_line = [&](int iteration, const rl::EvalResult& r) {
    ordered_json j;
    j["iteration"] = iteration;
    j["env_steps"] = trainer.env_steps();
    const ordered_json rep = eval_report(r, tasks);
    j["success_rate"] = rep["success_rate"];
    j["ci_low"] = rep["ci_low"];
    j["ci_high"] = rep["ci_high"];
    j["mean_success_length"] = rep["mean_success_length"];
    std::vector<double> per_task;
    for (const auto& t : rep["tasks"]) per_task.push_back(t["success_rate"].get<double>());
    j["per_task_success"] = per_task;
    append_line(rp.evals(), j.dump());
    log_message("train[" + tag + "]: eval at iteration " + std::to_string(iteration) + ": success " +
                fmt("%.3f", r.success_rate));
    return r.success_rate;
  };

  TrainResult res;
  res.dir = rp.dir;
  ordered_json summary;
  if (resume) {
    require(rp.latest(), "train");
    restore_trainer(trainer, read_checkpoint(rp.latest()), digest);
    truncate_jsonl(rp.metrics(), "iter", trainer.iteration());
    truncate_jsonl(rp.evals(), "iteration", trainer.iteration() + 1);
    echo_config(cfg, rp.config());
    log_message("train[" + tag + "]: resumed at iteration " + std::to_string(trainer.iteration()));
    if (std::filesystem::exists(rp.summary())) summary = ordered_json::parse(read_text(rp.summary()));
  } else {
    for (const auto& p : {rp.metrics(), rp.evals(), rp.latest(), rp.policy(), rp.coverage("sft"),
                          rp.coverage("rl"), rp.summary()})
      std::filesystem::remove(p);
    echo_config(cfg, rp.config());
    res.baseline_success = eval_line(0, evaluate_now(trainer.policy()));
    const auto warm = trainer.critic_warmup();
    summary["warmup_value_mse"] = warm;
    for (std::size_t w = 0; w < warm.size(); ++w)
      log_message("train[" + tag + "]: critic warmup " + std::to_string(w + 1) + " mse " +
                  fmt("%.5f", warm[w]));
  }

  bool ran = false;
  while (trainer.iteration() < iterations) {
    const rl::IterationMetrics m = trainer.iterate();
    ran = true;
    if (m.iter == 0) write_coverage(rp.coverage("sft"), trainer.last_actions());
    append_line(rp.metrics(), metrics_json(m).dump());
    log_message("train[" + tag + "]: iter " + std::to_string(m.iter) + " success " +
                fmt("%.3f", m.episodes ? static_cast<double>(m.successes) / static_cast<double>(m.episodes) : 0.0) +
                " return " + fmt("%.3f", m.mean_return) + " len " + fmt("%.1f", m.mean_episode_len) +
                " kl " + fmt("%.4f", m.ppo.approx_kl) + " learn " + fmt("%.1fs", m.wall_times.learn));
    const int it = trainer.iteration();
    if (it % eval_every == 0 || it == iterations) res.final_success = eval_line(it, evaluate_now(trainer.policy()));
    if (it % ckpt_every == 0 || it == iterations)
      write_checkpoint(rp.latest(), trainer_checkpoint(trainer, rm, digest));
  }
  if (ran) write_coverage(rp.coverage("rl"), trainer.last_actions());
  save_policy(rp.policy(), trainer.policy(), {{"config_digest", digest}, {"iteration", trainer.iteration()}});
  summary["tag"] = tag;
  summary["iterations"] = trainer.iteration();
  summary["env_steps"] = trainer.env_steps();
  summary["config_digest"] = digest;
  summary["wall_seconds_last_invocation"] = seconds_since(t_start);
  write_text(rp.summary(), summary.dump(2) + "\n");
  res.iterations = trainer.iteration();
  if (!ran) {
    const auto evals = read_lines(rp.evals());
    if (!evals.empty()) res.final_success = json::parse(evals.back())["success_rate"].get<double>();
  }
  if (resume || res.baseline_success == 0.0) {
    const auto evals = read_lines(rp.evals());
    if (!evals.empty()) res.baseline_success = json::parse(evals.front())["success_rate"].get<double>();
  }
  return res;
}

ordered_json cmd_eval(const RunConfig& cfg, const std::string& policy_spec, const std::string& suite_name,
                      int episodes_per_task) {
  if (episodes_per_task <= 0) throw config_error("episodes per task must be positive");
  const sim::TaskSuite suite = sim::make_suite(suite_config(cfg));
  const std::vector<sim::TaskSpec> tasks = select_tasks(suite, suite_name);
  const sim::SimConfig sim_cfg = sim_config(cfg);
  std::optional<Policy> policy;
  rl::ActionFn act;
  if (policy_spec == "expert") {
    act = rl::expert_actions();
  } else {
    if (policy_spec == "untrained") {
      policy.emplace(policy_config(cfg, suite), cfg.u64("policy.seed"));
    } else {
      policy = load_policy(policy_spec);
      check_policy_config(*policy, policy_config(cfg, suite));
    }
    act = rl::greedy_actions(*policy);
  }
  const rl::EvalResult r = rl::evaluate(act, tasks, episodes_per_task, cfg.u64("eval.seed"), sim_cfg);
  ordered_json rep;
  rep["policy"] = policy_spec;
  rep["suite"] = suite_name;
  rep["episodes_per_task"] = episodes_per_task;
  rep["seed"] = cfg.u64("eval.seed");
  rep.update(eval_report(r, tasks));
  return rep;
}

std::string cmd_export(const std::filesystem::path& rl_dir, const std::string& kind,
                       const std::filesystem::path& output) {
  const RlPaths rp{rl_dir};
  std::string csv;
  if (kind == "metrics") {
    static const std::vector<std::string> cols = {
        "iter", "env_steps", "episodes", "successes", "success_rate", "mean_return",
        "mean_episode_len", "mean_success_len", "entropy", "policy_loss", "value_loss",
        "approx_kl", "clip_frac", "ppo_epochs", "early_stopped"};
    if (!std::filesystem::exists(rp.metrics())) throw io_error("missing " + rp.metrics().string());
    for (const auto& c : cols) csv += c + ",";
    csv += "env_seconds,inference_seconds,learn_seconds\n";
    for (const auto& line : read_lines(rp.metrics())) {
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw io_error(rp.metrics().string() + ": malformed line");
      for (const auto& c : cols) {
        if (!j.contains(c)) throw io_error(rp.metrics().string() + ": line lacks field '" + c + "'");
        csv += j[c].dump() + ",";
      }
      const auto& w = j.at("wall_times");
      csv += w.at("env").dump() + "," + w.at("inference").dump() + "," + w.at("learn").dump() + "\n";
    }
  } else if (kind == "action-coverage") {
    csv = "source,dx,dy\n";
    for (const std::string source : {"sft", "rl"}) {
      if (!std::filesystem::exists(rp.coverage(source)))
        throw io_error("missing " + rp.coverage(source).string());
      for (const auto& line : read_lines(rp.coverage(source))) csv += source + "," + line + "\n";
    }
  } else {
    throw config_error("unknown export kind '" + kind + "' (expected metrics or action-coverage)");
  }
  if (!output.empty()) write_text(output, csv);
  return csv;
}

}  // namespace vlarl::app
