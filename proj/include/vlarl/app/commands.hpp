#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlarl/app/config.hpp"
#include "vlarl/rl.hpp"

namespace vlarl::app {

/// Progress messages from the commands; defaults to stderr.
using LogSink = std::function<void(const std::string&)>;
void set_log_sink(LogSink sink);
void log_message(const std::string& msg);

/// Standard artifact locations under a run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path demos_dir() const { return root / "demos"; }
  std::filesystem::path demos() const { return demos_dir() / "demos.bin"; }
  std::filesystem::path sft() const { return root / "sft.ckpt"; }
  std::filesystem::path sft_loss() const { return root / "sft_loss.jsonl"; }
  std::filesystem::path labels() const { return root / "labels.jsonl"; }
  std::filesystem::path rprm() const { return root / "rprm.ckpt"; }
  std::filesystem::path rprm_report() const { return root / "rprm_report.json"; }
  std::filesystem::path rl_dir(const std::string& tag) const { return root / "rl" / tag; }
};

/// Files of one RL run.
struct RlPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path evals() const { return dir / "eval.jsonl"; }
  std::filesystem::path latest() const { return dir / "latest.ckpt"; }
  std::filesystem::path policy() const { return dir / "policy.ckpt"; }
  std::filesystem::path coverage(const std::string& source) const {
    return dir / ("coverage_" + source + ".csv");
  }
  std::filesystem::path summary() const { return dir / "summary.json"; }
};

/// Tasks of one suite name ("spatial", "object", "goal", "long" or "all").
std::vector<std::size_t> suite_task_indices(const sim::TaskSuite& suite, const std::string& name);

struct GenDemosResult {
  std::filesystem::path dir;
  nlohmann::ordered_json manifest;
};
GenDemosResult cmd_gen_demos(const RunConfig& cfg);

struct SftResult {
  std::filesystem::path checkpoint;
  BcReport report;
};
/// Requires the demonstrations of cmd_gen_demos.
SftResult cmd_sft(const RunConfig& cfg);

struct LabelResult {
  std::filesystem::path output;
  std::size_t labeled_episodes = 0;
  std::size_t labels = 0;
  std::size_t positives = 0;
  std::size_t skipped_unsuccessful = 0;
};
/// Labels a trajectory JSONL file, or the run's demonstrations when `input`
/// is empty. Writes `output` (default: the run's labels.jsonl).
LabelResult cmd_label(const RunConfig& cfg, const std::filesystem::path& input = {},
                      const std::filesystem::path& output = {});

struct RprmResult {
  std::filesystem::path checkpoint;
  rprm::RprmReport report;
};
/// Requires demonstrations and labels.
RprmResult cmd_train_rprm(const RunConfig& cfg);

struct TrainResult {
  std::filesystem::path dir;
  int iterations = 0;
  double final_success = 0.0;
  double baseline_success = 0.0;
};
/// Critic warmup plus rl.iterations PPO iterations from the SFT checkpoint.
/// With `resume`, continues from the run's latest checkpoint.
TrainResult cmd_train(const RunConfig& cfg, bool resume);

/// "expert", "untrained" or a checkpoint path (policy or trainer).
nlohmann::ordered_json cmd_eval(const RunConfig& cfg, const std::string& policy,
                                const std::string& suite, int episodes_per_task);

/// kind "metrics" or "action-coverage"; returns the CSV text and writes it to
/// `output` when given.
std::string cmd_export(const std::filesystem::path& rl_dir, const std::string& kind,
                       const std::filesystem::path& output = {});

/// Success-rate report of an evaluation, including per-task and per-suite
/// rates with 95% intervals.
nlohmann::ordered_json eval_report(const rl::EvalResult& r, std::span<const sim::TaskSpec> tasks);

/// Metrics line; wall-clock phase times sit under "wall_times".
nlohmann::ordered_json metrics_json(const rl::IterationMetrics& m);

}  // namespace vlarl::app
