#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "vlarl/curriculum.hpp"
#include "vlarl/policy.hpp"
#include "vlarl/rl.hpp"
#include "vlarl/rprm.hpp"
#include "vlarl/sft.hpp"
#include "vlarl/sim/env.hpp"
#include "vlarl/sim/suite.hpp"

namespace vlarl::app {

/// Environment variable that overrides the configured run directory.
inline constexpr const char* kRunDirEnv = "VLARL_RUN_DIR";

/// Flat, module-prefixed key/value configuration. Every key has a default;
/// unknown keys and type mismatches are rejected.
class RunConfig {
 public:
  RunConfig();

  static const nlohmann::ordered_json& defaults();

  /// Merges a JSON object from disk.
  void load_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& obj);
  /// "key=value"; the value is parsed according to the key's default type.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const nlohmann::ordered_json& values() const noexcept { return values_; }
  std::string dump() const { return values_.dump(2) + "\n"; }
  /// FNV-1a of the compact dump.
  std::string digest() const;
  /// Digest that ignores rl.iterations, so a finished run can be extended.
  std::string resume_digest() const;

  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string text(const std::string& key) const;

  /// run_dir, overridden by the environment variable when set.
  std::filesystem::path run_dir() const;

 private:
  const nlohmann::ordered_json& lookup(const std::string& key) const;
  nlohmann::ordered_json values_;
};

sim::SimConfig sim_config(const RunConfig& c);
sim::SuiteConfig suite_config(const RunConfig& c);
PolicyConfig policy_config(const RunConfig& c, const sim::TaskSuite& suite);
rprm::RewardModelConfig reward_model_config(const RunConfig& c, const sim::TaskSuite& suite);
BcConfig bc_config(const RunConfig& c);
rprm::LabelConfig label_config(const RunConfig& c);
rprm::RprmTrainConfig rprm_train_config(const RunConfig& c);
CurriculumConfig curriculum_config(const RunConfig& c);
rl::TrainConfig train_config(const RunConfig& c);

/// Name of the RL output directory: rl.tag if set, else derived from the
/// ablation-relevant keys that differ from their defaults plus the seed.
std::string run_tag(const RunConfig& c);

}  // namespace vlarl::app
