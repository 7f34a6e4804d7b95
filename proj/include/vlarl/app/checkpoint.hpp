#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlarl/nn/param_store.hpp"
#include "vlarl/policy.hpp"
#include "vlarl/rl.hpp"
#include "vlarl/rprm.hpp"

namespace vlarl::app {

/// Binary container layout (little-endian):
///   "VLARLCK1" | u32 version | u64 header length | JSON header | f64 payload
/// The header lists {name, shape, offset} per tensor (offset in doubles) and
/// carries a free-form "meta" object.
inline constexpr char kCheckpointMagic[8] = {'V', 'L', 'A', 'R', 'L', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Tensor value;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const nn::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Errors name the offending field ("magic", "version", "tensors[3].shape", ...).
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Values plus optimizer moments ("<name>#m1", "<name>#m2") and step count.
void append_params(Checkpoint& ck, const nn::ParamStore& store, bool with_moments);
/// Rebuilds every entry whose name starts with `prefix` (moments restored
/// when present).
nn::ParamStore extract_params(const Checkpoint& ck, const std::string& prefix);

nlohmann::json policy_config_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);
nlohmann::json reward_config_json(const rprm::RewardModelConfig& c);
rprm::RewardModelConfig reward_config_from_json(const nlohmann::json& j);

void save_policy(const std::filesystem::path& path, const Policy& policy,
                 const nlohmann::json& extra_meta = nlohmann::json::object());
Policy load_policy(const std::filesystem::path& path);
void save_reward_model(const std::filesystem::path& path, const rprm::RewardModel& model,
                       const nlohmann::json& extra_meta = nlohmann::json::object());
rprm::RewardModel load_reward_model(const std::filesystem::path& path);

nlohmann::json world_state_json(const sim::WorldState& s);
sim::WorldState world_state_from_json(const nlohmann::json& j);

/// Everything needed to continue training bit-identically: policy and
/// optimizer state, reward model, tracker, env states and RNG streams,
/// rollout bookkeeping and counters.
Checkpoint trainer_checkpoint(const rl::Trainer& trainer,
                              const std::optional<rprm::RewardModel>& reward_model,
                              const std::string& config_digest);
/// Applies a trainer checkpoint to a freshly constructed trainer. The config
/// digest must match.
void restore_trainer(rl::Trainer& trainer, const Checkpoint& ck, const std::string& config_digest);

}  // namespace vlarl::app
