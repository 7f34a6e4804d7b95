#include "vlarl/app/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vlarl/error.hpp"

namespace vlarl::app {

static_assert(std::endian::native == std::endian::little, "payload is written in host order");

using nlohmann::json;

const nn::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw io_error("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const NamedTensor& t) { return t.name == name; });
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& field,
                          const std::string& why) {
  throw io_error("corrupt checkpoint " + path.string() + ": field '" + field + "' " + why);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json header;
  header["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& t : ck.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape}, {"offset", offset}});
    offset += t.value.size();
  }
  header["payload_doubles"] = offset;
  header["meta"] = ck.meta;
  const std::string h = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, h.size());
  out += h;
  const std::size_t base = out.size();
  out.resize(base + offset * sizeof(double));
  std::size_t pos = base;
  for (const auto& t : ck.tensors) {
    std::memcpy(out.data() + pos, t.value.data.data(), t.value.size() * sizeof(double));
    pos += t.value.size() * sizeof(double);
  }

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (in.size() < 8 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0)
    corrupt(path, "magic", "does not read VLARLCK1");
  if (in.size() < 12) corrupt(path, "version", "is truncated");
  const auto version = get_le<std::uint32_t>(in, 8);
  if (version != kCheckpointVersion)
    corrupt(path, "version", "is " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  if (in.size() < 20) corrupt(path, "header_length", "is truncated");
  const auto hlen = get_le<std::uint64_t>(in, 12);
  if (hlen > in.size() - 20) corrupt(path, "header_length", "exceeds the file size");

  json header;
  try {
    header = json::parse(in.substr(20, hlen));
  } catch (const json::parse_error&) {
    corrupt(path, "header", "is not valid JSON");
  }
  if (!header.is_object()) corrupt(path, "header", "is not an object");
  if (!header.contains("tensors") || !header["tensors"].is_array())
    corrupt(path, "tensors", "is missing or not an array");
  if (!header.contains("payload_doubles") || !header["payload_doubles"].is_number_unsigned())
    corrupt(path, "payload_doubles", "is missing or not an unsigned integer");

  const std::size_t base = 20 + hlen;
  const auto total = header["payload_doubles"].get<std::uint64_t>();
  if ((in.size() - base) != total * sizeof(double))
    corrupt(path, "payload_doubles", "does not match the payload size (" +
                                         std::to_string(in.size() - base) + " bytes)");

  Checkpoint ck;
  std::size_t expected = 0;
  const auto& list = header["tensors"];
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string field = "tensors[" + std::to_string(i) + "]";
    const auto& t = list[i];
    if (!t.is_object()) corrupt(path, field, "is not an object");
    if (!t.contains("name") || !t["name"].is_string()) corrupt(path, field + ".name", "is invalid");
    if (!t.contains("shape") || !t["shape"].is_array()) corrupt(path, field + ".shape", "is invalid");
    std::vector<std::size_t> shape;
    for (const auto& d : t["shape"]) {
      if (!d.is_number_unsigned()) corrupt(path, field + ".shape", "has a non-integer dimension");
      shape.push_back(d.get<std::size_t>());
    }
    if (!t.contains("offset") || !t["offset"].is_number_unsigned())
      corrupt(path, field + ".offset", "is invalid");
    const auto off = t["offset"].get<std::uint64_t>();
    const std::size_t n = nn::shape_numel(shape);
    if (off != expected) corrupt(path, field + ".offset", "is not contiguous");
    if (off + n > total) corrupt(path, field + ".shape", "extends past the payload");
    nn::Tensor value(shape);
    std::memcpy(value.data.data(), in.data() + base + off * sizeof(double), n * sizeof(double));
    ck.tensors.push_back({t["name"].get<std::string>(), std::move(value)});
    expected = off + n;
  }
  if (expected != total) corrupt(path, "payload_doubles", "has trailing data");
  ck.meta = header.value("meta", json::object());
  return ck;
}

void append_params(Checkpoint& ck, const nn::ParamStore& store, bool with_moments) {
  for (const auto& e : store.entries()) {
    ck.tensors.push_back({e.name, e.value});
    if (with_moments) {
      ck.tensors.push_back({e.name + "#m1", e.first_moment});
      ck.tensors.push_back({e.name + "#m2", e.second_moment});
    }
  }
  if (with_moments) ck.meta["optimizer_steps"] = store.step_count();
}

nn::ParamStore extract_params(const Checkpoint& ck, const std::string& prefix) {
  nn::ParamStore store;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(prefix, 0) != 0 || t.name.find('#') != std::string::npos) continue;
    store.add(t.name, t.value);
  }
  bool moments = false;
  for (auto& e : store.entries_mut()) {
    if (ck.has(e.name + "#m1")) {
      e.first_moment = ck.tensor(e.name + "#m1");
      e.second_moment = ck.tensor(e.name + "#m2");
      if (e.first_moment.shape != e.value.shape || e.second_moment.shape != e.value.shape)
        throw io_error("checkpoint moments of '" + e.name + "' have the wrong shape");
      moments = true;
    }
  }
  if (moments) store.set_step_count(ck.meta.value("optimizer_steps", std::uint64_t{0}));
  return store;
}

namespace {

const json& need(const json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw io_error("checkpoint meta is missing '" + key + "'");
  return j.at(key);
}

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return need(j, key).get<T>();
  } catch (const json::exception&) {
    throw io_error("checkpoint meta field '" + key + "' has the wrong type");
  }
}

json vec3(const sim::Vec3& v) { return json::array({v[0], v[1], v[2]}); }
sim::Vec3 vec3_from(const json& j, const std::string& key) {
  const auto a = get<std::vector<double>>(j, key);
  if (a.size() != 3) throw io_error("checkpoint meta field '" + key + "' is not a 3-vector");
  return {a[0], a[1], a[2]};
}

json rng_json(const CounterRng& r) { return json::array({r.key(), r.counter()}); }
CounterRng rng_from(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned())
    throw io_error("checkpoint meta field '" + field + "' is not an RNG state");
  return CounterRng(j[0].get<std::uint64_t>(), j[1].get<std::uint64_t>());
}

}  // namespace

json policy_config_json(const PolicyConfig& c) {
  return {{"feature_dim", c.trunk.feature_dim},
          {"instruction_length", c.trunk.instruction_length},
          {"instruction_vocab", c.trunk.instruction_vocab},
          {"width", c.trunk.width},
          {"head_width", c.head_width},
          {"action_dims", c.action_dims},
          {"bins", c.bins}};
}

PolicyConfig policy_config_from_json(const json& j) {
  PolicyConfig c;
  c.trunk.feature_dim = get<std::size_t>(j, "feature_dim");
  c.trunk.instruction_length = get<std::size_t>(j, "instruction_length");
  c.trunk.instruction_vocab = get<std::int32_t>(j, "instruction_vocab");
  c.trunk.width = get<std::size_t>(j, "width");
  c.head_width = get<std::size_t>(j, "head_width");
  c.action_dims = get<std::size_t>(j, "action_dims");
  c.bins = get<std::int32_t>(j, "bins");
  return c;
}

json reward_config_json(const rprm::RewardModelConfig& c) {
  return {{"feature_dim", c.trunk.feature_dim},
          {"instruction_length", c.trunk.instruction_length},
          {"instruction_vocab", c.trunk.instruction_vocab},
          {"width", c.trunk.width},
          {"action_dims", c.action_dims},
          {"bins", c.bins}};
}

rprm::RewardModelConfig reward_config_from_json(const json& j) {
  rprm::RewardModelConfig c;
  c.trunk.feature_dim = get<std::size_t>(j, "feature_dim");
  c.trunk.instruction_length = get<std::size_t>(j, "instruction_length");
  c.trunk.instruction_vocab = get<std::int32_t>(j, "instruction_vocab");
  c.trunk.width = get<std::size_t>(j, "width");
  c.action_dims = get<std::size_t>(j, "action_dims");
  c.bins = get<std::int32_t>(j, "bins");
  return c;
}

void save_policy(const std::filesystem::path& path, const Policy& policy, const json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["kind"] = "policy";
  ck.meta["policy_config"] = policy_config_json(policy.config());
  append_params(ck, policy.params(), false);
  write_checkpoint(path, ck);
}

namespace {

Policy policy_from(const Checkpoint& ck) {
  const PolicyConfig cfg = policy_config_from_json(need(ck.meta, "policy_config"));
  nn::ParamStore store;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(rprm::RewardModel::kPrefix, 0) == 0 || t.name.find('#') != std::string::npos)
      continue;
    store.add(t.name, t.value);
  }
  for (auto& e : store.entries_mut()) {
    if (ck.has(e.name + "#m1")) {
      e.first_moment = ck.tensor(e.name + "#m1");
      e.second_moment = ck.tensor(e.name + "#m2");
    }
  }
  store.set_step_count(ck.meta.value("optimizer_steps", std::uint64_t{0}));
  // Shapes must match a freshly initialized policy of the same config.
  const Policy ref(cfg, 0);
  if (ref.params().size() != store.size())
    throw io_error("checkpoint policy has " + std::to_string(store.size()) + " tensors, expected " +
                   std::to_string(ref.params().size()));
  for (const auto& e : ref.params().entries()) {
    if (!store.contains(e.name)) throw io_error("checkpoint is missing tensor '" + e.name + "'");
    if (store.get(e.name).shape != e.value.shape)
      throw io_error("checkpoint tensor '" + e.name + "' has shape " +
                     store.get(e.name).shape_string() + ", expected " + e.value.shape_string());
  }
  return Policy(cfg, std::move(store));
}

rprm::RewardModel reward_model_from(const Checkpoint& ck) {
  const auto cfg = reward_config_from_json(need(ck.meta, "reward_config"));
  nn::ParamStore store = extract_params(ck, rprm::RewardModel::kPrefix);
  const rprm::RewardModel ref(cfg, 0);
  for (const auto& e : ref.params().entries()) {
    if (!store.contains(e.name)) throw io_error("checkpoint is missing tensor '" + e.name + "'");
    if (store.get(e.name).shape != e.value.shape)
      throw io_error("checkpoint tensor '" + e.name + "' has the wrong shape");
  }
  return rprm::RewardModel(cfg, std::move(store));
}

}  // namespace

Policy load_policy(const std::filesystem::path& path) { return policy_from(read_checkpoint(path)); }

void save_reward_model(const std::filesystem::path& path, const rprm::RewardModel& model,
                       const json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["kind"] = "reward_model";
  ck.meta["reward_config"] = reward_config_json(model.config());
  append_params(ck, model.params(), false);
  write_checkpoint(path, ck);
}

rprm::RewardModel load_reward_model(const std::filesystem::path& path) {
  return reward_model_from(read_checkpoint(path));
}

json world_state_json(const sim::WorldState& s) {
  json objects = json::array();
  for (const auto& o : s.objects)
    objects.push_back({{"pos", vec3(o.pos)}, {"yaw", o.yaw}, {"attached", o.attached}});
  json regions = json::array();
  for (const auto& r : s.regions) regions.push_back({{"center", vec3(r.center)}, {"radius", r.radius}});
  return {{"gripper_pos", vec3(s.gripper_pos)},
          {"gripper_yaw", s.gripper_yaw},
          {"gripper_open", s.gripper_open},
          {"objects", objects},
          {"regions", regions},
          {"step_index", s.step_index},
          {"stage", s.stage},
          {"done", s.done},
          {"success", s.success}};
}

sim::WorldState world_state_from_json(const json& j) {
  sim::WorldState s;
  s.gripper_pos = vec3_from(j, "gripper_pos");
  s.gripper_yaw = get<double>(j, "gripper_yaw");
  s.gripper_open = get<double>(j, "gripper_open");
  const auto& objects = need(j, "objects");
  const auto& regions = need(j, "regions");
  if (!objects.is_array() || objects.size() != s.objects.size())
    throw io_error("checkpoint meta field 'objects' has the wrong length");
  if (!regions.is_array() || regions.size() != s.regions.size())
    throw io_error("checkpoint meta field 'regions' has the wrong length");
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    s.objects[i].pos = vec3_from(objects[i], "pos");
    s.objects[i].yaw = get<double>(objects[i], "yaw");
    s.objects[i].attached = get<bool>(objects[i], "attached");
  }
  for (std::size_t i = 0; i < s.regions.size(); ++i) {
    s.regions[i].center = vec3_from(regions[i], "center");
    s.regions[i].radius = get<double>(regions[i], "radius");
  }
  s.step_index = get<int>(j, "step_index");
  s.stage = get<int>(j, "stage");
  s.done = get<bool>(j, "done");
  s.success = get<bool>(j, "success");
  return s;
}

Checkpoint trainer_checkpoint(const rl::Trainer& trainer,
                              const std::optional<rprm::RewardModel>& reward_model,
                              const std::string& config_digest) {
  Checkpoint ck;
  ck.meta["kind"] = "trainer";
  ck.meta["config_digest"] = config_digest;
  ck.meta["policy_config"] = policy_config_json(trainer.policy().config());
  append_params(ck, trainer.policy().params(), true);
  if (reward_model) {
    ck.meta["reward_config"] = reward_config_json(reward_model->config());
    append_params(ck, reward_model->params(), false);
  }
  ck.meta["iteration"] = trainer.iteration();
  ck.meta["env_steps"] = trainer.env_steps();
  ck.meta["warmed_up"] = trainer.warmed_up();
  ck.meta["tracker"] = {{"rates", trainer.tracker().rates()}, {"counts", trainer.tracker().counts()}};
  const auto& st = trainer.rollout_state();
  ck.meta["rollout"] = {{"next_done", st.next_done}, {"episode_return", st.episode_return}};
  const auto& orch = trainer.orchestrator();
  json envs = json::array();
  for (std::size_t i = 0; i < orch.num_envs(); ++i) {
    const auto& slot = orch.slot(i);
    envs.push_back({{"task_index", slot.task_index},
                    {"rng", rng_json(slot.rng)},
                    {"decode_rng", rng_json(orch.decode_rngs()[i])},
                    {"state", world_state_json(slot.env.state())}});
  }
  ck.meta["envs"] = envs;
  return ck;
}

void restore_trainer(rl::Trainer& trainer, const Checkpoint& ck, const std::string& config_digest) {
  if (get<std::string>(ck.meta, "kind") != "trainer")
    throw io_error("checkpoint meta field 'kind' is not 'trainer'");
  const auto digest = get<std::string>(ck.meta, "config_digest");
  if (digest != config_digest)
    throw config_error("checkpoint was written with config " + digest + ", current config is " +
                       config_digest);
  Policy p = policy_from(ck);
  if (p.params().size() != trainer.policy().params().size())
    throw io_error("checkpoint policy does not match the configured architecture");
  trainer.policy_mut() = std::move(p);

  const auto& tr = need(ck.meta, "tracker");
  auto rates = get<std::vector<double>>(tr, "rates");
  auto counts = get<std::vector<std::uint64_t>>(tr, "counts");
  if (rates.size() != trainer.tracker().size() || counts.size() != rates.size())
    throw io_error("checkpoint meta field 'tracker' has the wrong task count");
  trainer.tracker_mut().restore(std::move(rates), std::move(counts));

  const auto& ro = need(ck.meta, "rollout");
  auto& st = trainer.rollout_state_mut();
  auto next_done = get<std::vector<std::uint8_t>>(ro, "next_done");
  auto episode_return = get<std::vector<double>>(ro, "episode_return");
  if (next_done.size() != st.next_done.size() || episode_return.size() != st.episode_return.size())
    throw io_error("checkpoint meta field 'rollout' has the wrong env count");
  st.next_done = std::move(next_done);
  st.episode_return = std::move(episode_return);

  auto& orch = trainer.orchestrator();
  const auto& envs = need(ck.meta, "envs");
  if (!envs.is_array() || envs.size() != orch.num_envs())
    throw io_error("checkpoint meta field 'envs' has " + std::to_string(envs.size()) +
                   " entries, expected " + std::to_string(orch.num_envs()));
  for (std::size_t i = 0; i < envs.size(); ++i) {
    const std::string field = "envs[" + std::to_string(i) + "]";
    orch.restore_env(i, get<std::size_t>(envs[i], "task_index"),
                     world_state_from_json(need(envs[i], "state")),
                     rng_from(need(envs[i], "rng"), field + ".rng"));
    orch.decode_rngs()[i] = rng_from(need(envs[i], "decode_rng"), field + ".decode_rng");
  }
  trainer.set_progress(get<int>(ck.meta, "iteration"), get<std::uint64_t>(ck.meta, "env_steps"),
                       get<bool>(ck.meta, "warmed_up"));
}

}  // namespace vlarl::app
