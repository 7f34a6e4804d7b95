#include "vlarl/app/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vlarl/error.hpp"

namespace vlarl::app {

using nlohmann::ordered_json;

const ordered_json& RunConfig::defaults() {
  static const ordered_json d = [] {
    ordered_json j;
    j["run_dir"] = "runs/default";
    j["seed"] = 1;
    j["suite.spatial"] = 10;
    j["suite.object"] = 10;
    j["suite.goal"] = 10;
    j["suite.long"] = 10;
    j["suite.master_seed"] = 7;
    j["sim.horizon"] = 60;
    j["sim.scale_t"] = 0.08;
    j["sim.scale_r"] = 0.3;
    j["sim.grasp_radius"] = 0.08;
    j["sim.yaw_tol"] = 0.4;
    j["sim.region_radius"] = 0.12;
    j["sim.h_place"] = 0.15;
    j["demos.episodes_per_task"] = 25;
    j["demos.seed"] = 3;
    j["demos.suites"] = "all";
    j["policy.width"] = 256;
    j["policy.head_width"] = 64;
    j["policy.seed"] = 5;
    j["bc.epochs"] = 30;
    j["bc.batch_size"] = 32;
    j["bc.lr"] = 1e-3;
    j["bc.seed"] = 11;
    j["label.delta_g"] = 0.5;
    j["label.eps_v"] = 0.01;
    j["label.window"] = 3;
    j["rprm.seed"] = 9;
    j["rprm.epochs"] = 8;
    j["rprm.batch_size"] = 64;
    j["rprm.lr"] = 1e-3;
    j["rprm.holdout"] = 0.2;
    j["rprm.beta"] = 0.1;
    j["curriculum.alpha"] = 0.1;
    j["curriculum.tau"] = 0.25;
    j["curriculum.prior"] = 0.5;
    j["curriculum.uniform"] = false;
    j["ppo.gamma"] = 0.99;
    j["ppo.lambda"] = 0.95;
    j["ppo.clip_eps"] = 0.2;
    j["ppo.epochs"] = 4;
    j["ppo.minibatch"] = 256;
    j["ppo.value_coef"] = 0.5;
    j["ppo.entropy_coef"] = 0.003;
    j["ppo.lr"] = 2e-5;
    j["ppo.max_grad_norm"] = 1.0;
    j["ppo.target_kl"] = 0.02;
    j["ppo.clip_value"] = false;
    j["ppo.warmup_iters"] = 5;
    j["rl.suite"] = "object";
    j["rl.num_envs"] = 16;
    j["rl.steps_per_env"] = 256;
    j["rl.iterations"] = 40;
    j["rl.temperature"] = 1.5;
    j["rl.shards"] = 0;
    j["rl.checkpoint_every"] = 10;
    j["rl.eval_every"] = 5;
    j["rl.tag"] = "";
    j["eval.episodes_per_task"] = 10;
    j["eval.seed"] = 777;
    return j;
  }();
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

const ordered_json& RunConfig::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw config_error("unknown config key '" + key + "'");
  return *it;
}

namespace {

bool same_kind(const ordered_json& def, const nlohmann::json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number_float()) return v.is_number();
  return false;
}

}  // namespace

void RunConfig::merge(const nlohmann::json& obj) {
  if (!obj.is_object()) throw config_error("config must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto& def = lookup(it.key());
    if (!same_kind(def, it.value())) {
      throw config_error("config key '" + it.key() + "' expects " + def.type_name() + ", got " +
                         it.value().type_name());
    }
    if (def.is_number_float()) {
      values_[it.key()] = it.value().get<double>();
    } else {
      values_[it.key()] = it.value();
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  merge(j);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw config_error("override '" + assignment + "' is not of the form key=value");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& def = lookup(key);
  nlohmann::json v;
  if (def.is_string()) {
    v = value;
  } else {
    try {
      v = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      throw config_error("cannot parse value '" + value + "' for key '" + key + "'");
    }
  }
  merge(nlohmann::json{{key, v}});
}

std::string RunConfig::digest() const {
  const std::string s = values_.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::resume_digest() const {
  RunConfig c = *this;
  c.values_["rl.iterations"] = defaults()["rl.iterations"];
  return c.digest();
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const auto& v = lookup(key);
  if (!v.is_number_integer()) throw config_error("config key '" + key + "' is not an integer");
  return v.get<std::int64_t>();
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& v = lookup(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const std::int64_t i = integer(key);
  if (i < 0) throw config_error("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(i);
}

double RunConfig::real(const std::string& key) const {
  const auto& v = lookup(key);
  if (!v.is_number()) throw config_error("config key '" + key + "' is not a number");
  return v.get<double>();
}

bool RunConfig::flag(const std::string& key) const {
  const auto& v = lookup(key);
  if (!v.is_boolean()) throw config_error("config key '" + key + "' is not a boolean");
  return v.get<bool>();
}

std::string RunConfig::text(const std::string& key) const {
  const auto& v = lookup(key);
  if (!v.is_string()) throw config_error("config key '" + key + "' is not a string");
  return v.get<std::string>();
}

std::filesystem::path RunConfig::run_dir() const {
  if (const char* env = std::getenv(kRunDirEnv); env != nullptr && *env != '\0') return env;
  return text("run_dir");
}

namespace {

std::size_t positive(const RunConfig& c, const std::string& key) {
  const std::int64_t v = c.integer(key);
  if (v <= 0) throw config_error("config key '" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

std::size_t non_negative(const RunConfig& c, const std::string& key) {
  const std::int64_t v = c.integer(key);
  if (v < 0) throw config_error("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

sim::SimConfig sim_config(const RunConfig& c) {
  sim::SimConfig s;
  s.horizon = static_cast<int>(positive(c, "sim.horizon"));
  s.scale_t = c.real("sim.scale_t");
  s.scale_r = c.real("sim.scale_r");
  s.grasp_radius = c.real("sim.grasp_radius");
  s.yaw_tol = c.real("sim.yaw_tol");
  s.region_radius = c.real("sim.region_radius");
  s.h_place = c.real("sim.h_place");
  return s;
}

sim::SuiteConfig suite_config(const RunConfig& c) {
  sim::SuiteConfig s;
  s.spatial = static_cast<int>(non_negative(c, "suite.spatial"));
  s.object = static_cast<int>(non_negative(c, "suite.object"));
  s.goal = static_cast<int>(non_negative(c, "suite.goal"));
  s.long_horizon = static_cast<int>(non_negative(c, "suite.long"));
  s.master_seed = c.u64("suite.master_seed");
  return s;
}

PolicyConfig policy_config(const RunConfig& c, const sim::TaskSuite& suite) {
  PolicyConfig p;
  p.trunk.instruction_vocab = suite.vocab.instruction_size();
  p.trunk.instruction_length = sim::kInstructionLength;
  p.trunk.width = positive(c, "policy.width");
  p.head_width = positive(c, "policy.head_width");
  return p;
}

rprm::RewardModelConfig reward_model_config(const RunConfig& c, const sim::TaskSuite& suite) {
  rprm::RewardModelConfig r;
  r.trunk = policy_config(c, suite).trunk;
  return r;
}

BcConfig bc_config(const RunConfig& c) {
  BcConfig b;
  b.epochs = static_cast<int>(non_negative(c, "bc.epochs"));
  b.batch_size = positive(c, "bc.batch_size");
  b.lr = c.real("bc.lr");
  b.seed = c.u64("bc.seed");
  return b;
}

rprm::LabelConfig label_config(const RunConfig& c) {
  rprm::LabelConfig l;
  l.delta_g = c.real("label.delta_g");
  l.eps_v = c.real("label.eps_v");
  l.window = static_cast<int>(positive(c, "label.window"));
  return l;
}

rprm::RprmTrainConfig rprm_train_config(const RunConfig& c) {
  rprm::RprmTrainConfig r;
  r.epochs = static_cast<int>(non_negative(c, "rprm.epochs"));
  r.batch_size = positive(c, "rprm.batch_size");
  r.lr = c.real("rprm.lr");
  r.holdout = c.real("rprm.holdout");
  r.seed = c.u64("rprm.seed");
  return r;
}

CurriculumConfig curriculum_config(const RunConfig& c) {
  CurriculumConfig k;
  k.alpha = c.real("curriculum.alpha");
  k.tau = c.real("curriculum.tau");
  k.prior = c.real("curriculum.prior");
  k.uniform = c.flag("curriculum.uniform");
  return k;
}

rl::TrainConfig train_config(const RunConfig& c) {
  rl::TrainConfig t;
  t.ppo.gamma = c.real("ppo.gamma");
  t.ppo.lambda = c.real("ppo.lambda");
  t.ppo.clip_eps = c.real("ppo.clip_eps");
  t.ppo.epochs = static_cast<int>(non_negative(c, "ppo.epochs"));
  t.ppo.minibatch = positive(c, "ppo.minibatch");
  t.ppo.value_coef = c.real("ppo.value_coef");
  t.ppo.entropy_coef = c.real("ppo.entropy_coef");
  t.ppo.lr = c.real("ppo.lr");
  t.ppo.max_grad_norm = c.real("ppo.max_grad_norm");
  t.ppo.target_kl = c.real("ppo.target_kl");
  t.ppo.clip_value = c.flag("ppo.clip_value");
  t.ppo.warmup_iters = static_cast<int>(non_negative(c, "ppo.warmup_iters"));
  t.rollout.steps_per_env = positive(c, "rl.steps_per_env");
  t.rollout.temperature = c.real("rl.temperature");
  t.rollout.beta = c.real("rprm.beta");
  if (t.rollout.beta < 0.0) throw config_error("rprm.beta must be non-negative");
  t.curriculum = curriculum_config(c);
  t.num_envs = positive(c, "rl.num_envs");
  t.shards = non_negative(c, "rl.shards");
  t.seed = c.u64("seed");
  return t;
}

std::string run_tag(const RunConfig& c) {
  if (std::string tag = c.text("rl.tag"); !tag.empty()) return tag;
  const auto& d = RunConfig::defaults();
  std::string tag;
  auto add = [&](const std::string& part) { tag += (tag.empty() ? "" : "-") + part; };
  if (c.real("rprm.beta") == 0.0) {
    add("no-rprm");
  } else if (c.real("rprm.beta") != d["rprm.beta"].get<double>()) {
    add("beta" + c.values()["rprm.beta"].dump());
  }
  if (c.flag("curriculum.uniform")) add("no-curriculum");
  if (c.integer("ppo.warmup_iters") != d["ppo.warmup_iters"].get<std::int64_t>())
    add("warmup" + std::to_string(c.integer("ppo.warmup_iters")));
  if (c.real("ppo.lr") != d["ppo.lr"].get<double>()) add("lr" + c.values()["ppo.lr"].dump());
  if (c.real("rl.temperature") != d["rl.temperature"].get<double>())
    add("temp" + c.values()["rl.temperature"].dump());
  if (tag.empty()) tag = "default";
  return tag + "-seed" + std::to_string(c.u64("seed"));
}

}  // namespace vlarl::app
