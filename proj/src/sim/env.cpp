#include "vlarl/sim/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vlarl/error.hpp"
#include "vlarl/sim/suite.hpp"

namespace vlarl::sim {

namespace {

double horizontal_dist(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

double dist3(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

// Release point above a region: just inside the placement height.
Vec3 place_point(const Region& r) { return {r.center[0], r.center[1], r.center[2] + 0.05}; }

}  // namespace

double wrap_angle(double a) noexcept {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0) a += 2.0 * pi;
  return a - pi;
}

int WorldState::attached_index() const noexcept {
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i].attached) return static_cast<int>(i);
  return -1;
}

Observation observe(const WorldState& s, const TaskSpec& task, const SimConfig& cfg) {
  (void)cfg;
  Observation obs;
  auto& f = obs.features;
  f.reserve(kFeatureDim);
  f.insert(f.end(), s.gripper_pos.begin(), s.gripper_pos.end());
  f.push_back(std::sin(s.gripper_yaw));
  f.push_back(std::cos(s.gripper_yaw));
  f.push_back(s.gripper_open);
  for (std::size_t i = 0; i < kObjectsPerScene; ++i) {
    const auto& o = s.objects[i];
    for (int d = 0; d < 3; ++d) f.push_back(o.pos[d] - s.gripper_pos[d]);
    f.push_back(wrap_angle(o.yaw - s.gripper_yaw) / std::numbers::pi);
    f.push_back(o.attached ? 1.0 : 0.0);
    f.push_back(color_code(task.object_colors[i]));
  }
  const int stage = std::min<int>(s.stage, static_cast<int>(task.stages.size()) - 1);
  const Stage& st = task.stages[stage];
  const Vec3 target = s.attached_index() == st.object
                          ? place_point(s.regions[st.region])
                          : s.objects[st.object].pos;
  for (int d = 0; d < 3; ++d) f.push_back(target[d] - s.gripper_pos[d]);
  for (std::size_t k = 0; k < kMaxStages; ++k) f.push_back(static_cast<int>(k) == stage ? 1.0 : 0.0);
  obs.instruction_tokens = task.instruction_tokens;
  return obs;
}

WorldState initial_state(const TaskSpec& task, std::uint64_t seed, const SimConfig& cfg) {
  CounterRng rng = CounterRng::stream(task.seed_base, seed);
  WorldState s;
  s.gripper_pos = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), cfg.table_z + cfg.start_height};
  s.gripper_yaw = 0.0;
  s.gripper_open = 1.0;
  for (std::size_t i = 0; i < kObjectsPerScene; ++i) {
    Vec3 p{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      p = {rng.uniform(task.box.x_lo, task.box.x_hi), rng.uniform(task.box.y_lo, task.box.y_hi),
           cfg.table_z};
      bool clear = true;
      for (std::size_t j = 0; j < i; ++j)
        if (horizontal_dist(p, s.objects[j].pos) < 0.2) clear = false;
      if (clear) break;
    }
    s.objects[i] = ObjectState{p, rng.uniform(-1.2, 1.2), false};
  }
  for (std::size_t r = 0; r < kRegionsPerScene; ++r) {
    const auto xy = region_anchor(static_cast<int>(r));
    s.regions[r] = Region{{xy[0] + rng.uniform(-task.region_jitter, task.region_jitter),
                           xy[1] + rng.uniform(-task.region_jitter, task.region_jitter),
                           cfg.table_z},
                          cfg.region_radius};
  }
  return s;
}

StepResult step_state(WorldState& s, const TaskSpec& task, const ActionVector& action,
                      const SimConfig& cfg) {
  if (s.done) throw state_error("step called on a finished episode");
  ActionVector a{};
  for (std::size_t i = 0; i < kActionDims; ++i) {
    if (!std::isfinite(action[i])) throw invalid_argument("non-finite action component");
    a[i] = std::clamp(action[i], -1.0, 1.0);
  }

  for (int d = 0; d < 3; ++d) s.gripper_pos[d] += cfg.scale_t * a[d];
  s.gripper_pos[0] = std::clamp(s.gripper_pos[0], -1.0, 1.0);
  s.gripper_pos[1] = std::clamp(s.gripper_pos[1], -1.0, 1.0);
  s.gripper_pos[2] = std::clamp(s.gripper_pos[2], std::max(-1.0, cfg.table_z), 1.0);
  s.gripper_yaw = wrap_angle(s.gripper_yaw + cfg.scale_r * a[5]);

  const bool was_open = s.gripper_open > 0.5;
  s.gripper_open = a[6] >= 0.0 ? 0.0 : 1.0;
  const bool closing = was_open && s.gripper_open < 0.5;
  const bool opening = !was_open && s.gripper_open > 0.5;

  int held = s.attached_index();
  if (held >= 0) {
    s.objects[held].pos = s.gripper_pos;
    s.objects[held].yaw = s.gripper_yaw;
  }

  if (closing && held < 0) {
    int best = -1;
    double best_d = cfg.grasp_radius;
    for (std::size_t i = 0; i < kObjectsPerScene; ++i) {
      const auto& o = s.objects[i];
      const double d = dist3(o.pos, s.gripper_pos);
      if (d < best_d && std::abs(wrap_angle(s.gripper_yaw - o.yaw)) < cfg.yaw_tol) {
        best = static_cast<int>(i);
        best_d = d;
      }
    }
    if (best >= 0) {
      auto& o = s.objects[best];
      o.attached = true;
      o.pos = s.gripper_pos;
      o.yaw = s.gripper_yaw;
    }
  } else if (opening && held >= 0) {
    auto& o = s.objects[held];
    o.attached = false;
    const Stage& stage = task.stages[s.stage];
    const Region& region = s.regions[stage.region];
    const bool placed = held == stage.object &&
                        horizontal_dist(s.gripper_pos, region.center) <= region.radius &&
                        s.gripper_pos[2] - region.center[2] <= cfg.h_place;
    o.pos = {s.gripper_pos[0], s.gripper_pos[1], cfg.table_z};
    if (placed) ++s.stage;
  }

  ++s.step_index;
  StepResult res;
  if (s.stage >= static_cast<int>(task.stages.size())) {
    s.success = true;
    s.done = true;
    res.sparse_reward = 1.0;
  } else if (s.step_index >= cfg.horizon) {
    s.done = true;
    res.info.truncated = true;
  }
  res.done = s.done;
  res.info.success = s.success;
  res.info.stage = s.stage;
  res.info.episode_length = s.step_index;
  res.next_obs = observe(s, task, cfg);
  return res;
}

Observation Env::reset(const TaskSpec& task, std::uint64_t seed) {
  task_ = task;
  state_ = initial_state(task, seed, cfg_);
  return observe(state_, task_, cfg_);
}

StepResult Env::step(const ActionVector& a) { return step_state(state_, task_, a, cfg_); }

ActionVector expert_action(const WorldState& s, const TaskSpec& task, const SimConfig& cfg) {
  ActionVector a{};
  const int stage_idx = std::min<int>(s.stage, static_cast<int>(task.stages.size()) - 1);
  const Stage& stage = task.stages[stage_idx];
  const int held = s.attached_index();
  auto move_toward = [&](const Vec3& target) {
    for (int d = 0; d < 3; ++d)
      a[d] = std::clamp((target[d] - s.gripper_pos[d]) / cfg.scale_t, -1.0, 1.0);
  };

  if (held == stage.object) {
    const Region& region = s.regions[stage.region];
    const Vec3 target = place_point(region);
    move_toward(target);
    const bool over = horizontal_dist(s.gripper_pos, region.center) < 0.5 * region.radius &&
                      s.gripper_pos[2] - region.center[2] <= 0.8 * cfg.h_place;
    a[6] = over ? -1.0 : 1.0;
  } else if (held >= 0) {
    a[6] = -1.0;
  } else {
    const auto& obj = s.objects[stage.object];
    move_toward(obj.pos);
    const double yaw_err = wrap_angle(obj.yaw - s.gripper_yaw);
    a[5] = std::clamp(yaw_err / cfg.scale_r, -1.0, 1.0);
    const bool open = s.gripper_open > 0.5;
    const bool ready = dist3(obj.pos, s.gripper_pos) < 0.5 * cfg.grasp_radius &&
                       std::abs(yaw_err) < 0.5 * cfg.yaw_tol;
    a[6] = (open && ready) ? 1.0 : -1.0;
  }
  return a;
}

StepResult step_with_autoreset(EnvSlot& slot, std::size_t env_id, const ActionVector& a,
                               std::span<const TaskSpec> tasks, const TaskSampler& sampler) {
  StepResult res = slot.env.step(a);
  if (res.done) {
    slot.task_index = sampler(env_id, slot.rng);
    if (slot.task_index >= tasks.size()) {
      throw invalid_argument("sampler returned task index " + std::to_string(slot.task_index));
    }
    const std::uint64_t seed = slot.rng.next_u64();
    res.next_obs = slot.env.reset(tasks[slot.task_index], seed);
  }
  return res;
}

VecEnv::VecEnv(SimConfig cfg, std::vector<TaskSpec> tasks, std::size_t num_envs,
               std::uint64_t master_seed)
    : tasks_(std::move(tasks)) {
  slots_.reserve(num_envs);
  for (std::size_t i = 0; i < num_envs; ++i) {
    slots_.push_back(EnvSlot{Env(cfg), CounterRng::stream(master_seed, i), 0});
  }
}

std::vector<Observation> VecEnv::reset(const std::vector<std::size_t>& task_indices,
                                       const std::vector<std::uint64_t>& seeds) {
  if (task_indices.size() != slots_.size() || seeds.size() != slots_.size()) {
    throw invalid_argument("reset batch length mismatch: expected " +
                           std::to_string(slots_.size()));
  }
  std::vector<Observation> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (task_indices[i] >= tasks_.size()) throw invalid_argument("unknown task index");
    slots_[i].task_index = task_indices[i];
    out.push_back(slots_[i].env.reset(tasks_[task_indices[i]], seeds[i]));
  }
  return out;
}

std::vector<StepResult> VecEnv::step(const std::vector<ActionVector>& actions,
                                     const TaskSampler& sampler) {
  if (actions.size() != slots_.size()) {
    throw invalid_argument("action batch has " + std::to_string(actions.size()) +
                           " entries for " + std::to_string(slots_.size()) + " environments");
  }
  std::vector<StepResult> out;
  out.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    out.push_back(step_with_autoreset(slots_[i], i, actions[i], tasks_, sampler));
  }
  return out;
}

const char* suite_name(Suite s) noexcept {
  switch (s) {
    case Suite::spatial: return "spatial";
    case Suite::object: return "object";
    case Suite::goal: return "goal";
    case Suite::long_horizon: return "long";
  }
  return "?";
}

Suite suite_from_name(const std::string& name) {
  if (name == "spatial") return Suite::spatial;
  if (name == "object") return Suite::object;
  if (name == "goal") return Suite::goal;
  if (name == "long") return Suite::long_horizon;
  throw invalid_argument("unknown suite '" + name + "'");
}

}  // namespace vlarl::sim
