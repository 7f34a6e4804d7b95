#include "vlarl/vlarl.h"

#include <cstring>
#include <exception>
#include <mutex>
#include <new>
#include <string>

#include "vlarl/app/checkpoint.hpp"
#include "vlarl/app/commands.hpp"
#include "vlarl/app/config.hpp"
#include "vlarl/app/store.hpp"
#include "vlarl/error.hpp"

struct vlarl_config {
  vlarl::app::RunConfig cfg;
};

struct vlarl_env {
  vlarl::sim::Env env;
};

struct vlarl_policy {
  vlarl::Policy policy;
};

namespace {

thread_local std::string last_error;

vlarl_status status_of(vlarl::ErrorKind kind) {
  switch (kind) {
    case vlarl::ErrorKind::invalid_argument: return VLARL_ERR_INVALID_ARGUMENT;
    case vlarl::ErrorKind::state: return VLARL_ERR_STATE;
    case vlarl::ErrorKind::config: return VLARL_ERR_CONFIG;
    case vlarl::ErrorKind::numeric: return VLARL_ERR_NUMERIC;
    case vlarl::ErrorKind::io: return VLARL_ERR_IO;
  }
  return VLARL_ERR_INTERNAL;
}

template <typename F>
vlarl_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return VLARL_OK;
  } catch (const vlarl::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return VLARL_ERR_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return VLARL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return VLARL_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return VLARL_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw vlarl::invalid_argument(std::string(what) + " is null");
}

std::string text_or_empty(const char* s) { return s ? std::string(s) : std::string(); }

// Copies `text` (with NUL) if it fits; reports the required size either way.
void copy_out(const std::string& text, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf == nullptr) return;
  if (cap < text.size() + 1) {
    throw vlarl::invalid_argument("buffer of " + std::to_string(cap) + " bytes is too small; " +
                                  std::to_string(text.size() + 1) + " needed");
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
}

std::mutex log_mu;
vlarl_log_fn log_fn = nullptr;
void* log_user = nullptr;

}  // namespace

extern "C" {

const char* vlarl_last_error(void) { return last_error.c_str(); }

const char* vlarl_status_name(vlarl_status status) {
  switch (status) {
    case VLARL_OK: return "ok";
    case VLARL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VLARL_ERR_CONFIG: return "config error";
    case VLARL_ERR_NUMERIC: return "numeric failure";
    case VLARL_ERR_IO: return "i/o failure";
    case VLARL_ERR_STATE: return "state error";
    case VLARL_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* vlarl_version(void) { return "1.0.0"; }

void vlarl_set_log_callback(vlarl_log_fn fn, void* user) {
  {
    std::lock_guard lock(log_mu);
    log_fn = fn;
    log_user = user;
  }
  if (fn == nullptr) {
    vlarl::app::set_log_sink(nullptr);
    return;
  }
  vlarl::app::set_log_sink([](const std::string& line) {
    std::lock_guard lock(log_mu);
    if (log_fn) log_fn(line.c_str(), log_user);
  });
}

vlarl_status vlarl_config_new(vlarl_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new vlarl_config{};
  });
}

void vlarl_config_free(vlarl_config* cfg) { delete cfg; }

vlarl_status vlarl_config_load(vlarl_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->cfg.load_file(path);
  });
}

vlarl_status vlarl_config_set(vlarl_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

vlarl_status vlarl_config_assign(vlarl_config* cfg, const char* assignment) {
  return guarded([&] {
    need(cfg, "config");
    need(assignment, "assignment");
    cfg->cfg.set(std::string(assignment));
  });
}

vlarl_status vlarl_config_get(const vlarl_config* cfg, const char* key, char* buf, size_t cap,
                              size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    const auto& v = cfg->cfg.values();
    auto it = v.find(key);
    if (it == v.end()) throw vlarl::config_error(std::string("unknown config key '") + key + "'");
    copy_out(it->dump(), buf, cap, needed);
  });
}

vlarl_status vlarl_config_dump(const vlarl_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.dump(), buf, cap, needed);
  });
}

vlarl_status vlarl_config_digest(const vlarl_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.digest(), buf, cap, needed);
  });
}

vlarl_status vlarl_cmd_gen_demos(const vlarl_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    vlarl::app::cmd_gen_demos(cfg->cfg);
  });
}

vlarl_status vlarl_cmd_sft(const vlarl_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    vlarl::app::cmd_sft(cfg->cfg);
  });
}

vlarl_status vlarl_cmd_label(const vlarl_config* cfg, const char* input, const char* output) {
  return guarded([&] {
    need(cfg, "config");
    vlarl::app::cmd_label(cfg->cfg, text_or_empty(input), text_or_empty(output));
  });
}

vlarl_status vlarl_cmd_train_rprm(const vlarl_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    vlarl::app::cmd_train_rprm(cfg->cfg);
  });
}

vlarl_status vlarl_cmd_train(const vlarl_config* cfg, int resume) {
  return guarded([&] {
    need(cfg, "config");
    vlarl::app::cmd_train(cfg->cfg, resume != 0);
  });
}

vlarl_status vlarl_cmd_eval(const vlarl_config* cfg, const char* policy, const char* suite,
                            int episodes_per_task, const char* report_path, char* buf, size_t cap,
                            size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    need(policy, "policy");
    need(suite, "suite");
    const auto report = vlarl::app::cmd_eval(cfg->cfg, policy, suite, episodes_per_task);
    const std::string text = report.dump(2) + "\n";
    if (report_path && *report_path) vlarl::app::write_text(report_path, text);
    copy_out(text, buf, cap, needed);
  });
}

vlarl_status vlarl_cmd_export(const vlarl_config* cfg, const char* rl_dir, const char* kind,
                              const char* output) {
  return guarded([&] {
    need(cfg, "config");
    need(kind, "kind");
    std::filesystem::path dir = text_or_empty(rl_dir);
    if (dir.empty()) dir = vlarl::app::RunPaths{cfg->cfg.run_dir()}.rl_dir(vlarl::app::run_tag(cfg->cfg));
    const std::string out = text_or_empty(output);
    if (out.empty()) throw vlarl::invalid_argument("export needs an output path");
    vlarl::app::cmd_export(dir, kind, out);
  });
}

vlarl_status vlarl_run_dir(const vlarl_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.run_dir().string(), buf, cap, needed);
  });
}

vlarl_status vlarl_rl_dir(const vlarl_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    const auto dir =
        vlarl::app::RunPaths{cfg->cfg.run_dir()}.rl_dir(vlarl::app::run_tag(cfg->cfg));
    copy_out(dir.string(), buf, cap, needed);
  });
}

size_t vlarl_feature_dim(void) { return vlarl::sim::kFeatureDim; }
size_t vlarl_action_dims(void) { return vlarl::kActionDims; }

vlarl_status vlarl_task_count(const vlarl_config* cfg, size_t* out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    *out = vlarl::sim::make_suite(vlarl::app::suite_config(cfg->cfg)).tasks.size();
  });
}

vlarl_status vlarl_env_new(const vlarl_config* cfg, size_t task_index, uint64_t seed,
                           vlarl_env** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    const auto suite = vlarl::sim::make_suite(vlarl::app::suite_config(cfg->cfg));
    if (task_index >= suite.tasks.size()) {
      throw vlarl::invalid_argument("task index " + std::to_string(task_index) + " out of range (" +
                                    std::to_string(suite.tasks.size()) + " tasks)");
    }
    auto env = std::make_unique<vlarl_env>(vlarl_env{vlarl::sim::Env(vlarl::app::sim_config(cfg->cfg))});
    env->env.reset(suite.tasks[task_index], seed);
    *out = env.release();
  });
}

void vlarl_env_free(vlarl_env* env) { delete env; }

vlarl_status vlarl_env_observe(const vlarl_env* env, double* features, size_t cap) {
  return guarded([&] {
    need(env, "env");
    need(features, "features");
    const auto obs = env->env.observation();
    if (cap < obs.features.size()) throw vlarl::invalid_argument("feature buffer too small");
    std::memcpy(features, obs.features.data(), obs.features.size() * sizeof(double));
  });
}

vlarl_status vlarl_env_step(vlarl_env* env, const double* action, double* reward, int* done,
                            int* success) {
  return guarded([&] {
    need(env, "env");
    need(action, "action");
    vlarl::ActionVector a{};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = action[i];
    const auto r = env->env.step(a);
    if (reward) *reward = r.sparse_reward;
    if (done) *done = r.done ? 1 : 0;
    if (success) *success = r.info.success ? 1 : 0;
  });
}

vlarl_status vlarl_policy_load(const char* checkpoint, vlarl_policy** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    *out = new vlarl_policy{vlarl::app::load_policy(checkpoint)};
  });
}

void vlarl_policy_free(vlarl_policy* policy) { delete policy; }

vlarl_status vlarl_policy_act(const vlarl_policy* policy, const vlarl_env* env, double* action,
                              size_t cap) {
  return guarded([&] {
    need(policy, "policy");
    need(env, "env");
    need(action, "action");
    if (cap < vlarl::kActionDims) throw vlarl::invalid_argument("action buffer too small");
    const auto obs = env->env.observation();
    if (obs.features.size() != policy->policy.config().trunk.feature_dim)
      throw vlarl::invalid_argument("policy and environment disagree on the feature width");
    const vlarl::sim::Observation* ptr = &obs;
    const auto d = policy->policy.sample_batch({&ptr, 1}, 0.0, {});
    const auto a = vlarl::action_from_bins(vlarl::to_action_bins(d.front().bins));
    for (std::size_t i = 0; i < a.size(); ++i) action[i] = a[i];
  });
}

}  // extern "C"
