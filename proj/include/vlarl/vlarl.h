#ifndef VLARL_VLARL_H
#define VLARL_VLARL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define VLARL_API __declspec(dllexport)
#else
#define VLARL_API __attribute__((visibility("default")))
#endif

typedef enum vlarl_status {
  VLARL_OK = 0,
  VLARL_ERR_INVALID_ARGUMENT = 1,
  VLARL_ERR_CONFIG = 2,
  VLARL_ERR_NUMERIC = 3,
  VLARL_ERR_IO = 4,
  VLARL_ERR_STATE = 5,
  VLARL_ERR_INTERNAL = 6
} vlarl_status;

typedef struct vlarl_config vlarl_config;
typedef struct vlarl_env vlarl_env;
typedef struct vlarl_policy vlarl_policy;

/* Message of the last failed call on this thread; empty after success. */
VLARL_API const char* vlarl_last_error(void);
VLARL_API const char* vlarl_status_name(vlarl_status status);
VLARL_API const char* vlarl_version(void);

/* Receives progress lines from long-running commands. NULL silences them. */
typedef void (*vlarl_log_fn)(const char* line, void* user);
VLARL_API void vlarl_set_log_callback(vlarl_log_fn fn, void* user);

/* ---- configuration ---- */
VLARL_API vlarl_status vlarl_config_new(vlarl_config** out);
VLARL_API void vlarl_config_free(vlarl_config* cfg);
VLARL_API vlarl_status vlarl_config_load(vlarl_config* cfg, const char* path);
/* key and value as text; the value is parsed by the key's type. */
VLARL_API vlarl_status vlarl_config_set(vlarl_config* cfg, const char* key, const char* value);
/* "key=value" */
VLARL_API vlarl_status vlarl_config_assign(vlarl_config* cfg, const char* assignment);
/* Copies the value as JSON text. *needed receives the size including the
 * terminating NUL; buf may be NULL to query it. */
VLARL_API vlarl_status vlarl_config_get(const vlarl_config* cfg, const char* key, char* buf,
                                        size_t cap, size_t* needed);
VLARL_API vlarl_status vlarl_config_dump(const vlarl_config* cfg, char* buf, size_t cap,
                                         size_t* needed);
VLARL_API vlarl_status vlarl_config_digest(const vlarl_config* cfg, char* buf, size_t cap,
                                           size_t* needed);

/* ---- pipeline commands; artifacts go to the configured run directory ---- */
VLARL_API vlarl_status vlarl_cmd_gen_demos(const vlarl_config* cfg);
VLARL_API vlarl_status vlarl_cmd_sft(const vlarl_config* cfg);
/* input NULL or "" labels the run's demonstrations; output NULL or "" writes
 * the run's labels.jsonl. */
VLARL_API vlarl_status vlarl_cmd_label(const vlarl_config* cfg, const char* input,
                                       const char* output);
VLARL_API vlarl_status vlarl_cmd_train_rprm(const vlarl_config* cfg);
VLARL_API vlarl_status vlarl_cmd_train(const vlarl_config* cfg, int resume);
/* policy: "expert", "untrained" or a checkpoint path. The JSON report is
 * copied into buf (see vlarl_config_dump for the size protocol) and written
 * to report_path when that is non-empty. */
VLARL_API vlarl_status vlarl_cmd_eval(const vlarl_config* cfg, const char* policy,
                                      const char* suite, int episodes_per_task,
                                      const char* report_path, char* buf, size_t cap,
                                      size_t* needed);
/* kind: "metrics" or "action-coverage". rl_dir NULL or "" selects the run
 * directory of the configured RL run. */
VLARL_API vlarl_status vlarl_cmd_export(const vlarl_config* cfg, const char* rl_dir,
                                        const char* kind, const char* output);
/* Run directory after the environment override. */
VLARL_API vlarl_status vlarl_run_dir(const vlarl_config* cfg, char* buf, size_t cap,
                                     size_t* needed);
/* Directory of the configured RL run. */
VLARL_API vlarl_status vlarl_rl_dir(const vlarl_config* cfg, char* buf, size_t cap,
                                    size_t* needed);

/* ---- single environment ---- */
VLARL_API size_t vlarl_feature_dim(void);
VLARL_API size_t vlarl_action_dims(void);
VLARL_API vlarl_status vlarl_task_count(const vlarl_config* cfg, size_t* out);
VLARL_API vlarl_status vlarl_env_new(const vlarl_config* cfg, size_t task_index, uint64_t seed,
                                     vlarl_env** out);
VLARL_API void vlarl_env_free(vlarl_env* env);
/* Writes vlarl_feature_dim() values. */
VLARL_API vlarl_status vlarl_env_observe(const vlarl_env* env, double* features, size_t cap);
/* action holds vlarl_action_dims() values in [-1, 1]. Stepping a finished
 * episode is a state error. */
VLARL_API vlarl_status vlarl_env_step(vlarl_env* env, const double* action, double* reward,
                                      int* done, int* success);

/* ---- policy ---- */
VLARL_API vlarl_status vlarl_policy_load(const char* checkpoint, vlarl_policy** out);
VLARL_API void vlarl_policy_free(vlarl_policy* policy);
/* Greedy action for the environment's current observation. */
VLARL_API vlarl_status vlarl_policy_act(const vlarl_policy* policy, const vlarl_env* env,
                                        double* action, size_t cap);

#ifdef __cplusplus
}
#endif

#endif
