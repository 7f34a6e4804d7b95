#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlarl/vlarl.h"

namespace {

int exit_code(vlarl_status s) {
  switch (s) {
    case VLARL_OK: return 0;
    case VLARL_ERR_CONFIG: return 2;
    case VLARL_ERR_NUMERIC: return 3;
    case VLARL_ERR_IO: return 4;
    default: return 1;
  }
}

int fail(vlarl_status s) {
  std::fprintf(stderr, "error (%s): %s\n", vlarl_status_name(s), vlarl_last_error());
  return exit_code(s);
}

// Runs a buffer-filling call twice: once for the size, once for the text.
template <typename F>
vlarl_status fetch(std::string& out, F&& call) {
  std::size_t needed = 0;
  if (vlarl_status s = call(nullptr, 0, &needed); s != VLARL_OK) return s;
  std::vector<char> buf(needed);
  if (vlarl_status s = call(buf.data(), buf.size(), &needed); s != VLARL_OK) return s;
  out.assign(buf.data());
  return VLARL_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale RL fine-tuning of a token-action policy"};
  app.require_subcommand(1);

  std::string config_path, run_dir;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "Config override key=value (repeatable)")
      ->allow_extra_args(false);
  app.add_option("-r,--run-dir", run_dir, "Run directory (the VLARL_RUN_DIR variable wins)");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-demos", "Generate scripted expert demonstrations");
  auto* sft = app.add_subcommand("sft", "Behavior-clone the policy on the demonstrations");

  std::string label_in, label_out;
  auto* label = app.add_subcommand("label", "Generate progress pseudo labels");
  label->add_option("--input", label_in, "Trajectory JSONL (default: the run's demonstrations)");
  label->add_option("--output", label_out, "Label JSONL (default: <run>/labels.jsonl)");

  auto* rprm = app.add_subcommand("train-rprm", "Train the progress reward model");

  bool resume = false;
  auto* train = app.add_subcommand("train", "Critic warmup and PPO fine-tuning");
  train->add_flag("--resume", resume, "Continue from the run's latest checkpoint");

  std::string eval_policy = "sft", eval_suite, eval_report;
  int eval_eps = 0;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation with 95% intervals");
  eval->add_option("-p,--policy", eval_policy,
                   "Checkpoint path, 'sft', 'rl', 'expert' or 'untrained'")
      ->capture_default_str();
  eval->add_option("--suite", eval_suite, "spatial, object, goal, long or all (default: rl.suite)");
  eval->add_option("-n,--episodes", eval_eps, "Episodes per task (default: eval.episodes_per_task)");
  eval->add_option("-o,--report", eval_report, "Also write the JSON report here");

  std::string export_kind, export_dir, export_out;
  auto* exp = app.add_subcommand("export", "Export metrics or action coverage as CSV");
  exp->add_option("-k,--kind", export_kind, "metrics or action-coverage")
      ->required()
      ->check(CLI::IsMember({"metrics", "action-coverage"}));
  exp->add_option("--rl-dir", export_dir, "RL run directory (default: the configured run)");
  exp->add_option("-o,--output", export_out, "CSV path")->required();

  auto* show = app.add_subcommand("config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (!quiet) {
    vlarl_set_log_callback([](const char* line, void*) { std::fprintf(stderr, "%s\n", line); },
                           nullptr);
  } else {
    vlarl_set_log_callback(nullptr, nullptr);
  }

  vlarl_config* cfg = nullptr;
  if (vlarl_status s = vlarl_config_new(&cfg); s != VLARL_OK) return fail(s);
  struct Guard {
    vlarl_config* c;
    ~Guard() { vlarl_config_free(c); }
  } guard{cfg};

  if (!config_path.empty()) {
    if (vlarl_status s = vlarl_config_load(cfg, config_path.c_str()); s != VLARL_OK) return fail(s);
  }
  if (!run_dir.empty()) {
    if (vlarl_status s = vlarl_config_set(cfg, "run_dir", run_dir.c_str()); s != VLARL_OK)
      return fail(s);
  }
  for (const auto& o : overrides) {
    if (vlarl_status s = vlarl_config_assign(cfg, o.c_str()); s != VLARL_OK) return fail(s);
  }

  vlarl_status s = VLARL_OK;
  if (*gen) {
    s = vlarl_cmd_gen_demos(cfg);
  } else if (*sft) {
    s = vlarl_cmd_sft(cfg);
  } else if (*label) {
    s = vlarl_cmd_label(cfg, label_in.c_str(), label_out.c_str());
  } else if (*rprm) {
    s = vlarl_cmd_train_rprm(cfg);
  } else if (*train) {
    s = vlarl_cmd_train(cfg, resume ? 1 : 0);
  } else if (*eval) {
    std::string policy = eval_policy;
    if (policy == "sft" || policy == "rl") {
      std::string dir;
      s = policy == "sft" ? fetch(dir, [&](char* b, std::size_t c, std::size_t* n) {
        return vlarl_run_dir(cfg, b, c, n);
      })
                          : fetch(dir, [&](char* b, std::size_t c, std::size_t* n) {
                              return vlarl_rl_dir(cfg, b, c, n);
                            });
      if (s != VLARL_OK) return fail(s);
      policy = dir + (policy == "sft" ? "/sft.ckpt" : "/policy.ckpt");
    }
    std::string suite = eval_suite;
    if (suite.empty()) {
      s = fetch(suite, [&](char* b, std::size_t c, std::size_t* n) {
        return vlarl_config_get(cfg, "rl.suite", b, c, n);
      });
      if (s != VLARL_OK) return fail(s);
      suite = suite.substr(1, suite.size() - 2);
    }
    int eps = eval_eps;
    if (eps <= 0) {
      std::string v;
      s = fetch(v, [&](char* b, std::size_t c, std::size_t* n) {
        return vlarl_config_get(cfg, "eval.episodes_per_task", b, c, n);
      });
      if (s != VLARL_OK) return fail(s);
      eps = std::stoi(v);
    }
    // One call only: evaluation is not repeated to learn the report size.
    std::vector<char> report(std::size_t{1} << 24);
    std::size_t needed = 0;
    s = vlarl_cmd_eval(cfg, policy.c_str(), suite.c_str(), eps, eval_report.c_str(), report.data(),
                       report.size(), &needed);
    if (s == VLARL_OK) std::fputs(report.data(), stdout);
  } else if (*exp) {
    s = vlarl_cmd_export(cfg, export_dir.c_str(), export_kind.c_str(), export_out.c_str());
  } else if (*show) {
    std::string text;
    s = fetch(text, [&](char* b, std::size_t c, std::size_t* n) { return vlarl_config_dump(cfg, b, c, n); });
    if (s == VLARL_OK) std::fputs(text.c_str(), stdout);
  }
  return s == VLARL_OK ? 0 : fail(s);
}
