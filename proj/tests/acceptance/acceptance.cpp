// Acceptance run: one PASS/FAIL line per criterion, report in the work dir.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "checks.hpp"
#include "testkit.hpp"
#include "vlarl/app/checkpoint.hpp"
#include "vlarl/app/commands.hpp"
#include "vlarl/app/config.hpp"
#include "vlarl/error.hpp"
#include "vlarl/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace vlarl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
  std::fflush(stderr);
}

struct Report {
  ordered_json criteria = ordered_json::array();
  int failures = 0;

  void add(int id, const std::string& name, bool pass, const std::string& detail,
           ordered_json data = ordered_json::object()) {
    std::printf("[%s] C%d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
    criteria.push_back({{"id", id}, {"name", name}, {"pass", pass}, {"detail", detail}, {"data", data}});
  }
};

// ---- criteria 1-5: deterministic checks ----

void oracle_suite(Report& rep) {
  const auto t0 = Clock::now();
  const double gae = testkit::gae_oracle_error();
  const double cur = testkit::curriculum_oracle_error();
  const int ppo = testkit::ppo_worked_examples_exact();
  const double tok = testkit::tokenizer_round_trip_error(20000);
  const double secs = seconds_since(t0);
  const double half_bin = kBinWidth / 2.0;
  const bool pass = gae <= 1e-10 && cur <= 1e-12 && ppo == 3 && tok <= half_bin && secs < 10.0;
  rep.add(1, "oracle suite", pass,
          "gae " + fmt("%.2e", gae) + " (<=1e-10), curriculum " + fmt("%.2e", cur) + " (<=1e-12), ppo " +
              std::to_string(ppo) + "/3 exact, tokenizer " + fmt("%.3e", tok) + " (<=" + fmt("%.3e", half_bin) +
              "), " + fmt("%.2fs", secs) + " (<10s)",
          {{"gae", gae}, {"curriculum", cur}, {"ppo_exact", ppo}, {"tokenizer", tok}, {"seconds", secs}});
}

void gradient_suite(Report& rep) {
  const auto t0 = Clock::now();
  const auto g = testkit::gradient_checks(20);
  const double secs = seconds_since(t0);
  const std::vector<std::pair<std::string, testkit::FdResult>> all = {
      {"action_log_prob", g.action_log_prob}, {"value", g.value}, {"bc_loss", g.bc_loss}, {"rprm_loss", g.rprm_loss}};
  bool pass = secs < 60.0;
  std::string detail;
  ordered_json data;
  for (const auto& [name, r] : all) {
    pass = pass && r.max_rel_error < 1e-4 && r.directions >= 20;
    detail += name + " " + fmt("%.2e", r.max_rel_error) + "/" + std::to_string(r.directions) + "dirs, ";
    data[name] = {{"max_rel_error", r.max_rel_error}, {"directions", r.directions}};
  }
  data["seconds"] = secs;
  rep.add(2, "finite-difference gradients", pass, detail + "limit 1e-4, " + fmt("%.1fs", secs) + " (<60s)", data);
}

void normalization_check(Report& rep) {
  const double err = testkit::two_step_normalization_error();
  rep.add(3, "two-step normalization", err <= 1e-9, "|sum p - 1| = " + fmt("%.2e", err) + " (<=1e-9)",
          {{"error", err}});
}

void golden_labels(Report& rep) {
  std::string detail;
  const int n = testkit::golden_label_matches(&detail);
  rep.add(4, "golden pseudo-labels", n == 3,
          std::to_string(n) + "/3 trajectories reproduced" + (detail.empty() ? "" : " (" + detail + ")"),
          {{"matches", n}});
}

void shard_check(Report& rep) {
  const auto t0 = Clock::now();
  const auto r = testkit::shard_and_decode_check();
  const double secs = seconds_since(t0);
  const bool pass = r.buffers_identical && r.decode_identical && secs < 60.0;
  rep.add(5, "shard and batch invariance", pass,
          std::string("E=1/2/4 buffers ") + (r.buffers_identical ? "identical" : "differ") + ", batched decode " +
              (r.decode_identical ? "identical" : "differs") + ", " + fmt("%.1fs", secs) + " (<60s)" +
              (r.detail.empty() ? "" : " (" + r.detail + ")"),
          {{"buffers_identical", r.buffers_identical}, {"decode_identical", r.decode_identical}, {"seconds", secs}});
}

// ---- pipeline runs ----

struct Runner {
  fs::path runs;
  int iterations = 40;

  app::RunConfig base() const {
    app::RunConfig c;
    c.set("run_dir", runs.string());
    return c;
  }

  void prepare() const {
    const app::RunConfig c = base();
    const fs::path stamp = runs / "base.stamp";
    const app::RunPaths p{c.run_dir()};
    if (fs::exists(stamp) && slurp(stamp) == c.digest() && fs::exists(p.sft()) && fs::exists(p.rprm())) {
      progress("reusing demonstrations, SFT and reward model in " + runs.string());
      return;
    }
    const auto t0 = Clock::now();
    progress("generating demonstrations");
    app::cmd_gen_demos(c);
    progress("behavior cloning");
    app::cmd_sft(c);
    progress("pseudo-labeling");
    app::cmd_label(c);
    progress("training reward model");
    app::cmd_train_rprm(c);
    std::ofstream(stamp) << c.digest();
    progress("base pipeline done in " + fmt("%.0fs", seconds_since(t0)));
  }

  app::RunConfig rl_config(int seed, const std::vector<std::string>& sets, int iters = 0) const {
    app::RunConfig c = base();
    c.set("seed", std::to_string(seed));
    c.set("rl.iterations", std::to_string(iters > 0 ? iters : iterations));
    for (const auto& s : sets) c.set(s);
    return c;
  }

  /// Trains unless a finished run with the same configuration exists.
  fs::path train(const app::RunConfig& c) const {
    const app::RlPaths rp{app::RunPaths{c.run_dir()}.rl_dir(app::run_tag(c))};
    if (fs::exists(rp.summary()) && fs::exists(rp.config()) && slurp(rp.config()) == c.dump()) {
      progress("reusing " + rp.dir.string());
      return rp.dir;
    }
    fs::remove_all(rp.dir);
    const auto t0 = Clock::now();
    progress("training " + app::run_tag(c));
    app::cmd_train(c, false);
    progress("finished " + app::run_tag(c) + " in " + fmt("%.0fs", seconds_since(t0)));
    return rp.dir;
  }

  /// K-1 iterations, then one resumed iteration.
  fs::path train_resumed(int seed) const {
    const app::RunConfig full = rl_config(seed, {"rl.tag=resume-seed" + std::to_string(seed)});
    const app::RlPaths rp{app::RunPaths{full.run_dir()}.rl_dir(app::run_tag(full))};
    if (fs::exists(rp.summary()) && fs::exists(rp.config()) && slurp(rp.config()) == full.dump()) {
      progress("reusing " + rp.dir.string());
      return rp.dir;
    }
    fs::remove_all(rp.dir);
    progress("training " + app::run_tag(full) + " (interrupted)");
    app::cmd_train(rl_config(seed, {"rl.tag=resume-seed" + std::to_string(seed)}, iterations - 1), false);
    progress("resuming " + app::run_tag(full));
    app::cmd_train(full, true);
    return rp.dir;
  }
};

struct RunSeries {
  std::vector<double> eval_iters;
  std::vector<double> eval_success;
  double final_success = 0.0;
  double baseline_success = 0.0;
  std::vector<json> metrics;
};

RunSeries load_run(const fs::path& dir) {
  const app::RlPaths rp{dir};
  RunSeries s;
  for (const auto& e : read_jsonl(rp.evals())) {
    s.eval_iters.push_back(e["iteration"].get<double>());
    s.eval_success.push_back(e["success_rate"].get<double>());
  }
  if (s.eval_success.empty()) throw Error(ErrorKind::io, "no evaluations in " + dir.string());
  s.baseline_success = s.eval_success.front();
  s.final_success = s.eval_success.back();
  s.metrics = read_jsonl(rp.metrics());
  return s;
}

std::vector<double> finals(const std::vector<RunSeries>& runs) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.final_success);
  return v;
}

ordered_json as_json(const std::vector<double>& v) { return ordered_json(v); }

/// Successful-episode length averaged over a range of iterations, weighted by
/// successes.
double success_length(const std::vector<json>& metrics, std::size_t first, std::size_t last) {
  double total = 0.0, count = 0.0;
  for (std::size_t i = first; i < last && i < metrics.size(); ++i) {
    const double n = metrics[i]["successes"].get<double>();
    total += n * metrics[i]["mean_success_len"].get<double>();
    count += n;
  }
  return count > 0 ? total / count : std::nan("");
}

std::string metrics_without_wall_times(const fs::path& p) {
  std::string out;
  for (auto j : read_jsonl(p)) {
    j.erase("wall_times");
    out += j.dump() + "\n";
  }
  return out;
}

bool same_tensors(const fs::path& a, const fs::path& b, std::string* why) {
  const auto ca = app::read_checkpoint(a), cb = app::read_checkpoint(b);
  if (ca.tensors.size() != cb.tensors.size()) {
    *why = "tensor count differs";
    return false;
  }
  for (std::size_t i = 0; i < ca.tensors.size(); ++i) {
    const auto& x = ca.tensors[i];
    const auto& y = cb.tensors[i];
    if (x.name != y.name || x.value.shape != y.value.shape || x.value.data != y.value.data) {
      *why = "tensor " + x.name + " differs";
      return false;
    }
  }
  return true;
}

/// Compares a run directory against the reference run: metrics stream (wall
/// times excluded), evaluations, final policy and trainer state.
bool same_run(const fs::path& ref, const fs::path& other, std::string* why) {
  const app::RlPaths a{ref}, b{other};
  if (metrics_without_wall_times(a.metrics()) != metrics_without_wall_times(b.metrics())) {
    *why = "metrics stream differs";
    return false;
  }
  // An interrupted run also evaluates at its last iteration; only shared
  // evaluation points are compared.
  std::map<int, std::string> theirs;
  for (const auto& e : read_jsonl(b.evals())) theirs[e["iteration"].get<int>()] = e.dump();
  for (const auto& e : read_jsonl(a.evals())) {
    const auto it = theirs.find(e["iteration"].get<int>());
    if (it == theirs.end() || it->second != e.dump()) {
      *why = "evaluation at iteration " + e["iteration"].dump() + " differs";
      return false;
    }
  }
  return same_tensors(a.policy(), b.policy(), why) && same_tensors(a.latest(), b.latest(), why);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"acceptance run"};
  std::string work_dir = "acceptance_runs";
  int iterations = 40;
  int seeds = 3;
  bool quick = false;
  cli.add_option("--work-dir", work_dir, "directory for runs and the report");
  cli.add_option("--iterations", iterations, "PPO iterations per run")->check(CLI::Range(2, 10000));
  cli.add_option("--seeds", seeds, "seeds per arm")->check(CLI::Range(1, 100));
  cli.add_flag("--checks-only", quick, "only the deterministic criteria 1-5");
  CLI11_PARSE(cli, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  auto log = std::make_shared<std::ofstream>(work / "pipeline.log", std::ios::app);
  app::set_log_sink([log](const std::string& m) { *log << m << "\n" << std::flush; });

  Report rep;
  try {
    oracle_suite(rep);
    gradient_suite(rep);
    normalization_check(rep);
    golden_labels(rep);
    shard_check(rep);
    if (quick) {
      std::printf("%d criteria failed\n", rep.failures);
      return rep.failures == 0 ? 0 : 1;
    }

    Runner runner{work / "runs", iterations};
    runner.prepare();

    const std::map<std::string, std::vector<std::string>> arms = {
        {"default", {}},
        {"no-rprm", {"rprm.beta=0"}},
        {"uniform", {"curriculum.uniform=true"}},
        {"warmup0", {"ppo.warmup_iters=0"}},
        {"lr2e-4", {"ppo.lr=0.0002"}},
    };
    std::map<std::string, std::vector<RunSeries>> results;
    std::map<std::string, std::vector<fs::path>> dirs;
    for (const auto& arm : {"default", "no-rprm", "uniform", "warmup0", "lr2e-4"}) {
      for (int seed = 1; seed <= seeds; ++seed) {
        const fs::path d = runner.train(runner.rl_config(seed, arms.at(arm)));
        dirs[arm].push_back(d);
        results[arm].push_back(load_run(d));
      }
    }
    const fs::path rerun = runner.train(runner.rl_config(1, {"rl.tag=rerun-seed1"}));
    const fs::path resumed = runner.train_resumed(1);

    // C6: improvement over the behavior-cloned starting point.
    const auto& def = results["default"];
    std::vector<double> baselines;
    for (const auto& r : def) baselines.push_back(r.baseline_success);
    const double sft = testkit::median(baselines);
    const double final_med = testkit::median(finals(def));
    const bool sft_in_band = sft >= 0.30 && sft <= 0.60;
    rep.add(6, "RL improves on SFT", sft_in_band && final_med >= sft + 0.15,
            "SFT " + fmt("%.3f", sft) + " (band 0.30-0.60), median final " + fmt("%.3f", final_med) +
                " (need >= " + fmt("%.3f", sft + 0.15) + ")",
            {{"sft", sft}, {"finals", as_json(finals(def))}, {"median_final", final_med}});

    // C7: ablation ordering.
    const double m_rprm = final_med;
    const double m_norprm = testkit::median(finals(results["no-rprm"]));
    const double m_uniform = testkit::median(finals(results["uniform"]));
    const double m_w0 = testkit::median(finals(results["warmup0"]));
    const double m_lr = testkit::median(finals(results["lr2e-4"]));
    const bool a1 = m_rprm > m_norprm, a2 = m_rprm >= m_uniform, a3 = m_rprm >= m_w0, a4 = m_lr < 0.05;
    rep.add(7, "ablations", a1 && a2 && a3 && a4,
            std::string("rprm ") + fmt("%.3f", m_rprm) + (a1 ? " > " : " !> ") + "no-rprm " + fmt("%.3f", m_norprm) +
                "; curriculum " + fmt("%.3f", m_rprm) + (a2 ? " >= " : " < ") + "uniform " + fmt("%.3f", m_uniform) +
                "; warmup5 " + fmt("%.3f", m_rprm) + (a3 ? " >= " : " < ") + "warmup0 " + fmt("%.3f", m_w0) +
                "; lr 2e-4 " + fmt("%.3f", m_lr) + (a4 ? " < " : " >= ") + "0.05",
            {{"default", as_json(finals(def))},
             {"no_rprm", as_json(finals(results["no-rprm"]))},
             {"uniform", as_json(finals(results["uniform"]))},
             {"warmup0", as_json(finals(results["warmup0"]))},
             {"lr_2e-4", as_json(finals(results["lr2e-4"]))}});

    // C8: monotone trend of the median learning curve.
    const std::size_t n_evals = def.front().eval_success.size();
    std::vector<double> idx, med_curve;
    for (std::size_t k = 0; k < n_evals; ++k) {
      std::vector<double> at;
      for (const auto& r : def) at.push_back(r.eval_success.at(k));
      idx.push_back(static_cast<double>(k));
      med_curve.push_back(testkit::median(at));
    }
    const double rho = testkit::spearman(idx, med_curve);
    rep.add(8, "learning-curve trend", rho > 0.6,
            "Spearman " + fmt("%.3f", rho) + " over " + std::to_string(n_evals) + " evaluations (need > 0.6)",
            {{"spearman", rho}, {"median_curve", as_json(med_curve)}});

    // C9: successful episodes get shorter.
    std::vector<double> early, late;
    for (const auto& r : def) {
      const std::size_t n = r.metrics.size();
      const std::size_t w = std::max<std::size_t>(1, (n + 4) / 5);
      early.push_back(success_length(r.metrics, 0, w));
      late.push_back(success_length(r.metrics, n - w, n));
    }
    const double e_med = testkit::median(early), l_med = testkit::median(late);
    rep.add(9, "shorter successful episodes", l_med < e_med,
            "last 20% " + fmt("%.2f", l_med) + " vs first 20% " + fmt("%.2f", e_med) + " steps",
            {{"first", as_json(early)}, {"last", as_json(late)}});

    // C10: determinism of reruns and resumption.
    std::string why_rerun, why_resume;
    const bool rerun_ok = same_run(dirs["default"].front(), rerun, &why_rerun);
    const bool resume_ok = same_run(dirs["default"].front(), resumed, &why_resume);
    rep.add(10, "reproducibility", rerun_ok && resume_ok,
            std::string("full rerun ") + (rerun_ok ? "bit-identical" : "differs: " + why_rerun) +
                ", resume at iteration " + std::to_string(iterations - 1) + " " +
                (resume_ok ? "bit-identical" : "differs: " + why_resume),
            {{"rerun", rerun_ok}, {"resume", resume_ok}});
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    ++rep.failures;
  }

  std::ofstream(work / "acceptance_report.json") << rep.criteria.dump(2) << "\n";
  std::printf("%d criteria failed\n", rep.failures);
  return rep.failures == 0 ? 0 : 1;
}
