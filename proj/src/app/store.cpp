#include "vlarl/app/store.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "vlarl/app/checkpoint.hpp"
#include "vlarl/error.hpp"

namespace vlarl::app {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << text;
    if (!out) throw io_error("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw io_error("cannot append to " + path.string());
  out << line << '\n';
  if (!out) throw io_error("short write to " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

ordered_json demo_manifest(const DemoDataset& data, const sim::TaskSuite& suite) {
  std::map<int, int> per_task;
  for (const auto& e : data.episodes) ++per_task[e.task_id];
  ordered_json tasks = ordered_json::array();
  for (const auto& [task, n] : per_task) {
    tasks.push_back({{"task_id", task},
                     {"suite", sim::suite_name(suite.tasks.at(static_cast<std::size_t>(task)).suite)},
                     {"episodes", n}});
  }
  ordered_json m;
  m["episodes_per_task"] = data.episodes_per_task;
  m["seed"] = data.seed;
  m["attempted"] = data.attempted;
  m["episodes"] = data.episodes.size();
  m["steps"] = data.step_count();
  m["digest"] = data.digest();
  m["tasks"] = tasks;
  m["warnings"] = data.warnings;
  return m;
}

void save_demos(const DemoFiles& files, const DemoDataset& data, const sim::TaskSuite& suite) {
  std::filesystem::create_directories(files.dir);
  const std::size_t steps = data.step_count();
  const std::size_t F = sim::kFeatureDim;
  Checkpoint ck;
  nn::Tensor features({steps, F}), actions({steps, kActionDims}), tokens({steps, kActionDims}),
      open({steps}), pos({steps, 3}), reward({steps}), done({steps});
  json episodes = json::array();
  std::size_t row = 0;
  for (const auto& e : data.episodes) {
    const TokenSequence& instr =
        e.steps.empty() ? TokenSequence{} : e.steps.front().obs.instruction_tokens;
    episodes.push_back({{"episode_id", e.episode_id},
                        {"task_id", e.task_id},
                        {"seed", e.seed},
                        {"success", e.success},
                        {"first_row", row},
                        {"length", e.steps.size()},
                        {"instruction_tokens", instr}});
    for (const auto& s : e.steps) {
      if (s.obs.features.size() != F) throw invalid_argument("demo observation has the wrong width");
      std::copy(s.obs.features.begin(), s.obs.features.end(), features.data.begin() + row * F);
      for (std::size_t d = 0; d < kActionDims; ++d) {
        actions.data[row * kActionDims + d] = s.action[d];
        tokens.data[row * kActionDims + d] = s.tokens[d];
      }
      open.data[row] = s.gripper_open;
      for (int d = 0; d < 3; ++d) pos.data[row * 3 + d] = s.gripper_pos[d];
      reward.data[row] = s.sparse_reward;
      done.data[row] = s.done ? 1.0 : 0.0;
      ++row;
    }
  }
  ck.tensors = {{"features", features}, {"actions", actions}, {"tokens", tokens},
                {"gripper_open", open}, {"gripper_pos", pos},  {"sparse_reward", reward},
                {"done", done}};
  ck.meta = {{"kind", "demos"},
             {"episodes_per_task", data.episodes_per_task},
             {"seed", data.seed},
             {"attempted", data.attempted},
             {"warnings", data.warnings},
             {"episodes", episodes}};
  write_checkpoint(files.data(), ck);
  write_text(files.manifest(), demo_manifest(data, suite).dump(2) + "\n");
  write_text(files.vocab(), suite.vocab.to_tsv());
  write_text(files.suite(), sim::suite_to_json(suite));
}

DemoDataset load_demos(const std::filesystem::path& data_file) {
  const Checkpoint ck = read_checkpoint(data_file);
  if (ck.meta.value("kind", "") != "demos")
    throw io_error(data_file.string() + ": field 'kind' is not 'demos'");
  const auto& features = ck.tensor("features");
  const auto& actions = ck.tensor("actions");
  const auto& tokens = ck.tensor("tokens");
  const auto& open = ck.tensor("gripper_open");
  const auto& pos = ck.tensor("gripper_pos");
  const auto& reward = ck.tensor("sparse_reward");
  const auto& done = ck.tensor("done");
  const std::size_t steps = features.rows();
  const std::size_t F = features.cols();
  if (F != sim::kFeatureDim) throw io_error(data_file.string() + ": field 'features' has the wrong width");
  for (const nn::Tensor* t : {&actions, &tokens, &open, &pos, &reward, &done})
    if (t->rows() != steps) throw io_error(data_file.string() + ": tensors have mismatched row counts");

  DemoDataset data;
  try {
    data.episodes_per_task = ck.meta.at("episodes_per_task").get<int>();
    data.seed = ck.meta.at("seed").get<std::uint64_t>();
    data.attempted = ck.meta.at("attempted").get<std::size_t>();
    data.warnings = ck.meta.at("warnings").get<std::vector<std::string>>();
    for (const auto& e : ck.meta.at("episodes")) {
      Trajectory t;
      t.episode_id = e.at("episode_id").get<std::int64_t>();
      t.task_id = e.at("task_id").get<int>();
      t.seed = e.at("seed").get<std::uint64_t>();
      t.success = e.at("success").get<bool>();
      const auto first = e.at("first_row").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      const auto instr = e.at("instruction_tokens").get<TokenSequence>();
      if (first + length > steps) throw io_error(data_file.string() + ": field 'episodes' exceeds the data");
      for (std::size_t r = first; r < first + length; ++r) {
        TrajectoryStep s;
        s.obs.features.assign(features.data.begin() + r * F, features.data.begin() + (r + 1) * F);
        s.obs.instruction_tokens = instr;
        s.tokens.resize(kActionDims);
        for (std::size_t d = 0; d < kActionDims; ++d) {
          s.action[d] = actions.data[r * kActionDims + d];
          s.tokens[d] = static_cast<std::int32_t>(tokens.data[r * kActionDims + d]);
        }
        s.gripper_open = open.data[r];
        s.gripper_pos = {pos.data[r * 3], pos.data[r * 3 + 1], pos.data[r * 3 + 2]};
        s.sparse_reward = reward.data[r];
        s.done = done.data[r] != 0.0;
        t.steps.push_back(std::move(s));
      }
      data.episodes.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw io_error(data_file.string() + ": malformed episode metadata (" + e.what() + ")");
  }
  return data;
}

std::vector<Trajectory> read_trajectory_jsonl(const std::filesystem::path& path) {
  std::vector<Trajectory> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw io_error(where + ": not valid JSON");
    }
    try {
      Trajectory t;
      t.episode_id = j.value("episode_id", static_cast<std::int64_t>(out.size()));
      t.task_id = j.value("task_id", 0);
      t.success = j.at("success").get<bool>();
      for (const auto& s : j.at("steps")) {
        TrajectoryStep step;
        step.gripper_open = s.at("gripper_open").get<double>();
        const auto p = s.at("gripper_pos").get<std::vector<double>>();
        if (p.size() != 3) throw io_error(where + ": field 'gripper_pos' is not a 3-vector");
        step.gripper_pos = {p[0], p[1], p[2]};
        t.steps.push_back(std::move(step));
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw io_error(where + ": " + e.what());
    }
  }
  return out;
}

rprm::LabelRun read_labels_jsonl(const std::filesystem::path& path) {
  rprm::LabelRun run;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw io_error(where + ": not valid JSON");
    }
    std::int64_t id = 0;
    rprm::PseudoLabel l;
    try {
      id = j.at("episode_id").get<std::int64_t>();
      l.t = j.at("t").get<std::size_t>();
      const auto label = j.at("label").get<std::string>();
      if (label != "positive" && label != "negative")
        throw io_error(where + ": field 'label' must be positive or negative");
      l.positive = label == "positive";
      const auto prov = j.at("provenance").get<std::string>();
      if (prov == rprm::provenance_name(rprm::Provenance::keyframe_window)) {
        l.provenance = rprm::Provenance::keyframe_window;
      } else if (prov == rprm::provenance_name(rprm::Provenance::fallback)) {
        l.provenance = rprm::Provenance::fallback;
      } else {
        throw io_error(where + ": field 'provenance' has unknown value '" + prov + "'");
      }
    } catch (const json::exception& e) {
      throw io_error(where + ": " + e.what());
    }
    if (run.episodes.empty() || run.episodes.back().episode_id != id) {
      if (l.t != 0) throw io_error(where + ": field 't' does not start at 0 for a new episode");
      run.episodes.push_back({id, {}});
    } else if (l.t != run.episodes.back().labels.size()) {
      throw io_error(where + ": field 't' is not contiguous");
    }
    run.episodes.back().labels.push_back(l);
  }
  return run;
}

}  // namespace vlarl::app
