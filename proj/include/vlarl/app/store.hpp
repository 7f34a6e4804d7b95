#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlarl/rprm.hpp"
#include "vlarl/sft.hpp"
#include "vlarl/sim/suite.hpp"

namespace vlarl::app {

/// Files of a persisted demonstration set inside one directory.
struct DemoFiles {
  std::filesystem::path dir;
  std::filesystem::path data() const { return dir / "demos.bin"; }
  std::filesystem::path manifest() const { return dir / "demos.json"; }
  std::filesystem::path vocab() const { return dir / "vocab.tsv"; }
  std::filesystem::path suite() const { return dir / "suite.json"; }
};

/// Counts and digest describing a dataset.
nlohmann::ordered_json demo_manifest(const DemoDataset& data, const sim::TaskSuite& suite);

/// Writes demos.bin (checkpoint container), demos.json, vocab.tsv, suite.json.
void save_demos(const DemoFiles& files, const DemoDataset& data, const sim::TaskSuite& suite);
DemoDataset load_demos(const std::filesystem::path& data_file);

/// One episode per line: {"episode_id", "task_id", "success", "steps": [
/// {"gripper_open", "gripper_pos": [x, y, z]}, ...]}. Blank lines are ignored.
std::vector<Trajectory> read_trajectory_jsonl(const std::filesystem::path& path);

/// Inverse of rprm::labels_to_jsonl; steps of an episode must be contiguous
/// and start at t = 0.
rprm::LabelRun read_labels_jsonl(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and renames into place.
void write_text(const std::filesystem::path& path, const std::string& text);
void append_line(const std::filesystem::path& path, const std::string& line);
/// Non-empty lines of a text file; missing file gives none.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace vlarl::app
