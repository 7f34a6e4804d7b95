#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vlarl/sim/env.hpp"
#include "vlarl/tokenizer.hpp"

namespace vlarl::sim {

inline constexpr std::array<const char*, 10> kPalette = {
    "red", "blue", "green", "yellow", "orange", "purple", "black", "white", "pink", "brown"};
inline constexpr std::array<const char*, kRegionsPerScene> kRegionNames = {"left", "right",
                                                                           "front", "back"};
/// Instruction length in tokens (enough for the two-stage template).
inline constexpr std::size_t kInstructionLength = 12;

/// Palette id mapped into [-1, 1].
double color_code(int palette_id) noexcept;
/// Nominal (x, y) of a named region before per-episode jitter.
std::array<double, 2> region_anchor(int region) noexcept;

struct SuiteConfig {
  int spatial = 10;
  int object = 10;
  int goal = 10;
  int long_horizon = 10;
  std::uint64_t master_seed = 7;
};

struct TaskSuite {
  std::vector<TaskSpec> tasks;
  Vocabulary vocab;

  std::vector<std::size_t> indices_of(Suite s) const;
  friend bool operator==(const TaskSuite&, const TaskSuite&) = default;
};

/// Generates the benchmark. Instructions are unique across all tasks and the
/// vocabulary is built from them.
TaskSuite make_suite(const SuiteConfig& cfg);

/// JSON document with every task's id, suite, instruction, stages, colors,
/// placement box and seed base.
std::string suite_to_json(const TaskSuite& suite);

}  // namespace vlarl::sim
