#include "vlarl/sim/suite.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vlarl/error.hpp"

namespace vlarl::sim {

double color_code(int palette_id) noexcept {
  return 2.0 * palette_id / static_cast<double>(kPalette.size() - 1) - 1.0;
}

std::array<double, 2> region_anchor(int region) noexcept {
  switch (region) {
    case 0: return {-0.6, 0.0};
    case 1: return {0.6, 0.0};
    case 2: return {0.0, -0.6};
    default: return {0.0, 0.6};
  }
}

std::vector<std::size_t> TaskSuite::indices_of(Suite s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].suite == s) out.push_back(i);
  return out;
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

TaskSuite make_suite(const SuiteConfig& cfg) {
  if (cfg.spatial < 0 || cfg.object < 0 || cfg.goal < 0 || cfg.long_horizon < 0) {
    throw invalid_argument("suite counts must be non-negative");
  }
  if (cfg.spatial > 12 || cfg.goal > 12 || cfg.object > 10 || cfg.long_horizon > 48) {
    throw invalid_argument("suite count exceeds the number of distinct instructions");
  }
  CounterRng rng = CounterRng::stream(cfg.master_seed, 0x5017E);
  TaskSuite suite;
  auto add = [&](TaskSpec t) {
    t.task_id = static_cast<int>(suite.tasks.size());
    t.seed_base = splitmix64(cfg.master_seed ^ splitmix64(static_cast<std::uint64_t>(t.task_id)));
    suite.tasks.push_back(std::move(t));
  };
  const std::array<int, kObjectsPerScene> base_colors = {0, 1, 2};

  std::vector<std::pair<int, int>> color_region;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < static_cast<int>(kRegionsPerScene); ++r) color_region.emplace_back(c, r);

  {
    auto combos = color_region;
    shuffle(combos, rng);
    for (int k = 0; k < cfg.spatial; ++k) {
      const auto [c, r] = combos[k];
      TaskSpec t;
      t.suite = Suite::spatial;
      t.instruction = std::string("pick ") + kPalette[c] + " place " + kRegionNames[r];
      t.stages = {Stage{c, r}};
      t.object_colors = base_colors;
      const double theta = 2.0 * std::numbers::pi * k / std::max(1, cfg.spatial);
      const double cx = 0.1 * std::cos(theta), cy = 0.1 * std::sin(theta);
      t.box = PlacementBox{cx - 0.22, cx + 0.22, cy - 0.22, cy + 0.22};
      add(std::move(t));
    }
  }
  for (int k = 0; k < cfg.object; ++k) {
    std::vector<int> others;
    for (int c = 0; c < static_cast<int>(kPalette.size()); ++c)
      if (c != k) others.push_back(c);
    shuffle(others, rng);
    TaskSpec t;
    t.suite = Suite::object;
    const int slot = static_cast<int>(rng.below(kObjectsPerScene));
    t.object_colors = {others[0], others[1], others[2]};
    t.object_colors[slot] = k;
    const int region = k % static_cast<int>(kRegionsPerScene);
    t.instruction = std::string("fetch ") + kPalette[k] + " to " + kRegionNames[region];
    t.stages = {Stage{slot, region}};
    add(std::move(t));
  }
  {
    auto combos = color_region;
    shuffle(combos, rng);
    for (int k = 0; k < cfg.goal; ++k) {
      const auto [c, r] = combos[k];
      TaskSpec t;
      t.suite = Suite::goal;
      t.instruction = std::string("put ") + kPalette[c] + " on " + kRegionNames[r];
      t.stages = {Stage{c, r}};
      t.object_colors = base_colors;
      t.region_jitter = 0.0;
      add(std::move(t));
    }
  }
  {
    std::vector<std::array<int, 4>> combos;
    for (int c1 = 0; c1 < 3; ++c1)
      for (int c2 = 0; c2 < 3; ++c2)
        for (int r1 = 0; r1 < static_cast<int>(kRegionsPerScene); ++r1)
          for (int r2 = 0; r2 < static_cast<int>(kRegionsPerScene); ++r2)
            if (c1 != c2 && (r1 < 2) != (r2 < 2)) combos.push_back({c1, r1, c2, r2});
    shuffle(combos, rng);
    for (int k = 0; k < cfg.long_horizon; ++k) {
      const auto [c1, r1, c2, r2] = combos[k];
      TaskSpec t;
      t.suite = Suite::long_horizon;
      t.instruction = std::string("pick ") + kPalette[c1] + " place " + kRegionNames[r1] +
                      " then pick " + kPalette[c2] + " place " + kRegionNames[r2];
      t.stages = {Stage{c1, r1}, Stage{c2, r2}};
      t.object_colors = base_colors;
      t.box = PlacementBox{-0.2, 0.2, -0.2, 0.2};
      add(std::move(t));
    }
  }

  std::vector<std::string> words;
  std::set<std::string> seen;
  for (const auto& t : suite.tasks) {
    if (!seen.insert(t.instruction).second) {
      throw invalid_argument("duplicate instruction '" + t.instruction + "'");
    }
    for (auto& w : split_words(t.instruction)) words.push_back(w);
  }
  suite.vocab = Vocabulary(words);
  for (auto& t : suite.tasks) {
    t.instruction_tokens = tokenize_instruction(t.instruction, suite.vocab, kInstructionLength);
  }
  return suite;
}

std::string suite_to_json(const TaskSuite& suite) {
  nlohmann::ordered_json doc;
  doc["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : suite.tasks) {
    nlohmann::ordered_json j;
    j["task_id"] = t.task_id;
    j["suite"] = suite_name(t.suite);
    j["instruction"] = t.instruction;
    auto stages = nlohmann::ordered_json::array();
    for (const auto& s : t.stages) stages.push_back({{"object", s.object}, {"region", s.region}});
    j["stages"] = stages;
    j["object_colors"] = t.object_colors;
    j["placement_box"] = {t.box.x_lo, t.box.x_hi, t.box.y_lo, t.box.y_hi};
    j["region_jitter"] = t.region_jitter;
    j["seed_base"] = t.seed_base;
    doc["tasks"].push_back(j);
  }
  return doc.dump(2) + "\n";
}

}  // namespace vlarl::sim
