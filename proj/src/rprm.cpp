#include "vlarl/rprm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "vlarl/error.hpp"

namespace vlarl::rprm {

using nn::Tensor;

const char* provenance_name(Provenance p) noexcept {
  return p == Provenance::keyframe_window ? "keyframe-window" : "default";
}

std::vector<Segment> segment_milestones(std::span<const double> openness, double delta_g) {
  if (openness.empty()) throw invalid_argument("cannot segment an empty trajectory");
  std::vector<Segment> out;
  std::size_t first = 0;
  for (std::size_t t = 0; t + 1 < openness.size(); ++t) {
    if (std::abs(openness[t + 1] - openness[t]) > delta_g) {
      out.push_back({first, t});
      first = t + 1;
    }
  }
  out.push_back({first, openness.size() - 1});
  return out;
}

std::vector<std::size_t> detect_keyframes(std::span<const sim::Vec3> positions, Segment segment,
                                          double eps_v) {
  if (segment.first > segment.last || segment.last >= positions.size()) {
    throw invalid_argument("segment [" + std::to_string(segment.first) + ", " +
                           std::to_string(segment.last) + "] outside trajectory of length " +
                           std::to_string(positions.size()));
  }
  std::vector<std::size_t> out;
  for (std::size_t t = segment.first; t < segment.last; ++t) {
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double diff = positions[t + 1][d] - positions[t][d];
      sq += diff * diff;
    }
    if (std::sqrt(sq) < eps_v) out.push_back(t);
  }
  out.push_back(segment.last);
  return out;
}

std::vector<PseudoLabel> assign_labels(std::size_t length, std::span<const std::size_t> keyframes,
                                       int window) {
  if (window < 1) throw invalid_argument("label window must be at least 1");
  std::vector<PseudoLabel> out(length);
  for (std::size_t t = 0; t < length; ++t) out[t].t = t;
  for (std::size_t k : keyframes) {
    if (k >= length) throw invalid_argument("keyframe " + std::to_string(k) + " past episode end");
    const std::size_t lo = k + 1 >= static_cast<std::size_t>(window) ? k + 1 - window : 0;
    for (std::size_t t = lo; t <= k; ++t) {
      out[t].positive = true;
      out[t].provenance = Provenance::keyframe_window;
    }
  }
  return out;
}

std::vector<PseudoLabel> label_episode(const Trajectory& traj, const LabelConfig& cfg) {
  if (!traj.success) {
    throw invalid_argument("episode " + std::to_string(traj.episode_id) +
                           " did not succeed; only successful episodes are labeled");
  }
  std::vector<double> open;
  std::vector<sim::Vec3> pos;
  for (const auto& s : traj.steps) {
    open.push_back(s.gripper_open);
    pos.push_back(s.gripper_pos);
  }
  std::vector<std::size_t> keys;
  for (const Segment& seg : segment_milestones(open, cfg.delta_g)) {
    const auto k = detect_keyframes(pos, seg, cfg.eps_v);
    keys.insert(keys.end(), k.begin(), k.end());
  }
  return assign_labels(traj.steps.size(), keys, cfg.window);
}

LabelRun label_dataset(std::span<const Trajectory> episodes, const LabelConfig& cfg) {
  LabelRun run;
  for (const auto& e : episodes) {
    if (!e.success || e.steps.empty()) {
      ++run.skipped_unsuccessful;
      continue;
    }
    run.episodes.push_back({e.episode_id, label_episode(e, cfg)});
  }
  return run;
}

std::string labels_to_jsonl(const LabelRun& run) {
  std::string out;
  for (const auto& ep : run.episodes) {
    for (const auto& l : ep.labels) {
      nlohmann::ordered_json j;
      j["episode_id"] = ep.episode_id;
      j["t"] = l.t;
      j["label"] = l.positive ? "positive" : "negative";
      j["provenance"] = provenance_name(l.provenance);
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

double densify(double sparse, double score, double beta) {
  if (!(beta >= 0.0)) throw invalid_argument("beta must be non-negative");
  return sparse + beta * score;
}

RewardModel::RewardModel(RewardModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  CounterRng rng = CounterRng::stream(seed, 0x5E3A);
  const std::string p = kPrefix;
  const std::size_t W = cfg_.trunk.width;
  init_trunk(params_, p, cfg_.trunk, rng);
  params_.add(p + "act_embed",
              normal_init({cfg_.action_dims * static_cast<std::size_t>(cfg_.bins), W}, 0.1, rng));
  params_.add(p + "mix_w", orthogonal_init(W, W, 1.0, rng));
  params_.add(p + "mix_b", Tensor({W}));
  params_.add(p + "out_w", Tensor({W, 2}));
  params_.add(p + "out_b", Tensor({2}));
}

namespace {

std::vector<std::int32_t> action_rows(const RewardModelConfig& cfg, const TokenBins& tokens) {
  if (tokens.size() != cfg.action_dims) {
    throw invalid_argument("reward model expects " + std::to_string(cfg.action_dims) +
                           " action tokens, got " + std::to_string(tokens.size()));
  }
  std::vector<std::int32_t> ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.bins) {
      throw invalid_argument("token bin " + std::to_string(tokens[i]) +
                             " out of range at position " + std::to_string(i));
    }
    ids[i] = static_cast<std::int32_t>(i) * cfg.bins + tokens[i];
  }
  return ids;
}

}  // namespace

std::vector<double> RewardModel::score_batch(std::span<const sim::Observation* const> obs,
                                             std::span<const TokenBins* const> tokens) const {
  if (obs.size() != tokens.size()) throw invalid_argument("observation and token counts differ");
  const std::string p = kPrefix;
  const std::size_t B = obs.size(), W = cfg_.trunk.width;
  const Tensor h2 = trunk_forward(params_, p, cfg_.trunk, obs);
  const Tensor& emb = params_.get(p + "act_embed");
  const Tensor& mb = params_.get(p + "mix_b");
  Tensor z = Tensor::matrix(B, W);
  nn::matmul_into(h2.data, params_.get(p + "mix_w").data, z.data, B, W, W);
  std::vector<double> act(W);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(act.begin(), act.end(), 0.0);
    add_embedding_rows(act, emb, W, action_rows(cfg_, *tokens[b]));
    auto row = z.row(b);
    for (std::size_t j = 0; j < W; ++j) row[j] = std::tanh((row[j] + mb.data[j]) + act[j]);
  }
  Tensor logits = Tensor::matrix(B, 2);
  nn::matmul_into(z.data, params_.get(p + "out_w").data, logits.data, B, W, 2);
  const Tensor& ob = params_.get(p + "out_b");
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto row = logits.row(b);
    row[0] += ob.data[0];
    row[1] += ob.data[1];
    nn::softmax_inplace(row);
    out[b] = row[1];
  }
  return out;
}

double RewardModel::score(const sim::Observation& obs, const TokenBins& tokens) const {
  const sim::Observation* o = &obs;
  const TokenBins* t = &tokens;
  return score_batch(std::span(&o, 1), std::span(&t, 1))[0];
}

RewardGraph build_reward_graph(const RewardModelConfig& cfg,
                               std::span<const sim::Observation* const> obs,
                               std::span<const TokenBins* const> tokens,
                               std::span<const std::int32_t> labels) {
  if (obs.size() != tokens.size() || obs.size() != labels.size()) {
    throw invalid_argument("reward batch components differ in length");
  }
  const std::string p = RewardModel::kPrefix;
  RewardGraph rg;
  auto& g = rg.graph;
  const auto h2 = build_trunk(g, p, cfg.trunk);
  const auto act = g.gather(g.parameter(p + "act_embed"), p + "act", cfg.trunk.width);
  const auto z = g.tanh(g.add(g.add(g.matmul(h2, g.parameter(p + "mix_w")), g.parameter(p + "mix_b")), act));
  const auto logits = g.add(g.matmul(z, g.parameter(p + "out_w")), g.parameter(p + "out_b"));
  rg.ce = g.softmax_cross_entropy(logits, p + "labels");

  bind_trunk(rg.bindings, p, cfg.trunk, obs);
  nn::IndexRows rows;
  for (const TokenBins* t : tokens) {
    const auto ids = action_rows(cfg, *t);
    rows.push_row(ids.begin(), ids.end());
  }
  rg.bindings.index_rows[p + "act"] = std::move(rows);
  for (std::int32_t l : labels) {
    if (l != 0 && l != 1) throw invalid_argument("reward labels must be 0 or 1");
  }
  rg.bindings.targets[p + "labels"] = std::vector<std::int32_t>(labels.begin(), labels.end());
  return rg;
}

std::vector<LabeledStep> join_labels(const DemoDataset& data, const LabelRun& labels) {
  std::map<std::int64_t, const EpisodeLabels*> by_id;
  for (const auto& e : labels.episodes) by_id[e.episode_id] = &e;
  std::vector<LabeledStep> out;
  for (const auto& ep : data.episodes) {
    auto it = by_id.find(ep.episode_id);
    if (it == by_id.end()) continue;
    const auto& ls = it->second->labels;
    if (ls.size() != ep.steps.size()) {
      throw invalid_argument("episode " + std::to_string(ep.episode_id) + " has " +
                             std::to_string(ep.steps.size()) + " steps but " +
                             std::to_string(ls.size()) + " labels");
    }
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      out.push_back({&ep.steps[t].obs, &ep.steps[t].tokens, ls[t].positive ? 1 : 0,
                     ep.episode_id});
    }
  }
  return out;
}

namespace {

struct Columns {
  std::vector<const sim::Observation*> obs;
  std::vector<const TokenBins*> tokens;
  std::vector<std::int32_t> labels;
};

Columns columns(std::span<const LabeledStep> steps) {
  Columns c;
  for (const auto& s : steps) {
    c.obs.push_back(s.obs);
    c.tokens.push_back(s.tokens);
    c.labels.push_back(s.label);
  }
  return c;
}

}  // namespace

double reward_loss(const RewardModel& model, std::span<const LabeledStep> steps) {
  if (steps.empty()) throw invalid_argument("empty reward dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < steps.size(); i += 512) {
    const auto c = columns(steps.subspan(i, std::min<std::size_t>(512, steps.size() - i)));
    RewardGraph rg = build_reward_graph(model.config(), c.obs, c.tokens, c.labels);
    rg.graph.forward(rg.bindings, model.params());
    const Tensor& ce = rg.graph.value(rg.ce);
    for (std::size_t r = 0; r < ce.rows(); ++r) total += ce.at(r, 0);
  }
  return total / static_cast<double>(steps.size());
}

RprmReport train_rprm(RewardModel& model, std::span<const LabeledStep> steps,
                      const RprmTrainConfig& cfg) {
  bool has_pos = false, has_neg = false;
  for (const auto& s : steps) (s.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw invalid_argument("reward model training needs both label classes");
  if (cfg.batch_size == 0) throw config_error("rprm batch size must be positive");
  if (cfg.holdout < 0.0 || cfg.holdout >= 1.0) throw config_error("rprm holdout must be in [0, 1)");

  // Hold out whole episodes so neighbouring steps do not leak across the split.
  std::vector<std::int64_t> ids;
  for (const auto& s : steps)
    if (ids.empty() || ids.back() != s.episode_id) ids.push_back(s.episode_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  CounterRng rng = CounterRng::stream(cfg.seed, 0x5EED);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout * static_cast<double>(ids.size())));
  const std::set<std::int64_t> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<LabeledStep> train, test;
  for (const auto& s : steps) (held.contains(s.episode_id) ? test : train).push_back(s);
  if (train.empty()) throw invalid_argument("reward model has no training steps after holdout");

  RprmReport report;
  report.train_steps = train.size();
  report.heldout_steps = test.size();
  report.initial_loss = reward_loss(model, train);
  model.params_mut().reset_optimizer();
  const nn::AdamConfig adam{.lr = cfg.lr};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.below(i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < train.size(); i += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, train.size() - i);
      const auto c = columns(std::span(train).subspan(i, n));
      RewardGraph rg = build_reward_graph(model.config(), c.obs, c.tokens, c.labels);
      rg.graph.forward(rg.bindings, model.params());
      const Tensor& ce = rg.graph.value(rg.ce);
      Tensor seed = Tensor::matrix(n, 2);
      for (std::size_t r = 0; r < n; ++r) {
        total += ce.at(r, 0);
        seed.at(r, 0) = 1.0 / static_cast<double>(n);
      }
      rg.graph.backward({{rg.ce, std::move(seed)}});
      model.params_mut().adam_step(rg.graph.parameter_gradients(model.params()), adam);
    }
    const double loss = total / static_cast<double>(train.size());
    if (!std::isfinite(loss)) throw numeric_error("reward model loss is not finite");
    report.epoch_losses.push_back(loss);
  }

  const auto& eval = test.empty() ? train : test;
  const auto c = columns(eval);
  std::size_t correct = 0, n_pos = 0, n_neg = 0;
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < eval.size(); i += 512) {
    const std::size_t n = std::min<std::size_t>(512, eval.size() - i);
    const auto scores = model.score_batch(std::span(c.obs).subspan(i, n),
                                          std::span(c.tokens).subspan(i, n));
    for (std::size_t k = 0; k < n; ++k) {
      const bool positive = c.labels[i + k] == 1;
      if ((scores[k] >= 0.5) == positive) ++correct;
      (positive ? pos : neg) += scores[k];
      ++(positive ? n_pos : n_neg);
    }
  }
  report.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(eval.size());
  report.positive_mean_score = n_pos ? pos / static_cast<double>(n_pos) : 0.0;
  report.negative_mean_score = n_neg ? neg / static_cast<double>(n_neg) : 0.0;
  return report;
}

}  // namespace vlarl::rprm
