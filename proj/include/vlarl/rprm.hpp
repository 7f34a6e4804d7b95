#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlarl/nn/graph.hpp"
#include "vlarl/nn/param_store.hpp"
#include "vlarl/policy.hpp"
#include "vlarl/sft.hpp"

namespace vlarl::rprm {

/// Inclusive step range [first, last].
struct Segment {
  std::size_t first = 0;
  std::size_t last = 0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

enum class Provenance { keyframe_window, fallback };
const char* provenance_name(Provenance p) noexcept;

struct PseudoLabel {
  std::size_t t = 0;
  bool positive = false;
  Provenance provenance = Provenance::fallback;
  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct LabelConfig {
  double delta_g = 0.5;
  double eps_v = 0.01;
  int window = 3;
};

/// Splits at every t with |open[t+1] - open[t]| > delta_g; segment k ends at
/// the k-th such t.
std::vector<Segment> segment_milestones(std::span<const double> openness, double delta_g);

/// Steps in the segment whose next position is within eps_v of the current
/// one, plus the segment's last step. Sorted, unique.
std::vector<std::size_t> detect_keyframes(std::span<const sim::Vec3> positions, Segment segment,
                                          double eps_v);

/// Positive on [k - window + 1, k] for every keyframe k, negative elsewhere.
std::vector<PseudoLabel> assign_labels(std::size_t length, std::span<const std::size_t> keyframes,
                                       int window);

/// Full pipeline on one episode; rejects unsuccessful episodes.
std::vector<PseudoLabel> label_episode(const Trajectory& traj, const LabelConfig& cfg);

/// Labels for one stored episode.
struct EpisodeLabels {
  std::int64_t episode_id = 0;
  std::vector<PseudoLabel> labels;
};

struct LabelRun {
  std::vector<EpisodeLabels> episodes;
  std::size_t skipped_unsuccessful = 0;
};

/// Labels every successful episode and counts the rest.
LabelRun label_dataset(std::span<const Trajectory> episodes, const LabelConfig& cfg);

/// One JSON object per line: {"episode_id", "t", "label", "provenance"}.
std::string labels_to_jsonl(const LabelRun& run);

/// sparse + beta * score.
double densify(double sparse, double score, double beta);

struct RewardModelConfig {
  TrunkConfig trunk;
  std::size_t action_dims = kActionDims;
  std::int32_t bins = kBinsPerDim;
};

/// Progress scorer sharing the policy's trunk layout:
///   z      = tanh(h2 * W_mix + b_mix + sum_i E_act[i, token_i])
///   logits = z * W_out + b_out     (class 1 = progress, zero-initialized)
/// All parameter names carry the "rprm/" prefix.
class RewardModel {
 public:
  static constexpr const char* kPrefix = "rprm/";

  RewardModel() = default;
  RewardModel(RewardModelConfig cfg, std::uint64_t seed);
  RewardModel(RewardModelConfig cfg, nn::ParamStore params)
      : cfg_(cfg), params_(std::move(params)) {}

  const RewardModelConfig& config() const noexcept { return cfg_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params_mut() noexcept { return params_; }

  /// Probability of the progress class, one per row.
  std::vector<double> score_batch(std::span<const sim::Observation* const> obs,
                                  std::span<const TokenBins* const> tokens) const;
  double score(const sim::Observation& obs, const TokenBins& tokens) const;

 private:
  RewardModelConfig cfg_;
  nn::ParamStore params_;
};

struct RewardGraph {
  nn::Graph graph;
  nn::Bindings bindings;
  nn::NodeId ce = 0;
};

/// Two-class cross-entropy graph; labels are 1 for progress, 0 otherwise.
RewardGraph build_reward_graph(const RewardModelConfig& cfg,
                               std::span<const sim::Observation* const> obs,
                               std::span<const TokenBins* const> tokens,
                               std::span<const std::int32_t> labels);

struct LabeledStep {
  const sim::Observation* obs = nullptr;
  const TokenBins* tokens = nullptr;
  std::int32_t label = 0;
  std::int64_t episode_id = 0;
};

/// Pairs dataset steps with their labels; episodes without labels are skipped.
std::vector<LabeledStep> join_labels(const DemoDataset& data, const LabelRun& labels);

struct RprmTrainConfig {
  int epochs = 8;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  /// Fraction of episodes held out for accuracy.
  double holdout = 0.2;
  std::uint64_t seed = 13;
};

struct RprmReport {
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;
  double heldout_accuracy = 0.0;
  double positive_mean_score = 0.0;
  double negative_mean_score = 0.0;
  std::size_t train_steps = 0;
  std::size_t heldout_steps = 0;
};

/// Mean two-class cross-entropy over the given steps.
double reward_loss(const RewardModel& model, std::span<const LabeledStep> steps);

RprmReport train_rprm(RewardModel& model, std::span<const LabeledStep> steps,
                      const RprmTrainConfig& cfg);

}  // namespace vlarl::rprm
