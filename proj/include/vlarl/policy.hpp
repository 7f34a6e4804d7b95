#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vlarl/nn/graph.hpp"
#include "vlarl/nn/param_store.hpp"
#include "vlarl/rng.hpp"
#include "vlarl/sim/env.hpp"
#include "vlarl/tokenizer.hpp"
#include "vlarl/trunk.hpp"

namespace vlarl {

/// Bin index per action dimension (length = action_dims).
using TokenBins = std::vector<std::int32_t>;

/// Auto-regressive token-action policy with a value head on the shared trunk.
///
/// Step i of decoding:
///   u_i    = context * W_step[:, i] + b_step[i]            (per-step projection)
///   h_i    = tanh(u_i + sum_{j<i} E[j, token_j])           (position-tagged tokens)
///   logits = h_i * W_head + b_head                          (head shared by all steps)
/// The value is context * W_v + b_v with W_v and b_v zero-initialized, as is
/// the token head, so a fresh policy emits uniform logits.
struct PolicyConfig {
  TrunkConfig trunk;
  std::size_t head_width = 64;
  std::size_t action_dims = kActionDims;
  std::int32_t bins = kBinsPerDim;
};

struct DecodeResult {
  TokenBins bins;
  /// Untempered per-token log-probabilities of the chosen tokens.
  std::vector<double> log_probs;
  /// Sum of per-step categorical entropies along the chosen path.
  double entropy = 0.0;
  /// Value head output for the same observation.
  double value = 0.0;

  double log_prob() const noexcept;
};

/// Parameters that belong to the value head; everything else is policy.
bool is_value_param(const std::string& name) noexcept;

class Policy {
 public:
  Policy() = default;
  Policy(PolicyConfig cfg, std::uint64_t seed);
  Policy(PolicyConfig cfg, nn::ParamStore params) : cfg_(cfg), params_(std::move(params)) {}

  const PolicyConfig& config() const noexcept { return cfg_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params_mut() noexcept { return params_; }

  /// Context vectors [B, width].
  nn::Tensor forward_context(std::span<const sim::Observation* const> obs) const;
  std::vector<double> forward_context(const sim::Observation& obs) const;

  std::vector<double> values(std::span<const sim::Observation* const> obs) const;
  double value(const sim::Observation& obs) const;

  /// Samples every row with its own RNG stream. temperature <= 0 decodes
  /// greedily. Rows are computed independently, so the result for a row does
  /// not depend on the rest of the batch.
  std::vector<DecodeResult> sample_batch(std::span<const sim::Observation* const> obs,
                                         double temperature,
                                         std::span<CounterRng> rngs) const;
  DecodeResult sample_action_tokens(const sim::Observation& obs, double temperature,
                                    CounterRng& rng) const;

  /// Teacher-forced evaluation of a given token path.
  DecodeResult evaluate(const sim::Observation& obs, const TokenBins& bins) const;
  double action_log_prob(const sim::Observation& obs, const TokenBins& bins) const;
  double entropy(const sim::Observation& obs, const TokenBins& bins) const;
  /// Entropy along the greedy path.
  double entropy(const sim::Observation& obs) const;

 private:
  std::vector<DecodeResult> decode(std::span<const sim::Observation* const> obs,
                                   double temperature, std::span<CounterRng> rngs,
                                   const std::vector<TokenBins>* forced) const;

  PolicyConfig cfg_;
  nn::ParamStore params_;
};

/// Teacher-forced training graph over a batch of (observation, token path).
///
/// `token_ce` is the softmax-cross-entropy node with B * action_dims rows,
/// row b * action_dims + i holding step i of sample b; `value` is [B, 1].
struct PolicyGraph {
  nn::Graph graph;
  nn::Bindings bindings;
  nn::NodeId token_ce = 0;
  nn::NodeId value = 0;
  std::size_t batch = 0;
};

PolicyGraph build_policy_graph(const PolicyConfig& cfg,
                               std::span<const sim::Observation* const> obs,
                               std::span<const TokenBins> paths);

/// Per-sample log-probabilities (negated CE summed over steps) after forward.
std::vector<double> path_log_probs(const PolicyGraph& pg, const PolicyConfig& cfg);
std::vector<double> path_entropies(const PolicyGraph& pg, const PolicyConfig& cfg);

TokenBins to_token_bins(const ActionBins& bins);
ActionBins to_action_bins(const TokenBins& bins);

}  // namespace vlarl
