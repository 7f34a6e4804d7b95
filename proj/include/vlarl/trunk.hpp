#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "vlarl/nn/graph.hpp"
#include "vlarl/nn/param_store.hpp"
#include "vlarl/rng.hpp"
#include "vlarl/sim/env.hpp"

namespace vlarl {

/// Observation encoder shared by the policy and the reward model:
///   h1 = tanh(features * W_f + b_f + sum of position-tagged word embeddings)
///   h2 = tanh(h1 * W_t + b_t)
struct TrunkConfig {
  std::size_t feature_dim = sim::kFeatureDim;
  std::size_t instruction_length = 12;
  std::int32_t instruction_vocab = 2;
  std::size_t width = 256;
};

/// Random matrix with orthonormal rows or columns (whichever is shorter),
/// scaled by `gain`.
nn::Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, CounterRng& rng);
nn::Tensor normal_init(std::vector<std::size_t> shape, double stddev, CounterRng& rng);

void init_trunk(nn::ParamStore& store, const std::string& prefix, const TrunkConfig& cfg,
                CounterRng& rng);

/// Adds the trunk to `g`, reading inputs "<prefix>features" and index rows
/// "<prefix>instr". Returns the h2 node.
nn::NodeId build_trunk(nn::Graph& g, const std::string& prefix, const TrunkConfig& cfg);
void bind_trunk(nn::Bindings& b, const std::string& prefix, const TrunkConfig& cfg,
                std::span<const sim::Observation* const> obs);

/// Inference path with the same arithmetic as the graph; returns [B, width].
nn::Tensor trunk_forward(const nn::ParamStore& store, const std::string& prefix,
                         const TrunkConfig& cfg, std::span<const sim::Observation* const> obs);

/// h += rows of `table` for every listed id (negative ids skipped).
void add_embedding_rows(std::span<double> h, const nn::Tensor& table, std::size_t width,
                        std::span<const std::int32_t> ids);

/// out[n] = in[k] * W[k,n] + b[n] for one row.
void affine_row(std::span<const double> in, const nn::Tensor& w, const nn::Tensor& b,
                std::span<double> out);

}  // namespace vlarl
