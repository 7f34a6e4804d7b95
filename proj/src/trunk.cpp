#include "vlarl/trunk.hpp"

#include <cmath>

#include "vlarl/error.hpp"

namespace vlarl {

using nn::Tensor;

Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, CounterRng& rng) {
  // Orthonormalize the shorter side with modified Gram-Schmidt.
  const bool by_rows = rows <= cols;
  const std::size_t count = by_rows ? rows : cols;
  const std::size_t len = by_rows ? cols : rows;
  std::vector<std::vector<double>> vecs(count, std::vector<double>(len));
  for (auto& v : vecs)
    for (double& x : v) x = rng.normal();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += vecs[i][k] * vecs[j][k];
      for (std::size_t k = 0; k < len; ++k) vecs[i][k] -= dot * vecs[j][k];
    }
    double norm = 0.0;
    for (double x : vecs[i]) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : vecs[i]) x /= norm;
  }
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.at(r, c) = gain * (by_rows ? vecs[r][c] : vecs[c][r]);
  return out;
}

Tensor normal_init(std::vector<std::size_t> shape, double stddev, CounterRng& rng) {
  Tensor out(std::move(shape));
  for (double& x : out.data) x = stddev * rng.normal();
  return out;
}

void init_trunk(nn::ParamStore& store, const std::string& prefix, const TrunkConfig& cfg,
                CounterRng& rng) {
  const std::size_t vocab_rows = cfg.instruction_length * static_cast<std::size_t>(cfg.instruction_vocab);
  store.add(prefix + "instr_embed", normal_init({vocab_rows, cfg.width}, 0.1, rng));
  store.add(prefix + "feat_w", orthogonal_init(cfg.feature_dim, cfg.width, 1.0, rng));
  store.add(prefix + "feat_b", Tensor({cfg.width}));
  store.add(prefix + "trunk_w", orthogonal_init(cfg.width, cfg.width, 1.0, rng));
  store.add(prefix + "trunk_b", Tensor({cfg.width}));
}

nn::NodeId build_trunk(nn::Graph& g, const std::string& prefix, const TrunkConfig& cfg) {
  const auto feats = g.input(prefix + "features");
  const auto pre = g.add(g.matmul(feats, g.parameter(prefix + "feat_w")),
                         g.parameter(prefix + "feat_b"));
  const auto instr = g.gather(g.parameter(prefix + "instr_embed"), prefix + "instr", cfg.width);
  const auto h1 = g.tanh(g.add(pre, instr));
  return g.tanh(g.add(g.matmul(h1, g.parameter(prefix + "trunk_w")),
                      g.parameter(prefix + "trunk_b")));
}

namespace {

std::vector<std::int32_t> instruction_rows(const TrunkConfig& cfg, const sim::Observation& o) {
  std::vector<std::int32_t> ids;
  const std::size_t n = std::min(cfg.instruction_length, o.instruction_tokens.size());
  for (std::size_t p = 0; p < n; ++p) {
    const std::int32_t w = o.instruction_tokens[p];
    if (w == Vocabulary::kPad) continue;
    if (w < 0 || w >= cfg.instruction_vocab) {
      throw invalid_argument("instruction token " + std::to_string(w) + " outside vocabulary");
    }
    ids.push_back(static_cast<std::int32_t>(p) * cfg.instruction_vocab + w);
  }
  return ids;
}

void check_features(const TrunkConfig& cfg, const sim::Observation& o) {
  if (o.features.size() != cfg.feature_dim) {
    throw invalid_argument("observation has " + std::to_string(o.features.size()) +
                           " features, model expects " + std::to_string(cfg.feature_dim));
  }
}

}  // namespace

void bind_trunk(nn::Bindings& b, const std::string& prefix, const TrunkConfig& cfg,
                std::span<const sim::Observation* const> obs) {
  Tensor feats = Tensor::matrix(obs.size(), cfg.feature_dim);
  nn::IndexRows instr;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    check_features(cfg, *obs[i]);
    std::copy(obs[i]->features.begin(), obs[i]->features.end(), feats.row(i).begin());
    const auto ids = instruction_rows(cfg, *obs[i]);
    instr.push_row(ids.begin(), ids.end());
  }
  b.tensors[prefix + "features"] = std::move(feats);
  b.index_rows[prefix + "instr"] = std::move(instr);
}

void add_embedding_rows(std::span<double> h, const Tensor& table, std::size_t width,
                        std::span<const std::int32_t> ids) {
  for (std::int32_t id : ids) {
    if (id < 0) continue;
    const double* src = table.data.data() + static_cast<std::size_t>(id) * width;
    for (std::size_t j = 0; j < width; ++j) h[j] += src[j];
  }
}

void affine_row(std::span<const double> in, const Tensor& w, const Tensor& b,
                std::span<double> out) {
  nn::matmul_into(in, w.data, out, 1, in.size(), out.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += b.data[j];
}

Tensor trunk_forward(const nn::ParamStore& store, const std::string& prefix,
                     const TrunkConfig& cfg, std::span<const sim::Observation* const> obs) {
  const std::size_t B = obs.size(), W = cfg.width;
  Tensor feats = Tensor::matrix(B, cfg.feature_dim);
  for (std::size_t i = 0; i < B; ++i) {
    check_features(cfg, *obs[i]);
    std::copy(obs[i]->features.begin(), obs[i]->features.end(), feats.row(i).begin());
  }
  const Tensor& fw = store.get(prefix + "feat_w");
  const Tensor& fb = store.get(prefix + "feat_b");
  const Tensor& emb = store.get(prefix + "instr_embed");
  Tensor h1 = Tensor::matrix(B, W);
  nn::matmul_into(feats.data, fw.data, h1.data, B, cfg.feature_dim, W);
  std::vector<double> instr(W);
  for (std::size_t i = 0; i < B; ++i) {
    std::fill(instr.begin(), instr.end(), 0.0);
    const auto ids = instruction_rows(cfg, *obs[i]);
    add_embedding_rows(instr, emb, W, ids);
    auto row = h1.row(i);
    for (std::size_t j = 0; j < W; ++j) row[j] = std::tanh((row[j] + fb.data[j]) + instr[j]);
  }
  const Tensor& tw = store.get(prefix + "trunk_w");
  const Tensor& tb = store.get(prefix + "trunk_b");
  Tensor h2 = Tensor::matrix(B, W);
  nn::matmul_into(h1.data, tw.data, h2.data, B, W, W);
  for (std::size_t i = 0; i < B; ++i) {
    auto row = h2.row(i);
    for (std::size_t j = 0; j < W; ++j) row[j] = std::tanh(row[j] + tb.data[j]);
  }
  return h2;
}

}  // namespace vlarl
