#include "vlarl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlarl/error.hpp"

namespace vlarl {

using nn::Tensor;

double DecodeResult::log_prob() const noexcept {
  return std::accumulate(log_probs.begin(), log_probs.end(), 0.0);
}

bool is_value_param(const std::string& name) noexcept { return name.starts_with("value_"); }

Policy::Policy(PolicyConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  CounterRng rng = CounterRng::stream(seed, 0xB0110C);
  init_trunk(params_, "", cfg_.trunk, rng);
  const std::size_t W = cfg_.trunk.width, H = cfg_.head_width, D = cfg_.action_dims;
  const auto bins = static_cast<std::size_t>(cfg_.bins);
  params_.add("step_w", orthogonal_init(W, D * H, 1.0, rng));
  params_.add("step_b", Tensor({D * H}));
  params_.add("token_embed", normal_init({D * bins, H}, 0.1, rng));
  params_.add("head_w", Tensor({H, bins}));
  params_.add("head_b", Tensor({bins}));
  params_.add("value_w", Tensor({W, 1}));
  params_.add("value_b", Tensor({1}));
}

Tensor Policy::forward_context(std::span<const sim::Observation* const> obs) const {
  return trunk_forward(params_, "", cfg_.trunk, obs);
}

std::vector<double> Policy::forward_context(const sim::Observation& obs) const {
  const sim::Observation* p = &obs;
  return forward_context(std::span<const sim::Observation* const>(&p, 1)).data;
}

std::vector<double> Policy::values(std::span<const sim::Observation* const> obs) const {
  const Tensor ctx = forward_context(obs);
  const Tensor& w = params_.get("value_w");
  const Tensor& b = params_.get("value_b");
  std::vector<double> out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    double v = 0.0;
    affine_row(ctx.row(i), w, b, std::span<double>(&v, 1));
    out[i] = v;
  }
  return out;
}

double Policy::value(const sim::Observation& obs) const {
  const sim::Observation* p = &obs;
  return values(std::span<const sim::Observation* const>(&p, 1))[0];
}

namespace {

std::int32_t argmax(std::span<const double> v) {
  return static_cast<std::int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::int32_t sample_tempered(std::span<const double> logits, double temperature,
                             CounterRng& rng) {
  std::vector<double> p(logits.begin(), logits.end());
  for (double& x : p) x /= temperature;
  nn::softmax_inplace(p);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    acc += p[j];
    if (u < acc) return static_cast<std::int32_t>(j);
  }
  // Rounding left u above the total: take the last class with mass.
  for (std::size_t j = p.size(); j-- > 0;)
    if (p[j] > 0.0) return static_cast<std::int32_t>(j);
  return 0;
}

}  // namespace

std::vector<DecodeResult> Policy::decode(std::span<const sim::Observation* const> obs,
                                         double temperature, std::span<CounterRng> rngs,
                                         const std::vector<TokenBins>* forced) const {
  const std::size_t B = obs.size(), H = cfg_.head_width, D = cfg_.action_dims;
  const auto bins = static_cast<std::size_t>(cfg_.bins);
  if (!forced && temperature > 0.0 && rngs.size() != B) {
    throw invalid_argument("need one RNG stream per row: " + std::to_string(rngs.size()) +
                           " for " + std::to_string(B));
  }
  const Tensor ctx = forward_context(obs);
  const Tensor& sw = params_.get("step_w");
  const Tensor& sb = params_.get("step_b");
  const Tensor& emb = params_.get("token_embed");
  const Tensor& hw = params_.get("head_w");
  const Tensor& hb = params_.get("head_b");

  Tensor proj = Tensor::matrix(B, D * H);
  nn::matmul_into(ctx.data, sw.data, proj.data, B, cfg_.trunk.width, D * H);
  for (std::size_t b = 0; b < B; ++b) {
    auto row = proj.row(b);
    for (std::size_t j = 0; j < D * H; ++j) row[j] += sb.data[j];
  }

  const Tensor& vw = params_.get("value_w");
  const Tensor& vb = params_.get("value_b");
  std::vector<DecodeResult> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    out[b].bins.resize(D);
    out[b].log_probs.resize(D);
    affine_row(ctx.row(b), vw, vb, std::span<double>(&out[b].value, 1));
  }
  Tensor prev = Tensor::matrix(B, H);
  Tensor hidden = Tensor::matrix(B, H);
  Tensor logits = Tensor::matrix(B, bins);
  std::vector<double> probs(bins);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t b = 0; b < B; ++b) {
      const double* u = proj.data.data() + b * D * H + i * H;
      for (std::size_t j = 0; j < H; ++j) hidden.at(b, j) = std::tanh(u[j] + prev.at(b, j));
    }
    nn::matmul_into(hidden.data, hw.data, logits.data, B, H, bins);
    for (std::size_t b = 0; b < B; ++b) {
      auto lrow = logits.row(b);
      for (std::size_t j = 0; j < bins; ++j) lrow[j] += hb.data[j];
      std::copy(lrow.begin(), lrow.end(), probs.begin());
      const double lse = nn::softmax_inplace(probs);
      double ent = 0.0;
      for (std::size_t j = 0; j < bins; ++j)
        if (probs[j] > 0.0) ent -= probs[j] * (lrow[j] - lse);

      std::int32_t tok = 0;
      if (forced) {
        const TokenBins& path = (*forced)[b];
        if (path.size() != D) {
          throw invalid_argument("token path has " + std::to_string(path.size()) +
                                 " entries, expected " + std::to_string(D));
        }
        tok = path[i];
        if (tok < 0 || tok >= cfg_.bins) {
          throw invalid_argument("token bin " + std::to_string(tok) + " out of range at position " +
                                 std::to_string(i));
        }
      } else if (temperature <= 0.0) {
        tok = argmax(lrow);
      } else {
        tok = sample_tempered(lrow, temperature, rngs[b]);
      }
      out[b].bins[i] = tok;
      out[b].log_probs[i] = -(lse - lrow[static_cast<std::size_t>(tok)]);
      out[b].entropy += ent;
      const std::int32_t id = static_cast<std::int32_t>(i * bins) + tok;
      add_embedding_rows(prev.row(b), emb, H, std::span<const std::int32_t>(&id, 1));
    }
  }
  return out;
}

std::vector<DecodeResult> Policy::sample_batch(std::span<const sim::Observation* const> obs,
                                               double temperature,
                                               std::span<CounterRng> rngs) const {
  return decode(obs, temperature, rngs, nullptr);
}

DecodeResult Policy::sample_action_tokens(const sim::Observation& obs, double temperature,
                                          CounterRng& rng) const {
  const sim::Observation* p = &obs;
  return decode(std::span<const sim::Observation* const>(&p, 1), temperature,
                std::span<CounterRng>(&rng, 1), nullptr)[0];
}

DecodeResult Policy::evaluate(const sim::Observation& obs, const TokenBins& bins) const {
  const sim::Observation* p = &obs;
  const std::vector<TokenBins> forced{bins};
  return decode(std::span<const sim::Observation* const>(&p, 1), 1.0, {}, &forced)[0];
}

double Policy::action_log_prob(const sim::Observation& obs, const TokenBins& bins) const {
  return evaluate(obs, bins).log_prob();
}

double Policy::entropy(const sim::Observation& obs, const TokenBins& bins) const {
  return evaluate(obs, bins).entropy;
}

double Policy::entropy(const sim::Observation& obs) const {
  const sim::Observation* p = &obs;
  return decode(std::span<const sim::Observation* const>(&p, 1), 0.0, {}, nullptr)[0].entropy;
}

PolicyGraph build_policy_graph(const PolicyConfig& cfg,
                               std::span<const sim::Observation* const> obs,
                               std::span<const TokenBins> paths) {
  if (obs.size() != paths.size()) {
    throw invalid_argument("observation and token batches differ in length");
  }
  const std::size_t B = obs.size(), H = cfg.head_width, D = cfg.action_dims;
  PolicyGraph pg;
  pg.batch = B;
  auto& g = pg.graph;
  const auto ctx = build_trunk(g, "", cfg.trunk);
  pg.value = g.add(g.matmul(ctx, g.parameter("value_w")), g.parameter("value_b"));
  const auto proj = g.add(g.matmul(ctx, g.parameter("step_w")), g.parameter("step_b"));
  const auto step_rows = g.gather(proj, "step_rows", H);
  const auto prev = g.gather(g.parameter("token_embed"), "prev_tokens", H);
  const auto hidden = g.tanh(g.add(step_rows, prev));
  const auto logits = g.add(g.matmul(hidden, g.parameter("head_w")), g.parameter("head_b"));
  pg.token_ce = g.softmax_cross_entropy(logits, "targets");

  bind_trunk(pg.bindings, "", cfg.trunk, obs);
  nn::IndexRows rows, prev_ids;
  std::vector<std::int32_t> targets;
  targets.reserve(B * D);
  std::vector<std::int32_t> ids;
  for (std::size_t b = 0; b < B; ++b) {
    const TokenBins& path = paths[b];
    if (path.size() != D) throw invalid_argument("token path length mismatch");
    ids.clear();
    for (std::size_t i = 0; i < D; ++i) {
      if (path[i] < 0 || path[i] >= cfg.bins) {
        throw invalid_argument("token bin " + std::to_string(path[i]) +
                               " out of range at position " + std::to_string(i));
      }
      rows.push_row({static_cast<std::int32_t>(b * D + i)});
      prev_ids.push_row(ids.begin(), ids.end());
      ids.push_back(static_cast<std::int32_t>(i) * cfg.bins + path[i]);
      targets.push_back(path[i]);
    }
  }
  pg.bindings.index_rows["step_rows"] = std::move(rows);
  pg.bindings.index_rows["prev_tokens"] = std::move(prev_ids);
  pg.bindings.targets["targets"] = std::move(targets);
  return pg;
}

std::vector<double> path_log_probs(const PolicyGraph& pg, const PolicyConfig& cfg) {
  const Tensor& ce = pg.graph.value(pg.token_ce);
  std::vector<double> out(pg.batch, 0.0);
  for (std::size_t b = 0; b < pg.batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < cfg.action_dims; ++i) s += -ce.at(b * cfg.action_dims + i, 0);
    out[b] = s;
  }
  return out;
}

std::vector<double> path_entropies(const PolicyGraph& pg, const PolicyConfig& cfg) {
  const Tensor& ce = pg.graph.value(pg.token_ce);
  std::vector<double> out(pg.batch, 0.0);
  for (std::size_t b = 0; b < pg.batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < cfg.action_dims; ++i) s += ce.at(b * cfg.action_dims + i, 1);
    out[b] = s;
  }
  return out;
}

TokenBins to_token_bins(const ActionBins& bins) { return TokenBins(bins.begin(), bins.end()); }

ActionBins to_action_bins(const TokenBins& bins) {
  if (bins.size() != kActionDims) throw invalid_argument("expected 7 action bins");
  ActionBins out{};
  std::copy(bins.begin(), bins.end(), out.begin());
  return out;
}

}  // namespace vlarl
