#include "vlarl/nn/graph.hpp"

#include <algorithm>
#include <cmath>

#include "vlarl/error.hpp"

namespace vlarl::nn {

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::tanh: return "tanh";
    case OpKind::softmax_cross_entropy: return "softmax-cross-entropy";
    case OpKind::gather: return "gather";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
  }
  return "?";
}

void IndexRows::push_row(std::initializer_list<std::int32_t> row_ids) {
  push_row(row_ids.begin(), row_ids.end());
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) throw invalid_argument("graph input refers to a later node");
    node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  }
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(const std::string& name) {
  return push(Node{.kind = OpKind::input, .name = name});
}

NodeId Graph::parameter(const std::string& name) {
  if (auto it = params_.find(name); it != params_.end()) return it->second;
  const NodeId id = push(Node{.kind = OpKind::parameter, .name = name, .needs_grad = true});
  params_.emplace(name, id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  return push(Node{.kind = OpKind::matmul, .inputs = {a, b}});
}
NodeId Graph::add(NodeId a, NodeId b) {
  return push(Node{.kind = OpKind::add, .inputs = {a, b}});
}
NodeId Graph::tanh(NodeId a) { return push(Node{.kind = OpKind::tanh, .inputs = {a}}); }
NodeId Graph::softmax_cross_entropy(NodeId logits, const std::string& targets) {
  return push(Node{.kind = OpKind::softmax_cross_entropy, .inputs = {logits}, .name = targets});
}
NodeId Graph::gather(NodeId table, const std::string& ids, std::size_t width) {
  if (width == 0) throw invalid_argument("gather width must be positive");
  return push(Node{.kind = OpKind::gather, .inputs = {table}, .name = ids, .width = width});
}
NodeId Graph::scale(NodeId a, double factor) {
  return push(Node{.kind = OpKind::scale, .inputs = {a}, .factor = factor});
}
NodeId Graph::sum(NodeId a) { return push(Node{.kind = OpKind::sum, .inputs = {a}}); }

void Graph::fail(NodeId id, const std::string& what) const {
  throw invalid_argument("node " + std::to_string(id) + " (" + op_name(nodes_[id].kind) +
                         "): " + what);
}

void Graph::forward(const Bindings& bindings, const ParamStore& params) {
  forward_done_ = false;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    nodes_[id].grad = Tensor{};
    eval(id, bindings, params);
  }
  forward_done_ = true;
}

void Graph::eval(NodeId id, const Bindings& b, const ParamStore& params) {
  Node& n = nodes_[id];
  switch (n.kind) {
    case OpKind::input: {
      auto it = b.tensors.find(n.name);
      if (it == b.tensors.end()) fail(id, "input '" + n.name + "' is not bound");
      n.out = it->second;
      return;
    }
    case OpKind::parameter:
      if (!params.contains(n.name)) fail(id, "parameter '" + n.name + "' missing from store");
      n.param = &params.get(n.name);
      return;
    case OpKind::matmul: {
      const Tensor& a = val(nodes_[n.inputs[0]]);
      const Tensor& c = val(nodes_[n.inputs[1]]);
      if (a.cols() != c.rows()) {
        fail(id, "shape mismatch " + a.shape_string() + " x " + c.shape_string());
      }
      n.out = Tensor::matrix(a.rows(), c.cols());
      matmul_into(a.data, c.data, n.out.data, a.rows(), a.cols(), c.cols());
      return;
    }
    case OpKind::add: {
      const Tensor& a = val(nodes_[n.inputs[0]]);
      const Tensor& c = val(nodes_[n.inputs[1]]);
      n.out = a;
      if (c.size() == a.size() && c.rows() == a.rows()) {
        for (std::size_t i = 0; i < a.size(); ++i) n.out.data[i] += c.data[i];
      } else if (c.size() == a.cols()) {
        const std::size_t cols = a.cols();
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t j = 0; j < cols; ++j) n.out.data[r * cols + j] += c.data[j];
      } else {
        fail(id, "shape mismatch " + a.shape_string() + " + " + c.shape_string());
      }
      return;
    }
    case OpKind::tanh: {
      n.out = val(nodes_[n.inputs[0]]);
      for (double& v : n.out.data) v = std::tanh(v);
      return;
    }
    case OpKind::softmax_cross_entropy: {
      const Tensor& logits = val(nodes_[n.inputs[0]]);
      auto it = b.targets.find(n.name);
      if (it == b.targets.end()) fail(id, "targets '" + n.name + "' are not bound");
      n.labels = &it->second;
      const std::size_t m = logits.rows();
      const std::size_t classes = logits.cols();
      if (n.labels->size() != m) {
        fail(id, "shape mismatch: " + std::to_string(n.labels->size()) + " targets for " +
                     std::to_string(m) + " rows");
      }
      n.aux = logits;
      n.out = Tensor::matrix(m, 2);
      for (std::size_t r = 0; r < m; ++r) {
        auto row = n.aux.row(r);
        const double lse = softmax_inplace(row);
        const auto& lrow = logits.row(r);
        double entropy = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
          if (row[j] > 0.0) entropy -= row[j] * (lrow[j] - lse);
        }
        const std::int32_t t = (*n.labels)[r];
        if (t >= static_cast<std::int32_t>(classes)) {
          fail(id, "target " + std::to_string(t) + " out of range in row " + std::to_string(r));
        }
        n.out.at(r, 0) = t < 0 ? 0.0 : lse - lrow[static_cast<std::size_t>(t)];
        n.out.at(r, 1) = entropy;
      }
      return;
    }
    case OpKind::gather: {
      const Tensor& table = val(nodes_[n.inputs[0]]);
      auto it = b.index_rows.find(n.name);
      if (it == b.index_rows.end()) fail(id, "ids '" + n.name + "' are not bound");
      n.rows = &it->second;
      if (table.size() % n.width != 0) {
        fail(id, "table " + table.shape_string() + " not divisible into rows of " +
                     std::to_string(n.width));
      }
      const auto table_rows = static_cast<std::int64_t>(table.size() / n.width);
      const std::size_t m = n.rows->rows();
      n.out = Tensor::matrix(m, n.width);
      for (std::size_t r = 0; r < m; ++r) {
        double* dst = n.out.data.data() + r * n.width;
        for (auto k = n.rows->offsets[r]; k < n.rows->offsets[r + 1]; ++k) {
          const std::int32_t src = n.rows->ids[static_cast<std::size_t>(k)];
          if (src < 0) continue;
          if (src >= table_rows) {
            fail(id, "id " + std::to_string(src) + " out of range for " +
                         std::to_string(table_rows) + " rows");
          }
          const double* s = table.data.data() + static_cast<std::size_t>(src) * n.width;
          for (std::size_t j = 0; j < n.width; ++j) dst[j] += s[j];
        }
      }
      return;
    }
    case OpKind::scale: {
      n.out = val(nodes_[n.inputs[0]]);
      for (double& v : n.out.data) v *= n.factor;
      return;
    }
    case OpKind::sum: {
      const Tensor& a = val(nodes_[n.inputs[0]]);
      double s = 0.0;
      for (double v : a.data) s += v;
      n.out = Tensor::scalar(s);
      return;
    }
  }
}

const Tensor& Graph::value(NodeId id) const {
  if (id >= nodes_.size()) throw invalid_argument("unknown node " + std::to_string(id));
  if (!forward_done_) throw state_error("value requested before forward");
  return val(nodes_[id]);
}

const Tensor& Graph::probabilities(NodeId id) const {
  if (id >= nodes_.size() || nodes_[id].kind != OpKind::softmax_cross_entropy) {
    throw invalid_argument("node " + std::to_string(id) + " is not a softmax node");
  }
  if (!forward_done_) throw state_error("probabilities requested before forward");
  return nodes_[id].aux;
}

Tensor& Graph::grad_of(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(val(n).shape);
  return n.grad;
}

void Graph::backward(const std::vector<std::pair<NodeId, Tensor>>& seeds) {
  if (!forward_done_) throw state_error("backward called before forward");
  for (auto& n : nodes_) n.grad = Tensor{};
  NodeId last = 0;
  for (const auto& [id, seed] : seeds) {
    if (id >= nodes_.size()) throw invalid_argument("unknown node " + std::to_string(id));
    Tensor& g = grad_of(id);
    if (seed.size() == 0) {
      for (double& v : g.data) v += 1.0;
    } else {
      if (seed.size() != g.size()) {
        fail(id, "seed shape " + seed.shape_string() + " does not match " +
                     val(nodes_[id]).shape_string());
      }
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += seed.data[i];
    }
    last = std::max(last, id);
  }
  for (NodeId id = last + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && nodes_[id].grad.size() != 0) propagate(id);
  }
}

void Graph::propagate(NodeId id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t slot) { return nodes_[n.inputs[slot]].needs_grad; };
  switch (n.kind) {
    case OpKind::input:
    case OpKind::parameter:
      return;
    case OpKind::matmul: {
      const Tensor& a = val(nodes_[n.inputs[0]]);
      const Tensor& c = val(nodes_[n.inputs[1]]);
      const std::size_t m = a.rows(), k = a.cols(), cols = c.cols();
      if (wants(0)) {
        // dA = dC * B^T, via an explicit transpose so the inner loop is a saxpy.
        std::vector<double> ct(k * cols);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < cols; ++j) ct[j * k + p] = c.data[p * cols + j];
        std::vector<double> tmp(m * k);
        matmul_into(g.data, ct, tmp, m, cols, k);
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < tmp.size(); ++i) ga.data[i] += tmp[i];
      }
      if (wants(1)) {
        Tensor& gc = grad_of(n.inputs[1]);
        matmul_tn_accumulate(a.data, g.data, gc.data, m, k, cols);
      }
      return;
    }
    case OpKind::add: {
      if (wants(0)) {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (wants(1)) {
        Tensor& gc = grad_of(n.inputs[1]);
        if (gc.size() == g.size()) {
          for (std::size_t i = 0; i < g.size(); ++i) gc.data[i] += g.data[i];
        } else {
          const std::size_t cols = gc.size();
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < cols; ++j) gc.data[j] += g.data[r * cols + j];
        }
      }
      return;
    }
    case OpKind::tanh: {
      if (!wants(0)) return;
      Tensor& ga = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.out.data[i];
        ga.data[i] += g.data[i] * (1.0 - y * y);
      }
      return;
    }
    case OpKind::softmax_cross_entropy: {
      if (!wants(0)) return;
      Tensor& ga = grad_of(n.inputs[0]);
      const std::size_t classes = n.aux.cols();
      for (std::size_t r = 0; r < n.aux.rows(); ++r) {
        const double g_ce = g.at(r, 0);
        const double g_ent = g.at(r, 1);
        const double entropy = n.out.at(r, 1);
        const auto p = n.aux.row(r);
        auto dst = ga.row(r);
        const std::int32_t t = (*n.labels)[r];
        if (g_ce != 0.0 && t >= 0) {
          for (std::size_t j = 0; j < classes; ++j) dst[j] += g_ce * p[j];
          dst[static_cast<std::size_t>(t)] -= g_ce;
        }
        if (g_ent != 0.0) {
          for (std::size_t j = 0; j < classes; ++j) {
            if (p[j] > 0.0) dst[j] -= g_ent * p[j] * (std::log(p[j]) + entropy);
          }
        }
      }
      return;
    }
    case OpKind::gather: {
      if (!wants(0)) return;
      Tensor& gt = grad_of(n.inputs[0]);
      for (std::size_t r = 0; r < n.rows->rows(); ++r) {
        const double* src = g.data.data() + r * n.width;
        for (auto k = n.rows->offsets[r]; k < n.rows->offsets[r + 1]; ++k) {
          const std::int32_t row = n.rows->ids[static_cast<std::size_t>(k)];
          if (row < 0) continue;
          double* dst = gt.data.data() + static_cast<std::size_t>(row) * n.width;
          for (std::size_t j = 0; j < n.width; ++j) dst[j] += src[j];
        }
      }
      return;
    }
    case OpKind::scale: {
      if (!wants(0)) return;
      Tensor& ga = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.factor * g.data[i];
      return;
    }
    case OpKind::sum: {
      if (!wants(0)) return;
      Tensor& ga = grad_of(n.inputs[0]);
      for (double& v : ga.data) v += g.data[0];
      return;
    }
  }
}

GradMap Graph::parameter_gradients() const {
  GradMap out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.size() ? n.grad : Tensor(val(n).shape));
  }
  return out;
}

GradMap Graph::parameter_gradients(const ParamStore& store) const {
  GradMap out = parameter_gradients();
  for (const auto& e : store.entries()) {
    if (!out.contains(e.name)) out.emplace(e.name, Tensor(e.value.shape));
  }
  return out;
}

}  // namespace vlarl::nn
