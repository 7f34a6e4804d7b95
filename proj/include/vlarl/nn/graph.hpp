#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vlarl/nn/param_store.hpp"
#include "vlarl/nn/tensor.hpp"

namespace vlarl::nn {

using NodeId = std::size_t;

enum class OpKind {
  input,
  parameter,
  matmul,
  add,
  tanh,
  softmax_cross_entropy,
  gather,
  scale,
  sum,
};

const char* op_name(OpKind kind) noexcept;

/// Variable-length id lists, one list per output row (CSR layout).
struct IndexRows {
  std::vector<std::int32_t> offsets{0};
  std::vector<std::int32_t> ids;

  std::size_t rows() const noexcept { return offsets.size() - 1; }
  void push_row(std::initializer_list<std::int32_t> row_ids);
  template <typename It>
  void push_row(It first, It last) {
    ids.insert(ids.end(), first, last);
    offsets.push_back(static_cast<std::int32_t>(ids.size()));
  }
};

struct Bindings {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, IndexRows> index_rows;
  /// Class targets for softmax-cross-entropy; negative means "no target".
  std::map<std::string, std::vector<std::int32_t>> targets;
};

/// Define-then-run reverse-mode graph over a fixed op set. Nodes are appended
/// in topological order; `forward` evaluates them against bindings and a
/// parameter store, `backward` accumulates gradients into parameter leaves.
///
/// softmax_cross_entropy emits an [m, 2] tensor: column 0 is the per-row
/// cross-entropy against the bound target (0 when the target is negative),
/// column 1 the per-row entropy of the softmax.
class Graph {
 public:
  NodeId input(const std::string& name);
  /// Returns the existing node when the parameter was already referenced.
  NodeId parameter(const std::string& name);
  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise add; b may also be a single row broadcast over a's rows.
  NodeId add(NodeId a, NodeId b);
  NodeId tanh(NodeId a);
  NodeId softmax_cross_entropy(NodeId logits, const std::string& targets);
  /// Views `table` as rows of `width` values and sums the listed rows for
  /// every output row. Negative ids are skipped.
  NodeId gather(NodeId table, const std::string& ids, std::size_t width);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);

  void forward(const Bindings& bindings, const ParamStore& params);
  const Tensor& value(NodeId id) const;
  /// Softmax probabilities cached by a softmax_cross_entropy node.
  const Tensor& probabilities(NodeId id) const;

  /// Seeds each listed node with the given upstream gradient (ones when the
  /// tensor is empty) and propagates to parameter leaves.
  void backward(const std::vector<std::pair<NodeId, Tensor>>& seeds);
  void backward(NodeId root) { backward({{root, Tensor{}}}); }

  /// Gradients for every parameter referenced by the graph.
  GradMap parameter_gradients() const;
  /// Same, padded with zeros for store entries the graph never touched.
  GradMap parameter_gradients(const ParamStore& store) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    std::string name;  // input/parameter name, index or target binding
    std::size_t width = 0;
    double factor = 1.0;
    bool needs_grad = false;
    Tensor out;
    const Tensor* param = nullptr;
    Tensor grad;
    Tensor aux;  // softmax probabilities
    const IndexRows* rows = nullptr;
    const std::vector<std::int32_t>* labels = nullptr;
  };

  NodeId push(Node node);
  const Tensor& val(const Node& n) const { return n.param ? *n.param : n.out; }
  void eval(NodeId id, const Bindings& b, const ParamStore& params);
  void propagate(NodeId id);
  Tensor& grad_of(NodeId id);
  [[noreturn]] void fail(NodeId id, const std::string& what) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
  bool forward_done_ = false;
};

}  // namespace vlarl::nn
