#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advrank/error.hpp"
#include "advrank/tensor.hpp"

namespace advrank {

using NodeId = std::uint32_t;

/// Strength of the gradient reversal. Forward is the identity; backward
/// multiplies the upstream gradient by -lambda.
struct GradReverseConfig {
  double lambda = 1.0;
};

enum class OpKind {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,  // elementwise (Hadamard)
  kMatMul,
  kTanh,
  kSigmoid,
  kRelu,
  kLog,
  kSoftmax,
  kConcat,
  kStackRows,
  kRowSelect,
  kSelectIndex,
  kSumAll,
  kSumAxis,
  kMaxAxis,
  kEmbedding,
  kBagEmbedding,
  kCosine,
  kUnfold,
  kAddRowVec,
  kMulRowVec,
  kScale,
  kGradReverse,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "hadamard";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kConcat: return "concat";
    case OpKind::kStackRows: return "stack_rows";
    case OpKind::kRowSelect: return "row_select";
    case OpKind::kSelectIndex: return "select_index";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kSumAxis: return "sum_axis";
    case OpKind::kMaxAxis: return "max_axis";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kBagEmbedding: return "bag_embedding";
    case OpKind::kCosine: return "cosine_similarity";
    case OpKind::kUnfold: return "unfold";
    case OpKind::kAddRowVec: return "add_rowvec";
    case OpKind::kMulRowVec: return "mul_rowvec";
    case OpKind::kScale: return "scale";
    case OpKind::kGradReverse: return "gradient_reverse";
  }
  return "?";
}

/// One weighted trigraph-bucket entry of a token bag.
struct BagEntry {
  std::size_t bucket;
  double count;
};
using TokenBag = std::vector<BagEntry>;

namespace detail {
constexpr double kLogFloor = 1e-12;
}

/// Reverse-mode tape over dense tensors. Nodes are appended in execution
/// order, so reverse insertion order is a valid backward schedule. A Graph
/// is single-threaded; distinct graphs share no state.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> idata;  // op-specific: axis, indices, bag layout
    std::vector<double> ddata;       // op-specific: scale, lambda, counts, cached norms
  };

  Graph() = default;

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(NodeId id) const { return node(id).value; }
  double scalar_value(NodeId id) const {
    const Tensor& t = node(id).value;
    if (!t.is_scalar()) {
      throw ShapeError(std::string("scalar_value: node has shape ") + Tensor::shape_str(t.shape));
    }
    return t.data[0];
  }
  OpKind kind(NodeId id) const { return node(id).kind; }

  // ---------------------------------------------------------------------
  // Leaves
  // ---------------------------------------------------------------------

  NodeId constant(Tensor t) {
    t.requires_grad = false;
    return push(OpKind::kConstant, {}, std::move(t), false);
  }

  NodeId scalar(double v) { return constant(Tensor::scalar(v)); }

  /// Registers a trainable leaf. When overrides are installed (see
  /// set_parameter_overrides), the tensor's values are replaced by the
  /// override for this parameter slot; shapes must agree.
  NodeId parameter(Tensor t) {
    if (!override_values_.empty()) {
      if (param_count_ >= override_values_.size()) {
        throw Error("parameter: more parameters registered than overrides supplied");
      }
      const std::vector<double>& ov = override_values_[param_count_];
      if (ov.size() != t.data.size()) {
        throw ShapeError("parameter: override size " + std::to_string(ov.size()) +
                         " does not match tensor size " + std::to_string(t.data.size()));
      }
      t.data = ov;
    }
    ++param_count_;
    t.requires_grad = true;
    NodeId id = push(OpKind::kParameter, {}, std::move(t), true);
    param_ids_.push_back(id);
    return id;
  }

  const std::vector<NodeId>& parameter_ids() const { return param_ids_; }

  /// Install replacement values for the parameters of the next build, in
  /// registration order. Used by grad_check to evaluate perturbed losses.
  void set_parameter_overrides(std::vector<std::vector<double>> values) {
    override_values_ = std::move(values);
    param_count_ = 0;
  }

  // ---------------------------------------------------------------------
  // Elementwise and activation ops
  // ---------------------------------------------------------------------

  NodeId add(NodeId a, NodeId b) { return binary_same_shape(OpKind::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary_same_shape(OpKind::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary_same_shape(OpKind::kMul, a, b); }

  NodeId tanh(NodeId x) {
    Tensor out = value_copy(x);
    for (double& v : out.data) v = std::tanh(v);
    return push(OpKind::kTanh, {x}, std::move(out), node(x).requires_grad);
  }

  NodeId sigmoid(NodeId x) {
    Tensor out = value_copy(x);
    for (double& v : out.data) {
      if (v >= 0) {
        v = 1.0 / (1.0 + std::exp(-v));
      } else {
        double e = std::exp(v);
        v = e / (1.0 + e);
      }
    }
    return push(OpKind::kSigmoid, {x}, std::move(out), node(x).requires_grad);
  }

  NodeId relu(NodeId x) {
    Tensor out = value_copy(x);
    for (double& v : out.data) v = v > 0 ? v : 0.0;
    return push(OpKind::kRelu, {x}, std::move(out), node(x).requires_grad);
  }

  /// Natural log with the input floored at 1e-12.
  NodeId log(NodeId x) {
    Tensor out = value_copy(x);
    for (double& v : out.data) v = std::log(std::max(v, detail::kLogFloor));
    return push(OpKind::kLog, {x}, std::move(out), node(x).requires_grad);
  }

  NodeId scale(NodeId x, double c) {
    Tensor out = value_copy(x);
    for (double& v : out.data) v *= c;
    NodeId id = push(OpKind::kScale, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].ddata = {c};
    return id;
  }

  /// Identity forward; backward multiplies the upstream gradient by -lambda.
  NodeId gradient_reverse(NodeId x, const GradReverseConfig& cfg) {
    if (!(cfg.lambda >= 0)) {
      throw ConfigError("gradient_reverse: lambda must be >= 0");
    }
    Tensor out = value_copy(x);
    NodeId id = push(OpKind::kGradReverse, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].ddata = {cfg.lambda};
    return id;
  }

  // ---------------------------------------------------------------------
  // Shape-structured ops
  // ---------------------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    Tensor out;
    if (A.rank() == 2 && B.rank() == 2) {
      if (A.cols() != B.rows()) throw shape_error(OpKind::kMatMul, A, B);
      out = Tensor::zeros({A.rows(), B.cols()});
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t k = 0; k < A.cols(); ++k) {
          double av = A.at(i, k);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < B.cols(); ++j) out.at(i, j) += av * B.at(k, j);
        }
    } else if (A.rank() == 2 && B.rank() == 1) {
      if (A.cols() != B.numel()) throw shape_error(OpKind::kMatMul, A, B);
      out = Tensor::zeros({A.rows()});
      for (std::size_t i = 0; i < A.rows(); ++i) {
        double s = 0;
        for (std::size_t k = 0; k < A.cols(); ++k) s += A.at(i, k) * B.at(k);
        out.at(i) = s;
      }
    } else if (A.rank() == 1 && B.rank() == 2) {
      if (A.numel() != B.rows()) throw shape_error(OpKind::kMatMul, A, B);
      out = Tensor::zeros({B.cols()});
      for (std::size_t k = 0; k < B.rows(); ++k) {
        double av = A.at(k);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < B.cols(); ++j) out.at(j) += av * B.at(k, j);
      }
    } else {
      throw shape_error(OpKind::kMatMul, A, B);
    }
    return push(OpKind::kMatMul, {a, b}, std::move(out), node(a).requires_grad || node(b).requires_grad);
  }

  /// Numerically stable softmax over a rank-1 tensor.
  NodeId softmax(NodeId x) {
    const Tensor& X = node(x).value;
    if (X.rank() != 1) throw shape_error(OpKind::kSoftmax, X);
    double mx = *std::max_element(X.data.begin(), X.data.end());
    Tensor out = Tensor::zeros({X.numel()});
    double z = 0;
    for (std::size_t i = 0; i < X.numel(); ++i) {
      out.at(i) = std::exp(X.at(i) - mx);
      z += out.at(i);
    }
    for (double& v : out.data) v /= z;
    return push(OpKind::kSoftmax, {x}, std::move(out), node(x).requires_grad);
  }

  NodeId concat(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::size_t total = 0;
    bool rg = false;
    for (NodeId p : parts) {
      const Tensor& t = node(p).value;
      if (t.rank() != 1) throw shape_error(OpKind::kConcat, t);
      total += t.numel();
      rg = rg || node(p).requires_grad;
    }
    Tensor out = Tensor::zeros({total});
    std::size_t off = 0;
    for (NodeId p : parts) {
      const Tensor& t = node(p).value;
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += t.numel();
    }
    return push(OpKind::kConcat, parts, std::move(out), rg);
  }

  /// Stack k rank-1 tensors of equal length n into a [k, n] matrix.
  NodeId stack_rows(const std::vector<NodeId>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    std::size_t n = node(rows[0]).value.numel();
    bool rg = false;
    for (NodeId r : rows) {
      const Tensor& t = node(r).value;
      if (t.rank() != 1 || t.numel() != n) throw shape_error(OpKind::kStackRows, t);
      rg = rg || node(r).requires_grad;
    }
    Tensor out = Tensor::zeros({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Tensor& t = node(rows[i]).value;
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return push(OpKind::kStackRows, rows, std::move(out), rg);
  }

  NodeId row_select(NodeId x, std::size_t row) {
    const Tensor& X = node(x).value;
    if (X.rank() != 2 || row >= X.rows()) throw shape_error(OpKind::kRowSelect, X);
    Tensor out = Tensor::zeros({X.cols()});
    for (std::size_t j = 0; j < X.cols(); ++j) out.at(j) = X.at(row, j);
    NodeId id = push(OpKind::kRowSelect, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].idata = {row};
    return id;
  }

  NodeId select_index(NodeId x, std::size_t i) {
    const Tensor& X = node(x).value;
    if (X.rank() != 1 || i >= X.numel()) throw shape_error(OpKind::kSelectIndex, X);
    NodeId id = push(OpKind::kSelectIndex, {x}, Tensor::scalar(X.at(i)), node(x).requires_grad);
    nodes_[id].idata = {i};
    return id;
  }

  NodeId sum_all(NodeId x) {
    const Tensor& X = node(x).value;
    double s = 0;
    for (double v : X.data) s += v;
    return push(OpKind::kSumAll, {x}, Tensor::scalar(s), node(x).requires_grad);
  }

  /// Sum of a [m, n] matrix over the given axis (0 -> [n], 1 -> [m]).
  NodeId sum_axis(NodeId x, std::size_t axis) {
    const Tensor& X = node(x).value;
    if (X.rank() != 2 || axis > 1) throw shape_error(OpKind::kSumAxis, X);
    Tensor out = Tensor::zeros({axis == 0 ? X.cols() : X.rows()});
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(axis == 0 ? j : i) += X.at(i, j);
    NodeId id = push(OpKind::kSumAxis, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].idata = {axis};
    return id;
  }

  /// Max of a [m, n] matrix over the given axis; rank-1 input reduces to a
  /// scalar. Ties resolve to the first maximal index.
  NodeId max_axis(NodeId x, std::size_t axis = 0) {
    const Tensor& X = node(x).value;
    Tensor out;
    std::vector<std::size_t> idata = {axis};
    if (X.rank() == 1) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < X.numel(); ++i)
        if (X.at(i) > X.at(arg)) arg = i;
      out = Tensor::scalar(X.at(arg));
      idata.push_back(arg);
    } else if (X.rank() == 2 && axis <= 1) {
      std::size_t outer = axis == 0 ? X.cols() : X.rows();
      std::size_t inner = axis == 0 ? X.rows() : X.cols();
      if (inner == 0) throw shape_error(OpKind::kMaxAxis, X);
      out = Tensor::zeros({outer});
      for (std::size_t o = 0; o < outer; ++o) {
        std::size_t arg = 0;
        double best = axis == 0 ? X.at(0, o) : X.at(o, 0);
        for (std::size_t i = 1; i < inner; ++i) {
          double v = axis == 0 ? X.at(i, o) : X.at(o, i);
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        out.at(o) = best;
        idata.push_back(arg);
      }
    } else {
      throw shape_error(OpKind::kMaxAxis, X);
    }
    NodeId id = push(OpKind::kMaxAxis, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].idata = std::move(idata);
    return id;
  }

  /// Rows of an embedding table selected by token id: E [V, d] -> [len, d].
  NodeId embedding(NodeId table, const std::vector<std::size_t>& ids) {
    const Tensor& E = node(table).value;
    if (E.rank() != 2) throw shape_error(OpKind::kEmbedding, E);
    if (ids.empty()) throw ShapeError("embedding: empty id sequence");
    for (std::size_t id : ids) {
      if (id >= E.rows()) {
        throw ShapeError("embedding: id " + std::to_string(id) + " out of range for table " +
                         Tensor::shape_str(E.shape));
      }
    }
    Tensor out = Tensor::zeros({ids.size(), E.cols()});
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t j = 0; j < E.cols(); ++j) out.at(t, j) = E.at(ids[t], j);
    NodeId id = push(OpKind::kEmbedding, {table}, std::move(out), node(table).requires_grad);
    nodes_[id].idata = ids;
    return id;
  }

  /// Weighted sums of embedding rows, one output row per token bag:
  /// out[t, :] = sum over (bucket, count) in bags[t] of count * E[bucket, :].
  /// Empty bags produce zero rows.
  NodeId bag_embedding(NodeId table, const std::vector<TokenBag>& bags) {
    const Tensor& E = node(table).value;
    if (E.rank() != 2) throw shape_error(OpKind::kBagEmbedding, E);
    if (bags.empty()) throw ShapeError("bag_embedding: empty bag sequence");
    Tensor out = Tensor::zeros({bags.size(), E.cols()});
    std::vector<std::size_t> idata;
    std::vector<double> ddata;
    idata.push_back(bags.size());
    std::size_t off = 0;
    for (const TokenBag& bag : bags) {
      idata.push_back(off);
      off += bag.size();
    }
    idata.push_back(off);
    for (std::size_t t = 0; t < bags.size(); ++t) {
      for (const BagEntry& e : bags[t]) {
        if (e.bucket >= E.rows()) {
          throw ShapeError("bag_embedding: bucket " + std::to_string(e.bucket) +
                           " out of range for table " + Tensor::shape_str(E.shape));
        }
        idata.push_back(e.bucket);
        ddata.push_back(e.count);
        for (std::size_t j = 0; j < E.cols(); ++j) out.at(t, j) += e.count * E.at(e.bucket, j);
      }
    }
    NodeId id = push(OpKind::kBagEmbedding, {table}, std::move(out), node(table).requires_grad);
    nodes_[id].idata = std::move(idata);
    nodes_[id].ddata = std::move(ddata);
    return id;
  }

  /// Cosine similarity of two rank-1 tensors; errors on zero-norm inputs.
  NodeId cosine(NodeId a, NodeId b) {
    const Tensor& U = node(a).value;
    const Tensor& V = node(b).value;
    if (U.rank() != 1 || V.rank() != 1 || U.numel() != V.numel()) throw shape_error(OpKind::kCosine, U, V);
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < U.numel(); ++i) {
      dot += U.at(i) * V.at(i);
      nu += U.at(i) * U.at(i);
      nv += V.at(i) * V.at(i);
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu == 0.0 || nv == 0.0) throw NumericError("cosine_similarity: zero-norm input");
    NodeId id = push(OpKind::kCosine, {a, b}, Tensor::scalar(dot / (nu * nv)),
                     node(a).requires_grad || node(b).requires_grad);
    nodes_[id].ddata = {dot, nu, nv};
    return id;
  }

  /// Sliding windows of `width` rows flattened per position:
  /// [len, C] -> [len - width + 1, width * C].
  NodeId unfold(NodeId x, std::size_t width) {
    const Tensor& X = node(x).value;
    if (X.rank() != 2 || width == 0 || width > X.rows()) throw shape_error(OpKind::kUnfold, X);
    std::size_t n = X.rows() - width + 1;
    Tensor out = Tensor::zeros({n, width * X.cols()});
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t y = 0; y < width; ++y)
        for (std::size_t j = 0; j < X.cols(); ++j) out.at(p, y * X.cols() + j) = X.at(p + y, j);
    NodeId id = push(OpKind::kUnfold, {x}, std::move(out), node(x).requires_grad);
    nodes_[id].idata = {width};
    return id;
  }

  /// [m, n] + [n], the row vector added to every row.
  NodeId add_rowvec(NodeId a, NodeId v) {
    const Tensor& A = node(a).value;
    const Tensor& Vv = node(v).value;
    if (A.rank() != 2 || Vv.rank() != 1 || A.cols() != Vv.numel()) throw shape_error(OpKind::kAddRowVec, A, Vv);
    Tensor out = A;
    out.requires_grad = false;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) += Vv.at(j);
    return push(OpKind::kAddRowVec, {a, v}, std::move(out), node(a).requires_grad || node(v).requires_grad);
  }

  /// [m, n] * [n], the row vector multiplied into every row (broadcast Hadamard).
  NodeId mul_rowvec(NodeId a, NodeId v) {
    const Tensor& A = node(a).value;
    const Tensor& Vv = node(v).value;
    if (A.rank() != 2 || Vv.rank() != 1 || A.cols() != Vv.numel()) throw shape_error(OpKind::kMulRowVec, A, Vv);
    Tensor out = A;
    out.requires_grad = false;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) *= Vv.at(j);
    return push(OpKind::kMulRowVec, {a, v}, std::move(out), node(a).requires_grad || node(v).requires_grad);
  }

  /// Generic dispatcher for ops that take only node inputs.
  NodeId apply(OpKind kind, const std::vector<NodeId>& in) {
    switch (kind) {
      case OpKind::kAdd: expect_arity(kind, in, 2); return add(in[0], in[1]);
      case OpKind::kSub: expect_arity(kind, in, 2); return sub(in[0], in[1]);
      case OpKind::kMul: expect_arity(kind, in, 2); return mul(in[0], in[1]);
      case OpKind::kMatMul: expect_arity(kind, in, 2); return matmul(in[0], in[1]);
      case OpKind::kTanh: expect_arity(kind, in, 1); return tanh(in[0]);
      case OpKind::kSigmoid: expect_arity(kind, in, 1); return sigmoid(in[0]);
      case OpKind::kRelu: expect_arity(kind, in, 1); return relu(in[0]);
      case OpKind::kLog: expect_arity(kind, in, 1); return log(in[0]);
      case OpKind::kSoftmax: expect_arity(kind, in, 1); return softmax(in[0]);
      case OpKind::kConcat: return concat(in);
      case OpKind::kStackRows: return stack_rows(in);
      case OpKind::kSumAll: expect_arity(kind, in, 1); return sum_all(in[0]);
      case OpKind::kMaxAxis: expect_arity(kind, in, 1); return max_axis(in[0]);
      case OpKind::kCosine: expect_arity(kind, in, 2); return cosine(in[0], in[1]);
      case OpKind::kAddRowVec: expect_arity(kind, in, 2); return add_rowvec(in[0], in[1]);
      case OpKind::kMulRowVec: expect_arity(kind, in, 2); return mul_rowvec(in[0], in[1]);
      default:
        throw ConfigError(std::string("apply: op ") + op_name(kind) + " needs a dedicated builder");
    }
  }

  // ---------------------------------------------------------------------
  // Backward
  // ---------------------------------------------------------------------

  /// Reverse-mode sweep from a scalar loss. Fan-out gradients accumulate by
  /// addition; nodes are visited in reverse insertion order. Returns the
  /// gradient for every registered parameter (zeros when unreached).
  std::map<NodeId, Tensor> backward(NodeId loss) {
    const Tensor& lt = node(loss).value;
    if (!lt.is_scalar()) {
      throw ShapeError("backward: loss must be scalar, got shape " + Tensor::shape_str(lt.shape));
    }
    grads_.assign(nodes_.size(), Tensor{});
    grad_buf(loss).data[0] = 1.0;
    for (NodeId id = loss + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || grads_[id].data.empty()) continue;
      dispatch_backward(id);
    }
    std::map<NodeId, Tensor> table;
    for (NodeId pid : param_ids_) {
      if (grads_[pid].data.empty()) {
        table.emplace(pid, Tensor::zeros(nodes_[pid].value.shape));
      } else {
        table.emplace(pid, grads_[pid]);
      }
    }
    return table;
  }

  /// Accumulated gradient of a node after backward(); zero tensor if the
  /// node was not on a path to the loss.
  Tensor grad(NodeId id) const {
    if (id >= grads_.size() || grads_[id].data.empty()) return Tensor::zeros(node(id).value.shape);
    return grads_[id];
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<NodeId> param_ids_;
  std::vector<std::vector<double>> override_values_;
  std::size_t param_count_ = 0;

  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw Error("graph: node id " + std::to_string(id) + " not owned by this graph");
    return nodes_[id];
  }

  Tensor value_copy(NodeId id) const {
    Tensor t = node(id).value;
    t.requires_grad = false;
    return t;
  }

  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor value, bool requires_grad) {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.value.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary_same_shape(OpKind kind, NodeId a, NodeId b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (!A.same_shape(B)) throw shape_error(kind, A, B);
    Tensor out = Tensor::zeros(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) {
      switch (kind) {
        case OpKind::kAdd: out.data[i] = A.data[i] + B.data[i]; break;
        case OpKind::kSub: out.data[i] = A.data[i] - B.data[i]; break;
        default: out.data[i] = A.data[i] * B.data[i]; break;
      }
    }
    return push(kind, {a, b}, std::move(out), node(a).requires_grad || node(b).requires_grad);
  }

  static ShapeError shape_error(OpKind kind, const Tensor& a) {
    return ShapeError(std::string(op_name(kind)) + ": unsupported shape " + Tensor::shape_str(a.shape));
  }
  static ShapeError shape_error(OpKind kind, const Tensor& a, const Tensor& b) {
    return ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + Tensor::shape_str(a.shape) +
                      " and " + Tensor::shape_str(b.shape));
  }

  static void expect_arity(OpKind kind, const std::vector<NodeId>& in, std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  }

  Tensor& grad_buf(NodeId id) {
    if (grads_[id].data.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
    return grads_[id];
  }

  bool wants_grad(NodeId id) const { return nodes_[id].requires_grad; }

  void dispatch_backward(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& gu = grads_[id];
    switch (n.kind) {
      case OpKind::kConstant:
      case OpKind::kParameter:
        break;
      case OpKind::kAdd: {
        for (int s = 0; s < 2; ++s) {
          NodeId in = n.inputs[s];
          if (!wants_grad(in)) continue;
          Tensor& g = grad_buf(in);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i];
        }
        break;
      }
      case OpKind::kSub: {
        if (wants_grad(n.inputs[0])) {
          Tensor& g = grad_buf(n.inputs[0]);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& g = grad_buf(n.inputs[1]);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] -= gu.data[i];
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        if (wants_grad(n.inputs[0])) {
          Tensor& g = grad_buf(n.inputs[0]);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i] * B.data[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& g = grad_buf(n.inputs[1]);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i] * A.data[i];
        }
        break;
      }
      case OpKind::kMatMul:
        backward_matmul(n, gu);
        break;
      case OpKind::kTanh: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < gu.numel(); ++i) {
          double y = n.value.data[i];
          g.data[i] += gu.data[i] * (1.0 - y * y);
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < gu.numel(); ++i) {
          double y = n.value.data[i];
          g.data[i] += gu.data[i] * y * (1.0 - y);
        }
        break;
      }
      case OpKind::kRelu: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < gu.numel(); ++i) {
          if (X.data[i] > 0) g.data[i] += gu.data[i];
        }
        break;
      }
      case OpKind::kLog: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < gu.numel(); ++i) {
          if (X.data[i] > detail::kLogFloor) g.data[i] += gu.data[i] / X.data[i];
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        double dot = 0;
        for (std::size_t i = 0; i < gu.numel(); ++i) dot += gu.data[i] * n.value.data[i];
        for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += n.value.data[i] * (gu.data[i] - dot);
        break;
      }
      case OpKind::kConcat: {
        std::size_t off = 0;
        for (NodeId in : n.inputs) {
          std::size_t len = nodes_[in].value.numel();
          if (wants_grad(in)) {
            Tensor& g = grad_buf(in);
            for (std::size_t i = 0; i < len; ++i) g.data[i] += gu.data[off + i];
          }
          off += len;
        }
        break;
      }
      case OpKind::kStackRows: {
        std::size_t ncols = n.value.cols();
        for (std::size_t r = 0; r < n.inputs.size(); ++r) {
          NodeId in = n.inputs[r];
          if (!wants_grad(in)) continue;
          Tensor& g = grad_buf(in);
          for (std::size_t j = 0; j < ncols; ++j) g.data[j] += gu.at(r, j);
        }
        break;
      }
      case OpKind::kRowSelect: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        std::size_t row = n.idata[0];
        std::size_t ncols = nodes_[n.inputs[0]].value.cols();
        for (std::size_t j = 0; j < ncols; ++j) g.data[row * ncols + j] += gu.data[j];
        break;
      }
      case OpKind::kSelectIndex: {
        if (!wants_grad(n.inputs[0])) break;
        grad_buf(n.inputs[0]).data[n.idata[0]] += gu.data[0];
        break;
      }
      case OpKind::kSumAll: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        for (double& v : g.data) v += gu.data[0];
        break;
      }
      case OpKind::kSumAxis: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        std::size_t axis = n.idata[0];
        for (std::size_t i = 0; i < X.rows(); ++i)
          for (std::size_t j = 0; j < X.cols(); ++j) g.data[i * X.cols() + j] += gu.data[axis == 0 ? j : i];
        break;
      }
      case OpKind::kMaxAxis: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        std::size_t axis = n.idata[0];
        if (X.rank() == 1) {
          g.data[n.idata[1]] += gu.data[0];
        } else {
          for (std::size_t o = 0; o + 1 < n.idata.size(); ++o) {
            std::size_t arg = n.idata[o + 1];
            std::size_t r = axis == 0 ? arg : o;
            std::size_t c = axis == 0 ? o : arg;
            g.data[r * X.cols() + c] += gu.data[o];
          }
        }
        break;
      }
      case OpKind::kEmbedding: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& E = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t t = 0; t < n.idata.size(); ++t)
          for (std::size_t j = 0; j < E.cols(); ++j) g.data[n.idata[t] * E.cols() + j] += gu.at(t, j);
        break;
      }
      case OpKind::kBagEmbedding: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& E = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        std::size_t len = n.idata[0];
        std::size_t buckets_base = 2 + len;
        for (std::size_t t = 0; t < len; ++t) {
          std::size_t lo = n.idata[1 + t];
          std::size_t hi = n.idata[2 + t];
          for (std::size_t e = lo; e < hi; ++e) {
            std::size_t bucket = n.idata[buckets_base + e];
            double count = n.ddata[e];
            for (std::size_t j = 0; j < E.cols(); ++j) g.data[bucket * E.cols() + j] += count * gu.at(t, j);
          }
        }
        break;
      }
      case OpKind::kCosine: {
        const Tensor& U = nodes_[n.inputs[0]].value;
        const Tensor& V = nodes_[n.inputs[1]].value;
        double dot = n.ddata[0], nu = n.ddata[1], nv = n.ddata[2];
        double c = n.value.data[0];
        double g0 = gu.data[0];
        if (wants_grad(n.inputs[0])) {
          Tensor& g = grad_buf(n.inputs[0]);
          for (std::size_t i = 0; i < U.numel(); ++i)
            g.data[i] += g0 * (V.data[i] / (nu * nv) - c * U.data[i] / (nu * nu));
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& g = grad_buf(n.inputs[1]);
          for (std::size_t i = 0; i < V.numel(); ++i)
            g.data[i] += g0 * (U.data[i] / (nu * nv) - c * V.data[i] / (nv * nv));
        }
        (void)dot;
        break;
      }
      case OpKind::kUnfold: {
        if (!wants_grad(n.inputs[0])) break;
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& g = grad_buf(n.inputs[0]);
        std::size_t width = n.idata[0];
        std::size_t cols = X.cols();
        for (std::size_t p = 0; p < n.value.rows(); ++p)
          for (std::size_t y = 0; y < width; ++y)
            for (std::size_t j = 0; j < cols; ++j) g.data[(p + y) * cols + j] += gu.at(p, y * cols + j);
        break;
      }
      case OpKind::kAddRowVec: {
        if (wants_grad(n.inputs[0])) {
          Tensor& g = grad_buf(n.inputs[0]);
          for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& g = grad_buf(n.inputs[1]);
          for (std::size_t i = 0; i < gu.rows(); ++i)
            for (std::size_t j = 0; j < gu.cols(); ++j) g.data[j] += gu.at(i, j);
        }
        break;
      }
      case OpKind::kMulRowVec: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& Vv = nodes_[n.inputs[1]].value;
        if (wants_grad(n.inputs[0])) {
          Tensor& g = grad_buf(n.inputs[0]);
          for (std::size_t i = 0; i < A.rows(); ++i)
            for (std::size_t j = 0; j < A.cols(); ++j) g.data[i * A.cols() + j] += gu.at(i, j) * Vv.at(j);
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& g = grad_buf(n.inputs[1]);
          for (std::size_t i = 0; i < A.rows(); ++i)
            for (std::size_t j = 0; j < A.cols(); ++j) g.data[j] += gu.at(i, j) * A.at(i, j);
        }
        break;
      }
      case OpKind::kScale: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i] * n.ddata[0];
        break;
      }
      case OpKind::kGradReverse: {
        if (!wants_grad(n.inputs[0])) break;
        Tensor& g = grad_buf(n.inputs[0]);
        double lambda = n.ddata[0];
        for (std::size_t i = 0; i < gu.numel(); ++i) g.data[i] += gu.data[i] * -lambda;
        break;
      }
    }
  }

  void backward_matmul(const Node& n, const Tensor& gu) {
    const Tensor& A = nodes_[n.inputs[0]].value;
    const Tensor& B = nodes_[n.inputs[1]].value;
    bool ga = wants_grad(n.inputs[0]);
    bool gb = wants_grad(n.inputs[1]);
    if (A.rank() == 2 && B.rank() == 2) {
      if (ga) {
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < B.cols(); ++j) {
            double u = gu.at(i, j);
            if (u == 0.0) continue;
            for (std::size_t k = 0; k < A.cols(); ++k) g.data[i * A.cols() + k] += u * B.at(k, j);
          }
      }
      if (gb) {
        Tensor& g = grad_buf(n.inputs[1]);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) {
            double av = A.at(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < B.cols(); ++j) g.data[k * B.cols() + j] += av * gu.at(i, j);
          }
      }
    } else if (A.rank() == 2 && B.rank() == 1) {
      if (ga) {
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) g.data[i * A.cols() + k] += gu.data[i] * B.data[k];
      }
      if (gb) {
        Tensor& g = grad_buf(n.inputs[1]);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) g.data[k] += gu.data[i] * A.at(i, k);
      }
    } else {  // [k] x [k, n]
      if (ga) {
        Tensor& g = grad_buf(n.inputs[0]);
        for (std::size_t k = 0; k < B.rows(); ++k)
          for (std::size_t j = 0; j < B.cols(); ++j) g.data[k] += gu.data[j] * B.at(k, j);
      }
      if (gb) {
        Tensor& g = grad_buf(n.inputs[1]);
        for (std::size_t k = 0; k < B.rows(); ++k) {
          double av = A.data[k];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < B.cols(); ++j) g.data[k * B.cols() + j] += av * gu.data[j];
        }
      }
    }
  }
};

/// Central-difference gradient verifier. `build` must construct a scalar
/// loss from parameters registered through Graph::parameter, deterministic
/// in (graph, seed). Returns the max over parameter entries of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class BuildFn>
double grad_check(BuildFn&& build, double eps, std::uint64_t seed) {
  Graph g;
  NodeId loss = build(g, seed);
  double lv = g.scalar_value(loss);
  if (!std::isfinite(lv)) throw NumericError("grad_check: loss is not finite");
  std::map<NodeId, Tensor> grads = g.backward(loss);
  std::vector<NodeId> pids = g.parameter_ids();

  std::vector<std::vector<double>> base;
  base.reserve(pids.size());
  for (NodeId id : pids) base.push_back(g.value(id).data);

  auto eval_at = [&](const std::vector<std::vector<double>>& vals) {
    Graph g2;
    g2.set_parameter_overrides(vals);
    NodeId l = build(g2, seed);
    double v = g2.scalar_value(l);
    if (!std::isfinite(v)) throw NumericError("grad_check: perturbed loss is not finite");
    return v;
  };

  double max_rel = 0.0;
  for (std::size_t p = 0; p < pids.size(); ++p) {
    const Tensor& analytic = grads.at(pids[p]);
    for (std::size_t j = 0; j < base[p].size(); ++j) {
      std::vector<std::vector<double>> vals = base;
      vals[p][j] = base[p][j] + eps;
      double up = eval_at(vals);
      vals[p][j] = base[p][j] - eps;
      double dn = eval_at(vals);
      double numeric = (up - dn) / (2.0 * eps);
      double ana = analytic.data[j];
      double rel = std::abs(ana - numeric) / std::max({std::abs(ana), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace advrank
