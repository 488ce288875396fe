#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advrank/graph.hpp"
#include "advrank/rng.hpp"
#include "advrank/tensor.hpp"

namespace advrank {

/// Named, ordered collection of trainable tensors. Registration order is
/// the canonical order for optimizer state and checkpoint layout.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value) {
    if (index_.count(name)) throw Error("params: duplicate name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
  }

  static double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  }

  /// Weight matrix [fan_in, fan_out], uniform in ±sqrt(6/(fan_in+fan_out)).
  void add_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    add(std::move(name), Tensor::uniform({fan_in, fan_out}, glorot_bound(fan_in, fan_out), rng));
  }

  void add_bias(std::string name, std::size_t n) { add(std::move(name), Tensor::zeros({n})); }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& at(const std::string& name) { return entries_[index_of(name)].value; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("params: unknown name '" + name + "'");
    return it->second;
  }
};

/// Parameter tensors registered into one graph, either as trainable leaves
/// or as constants (for the regime steps that hold one side fixed).
struct BoundParams {
  std::map<std::string, NodeId> ids;
  std::vector<NodeId> order;  // ParamSet registration order
  bool trainable = false;

  NodeId at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw Error("bound params: unknown name '" + name + "'");
    return it->second;
  }
};

inline BoundParams bind(Graph& g, const ParamSet& params, bool trainable) {
  BoundParams bp;
  bp.trainable = trainable;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamSet::Entry& e = params.entry(i);
    NodeId id = trainable ? g.parameter(e.value) : g.constant(e.value);
    bp.ids.emplace(e.name, id);
    bp.order.push_back(id);
  }
  return bp;
}

/// Gradients for a bound ParamSet in registration order, pulled from a
/// backward() table. Requires the binding to be trainable.
inline std::vector<Tensor> collect_grads(const std::map<NodeId, Tensor>& table, const BoundParams& bp) {
  if (!bp.trainable) throw Error("collect_grads: params were bound as constants");
  std::vector<Tensor> grads;
  grads.reserve(bp.order.size());
  for (NodeId id : bp.order) grads.push_back(table.at(id));
  return grads;
}

}  // namespace advrank
