#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spikediff/graph.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff {

/// Named tensors of a model in insertion order. Non-trainable entries hold
/// buffers such as batch-norm running statistics.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor value, bool trainable = true);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool trainable(const std::string& name) const;

  const std::vector<std::string>& names() const noexcept { return order_; }
  std::vector<std::string> trainable_names() const;

  /// Scalar count over trainable entries.
  std::size_t trainable_size() const;

  bool operator==(const ParameterStore& other) const;

 private:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

/// Lazily lifts store entries into graph leaves, once per name.
class ParamBinding {
 public:
  ParamBinding(Graph<float>& graph, ParameterStore& store, bool requires_grad)
      : graph_(&graph), store_(&store), requires_grad_(requires_grad) {}

  Var<float> operator()(const std::string& name);

  Graph<float>& graph() const noexcept { return *graph_; }
  ParameterStore& store() const noexcept { return *store_; }
  bool requires_grad() const noexcept { return requires_grad_; }

  /// Trainable entries that took part in the forward pass, in binding order.
  const std::vector<std::pair<std::string, Var<float>>>& bound() const noexcept { return bound_; }

 private:
  Graph<float>* graph_;
  ParameterStore* store_;
  bool requires_grad_;
  std::unordered_map<std::string, Var<float>> vars_;
  std::vector<std::pair<std::string, Var<float>>> bound_;
};

/// Collects the spike tensors entering each synaptic layer during a forward.
class SpikeRecorder {
 public:
  struct Site {
    double ones = 0.0;
    double elements = 0.0;
    double rate() const { return elements > 0.0 ? ones / elements : 0.0; }
  };

  void record(const std::string& site, const Tensor& spikes);

  const std::map<std::string, Site>& sites() const noexcept { return sites_; }
  double total_spikes() const;
  /// False once any recorded element was neither 0 nor 1.
  bool all_binary() const noexcept { return all_binary_; }

 private:
  std::map<std::string, Site> sites_;
  bool all_binary_ = true;
};

}  // namespace spikediff
