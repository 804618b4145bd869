#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "spikediff/tensor.hpp"

namespace spikediff {

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid as long as the
/// graph that produced it is alive.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gradients of a scalar loss with respect to the graph's differentiable leaves.
template <typename T>
class Gradients {
 public:
  bool contains(Var<T> v) const { return grads_.count(v.id()) != 0; }

  /// Gradient for `v`; a leaf the loss does not depend on yields zeros.
  BasicTensor<T> of(Var<T> v) const;

  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Graph<T>;
  std::unordered_map<std::size_t, BasicTensor<T>> grads_;
  std::unordered_map<std::size_t, Shape> leaf_shapes_;
};

/// Define-by-run tape. Nodes are appended in evaluation order, so insertion
/// order is a topological order and the reverse sweep needs no sorting.
template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;
  /// Receives the node's output gradient and accumulates (+=) into the
  /// gradient buffers of its inputs. Entries for inputs that do not need a
  /// gradient are null.
  using BackwardFn = std::function<void(const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf node; differentiable when `value.requires_grad()` is set.
  Var<T> input(TensorT value);
  /// Leaf node that is never differentiated.
  Var<T> constant(TensorT value);

  /// Records an operation. `backward` is dropped when no input needs a gradient.
  Var<T> record(TensorT value, std::vector<Var<T>> inputs, BackwardFn backward);

  const TensorT& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Reverse sweep from a single-element `loss`. Unless `retain_graph` is set,
  /// the graph is marked consumed and a second sweep is rejected.
  Gradients<T> backward(Var<T> loss, bool retain_graph = false);

 private:
  struct Node {
    TensorT value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  void check_owned(Var<T> v) const;

  // deque keeps references to node values stable while the tape grows.
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  if (!graph_) throw GraphError("value() on an empty Var");
  return graph_->value(*this);
}

}  // namespace spikediff
