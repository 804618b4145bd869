#include "spikediff/graph.hpp"

#include <optional>

namespace spikediff {

template <typename T>
BasicTensor<T> Gradients<T>::of(Var<T> v) const {
  auto it = grads_.find(v.id());
  if (it != grads_.end()) return it->second;
  auto shape = leaf_shapes_.find(v.id());
  if (shape == leaf_shapes_.end()) {
    throw GraphError("no gradient recorded for node " + std::to_string(v.id()));
  }
  return BasicTensor<T>(shape->second);
}

template <typename T>
void Graph<T>::check_owned(Var<T> v) const {
  if (v.graph() != this) throw GraphError("Var belongs to a different graph");
  if (v.id() >= nodes_.size()) throw GraphError("Var id out of range");
}

template <typename T>
Var<T> Graph<T>::input(TensorT value) {
  Node node;
  node.requires_grad = value.requires_grad();
  node.leaf = true;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(TensorT value) {
  value.set_requires_grad(false);
  return input(std::move(value));
}

template <typename T>
Var<T> Graph<T>::record(TensorT value, std::vector<Var<T>> inputs, BackwardFn backward) {
  if (consumed_) throw GraphError("graph already consumed by backward()");
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const BasicTensor<T>& Graph<T>::value(Var<T> v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

template <typename T>
bool Graph<T>::requires_grad(Var<T> v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

template <typename T>
Gradients<T> Graph<T>::backward(Var<T> loss, bool retain_graph) {
  check_owned(loss);
  if (consumed_) throw GraphError("graph already consumed by backward()");
  const auto& loss_value = nodes_[loss.id()].value;
  if (loss_value.size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + shape_str(loss_value.shape()));
  }

  Gradients<T> result;
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    if (nodes_[i].leaf && nodes_[i].requires_grad) {
      result.leaf_shapes_.emplace(i, nodes_[i].value.shape());
    }
  }

  std::vector<std::optional<TensorT>> grads(loss.id() + 1);
  grads[loss.id()] = TensorT(loss_value.shape(), T{1});

  std::vector<TensorT*> grad_in;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!grads[k] || !node.requires_grad) continue;
    if (node.leaf) {
      result.grads_.emplace(k, std::move(*grads[k]));
      grads[k].reset();
      continue;
    }
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const std::size_t in = node.inputs[j];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = TensorT(nodes_[in].value.shape());
      grad_in[j] = &*grads[in];
    }
    // Fan-out: an input listed twice receives both contributions through the
    // same accumulating buffer.
    node.backward(*grads[k], grad_in);
    grads[k].reset();
  }

  if (!retain_graph) consumed_ = true;
  return result;
}

template class Gradients<float>;
template class Gradients<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace spikediff
