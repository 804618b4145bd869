#include "spikediff/parameters.hpp"

#include <stdexcept>

namespace spikediff {

Tensor& ParameterStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  order_.push_back(name);
  auto [it, _] = entries_.emplace(name, Entry{std::move(value), trainable});
  return it->second.value;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

bool ParameterStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.trainable;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& n : order_) {
    if (entries_.at(n).trainable) out.push_back(n);
  }
  return out;
}

std::size_t ParameterStore::trainable_size() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (order_ != other.order_) return false;
  for (const auto& n : order_) {
    const auto& a = entries_.at(n);
    const auto& b = other.entries_.at(n);
    if (a.trainable != b.trainable || !(a.value == b.value)) return false;
  }
  return true;
}

Var<float> ParamBinding::operator()(const std::string& name) {
  if (auto it = vars_.find(name); it != vars_.end()) return it->second;
  Tensor value = store_->at(name);
  const bool grad = requires_grad_ && store_->trainable(name);
  value.set_requires_grad(grad);
  Var<float> v = graph_->input(std::move(value));
  vars_.emplace(name, v);
  if (grad) bound_.emplace_back(name, v);
  return v;
}

void SpikeRecorder::record(const std::string& site, const Tensor& spikes) {
  auto& s = sites_[site];
  double ones = 0.0;
  for (float v : spikes.data()) {
    if (v == 1.0f) {
      ones += 1.0;
    } else if (v != 0.0f) {
      all_binary_ = false;
    }
  }
  s.ones += ones;
  s.elements += static_cast<double>(spikes.size());
}

double SpikeRecorder::total_spikes() const {
  double n = 0.0;
  for (const auto& [_, s] : sites_) n += s.ones;
  return n;
}

}  // namespace spikediff
