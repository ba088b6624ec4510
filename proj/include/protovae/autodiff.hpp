#pragma once

// Tape-based reverse-mode differentiation. A Graph records every value
// produced during one forward pass together with a closure that propagates
// the output gradient into its parents. Parameters enter the tape as leaves
// and receive their gradient when Graph::backward finishes.

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "protovae/tensor.hpp"

namespace protovae::ad {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Ordered collection of named parameters. Order is the serialization order.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);
  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  const Parameter<T>* find(std::string_view name) const;

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t num_values() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int axis) const { return value().dim(axis); }
};

template <typename T>
class Graph {
 public:
  // Called with the id of the node being differentiated; reads grad(self) and
  // accumulates into the parents that require a gradient.
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  // Trainable leaf: its gradient is added to p.grad by backward().
  Var<T> param(Parameter<T>& p);
  // Parameter used as a constant (no gradient recorded).
  Var<T> frozen(const Parameter<T>& p) { return constant(p.value); }

  // Records an op output. The backward closure is kept only when some parent
  // requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward backward);

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  // Seeds d(root)/d(root) = 1 for a single-element root and runs the tape backwards.
  void backward(Var<T> root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace protovae::ad
