#include "protovae/autodiff.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace protovae {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace ad {

template <typename T>
Parameter<T>& ParamSet<T>::add(std::string name, Tensor<T> value) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name " + name);
  params_.push_back(Parameter<T>{std::move(name), std::move(value), Tensor<T>()});
  return params_.back();
}

template <typename T>
const Parameter<T>* ParamSet<T>::find(std::string_view name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
Parameter<T>& ParamSet<T>::at(std::string_view name) {
  return const_cast<Parameter<T>&>(std::as_const(*this).at(name));
}

template <typename T>
const Parameter<T>& ParamSet<T>::at(std::string_view name) const {
  const auto* p = find(name);
  if (p == nullptr) throw std::out_of_range("no parameter named " + std::string(name));
  return *p;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.grad = Tensor<T>(p.value.shape());
}

template <typename T>
std::size_t ParamSet<T>::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
  return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](const Var<T>& v) {
    if (v.graph != this) throw std::logic_error("variable from another graph");
    return nodes_[v.id].requires_grad;
  });
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward root must be a scalar, got shape " + shape_str(root.shape()));
  }
  grad(root.id)[0] = T(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Parameter<T>& p = *n.param;
      if (p.grad.empty()) p.grad = Tensor<T>(p.value.shape());
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace ad
}  // namespace protovae
