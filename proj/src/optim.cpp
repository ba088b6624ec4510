#include "protovae/optim.hpp"

#include <cmath>

namespace protovae {

template <typename T>
Adam<T>::Adam(const AdamConfig& config, std::vector<ad::ParamSet<T>*> sets) : config_(config), sets_(std::move(sets)) {
  for (auto* p : parameters()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
std::vector<ad::Parameter<T>*> Adam<T>::parameters() const {
  std::vector<ad::Parameter<T>*> out;
  for (auto* set : sets_)
    for (auto& p : *set) out.push_back(&p);
  return out;
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(config_.lr);
  const T eps = static_cast<T>(config_.eps);
  const auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.empty()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace protovae
