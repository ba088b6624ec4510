#pragma once

#include <cstdint>
#include <vector>

#include "protovae/autodiff.hpp"

namespace protovae {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one or more parameter sets; moments are kept in parameter order.
template <typename T>
class Adam {
 public:
  Adam(const AdamConfig& config, std::vector<ad::ParamSet<T>*> sets);

  // Applies one update from the accumulated gradients.
  void step();

  const AdamConfig& config() const { return config_; }
  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  // Moments flattened across all parameters, in parameter order.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  std::vector<ad::Parameter<T>*> parameters() const;

 private:
  AdamConfig config_;
  std::vector<ad::ParamSet<T>*> sets_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t t_ = 0;
};

}  // namespace protovae
