#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "protovae/autodiff.hpp"
#include "protovae/ops.hpp"

namespace protovae::nn {

using InitRng = std::mt19937_64;

// He-uniform weights, zero biases. Parameters are named "<prefix>.w" and "<prefix>.b".
template <typename T>
void add_dense(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, InitRng& rng,
               bool zero_weights = false);
template <typename T>
void add_conv(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, int kernel, InitRng& rng);
template <typename T>
void add_conv_transpose(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, int kernel,
                        int stride, InitRng& rng);

// Puts a parameter set on a graph, either as trainable leaves or as constants.
template <typename T>
class Binder {
 public:
  Binder(ad::Graph<T>& g, ad::ParamSet<T>& ps) : graph_(g), params_(ps), mutable_(&ps) {}
  Binder(ad::Graph<T>& g, const ad::ParamSet<T>& ps) : graph_(g), params_(ps) {}

  ad::Var<T> operator()(std::string_view name) {
    return mutable_ != nullptr ? graph_.param(mutable_->at(name)) : graph_.frozen(params_.at(name));
  }
  ad::Graph<T>& graph() { return graph_; }

  ad::Var<T> dense(const std::string& prefix, ad::Var<T> x) {
    return ad::linear(x, (*this)(prefix + ".w"), (*this)(prefix + ".b"));
  }
  ad::Var<T> conv(const std::string& prefix, ad::Var<T> x, int stride, int pad) {
    return ad::conv2d(x, (*this)(prefix + ".w"), (*this)(prefix + ".b"), stride, pad);
  }
  ad::Var<T> conv_transpose(const std::string& prefix, ad::Var<T> x, int stride, int pad) {
    return ad::conv_transpose2d(x, (*this)(prefix + ".w"), (*this)(prefix + ".b"), stride, pad);
  }

 private:
  ad::Graph<T>& graph_;
  const ad::ParamSet<T>& params_;
  ad::ParamSet<T>* mutable_ = nullptr;
};

}  // namespace protovae::nn
