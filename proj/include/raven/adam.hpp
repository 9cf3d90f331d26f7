#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "raven/autodiff.hpp"

namespace raven {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments are keyed by parameter name, so the update does not depend on the
// order in which parameters are passed.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

// One bias-corrected ADAM update:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Throws (before touching any parameter) if a gradient is non-finite.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, double learning_rate);

extern template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&, double);
extern template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&, double);

}  // namespace raven
