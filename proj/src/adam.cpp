#include "raven/adam.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace raven {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, double learning_rate) {
  std::set<std::string> names;
  for (const auto* p : params) {
    if (!names.insert(p->name).second) throw std::invalid_argument("adam_step: duplicate parameter '" + p->name + "'");
    if (p->grad.shape != p->value.shape)
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + p->name + "'");
    for (const auto g : p->grad.data)
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p->name + "'");
  }
  const auto& c = state.config;
  const std::uint64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (auto* p : params) {
    auto& m = state.first_moment[p->name];
    auto& v = state.second_moment[p->name];
    if (m.shape != p->value.shape) m = Tensor<T>(p->value.shape);
    if (v.shape != p->value.shape) v = Tensor<T>(p->value.shape);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
      p->value[i] = static_cast<T>(p->value[i] - update);
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&, double);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&, double);

}  // namespace raven
