#include "raven/network.hpp"

#include <cmath>
#include <stdexcept>

namespace raven {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::dropout: return "dropout";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(const std::string& net, std::size_t node, const LayerSpec& l, const std::string& why) {
  throw std::invalid_argument(net + " node " + std::to_string(node) + " (" + to_string(l.kind) + "): " + why);
}

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, RngStream& rng) {
  Tensor<T> w(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

}  // namespace

template <typename T>
Network<T>::Network(std::string name, Shape input_shape, std::vector<LayerSpec> layers, RngStream init_rng)
    : name_(std::move(name)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  Shape cur = input_shape_;
  slots_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string prefix = name_ + "." + std::to_string(i);
    switch (l.kind) {
      case LayerKind::dense: {
        if (cur.size() != 1) shape_error(name_, i, l, "expects flat input, got " + shape_str(cur));
        if (l.units == 0) shape_error(name_, i, l, "zero units");
        slots_[i].weight = params_.size();
        params_.emplace_back(prefix + ".weight", uniform_init<T>({cur[0], l.units}, cur[0], init_rng));
        slots_[i].bias = params_.size();
        params_.emplace_back(prefix + ".bias", Tensor<T>({l.units}));
        cur = {l.units};
        break;
      }
      case LayerKind::conv2d:
      case LayerKind::conv_transpose2d: {
        if (cur.size() != 3) shape_error(name_, i, l, "expects [C,H,W] input, got " + shape_str(cur));
        const auto C = cur[0];
        const auto k = static_cast<std::size_t>(l.kernel);
        const long H = static_cast<long>(cur[1]), W = static_cast<long>(cur[2]);
        long Ho = 0, Wo = 0;
        if (l.kind == LayerKind::conv2d) {
          if (H + 2 * l.pad < l.kernel || W + 2 * l.pad < l.kernel) shape_error(name_, i, l, "input too small");
          Ho = (H + 2 * l.pad - l.kernel) / l.stride + 1;
          Wo = (W + 2 * l.pad - l.kernel) / l.stride + 1;
          slots_[i].weight = params_.size();
          params_.emplace_back(prefix + ".weight", uniform_init<T>({l.units, C, k, k}, C * k * k, init_rng));
        } else {
          Ho = (H - 1) * l.stride - 2 * l.pad + l.kernel;
          Wo = (W - 1) * l.stride - 2 * l.pad + l.kernel;
          slots_[i].weight = params_.size();
          params_.emplace_back(prefix + ".weight", uniform_init<T>({C, l.units, k, k}, C * k * k, init_rng));
        }
        if (Ho <= 0 || Wo <= 0) shape_error(name_, i, l, "empty output");
        slots_[i].bias = params_.size();
        params_.emplace_back(prefix + ".bias", Tensor<T>({l.units}));
        cur = {l.units, static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)};
        break;
      }
      case LayerKind::reshape:
        if (shape_numel(l.shape) != shape_numel(cur))
          shape_error(name_, i, l, "cannot view " + shape_str(cur) + " as " + shape_str(l.shape));
        cur = l.shape;
        break;
      case LayerKind::dropout:
        if (l.dropout < 0.0 || l.dropout >= 1.0) shape_error(name_, i, l, "dropout p must be in [0,1)");
        break;
      default: break;
    }
  }
  output_shape_ = cur;
}

template <typename T>
Var Network<T>::forward(Tape<T>& tape, Var input, Mode mode, RngStream* rng) const {
  const auto& in = tape.value(input).shape;
  if (in.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), in.begin() + 1))
    throw std::invalid_argument(name_ + " node input: expected [B," + shape_str(input_shape_).substr(1) + " got " +
                                shape_str(in));
  const std::size_t batch = in[0];
  Var x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::dense:
        x = ops::linear(tape, x, tape.param(params_[slots_[i].weight]), tape.param(params_[slots_[i].bias]));
        break;
      case LayerKind::conv2d:
        x = ops::conv2d(tape, x, tape.param(params_[slots_[i].weight]), tape.param(params_[slots_[i].bias]), l.stride,
                        l.pad);
        break;
      case LayerKind::conv_transpose2d:
        x = ops::conv_transpose2d(tape, x, tape.param(params_[slots_[i].weight]),
                                  tape.param(params_[slots_[i].bias]), l.stride, l.pad);
        break;
      case LayerKind::relu: x = ops::relu(tape, x); break;
      case LayerKind::leaky_relu: x = ops::leaky_relu(tape, x, static_cast<T>(l.slope)); break;
      case LayerKind::sigmoid: x = ops::sigmoid(tape, x); break;
      case LayerKind::dropout: x = ops::dropout(tape, x, l.dropout, mode, rng); break;
      case LayerKind::reshape: {
        Shape s{batch};
        s.insert(s.end(), l.shape.begin(), l.shape.end());
        x = ops::reshape(tape, x, std::move(s));
        break;
      }
    }
  }
  return x;
}

template <typename T>
Parameter<T>* Network<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template class Network<float>;
template class Network<double>;

}  // namespace raven
