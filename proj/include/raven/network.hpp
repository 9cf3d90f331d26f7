#pragma once

#include <string>
#include <vector>

#include "raven/autodiff.hpp"

namespace raven {

enum class LayerKind { dense, conv2d, conv_transpose2d, relu, leaky_relu, sigmoid, dropout, reshape };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;  // dense outputs / conv output channels
  int kernel = 4;
  int stride = 2;
  int pad = 1;
  double dropout = 0.5;
  double slope = 0.01;
  Shape shape;  // reshape target, batch dimension excluded

  static LayerSpec make(LayerKind kind, std::size_t units = 0, int k = 4, int s = 2, int p = 1) {
    LayerSpec l;
    l.kind = kind;
    l.units = units;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    return l;
  }

  static LayerSpec dense(std::size_t units) { return make(LayerKind::dense, units); }
  static LayerSpec conv(std::size_t channels, int k = 4, int s = 2, int p = 1) {
    return make(LayerKind::conv2d, channels, k, s, p);
  }
  static LayerSpec upconv(std::size_t channels, int k = 4, int s = 2, int p = 1) {
    return make(LayerKind::conv_transpose2d, channels, k, s, p);
  }
  static LayerSpec relu() { return make(LayerKind::relu); }
  static LayerSpec leaky(double slope = 0.01) {
    LayerSpec l = make(LayerKind::leaky_relu);
    l.slope = slope;
    return l;
  }
  static LayerSpec sigmoid() { return make(LayerKind::sigmoid); }
  static LayerSpec drop(double p) {
    LayerSpec l = make(LayerKind::dropout);
    l.dropout = p;
    return l;
  }
  static LayerSpec reshape(Shape s) {
    LayerSpec l = make(LayerKind::reshape);
    l.shape = std::move(s);
    return l;
  }
};

std::string to_string(LayerKind kind);

// A fixed feed-forward graph. Layer shapes are validated when the network is
// built; parameters are owned here and bound onto a tape at each forward pass.
// Weights are initialised U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(std::string name, Shape input_shape, std::vector<LayerSpec> layers, RngStream init_rng);

  // `input` must be [B, input_shape...]. rng is required only for train-mode dropout.
  Var forward(Tape<T>& tape, Var input, Mode mode, RngStream* rng = nullptr) const;

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>* find(const std::string& name);
  void zero_grad();
  std::size_t parameter_count() const;

 private:
  struct Slot {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  std::string name_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Slot> slots_;
  // Mutable so that a const network can still bind its parameters on a tape.
  mutable std::vector<Parameter<T>> params_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace raven
