#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "raven/rng.hpp"
#include "raven/tensor.hpp"

namespace raven {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// Reverse-mode tape. Every op appends a node holding its output value and a
// closure that pushes the node's gradient to its inputs. Nodes are appended in
// execution order, so the tape is already topologically sorted.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  // Leaf without gradient.
  Var constant(Tensor<T> value);
  // Leaf whose gradient is tracked and readable via grad().
  Var input(Tensor<T> value);
  // Leaf bound to a parameter; backward() adds into param.grad. The parameter
  // must outlive the tape.
  Var param(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  // Gradient of v after backward(); zeros if nothing flowed into v.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const Shape& shape(Var v) const { return value(v).shape; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1; `out` must hold one element.
  void backward(Var out);
  void backward(Var out, const Tensor<T>& seed);

  // Op plumbing.
  Var push(Tensor<T> value, std::initializer_list<Var> inputs, Backward fn);
  Var push(Tensor<T> value, const std::vector<Var>& inputs, Backward fn);
  Tensor<T>& grad_ref(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor<T>* grad_if_needed(Var v) { return node(v).requires_grad ? &grad_ref(v.id) : nullptr; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
    const Tensor<T>& value() const { return external ? *external : owned; }
  };
  const Node& node(Var v) const;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Ops. Shapes are validated eagerly and mismatches throw std::invalid_argument.
namespace ops {

// x[B,in] * w[in,out] + b[out]
template <typename T> Var linear(Tape<T>& t, Var x, Var w, Var b);
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
// x[B,C,H,W], w[O,C,k,k], b[O] -> [B,O,Ho,Wo], Ho = (H + 2 pad - k) / stride + 1
template <typename T> Var conv2d(Tape<T>& t, Var x, Var w, Var b, int stride, int pad);
// x[B,C,H,W], w[C,O,k,k], b[O] -> [B,O,Ho,Wo], Ho = (H - 1) stride - 2 pad + k
template <typename T> Var conv_transpose2d(Tape<T>& t, Var x, Var w, Var b, int stride, int pad);

template <typename T> Var relu(Tape<T>& t, Var x);
template <typename T> Var leaky_relu(Tape<T>& t, Var x, T slope);
template <typename T> Var sigmoid(Tape<T>& t, Var x);
template <typename T> Var exp(Tape<T>& t, Var x);
template <typename T> Var square(Tape<T>& t, Var x);
// Inverted dropout. Identity in eval mode or when p == 0.
template <typename T> Var dropout(Tape<T>& t, Var x, double p, Mode mode, RngStream* rng);

template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);
template <typename T> Var scale(Tape<T>& t, Var x, T c);
template <typename T> Var reshape(Tape<T>& t, Var x, Shape shape);

// mu + exp(logvar / 2) * noise; noise is a constant.
template <typename T> Var reparameterize(Tape<T>& t, Var mu, Var logvar, const Tensor<T>& noise);
// Elementwise KL(N(mu, exp(logvar)) || N(0, 1)).
template <typename T> Var gaussian_kl(Tape<T>& t, Var mu, Var logvar);
// Per-row sum of Bernoulli log-likelihoods log p(target | sigmoid(logits)); shape [B].
template <typename T> Var bernoulli_log_likelihood(Tape<T>& t, Var logits, const Tensor<T>& target);
// Per-row -log softmax(logits)[label]; shape [B].
template <typename T> Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels);

template <typename T> Var sum(Tape<T>& t, Var x);
template <typename T> Var mean(Tape<T>& t, Var x);
// [B,D] -> [D]
template <typename T> Var sum_rows(Tape<T>& t, Var x);

template <typename T> Var slice_cols(Tape<T>& t, Var x, std::size_t begin, std::size_t end);
template <typename T> Var concat_cols(Tape<T>& t, const std::vector<Var>& parts);
// Stacks [R_i, D] blocks vertically.
template <typename T> Var concat_rows(Tape<T>& t, const std::vector<Var>& parts);
// out[i] = x[indices[i]] (rows); repeated indices accumulate in backward.
template <typename T> Var gather_rows(Tape<T>& t, Var x, std::vector<std::size_t> indices);

// x[R*G, D] -> [R, D]: population standard deviation over each group of G
// consecutive rows. Exactly zero on constant groups (subgradient 0 there).
template <typename T> Var group_std(Tape<T>& t, Var x, std::size_t group);
// x[R*G, D] -> [R*G, D]: where mask[r][d] is set, every row of group r takes the
// group mean in column d; elsewhere values pass through.
template <typename T>
Var group_mean_select(Tape<T>& t, Var x, std::size_t group, std::vector<std::vector<bool>> mask);

// Minibatch-weighted total-correlation estimate of the aggregate posterior from
// samples z[B,D] and their posteriors (mu, logvar); scalar.
template <typename T> Var minibatch_total_correlation(Tape<T>& t, Var z, Var mu, Var logvar);

}  // namespace ops

}  // namespace raven
