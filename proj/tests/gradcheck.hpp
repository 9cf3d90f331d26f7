#pragma once

// Central finite-difference checks for every differentiable op, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "raven/autodiff.hpp"
#include "raven/network.hpp"

namespace gradcheck {

using raven::RngStream;
using raven::Shape;
using raven::Tape;
using raven::Var;
using TensorD = raven::Tensor<double>;
using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline TensorD random_tensor(Shape s, RngStream& r, double lo = -1, double hi = 1) {
  TensorD t(std::move(s));
  for (auto& v : t.data) v = r.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, so that piecewise ops are not probed at a kink.
inline TensorD away_from_zero(Shape s, RngStream& r) {
  TensorD t(std::move(s));
  for (auto& v : t.data) v = (r.bernoulli(0.5) ? 1 : -1) * r.uniform(0.05, 1.0);
  return t;
}

inline std::size_t dim(RngStream& r, std::size_t lo, std::size_t hi) { return lo + r.uniform_index(hi - lo + 1); }

// Scalar objective: sum(f(inputs) * w) for fixed random w.
inline double objective(const Builder& f, const std::vector<TensorD>& inputs, const TensorD* weights,
                        std::vector<TensorD>* grads) {
  Tape<double> t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.input(x));
  const Var out = f(t, vars);
  const Var s = weights ? raven::ops::sum(t, raven::ops::mul(t, out, t.constant(*weights))) : raven::ops::sum(t, out);
  if (grads) {
    t.backward(s);
    grads->clear();
    for (const auto v : vars) grads->push_back(t.grad(v));
  }
  return t.value(s)[0];
}

// Max over all input elements of |analytic - numeric| / max(1, |numeric|).
inline double max_relative_error(const Builder& f, std::vector<TensorD> inputs, RngStream& r, double h = 1e-5) {
  Tape<double> probe;
  std::vector<Var> pv;
  for (const auto& x : inputs) pv.push_back(probe.input(x));
  const auto out_shape = probe.value(f(probe, pv)).shape;
  const TensorD w = random_tensor(out_shape, r, 0.5, 1.5);

  std::vector<TensorD> grads;
  objective(f, inputs, &w, &grads);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + h;
      const double up = objective(f, inputs, &w, nullptr);
      inputs[i][j] = keep - h;
      const double down = objective(f, inputs, &w, nullptr);
      inputs[i][j] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(grads[i][j] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

struct Case {
  std::string name;
  // One random trial: draws shapes and inputs from r, returns the max relative error.
  std::function<double(RngStream&)> trial;
};

namespace ops = raven::ops;

inline std::vector<Case> cases() {
  std::vector<Case> c;
  auto unary = [&](const std::string& name, auto op, bool kinked) {
    c.push_back({name, [op, kinked](RngStream& r) {
                   const Shape s{dim(r, 1, 4), dim(r, 1, 6)};
                   return max_relative_error([op](Tape<double>& t, const std::vector<Var>& v) { return op(t, v[0]); },
                                             {kinked ? away_from_zero(s, r) : random_tensor(s, r)}, r);
                 }});
  };
  unary("relu", [](Tape<double>& t, Var x) { return ops::relu(t, x); }, true);
  unary("leaky_relu", [](Tape<double>& t, Var x) { return ops::leaky_relu(t, x, 0.01); }, true);
  unary("sigmoid", [](Tape<double>& t, Var x) { return ops::sigmoid(t, x); }, false);
  unary("exp", [](Tape<double>& t, Var x) { return ops::exp(t, x); }, false);
  unary("square", [](Tape<double>& t, Var x) { return ops::square(t, x); }, false);
  unary("scale", [](Tape<double>& t, Var x) { return ops::scale(t, x, -2.5); }, false);
  unary("sum_rows", [](Tape<double>& t, Var x) { return ops::sum_rows(t, x); }, false);
  unary("mean", [](Tape<double>& t, Var x) { return ops::mean(t, x); }, false);
  unary("reshape", [](Tape<double>& t, Var x) {
    const auto& s = t.value(x).shape;
    return ops::reshape(t, x, {s[0] * s[1]});
  }, false);

  auto binary = [&](const std::string& name, auto op) {
    c.push_back({name, [op](RngStream& r) {
                   const Shape s{dim(r, 1, 4), dim(r, 1, 6)};
                   return max_relative_error([op](Tape<double>& t, const std::vector<Var>& v) { return op(t, v[0], v[1]); },
                                             {random_tensor(s, r), random_tensor(s, r)}, r);
                 }});
  };
  binary("add", [](Tape<double>& t, Var a, Var b) { return ops::add(t, a, b); });
  binary("sub", [](Tape<double>& t, Var a, Var b) { return ops::sub(t, a, b); });
  binary("mul", [](Tape<double>& t, Var a, Var b) { return ops::mul(t, a, b); });
  binary("gaussian_kl", [](Tape<double>& t, Var a, Var b) { return ops::gaussian_kl(t, a, b); });

  c.push_back({"linear", [](RngStream& r) {
                 const auto B = dim(r, 1, 4), I = dim(r, 1, 6), O = dim(r, 1, 5);
                 return max_relative_error(
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::linear(t, v[0], v[1], v[2]); },
                     {random_tensor({B, I}, r), random_tensor({I, O}, r), random_tensor({O}, r)}, r);
               }});
  c.push_back({"matmul", [](RngStream& r) {
                 const auto A = dim(r, 1, 4), K = dim(r, 1, 6), N = dim(r, 1, 5);
                 return max_relative_error(
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::matmul(t, v[0], v[1]); },
                     {random_tensor({A, K}, r), random_tensor({K, N}, r)}, r);
               }});
  c.push_back({"conv2d", [](RngStream& r) {
                 const auto B = dim(r, 1, 2), C = dim(r, 1, 3), O = dim(r, 1, 3);
                 const int k = static_cast<int>(dim(r, 2, 4)), stride = static_cast<int>(dim(r, 1, 2)),
                           pad = static_cast<int>(dim(r, 0, 1));
                 const auto H = dim(r, static_cast<std::size_t>(k), 7), W = dim(r, static_cast<std::size_t>(k), 7);
                 const auto ku = static_cast<std::size_t>(k);
                 return max_relative_error(
                     [stride, pad](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::conv2d(t, v[0], v[1], v[2], stride, pad);
                     },
                     {random_tensor({B, C, H, W}, r), random_tensor({O, C, ku, ku}, r), random_tensor({O}, r)}, r);
               }});
  c.push_back({"conv_transpose2d", [](RngStream& r) {
                 const auto B = dim(r, 1, 2), C = dim(r, 1, 3), O = dim(r, 1, 3);
                 const int k = static_cast<int>(dim(r, 2, 4)), stride = static_cast<int>(dim(r, 1, 2)),
                           pad = static_cast<int>(dim(r, 0, static_cast<std::size_t>(k - 1) / 2));
                 const auto H = dim(r, 1, 5), W = dim(r, 1, 5);
                 const auto ku = static_cast<std::size_t>(k);
                 return max_relative_error(
                     [stride, pad](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::conv_transpose2d(t, v[0], v[1], v[2], stride, pad);
                     },
                     {random_tensor({B, C, H, W}, r), random_tensor({C, O, ku, ku}, r), random_tensor({O}, r)}, r);
               }});
  c.push_back({"dropout", [](RngStream& r) {
                 const Shape s{dim(r, 1, 4), dim(r, 1, 6)};
                 const RngStream mask_rng = r.substream(99);
                 return max_relative_error(
                     [mask_rng](Tape<double>& t, const std::vector<Var>& v) {
                       RngStream m = mask_rng;
                       return ops::dropout(t, v[0], 0.5, raven::Mode::train, &m);
                     },
                     {random_tensor(s, r)}, r);
               }});
  c.push_back({"reparameterize", [](RngStream& r) {
                 const Shape s{dim(r, 1, 4), dim(r, 1, 6)};
                 const TensorD noise = random_tensor(s, r, -2, 2);
                 return max_relative_error(
                     [noise](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::reparameterize(t, v[0], v[1], noise);
                     },
                     {random_tensor(s, r), random_tensor(s, r)}, r);
               }});
  c.push_back({"bernoulli_log_likelihood", [](RngStream& r) {
                 const Shape s{dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 3)};
                 const TensorD target = random_tensor(s, r, 0, 1);
                 return max_relative_error(
                     [target](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::bernoulli_log_likelihood(t, v[0], target);
                     },
                     {random_tensor(s, r, -3, 3)}, r);
               }});
  c.push_back({"softmax_cross_entropy", [](RngStream& r) {
                 const auto B = dim(r, 1, 4), K = dim(r, 2, 6);
                 std::vector<int> labels(B);
                 for (auto& l : labels) l = static_cast<int>(r.uniform_index(K));
                 return max_relative_error(
                     [labels](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::softmax_cross_entropy(t, v[0], std::span<const int>(labels));
                     },
                     {random_tensor({B, K}, r, -3, 3)}, r);
               }});
  c.push_back({"sum", [](RngStream& r) {
                 return max_relative_error([](Tape<double>& t, const std::vector<Var>& v) { return ops::sum(t, v[0]); },
                                           {random_tensor({dim(r, 1, 4), dim(r, 1, 6)}, r)}, r);
               }});
  c.push_back({"slice_cols", [](RngStream& r) {
                 const auto B = dim(r, 1, 4), D = dim(r, 2, 7);
                 const auto b = r.uniform_index(D - 1), e = b + 1 + r.uniform_index(D - b - 1);
                 return max_relative_error(
                     [b, e](Tape<double>& t, const std::vector<Var>& v) { return ops::slice_cols(t, v[0], b, e); },
                     {random_tensor({B, D}, r)}, r);
               }});
  c.push_back({"concat_cols", [](RngStream& r) {
                 const auto B = dim(r, 1, 4);
                 return max_relative_error(
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::concat_cols(t, {v[0], v[1], v[0]}); },
                     {random_tensor({B, dim(r, 1, 4)}, r), random_tensor({B, dim(r, 1, 4)}, r)}, r);
               }});
  c.push_back({"concat_rows", [](RngStream& r) {
                 const auto D = dim(r, 1, 4);
                 return max_relative_error(
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::concat_rows(t, {v[0], v[1], v[0]}); },
                     {random_tensor({dim(r, 1, 4), D}, r), random_tensor({dim(r, 1, 4), D}, r)}, r);
               }});
  c.push_back({"gather_rows", [](RngStream& r) {
                 const auto B = dim(r, 1, 5), D = dim(r, 1, 4), n = dim(r, 1, 8);
                 std::vector<std::size_t> idx(n);
                 for (auto& i : idx) i = r.uniform_index(B);
                 return max_relative_error(
                     [idx](Tape<double>& t, const std::vector<Var>& v) { return ops::gather_rows(t, v[0], idx); },
                     {random_tensor({B, D}, r)}, r);
               }});
  c.push_back({"group_std", [](RngStream& r) {
                 const auto G = dim(r, 2, 4), R = dim(r, 1, 3), D = dim(r, 1, 4);
                 return max_relative_error(
                     [G](Tape<double>& t, const std::vector<Var>& v) { return ops::group_std(t, v[0], G); },
                     {random_tensor({R * G, D}, r)}, r);
               }});
  c.push_back({"group_mean_select", [](RngStream& r) {
                 const auto G = dim(r, 2, 4), R = dim(r, 1, 3), D = dim(r, 1, 4);
                 std::vector<std::vector<bool>> mask(R, std::vector<bool>(D));
                 for (auto& m : mask)
                   for (std::size_t d = 0; d < D; ++d) m[d] = r.bernoulli(0.5);
                 return max_relative_error(
                     [G, mask](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::group_mean_select(t, v[0], G, mask);
                     },
                     {random_tensor({R * G, D}, r)}, r);
               }});
  c.push_back({"minibatch_total_correlation", [](RngStream& r) {
                 const auto B = dim(r, 2, 5), D = dim(r, 1, 4);
                 return max_relative_error(
                     [](Tape<double>& t, const std::vector<Var>& v) {
                       return ops::minibatch_total_correlation(t, v[0], v[1], v[2]);
                     },
                     {random_tensor({B, D}, r), random_tensor({B, D}, r), random_tensor({B, D}, r, -1, 0.5)}, r);
               }});
  // Whole networks, differentiated with respect to their input.
  c.push_back({"network_dense", [](RngStream& r) {
                 const auto I = dim(r, 1, 6);
                 raven::Network<double> net("n", {I},
                                            {raven::LayerSpec::dense(dim(r, 1, 5)), raven::LayerSpec::sigmoid(),
                                             raven::LayerSpec::dense(dim(r, 1, 4))},
                                            r.substream(1));
                 return max_relative_error(
                     [&net](Tape<double>& t, const std::vector<Var>& v) { return net.forward(t, v[0], raven::Mode::eval); },
                     {random_tensor({dim(r, 1, 3), I}, r)}, r);
               }});
  c.push_back({"network_conv", [](RngStream& r) {
                 const auto C = dim(r, 1, 2);
                 raven::Network<double> net("n", {C, 8, 8},
                                            {raven::LayerSpec::conv(2), raven::LayerSpec::sigmoid(),
                                             raven::LayerSpec::upconv(C), raven::LayerSpec::reshape({C * 64}),
                                             raven::LayerSpec::dense(3)},
                                            r.substream(2));
                 return max_relative_error(
                     [&net](Tape<double>& t, const std::vector<Var>& v) { return net.forward(t, v[0], raven::Mode::eval); },
                     {random_tensor({dim(r, 1, 2), C, 8, 8}, r)}, r);
               }});
  return c;
}

}  // namespace gradcheck
