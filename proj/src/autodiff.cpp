#include "raven/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace raven {

// ---------------------------------------------------------------- Tape

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
  return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const auto& n = node(v);
  if (n.grad.empty()) return Tensor<T>(n.value().shape);
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape);
  return n.grad;
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, const std::vector<Var>& inputs, Backward fn) {
  Node n;
  n.owned = std::move(value);
  for (const auto& in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, std::initializer_list<Var> inputs, Backward fn) {
  return push(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

template <typename T>
void Tape<T>::backward(Var out) {
  if (!out.valid() || out.id >= nodes_.size()) throw std::logic_error("backward called before forward");
  if (value(out).numel() != 1) throw std::invalid_argument("backward(out) needs a scalar output");
  backward(out, Tensor<T>(value(out).shape, T(1)));
}

template <typename T>
void Tape<T>::backward(Var out, const Tensor<T>& seed) {
  if (!out.valid() || out.id >= nodes_.size()) throw std::logic_error("backward called before forward");
  if (seed.shape != value(out).shape) throw std::invalid_argument("backward seed shape mismatch");
  auto& g = grad_ref(out.id);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  for (std::size_t id = out.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& pg = n.param->grad;
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
  }
  backward_done_ = true;
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------- ops

namespace ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.numel(); ++i) (*dst)[i] += src[i];
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* cols) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + static_cast<std::ptrdiff_t>(((c * k + ki) * k + kj)) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ki;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kj;
            row[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * H + iy) * W + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + static_cast<std::ptrdiff_t>(((c * k + ki) * k + kj)) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kj;
            if (ix >= 0 && ix < W) x[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

template <typename T, typename F, typename G>
Var unary(Tape<T>& t, Var x, F forward, G derivative) {
  const auto& xv = t.value(x);
  Tensor<T> y(xv.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = forward(xv[i]);
  return t.push(std::move(y), {x}, [x, derivative](Tape<T>& tp, std::size_t self) {
    const auto& xv = tp.value(x);
    const auto& yv = tp.value(Var{self});
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * derivative(xv[i], yv[i]);
  });
}

template <typename T>
std::size_t rows_of(const Tensor<T>& v) {
  return v.rank() == 0 ? 1 : v.shape[0];
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.shape[1] == bv.shape[0],
          "matmul: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const std::size_t M = av.shape[0], K = av.shape[1], N = bv.shape[1];
  Tensor<T> y({M, N});
  as_matrix(y, M, N).noalias() = as_matrix(av, M, K) * as_matrix(bv, K, N);
  return t.push(std::move(y), {a, b}, [a, b, M, K, N](Tape<T>& tp, std::size_t self) {
    const auto gy = as_matrix(tp.out_grad(self), M, N);
    if (tp.requires_grad(a)) as_matrix(tp.grad_ref(a.id), M, K).noalias() += gy * as_matrix(tp.value(b), K, N).transpose();
    if (tp.requires_grad(b)) as_matrix(tp.grad_ref(b.id), K, N).noalias() += as_matrix(tp.value(a), M, K).transpose() * gy;
  });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  const auto& bv = t.value(b);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.shape[1] == wv.shape[0],
          "linear: input " + shape_str(xv.shape) + " incompatible with weight " + shape_str(wv.shape));
  require(bv.numel() == wv.shape[1], "linear: bias length mismatch");
  const std::size_t B = xv.shape[0], I = xv.shape[1], O = wv.shape[1];
  Tensor<T> y({B, O});
  auto ym = as_matrix(y, B, O);
  ym.noalias() = as_matrix(xv, B, I) * as_matrix(wv, I, O);
  ym.rowwise() += as_matrix(bv, 1, O).row(0);
  return t.push(std::move(y), {x, w, b}, [x, w, b, B, I, O](Tape<T>& tp, std::size_t self) {
    const auto gy = as_matrix(tp.out_grad(self), B, O);
    if (tp.requires_grad(x)) as_matrix(tp.grad_ref(x.id), B, I).noalias() += gy * as_matrix(tp.value(w), I, O).transpose();
    if (tp.requires_grad(w)) as_matrix(tp.grad_ref(w.id), I, O).noalias() += as_matrix(tp.value(x), B, I).transpose() * gy;
    // Plain loops for bias sums: Eigen reductions pick their summation order
    // from buffer alignment, which breaks run-to-run reproducibility.
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad_ref(b.id);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t o = 0; o < O; ++o) gb[o] += gy(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(o));
    }
  });
}

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, int stride, int pad) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expected 4-D input and weight");
  require(xv.shape[1] == wv.shape[1], "conv2d: channel mismatch " + shape_str(xv.shape) + " vs " + shape_str(wv.shape));
  require(wv.shape[2] == wv.shape[3], "conv2d: square kernels only");
  require(t.value(b).numel() == wv.shape[0], "conv2d: bias length mismatch");
  const int B = static_cast<int>(xv.shape[0]), C = static_cast<int>(xv.shape[1]), H = static_cast<int>(xv.shape[2]),
            W = static_cast<int>(xv.shape[3]), O = static_cast<int>(wv.shape[0]), k = static_cast<int>(wv.shape[2]);
  require(H + 2 * pad >= k && W + 2 * pad >= k, "conv2d: kernel larger than padded input");
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t ckk = static_cast<std::size_t>(C * k * k), hw = static_cast<std::size_t>(Ho * Wo);
  Tensor<T> y({static_cast<std::size_t>(B), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
               static_cast<std::size_t>(Wo)});
  Tensor<T> cols({ckk, hw});
  const auto wm = as_matrix(wv, static_cast<std::size_t>(O), ckk);
  const auto& bv = t.value(b);
  for (int n = 0; n < B; ++n) {
    im2col(xv.ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, cols.ptr());
    MatMap<T> ym(y.ptr() + static_cast<std::ptrdiff_t>(n) * O * Ho * Wo, O, static_cast<Eigen::Index>(hw));
    ym.noalias() = wm * as_matrix(cols, ckk, hw);
    for (int o = 0; o < O; ++o) ym.row(o).array() += bv[static_cast<std::size_t>(o)];
  }
  return t.push(std::move(y), {x, w, b}, [=](Tape<T>& tp, std::size_t self) {
    const auto& xv = tp.value(x);
    const auto& gy = tp.out_grad(self);
    Tensor<T> cols({ckk, hw});
    Tensor<T> dcols({ckk, hw});
    const auto wm = as_matrix(tp.value(w), static_cast<std::size_t>(O), ckk);
    for (int n = 0; n < B; ++n) {
      ConstMatMap<T> gm(gy.ptr() + static_cast<std::ptrdiff_t>(n) * O * Ho * Wo, O, static_cast<Eigen::Index>(hw));
      if (tp.requires_grad(w)) {
        im2col(xv.ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, cols.ptr());
        as_matrix(tp.grad_ref(w.id), static_cast<std::size_t>(O), ckk).noalias() +=
            gm * as_matrix(cols, ckk, hw).transpose();
      }
      if (tp.requires_grad(b)) {
        auto& gb = tp.grad_ref(b.id);
        for (int o = 0; o < O; ++o) {
          T acc = 0;
          for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(hw); ++j) acc += gm(o, j);
          gb[static_cast<std::size_t>(o)] += acc;
        }
      }
      if (tp.requires_grad(x)) {
        as_matrix(dcols, ckk, hw).noalias() = wm.transpose() * gm;
        col2im(dcols.ptr(), C, H, W, k, stride, pad, Ho, Wo,
               tp.grad_ref(x.id).ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W);
      }
    }
  });
}

template <typename T>
Var conv_transpose2d(Tape<T>& t, Var x, Var w, Var b, int stride, int pad) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  require(xv.rank() == 4 && wv.rank() == 4, "conv_transpose2d: expected 4-D input and weight");
  require(xv.shape[1] == wv.shape[0],
          "conv_transpose2d: channel mismatch " + shape_str(xv.shape) + " vs " + shape_str(wv.shape));
  require(wv.shape[2] == wv.shape[3], "conv_transpose2d: square kernels only");
  require(t.value(b).numel() == wv.shape[1], "conv_transpose2d: bias length mismatch");
  const int B = static_cast<int>(xv.shape[0]), C = static_cast<int>(xv.shape[1]), H = static_cast<int>(xv.shape[2]),
            W = static_cast<int>(xv.shape[3]), O = static_cast<int>(wv.shape[1]), k = static_cast<int>(wv.shape[2]);
  const int Ho = (H - 1) * stride - 2 * pad + k, Wo = (W - 1) * stride - 2 * pad + k;
  require(Ho > 0 && Wo > 0, "conv_transpose2d: empty output");
  const std::size_t okk = static_cast<std::size_t>(O * k * k), hw = static_cast<std::size_t>(H * W);
  Tensor<T> y({static_cast<std::size_t>(B), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
               static_cast<std::size_t>(Wo)});
  Tensor<T> cols({okk, hw});
  const auto wm = as_matrix(wv, static_cast<std::size_t>(C), okk);
  const auto& bv = t.value(b);
  for (int n = 0; n < B; ++n) {
    ConstMatMap<T> xm(xv.ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W, C, static_cast<Eigen::Index>(hw));
    as_matrix(cols, okk, hw).noalias() = wm.transpose() * xm;
    T* yn = y.ptr() + static_cast<std::ptrdiff_t>(n) * O * Ho * Wo;
    col2im(cols.ptr(), O, Ho, Wo, k, stride, pad, H, W, yn);
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < Ho * Wo; ++i) yn[o * Ho * Wo + i] += bv[static_cast<std::size_t>(o)];
  }
  return t.push(std::move(y), {x, w, b}, [=](Tape<T>& tp, std::size_t self) {
    const auto& xv = tp.value(x);
    const auto& gy = tp.out_grad(self);
    Tensor<T> dcols({okk, hw});
    const auto wm = as_matrix(tp.value(w), static_cast<std::size_t>(C), okk);
    for (int n = 0; n < B; ++n) {
      const T* gn = gy.ptr() + static_cast<std::ptrdiff_t>(n) * O * Ho * Wo;
      if (tp.requires_grad(b)) {
        auto& gb = tp.grad_ref(b.id);
        for (int o = 0; o < O; ++o)
          for (int i = 0; i < Ho * Wo; ++i) gb[static_cast<std::size_t>(o)] += gn[o * Ho * Wo + i];
      }
      if (!tp.requires_grad(x) && !tp.requires_grad(w)) continue;
      im2col(gn, O, Ho, Wo, k, stride, pad, H, W, dcols.ptr());
      if (tp.requires_grad(x)) {
        MatMap<T> gx(tp.grad_ref(x.id).ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W, C,
                     static_cast<Eigen::Index>(hw));
        gx.noalias() += wm * as_matrix(dcols, okk, hw);
      }
      if (tp.requires_grad(w)) {
        ConstMatMap<T> xm(xv.ptr() + static_cast<std::ptrdiff_t>(n) * C * H * W, C, static_cast<Eigen::Index>(hw));
        as_matrix(tp.grad_ref(w.id), static_cast<std::size_t>(C), okk).noalias() +=
            xm * as_matrix(dcols, okk, hw).transpose();
      }
    }
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var leaky_relu(Tape<T>& t, Var x, T slope) {
  return unary(
      t, x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  return unary(
      t, x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var exp(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var square(Tape<T>& t, Var x) {
  return unary(
      t, x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var dropout(Tape<T>& t, Var x, double p, Mode mode, RngStream* rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  require(rng != nullptr, "dropout: train mode needs an rng");
  const auto& xv = t.value(x);
  Tensor<T> mask(xv.shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.data) m = rng->uniform01() < p ? T(0) : keep_scale;
  Tensor<T> y(xv.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * mask[i];
  return t.push(std::move(y), {x}, [x, mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * mask[i];
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.shape == bv.shape, "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> y(av.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    accumulate(tp.grad_if_needed(a), gy);
    accumulate(tp.grad_if_needed(b), gy);
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.shape == bv.shape, "sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> y(av.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] - bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    accumulate(tp.grad_if_needed(a), gy);
    if (auto* gb = tp.grad_if_needed(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i];
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.shape == bv.shape, "mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> y(av.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    if (auto* ga = tp.grad_if_needed(a))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * bv[i];
    if (auto* gb = tp.grad_if_needed(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * av[i];
  });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T c) {
  return unary(
      t, x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  const auto& xv = t.value(x);
  require(shape_numel(shape) == xv.numel(),
          "reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(shape));
  Tensor<T> y(std::move(shape), xv.data);
  return t.push(std::move(y), {x}, [x](Tape<T>& tp, std::size_t self) {
    accumulate(&tp.grad_ref(x.id), tp.out_grad(self));
  });
}

template <typename T>
Var reparameterize(Tape<T>& t, Var mu, Var logvar, const Tensor<T>& noise) {
  const auto& mv = t.value(mu);
  const auto& lv = t.value(logvar);
  require(mv.shape == lv.shape && noise.numel() == mv.numel(), "reparameterize: shape mismatch");
  Tensor<T> y(mv.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = mv[i] + std::exp(T(0.5) * lv[i]) * noise[i];
  return t.push(std::move(y), {mu, logvar}, [mu, logvar, noise](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    accumulate(tp.grad_if_needed(mu), gy);
    if (auto* gl = tp.grad_if_needed(logvar)) {
      const auto& lv = tp.value(logvar);
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gl)[i] += gy[i] * noise[i] * T(0.5) * std::exp(T(0.5) * lv[i]);
    }
  });
}

template <typename T>
Var gaussian_kl(Tape<T>& t, Var mu, Var logvar) {
  const auto& mv = t.value(mu);
  const auto& lv = t.value(logvar);
  require(mv.shape == lv.shape, "gaussian_kl: shape mismatch");
  Tensor<T> y(mv.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = T(0.5) * (mv[i] * mv[i] + std::exp(lv[i]) - lv[i] - T(1));
  return t.push(std::move(y), {mu, logvar}, [mu, logvar](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    if (auto* gm = tp.grad_if_needed(mu)) {
      const auto& mv = tp.value(mu);
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gm)[i] += gy[i] * mv[i];
    }
    if (auto* gl = tp.grad_if_needed(logvar)) {
      const auto& lv = tp.value(logvar);
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gl)[i] += gy[i] * T(0.5) * (std::exp(lv[i]) - T(1));
    }
  });
}

template <typename T>
Var bernoulli_log_likelihood(Tape<T>& t, Var logits, const Tensor<T>& target) {
  const auto& lv = t.value(logits);
  require(lv.numel() == target.numel(), "bernoulli_log_likelihood: target size mismatch");
  const std::size_t B = rows_of(lv), per = lv.numel() / B;
  Tensor<T> y({B});
  for (std::size_t b = 0; b < B; ++b) {
    T acc = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const T l = lv[i];
      const T softplus = std::max(l, T(0)) + std::log1p(std::exp(-std::abs(l)));
      acc += target[i] * l - softplus;
    }
    y[b] = acc;
  }
  return t.push(std::move(y), {logits}, [logits, target, B, per](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    const auto& lv = tp.value(logits);
    auto& gl = tp.grad_ref(logits.id);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        const T l = lv[i];
        const T sig = l >= T(0) ? T(1) / (T(1) + std::exp(-l)) : std::exp(l) / (T(1) + std::exp(l));
        gl[i] += gy[b] * (target[i] - sig);
      }
  });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels) {
  const auto& lv = t.value(logits);
  require(lv.rank() == 2 && lv.shape[0] == labels.size(), "softmax_cross_entropy: expected [B,C] logits and B labels");
  const std::size_t B = lv.shape[0], C = lv.shape[1];
  Tensor<T> probs({B, C});
  Tensor<T> y({B});
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t b = 0; b < B; ++b) {
    require(lab[b] >= 0 && static_cast<std::size_t>(lab[b]) < C, "softmax_cross_entropy: label out of range");
    T mx = lv(b, 0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, lv(b, c));
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(lv(b, c) - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) probs(b, c) = std::exp(lv(b, c) - lse);
    y[b] = lse - lv(b, static_cast<std::size_t>(lab[b]));
  }
  return t.push(std::move(y), {logits}, [logits, probs, lab, B, C](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gl = tp.grad_ref(logits.id);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        gl[b * C + c] += gy[b] * (probs(b, c) - (static_cast<int>(c) == lab[b] ? T(1) : T(0)));
  });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  T acc = 0;
  for (const auto v : xv.data) acc += v;
  return t.push(Tensor<T>({1}, std::vector<T>{acc}), {x}, [x](Tape<T>& tp, std::size_t self) {
    const T g = tp.out_grad(self)[0];
    auto& gx = tp.grad_ref(x.id);
    for (auto& v : gx.data) v += g;
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const auto n = static_cast<T>(t.value(x).numel());
  return scale(t, sum(t, x), T(1) / n);
}

template <typename T>
Var sum_rows(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2, "sum_rows: expected [B,D]");
  const std::size_t B = xv.shape[0], D = xv.shape[1];
  Tensor<T> y({D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) y[d] += xv(b, d);
  return t.push(std::move(y), {x}, [x, B, D](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t d = 0; d < D; ++d) gx[b * D + d] += gy[d];
  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var x, std::size_t begin, std::size_t end) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2 && begin < end && end <= xv.shape[1], "slice_cols: bad range for " + shape_str(xv.shape));
  const std::size_t B = xv.shape[0], D = xv.shape[1], W = end - begin;
  Tensor<T> y({B, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < W; ++c) y(b, c) = xv(b, begin + c);
  return t.push(std::move(y), {x}, [x, B, D, W, begin](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < W; ++c) gx[b * D + begin + c] += gy[b * W + c];
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t B = t.value(parts[0]).shape.at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& v = t.value(p);
    require(v.rank() == 2 && v.shape[0] == B, "concat_cols: row count mismatch");
    widths.push_back(v.shape[1]);
    total += v.shape[1];
  }
  Tensor<T> y({B, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = t.value(parts[k]);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < widths[k]; ++c) y(b, off + c) = v(b, c);
    off += widths[k];
  }
  return t.push(std::move(y), parts, [parts, widths, B, total](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (auto* g = tp.grad_if_needed(parts[k]))
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < widths[k]; ++c) (*g)[b * widths[k] + c] += gy[b * total + off + c];
      off += widths[k];
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t D = t.value(parts[0]).shape.at(1);
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const auto& v = t.value(p);
    require(v.rank() == 2 && v.shape[1] == D, "concat_rows: column count mismatch");
    sizes.push_back(v.numel());
    rows += v.shape[0];
  }
  Tensor<T> y({rows, D});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::copy_n(t.value(parts[k]).ptr(), sizes[k], y.ptr() + off);
    off += sizes[k];
  }
  return t.push(std::move(y), parts, [parts, sizes](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (auto* g = tp.grad_if_needed(parts[k]))
        for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += gy[off + i];
      off += sizes[k];
    }
  });
}

template <typename T>
Var gather_rows(Tape<T>& t, Var x, std::vector<std::size_t> indices) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2, "gather_rows: expected [N,D]");
  const std::size_t N = xv.shape[0], D = xv.shape[1];
  Tensor<T> y({indices.size(), D});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < N, "gather_rows: index out of range");
    std::copy_n(xv.ptr() + indices[i] * D, D, y.ptr() + i * D);
  }
  return t.push(std::move(y), {x}, [x, indices = std::move(indices), D](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) gx[indices[i] * D + d] += gy[i * D + d];
  });
}

template <typename T>
Var group_std(Tape<T>& t, Var x, std::size_t group) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2 && group > 0 && xv.shape[0] % group == 0, "group_std: rows must be a multiple of group");
  const std::size_t R = xv.shape[0] / group, D = xv.shape[1];
  Tensor<T> y({R, D});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) {
      // Deviations are taken from the first row of the group so that a
      // constant group gives exactly zero.
      const T base = xv(r * group, d);
      T m = 0;
      for (std::size_t g = 0; g < group; ++g) m += xv(r * group + g, d) - base;
      m /= static_cast<T>(group);
      T v = 0;
      for (std::size_t g = 0; g < group; ++g) {
        const T e = xv(r * group + g, d) - base - m;
        v += e * e;
      }
      y(r, d) = std::sqrt(v / static_cast<T>(group));
    }
  return t.push(std::move(y), {x}, [x, R, D, group](Tape<T>& tp, std::size_t self) {
    const auto& xv = tp.value(x);
    const auto& yv = tp.value(Var{self});
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t d = 0; d < D; ++d) {
        const T s = yv(r, d);
        if (s == T(0)) continue;
        const T base = xv(r * group, d);
        T m = 0;
        for (std::size_t g = 0; g < group; ++g) m += xv(r * group + g, d) - base;
        m /= static_cast<T>(group);
        const T coef = gy(r, d) / (static_cast<T>(group) * s);
        for (std::size_t g = 0; g < group; ++g)
          gx[(r * group + g) * D + d] += coef * (xv(r * group + g, d) - base - m);
      }
  });
}

template <typename T>
Var group_mean_select(Tape<T>& t, Var x, std::size_t group, std::vector<std::vector<bool>> mask) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2 && group > 0 && xv.shape[0] % group == 0,
          "group_mean_select: rows must be a multiple of group");
  const std::size_t R = xv.shape[0] / group, D = xv.shape[1];
  require(mask.size() == R, "group_mean_select: need one mask per group");
  for (const auto& m : mask) require(m.size() == D, "group_mean_select: mask width mismatch");
  Tensor<T> y = xv;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) {
      if (!mask[r][d]) continue;
      T m = 0;
      for (std::size_t g = 0; g < group; ++g) m += xv(r * group + g, d);
      m /= static_cast<T>(group);
      for (std::size_t g = 0; g < group; ++g) y(r * group + g, d) = m;
    }
  return t.push(std::move(y), {x}, [x, R, D, group, mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
    const auto& gy = tp.out_grad(self);
    auto& gx = tp.grad_ref(x.id);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t d = 0; d < D; ++d) {
        if (!mask[r][d]) {
          for (std::size_t g = 0; g < group; ++g) gx[(r * group + g) * D + d] += gy[(r * group + g) * D + d];
          continue;
        }
        T s = 0;
        for (std::size_t g = 0; g < group; ++g) s += gy[(r * group + g) * D + d];
        s /= static_cast<T>(group);
        for (std::size_t g = 0; g < group; ++g) gx[(r * group + g) * D + d] += s;
      }
  });
}

template <typename T>
Var minibatch_total_correlation(Tape<T>& t, Var z, Var mu, Var logvar) {
  const auto& zv = t.value(z);
  const auto& mv = t.value(mu);
  const auto& lv = t.value(logvar);
  require(zv.rank() == 2 && zv.shape == mv.shape && mv.shape == lv.shape,
          "minibatch_total_correlation: expected matching [B,D] inputs");
  const std::size_t B = zv.shape[0], D = zv.shape[1];
  require(B >= 2, "minibatch_total_correlation: batch size must be >= 2");
  const T log2pi = static_cast<T>(std::log(2.0 * std::numbers::pi));
  // log q(z_i,d | x_j), laid out [i][j][d].
  Tensor<T> L({B, B, D});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t d = 0; d < D; ++d) {
        const T e = zv(i, d) - mv(j, d);
        L[(i * B + j) * D + d] = T(-0.5) * (e * e * std::exp(-lv(j, d)) + lv(j, d) + log2pi);
      }
  // Softmax weights over j for the joint and for each marginal.
  Tensor<T> wj({B, B});
  Tensor<T> wm({B, B, D});
  T tc = 0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<T> joint(B, T(0));
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t d = 0; d < D; ++d) joint[j] += L[(i * B + j) * D + d];
    const T mx = *std::max_element(joint.begin(), joint.end());
    T z_sum = 0;
    for (std::size_t j = 0; j < B; ++j) z_sum += std::exp(joint[j] - mx);
    const T lse_joint = mx + std::log(z_sum);
    for (std::size_t j = 0; j < B; ++j) wj(i, j) = std::exp(joint[j] - lse_joint);
    T lse_marg = 0;
    for (std::size_t d = 0; d < D; ++d) {
      T m = L[(i * B) * D + d];
      for (std::size_t j = 1; j < B; ++j) m = std::max(m, L[(i * B + j) * D + d]);
      T s = 0;
      for (std::size_t j = 0; j < B; ++j) s += std::exp(L[(i * B + j) * D + d] - m);
      const T lse = m + std::log(s);
      lse_marg += lse;
      for (std::size_t j = 0; j < B; ++j) wm[(i * B + j) * D + d] = std::exp(L[(i * B + j) * D + d] - lse);
    }
    tc += lse_joint - lse_marg;
  }
  tc = tc / static_cast<T>(B) + static_cast<T>(D - 1) * std::log(static_cast<T>(B));
  return t.push(Tensor<T>({1}, std::vector<T>{tc}), {z, mu, logvar},
                [z, mu, logvar, wj, wm, B, D](Tape<T>& tp, std::size_t self) {
                  const T g = tp.out_grad(self)[0] / static_cast<T>(B);
                  const auto& zv = tp.value(z);
                  const auto& mv = tp.value(mu);
                  const auto& lv = tp.value(logvar);
                  auto* gz = tp.grad_if_needed(z);
                  auto* gm = tp.grad_if_needed(mu);
                  auto* gl = tp.grad_if_needed(logvar);
                  for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < B; ++j)
                      for (std::size_t d = 0; d < D; ++d) {
                        const T dl = g * (wj(i, j) - wm[(i * B + j) * D + d]);
                        if (dl == T(0)) continue;
                        const T inv = std::exp(-lv(j, d));
                        const T e = zv(i, d) - mv(j, d);
                        if (gz) (*gz)[i * D + d] += dl * (-e * inv);
                        if (gm) (*gm)[j * D + d] += dl * (e * inv);
                        if (gl) (*gl)[j * D + d] += dl * T(0.5) * (e * e * inv - T(1));
                      }
                });
}

#define RAVEN_INSTANTIATE_OPS(T)                                                                  \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                     \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                                      \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, int, int);                            \
  template Var relu<T>(Tape<T>&, Var);                                                            \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                                   \
  template Var sigmoid<T>(Tape<T>&, Var);                                                         \
  template Var exp<T>(Tape<T>&, Var);                                                             \
  template Var square<T>(Tape<T>&, Var);                                                          \
  template Var dropout<T>(Tape<T>&, Var, double, Mode, RngStream*);                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                        \
  template Var sub<T>(Tape<T>&, Var, Var);                                                        \
  template Var mul<T>(Tape<T>&, Var, Var);                                                        \
  template Var scale<T>(Tape<T>&, Var, T);                                                        \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                  \
  template Var reparameterize<T>(Tape<T>&, Var, Var, const Tensor<T>&);                           \
  template Var gaussian_kl<T>(Tape<T>&, Var, Var);                                                \
  template Var bernoulli_log_likelihood<T>(Tape<T>&, Var, const Tensor<T>&);                      \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                     \
  template Var sum<T>(Tape<T>&, Var);                                                             \
  template Var mean<T>(Tape<T>&, Var);                                                            \
  template Var sum_rows<T>(Tape<T>&, Var);                                                        \
  template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);                            \
  template Var concat_cols<T>(Tape<T>&, const std::vector<Var>&);                                 \
  template Var concat_rows<T>(Tape<T>&, const std::vector<Var>&);                                 \
  template Var gather_rows<T>(Tape<T>&, Var, std::vector<std::size_t>);                           \
  template Var group_std<T>(Tape<T>&, Var, std::size_t);                                          \
  template Var group_mean_select<T>(Tape<T>&, Var, std::size_t, std::vector<std::vector<bool>>);  \
  template Var minibatch_total_correlation<T>(Tape<T>&, Var, Var, Var);

RAVEN_INSTANTIATE_OPS(float)
RAVEN_INSTANTIATE_OPS(double)

#undef RAVEN_INSTANTIATE_OPS

}  // namespace ops

}  // namespace raven
