#include "pmtk/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "pmtk/kernels.hpp"

namespace pmtk {

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var<T> v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return *nodes_[v.id()];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var<T> v) {
  if (v.tape() != this || v.id() >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return *nodes_[v.id()];
}

template <typename T>
Var<T> Tape<T>::push(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn backward) {
  auto n = std::make_unique<Node>();
  n->op = op;
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  return push("leaf", std::move(value), grad_enabled_, nullptr);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push("constant", std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  debug_check_finite(value, op.data());
  bool any = false;
  if (grad_enabled_) {
    for (const Var<T>& in : inputs) any = any || node(in).requires_grad;
  }
  return push(op, std::move(value), any, any ? std::move(backward) : nullptr);
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = node(v);
  if (n.grad) return *n.grad;
  return Tensor<T>(n.value.shape());
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                         shape_str(n.value.shape()) + " for op " + std::string(n.op));
  }
  if (!n.grad) {
    n.grad = g.reshaped(n.value.shape());
    return;
  }
  T* dst = n.grad->ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) throw UsageError("backward() needs a scalar loss, got " + shape_str(root.value.shape()));
  for (auto& n : nodes_) n->grad.reset();
  backward_order_.clear();
  if (!root.requires_grad) return;
  nodes_[loss.id()]->grad = Tensor<T>(root.value.shape(), T(1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = *nodes_[i];
    if (!n.backward || !n.grad) continue;
    backward_order_.push_back(i);
    n.backward(*this, *n.grad);
  }
}

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(f(x[i]));
  return out;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape()->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape()->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, map_values(g, [](T v) { return -v; }));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape()->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (t.requires_grad(a)) {
      Tensor<T> ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor<T> gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
      t.accumulate(b, gb);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double c) {
  return a.tape()->record("scale", map_values(a.value(), [c](T v) { return c * v; }), {a},
                          [a, c](Tape<T>& t, const Tensor<T>& g) {
                            t.accumulate(a, map_values(g, [c](T v) { return c * v; }));
                          });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return a.tape()->record("relu", map_values(a.value(), [](T v) { return v > T(0) ? v : T(0); }), {a},
                          [a](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& x = a.value();
                            Tensor<T> gx(g.shape());
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] > T(0) ? g[i] : T(0);
                            t.accumulate(a, gx);
                          });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return a.tape()->record("silu", map_values(a.value(), [](T v) { return v * sigmoid(v); }), {a},
                          [a](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& x = a.value();
                            Tensor<T> gx(g.shape());
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const double s = sigmoid(x[i]);
                              gx[i] = static_cast<T>(g[i] * s * (1.0 + x[i] * (1.0 - s)));
                            }
                            t.accumulate(a, gx);
                          });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  auto f = [](T v) {
    const double x = v;
    return x > 20.0 ? x : std::log1p(std::exp(x));
  };
  return a.tape()->record("softplus", map_values(a.value(), f), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = a.value();
    Tensor<T> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = static_cast<T>(g[i] * sigmoid(x[i]));
    t.accumulate(a, gx);
  });
}

template <typename T>
Var<T> exp(Var<T> a) {
  Tensor<T> out = map_values(a.value(), [](T v) { return std::exp(static_cast<double>(v)); });
  Tape<T>* tape = a.tape();
  const std::size_t out_id = tape->size();
  return tape->record("exp", std::move(out), {a}, [a, out_id](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(Var<T>(&t, out_id));
    Tensor<T> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i];
    t.accumulate(a, gx);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().data()) s += v;
  return a.tape()->record("sum", Tensor<T>::scalar(static_cast<T>(s)), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, Tensor<T>(a.shape(), g[0]));
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  return a.tape()->record("reshape", a.value().reshaped(std::move(shape)), {a},
                          [a](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, g); });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return a.tape()->record("matmul", kernels::matmul(a.value(), b.value()), {a, b},
                          [a, b](Tape<T>& t, const Tensor<T>& g) {
                            if (t.requires_grad(a)) t.accumulate(a, kernels::matmul_a_bt(g, b.value()));
                            if (t.requires_grad(b)) t.accumulate(b, kernels::matmul_at_b(a.value(), g));
                          });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad) {
  return x.tape()->record("conv2d", kernels::conv2d(x.value(), w.value(), stride, pad), {x, w},
                          [x, w, stride, pad](Tape<T>& t, const Tensor<T>& g) {
                            if (t.requires_grad(x)) {
                              t.accumulate(x, kernels::conv2d_grad_input(g, w.value(), x.shape(), stride, pad));
                            }
                            if (t.requires_grad(w)) {
                              t.accumulate(w, kernels::conv2d_grad_weight(x.value(), g, w.shape(), stride, pad));
                            }
                          });
}

template <typename T>
Var<T> bias_add(Var<T> x, Var<T> b) {
  const kernels::ChannelLayout l = kernels::channel_layout(x.shape());
  if (b.value().size() != l.channels) {
    throw DimensionError("bias of size " + std::to_string(b.value().size()) + " for " + shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      T* p = out.ptr() + (o * l.channels + c) * l.inner;
      const T bc = b.value()[c];
      for (std::size_t i = 0; i < l.inner; ++i) p[i] += bc;
    }
  }
  return x.tape()->record("bias_add", std::move(out), {x, b}, [x, b, l](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, g);
    if (!t.requires_grad(b)) return;
    std::vector<double> acc(l.channels, 0.0);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        const T* p = g.ptr() + (o * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) acc[c] += p[i];
      }
    }
    Tensor<T> gb(b.shape());
    for (std::size_t c = 0; c < l.channels; ++c) gb[c] = static_cast<T>(acc[c]);
    t.accumulate(b, gb);
  });
}

template <typename T>
Var<T> norm_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  auto cache = std::make_shared<kernels::NormCache<T>>();
  Tensor<T> out = kernels::norm_affine(x.value(), gamma.value(), beta.value(), cache.get());
  return x.tape()->record("norm_affine", std::move(out), {x, gamma, beta},
                          [x, gamma, beta, cache](Tape<T>& t, const Tensor<T>& g) {
                            auto grads = kernels::norm_affine_backward(g, gamma.value(), *cache);
                            t.accumulate(x, grads[0]);
                            t.accumulate(gamma, grads[1]);
                            t.accumulate(beta, grads[2]);
                          });
}

template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t factor) {
  return x.tape()->record("upsample_bilinear", kernels::upsample_bilinear(x.value(), factor), {x},
                          [x, factor](Tape<T>& t, const Tensor<T>& g) {
                            t.accumulate(x, kernels::upsample_bilinear_backward(g, x.shape(), factor));
                          });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  auto dlogits = std::make_shared<Tensor<T>>();
  const double loss = kernels::softmax_cross_entropy(logits.value(), labels, dlogits.get());
  return logits.tape()->record("softmax_cross_entropy", Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                               [logits, dlogits](Tape<T>& t, const Tensor<T>& g) {
                                 Tensor<T> gx = *dlogits;
                                 for (auto& v : gx.data()) v *= g[0];
                                 t.accumulate(logits, gx);
                               });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len) {
  if (x.value().rank() != 2 || start + len > x.shape()[1]) {
    throw DimensionError("slice_cols out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor<T> out({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.value().ptr() + r * cols + start, len, out.ptr() + r * len);
  }
  return x.tape()->record("slice_cols", std::move(out), {x}, [x, start, len, rows, cols](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.ptr() + r * len, len, gx.ptr() + r * cols + start);
    t.accumulate(x, gx);
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  return a.tape()->record("concat_channels", kernels::concat_channels(a.value(), b.value()), {a, b},
                          [a, b](Tape<T>& t, const Tensor<T>& g) {
                            const Shape& as = a.shape();
                            const Shape& bs = b.shape();
                            const std::size_t batched = as.size() == 4 ? as[0] : 1;
                            const std::size_t ca = as[as.size() - 3], cb = bs[bs.size() - 3];
                            const std::size_t hw = as[as.size() - 2] * as[as.size() - 1];
                            Tensor<T> ga(as), gb(bs);
                            for (std::size_t n = 0; n < batched; ++n) {
                              const T* src = g.ptr() + n * (ca + cb) * hw;
                              std::copy_n(src, ca * hw, ga.ptr() + n * ca * hw);
                              std::copy_n(src + ca * hw, cb * hw, gb.ptr() + n * cb * hw);
                            }
                            t.accumulate(a, ga);
                            t.accumulate(b, gb);
                          });
}

template <typename T>
Var<T> sobel_magnitude(Var<T> x) {
  return x.tape()->record("sobel_magnitude", kernels::sobel_magnitude(x.value()), {x},
                          [x](Tape<T>& t, const Tensor<T>& g) {
                            t.accumulate(x, kernels::sobel_magnitude_backward(g, x.value()));
                          });
}

#define PMTK_INSTANTIATE_AUTOGRAD(T)                                               \
  template class Tape<T>;                                                          \
  template Var<T> add(Var<T>, Var<T>);                                             \
  template Var<T> sub(Var<T>, Var<T>);                                             \
  template Var<T> mul(Var<T>, Var<T>);                                             \
  template Var<T> scale(Var<T>, double);                                           \
  template Var<T> relu(Var<T>);                                                    \
  template Var<T> silu(Var<T>);                                                    \
  template Var<T> softplus(Var<T>);                                                \
  template Var<T> exp(Var<T>);                                                     \
  template Var<T> sum(Var<T>);                                                     \
  template Var<T> reshape(Var<T>, Shape);                                          \
  template Var<T> matmul(Var<T>, Var<T>);                                          \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t);                \
  template Var<T> bias_add(Var<T>, Var<T>);                                        \
  template Var<T> norm_affine(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> upsample_bilinear(Var<T>, std::size_t);                          \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);             \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> concat_channels(Var<T>, Var<T>);                                 \
  template Var<T> sobel_magnitude(Var<T>);

PMTK_INSTANTIATE_AUTOGRAD(float)
PMTK_INSTANTIATE_AUTOGRAD(double)

}  // namespace pmtk
