#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// A Tape owns every value produced during one forward pass. Ops append a node
// holding the output value and, when any input requires a gradient, a closure
// that maps the output gradient back onto the inputs. backward() replays the
// closures in exact reverse order of recording. One tape belongs to one
// thread; nothing here is synchronized.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmtk/tensor.hpp"

namespace pmtk {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  // With grad disabled nothing is retained for backward and every op output
  // is a constant.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  // Bytes held by node values (gradients excluded).
  std::size_t value_bytes() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node->value.size() * sizeof(T);
    return n;
  }

  // A differentiable input (parameter or probe input).
  Var<T> leaf(Tensor<T> value);
  Var<T> constant(Tensor<T> value);

  // Appends an op output. `backward` is dropped unless some input requires a
  // gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  std::string_view op_name(Var<T> v) const { return node(v).op; }

  // Gradient accumulated for v by the last backward(); all zeros when v is
  // not on any path to the loss.
  Tensor<T> grad(Var<T> v) const;

  // Adds g into v's accumulator (no-op for constants). Called from backward
  // closures.
  void accumulate(Var<T> v, const Tensor<T>& g);

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws UsageError unless loss
  // holds exactly one element.
  void backward(Var<T> loss);

  // Node ids whose closures ran during the last backward(), in call order.
  const std::vector<std::size_t>& last_backward_order() const { return backward_order_; }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var<T> v) const;
  Node& node(Var<T> v);
  Var<T> push(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn backward);

  bool grad_enabled_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::size_t> backward_order_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

// ---- differentiable ops ---------------------------------------------------
//
// Binary elementwise ops accept identical shapes only.

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double c);
template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> silu(Var<T> a);
template <typename T>
Var<T> softplus(Var<T> a);
template <typename T>
Var<T> exp(Var<T> a);
template <typename T>
Var<T> sum(Var<T> a);  // -> scalar
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad);

// Adds b[C] along the channel axis: [N,C,H,W] / [C,H,W] channel dim 1 / 0,
// [R,C] column-wise.
template <typename T>
Var<T> bias_add(Var<T> x, Var<T> b);

// Per-channel batch standardization (batch statistics, eps 1e-5) followed by
// gamma * x + beta. Layouts as bias_add.
template <typename T>
Var<T> norm_affine(Var<T> x, Var<T> gamma, Var<T> beta);

template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t factor);

// labels: N*H*W class ids. Mean over pixels.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

// Columns [start, start+len) of a rank-2 tensor.
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

// 3x3 Sobel gradient magnitude per channel (replicate border); gradient 0
// where the magnitude is 0.
template <typename T>
Var<T> sobel_magnitude(Var<T> x);

}  // namespace pmtk
