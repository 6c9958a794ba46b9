#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "airsum/tensor.hpp"

namespace airsum::num {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid for the
// lifetime of the owning tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool valid() const { return tape != nullptr; }
};

// Accumulates gradient contributions per node during a backward pass.
class GradSink {
 public:
  explicit GradSink(std::size_t n) : slots_(n), present_(n, 0) {}

  void add(std::uint32_t id, Tensor grad);
  bool present(std::uint32_t id) const { return present_[id] != 0; }
  const Tensor& at(std::uint32_t id) const { return slots_[id]; }
  Tensor take(std::uint32_t id);

 private:
  std::vector<Tensor> slots_;
  std::vector<char> present_;
};

using BackwardFn = std::function<void(const Tensor& out_grad, GradSink& sink)>;

// Gradients of a scalar loss with respect to trainable leaves.
class Gradients {
 public:
  bool contains(const Var& leaf) const { return by_id_.count(leaf.id) > 0; }
  const Tensor& at(const Var& leaf) const;
  std::size_t size() const { return by_id_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::uint32_t, Tensor> by_id_;
};

// Reverse-mode gradient tape with eager forward evaluation. Values are
// recorded in creation order, so replaying the records backward from the
// loss visits a valid topological order. Every operation validates its
// output for NaN/Inf. A tape must not be shared across threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool trainable = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double value) { return leaf(Tensor::scalar(value), false); }

  // Extension point for fused kernels: records a node whose backward
  // closure distributes `out_grad` to its parents through the sink.
  Var make(const char* op, Tensor value, BackwardFn backward);

  // Gradients of a scalar loss for every trainable leaf (zero tensors for
  // leaves the loss does not depend on). Non-destructive: may be replayed.
  Gradients backward(const Var& loss) const;

  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;  // empty for leaves
    bool trainable = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> trainable_;
};

// ---------------------------------------------------------------------------
// Primitive operations. Binary elementwise ops accept equal shapes or a
// single-element tensor on either side (broadcast as a scalar).
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

// scale * x + shift, without creating constant nodes.
Var affine(Var x, double scale, double shift);

Var neg(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var relu(Var x);
Var abs(Var x);
Var square(Var x);
Var reciprocal(Var x);
Var clamp_min(Var x, double lo);
Var clamp(Var x, double lo, double hi);

Var sum(Var x);
Var mean(Var x);

Var matvec(Var m, Var v);    // (r,c) x (c) -> (r)
Var matvec_t(Var m, Var v);  // (r,c)^T x (r) -> (c)
Var matmul(Var a, Var b);    // (m,k) x (k,n) -> (m,n)
Var transpose(Var m);

// Cross-correlation of a (channels, length) signal with (out, in, k)
// kernels. With same_padding the length is preserved (k must be odd);
// otherwise the valid part of length len-k+1 is returned.
Var conv1d(Var signal, Var kernels, bool same_padding);
// Adds bias[ch] to every element of row ch of a (channels, length) map.
Var channel_bias(Var signal, Var bias);

Var reshape(Var x, Shape shape);
Var stack_rows(std::span<const Var> rows);  // k vectors of n -> (k, n)
Var row(Var m, std::size_t i);              // row i of (r, c) -> (c)
Var gather(Var x, std::vector<std::size_t> idx);
Var concat(std::span<const Var> parts);  // 1-D concatenation

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return affine(a, 1.0, c); }
inline Var operator+(double c, Var a) { return affine(a, 1.0, c); }
inline Var operator-(Var a, double c) { return affine(a, 1.0, -c); }
inline Var operator-(double c, Var a) { return affine(a, -1.0, c); }
inline Var operator*(Var a, double c) { return affine(a, c, 0.0); }
inline Var operator*(double c, Var a) { return affine(a, c, 0.0); }
inline Var operator/(Var a, double c) { return affine(a, 1.0 / c, 0.0); }

}  // namespace airsum::num
