#include "airsum/tape.hpp"

#include <cmath>
#include <utility>

#include "airsum/error.hpp"

namespace airsum::num {

namespace {

bool scalarish(const Tensor& t) { return t.size() == 1; }

// Reshapes (sizes equal) or sum-reduces (target is single-element) an
// output gradient onto a parent's shape.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  std::size_t want = shape_size(target);
  if (want == g.size()) {
    return Tensor::from_data(target, std::vector<double>(g.data().begin(), g.data().end()));
  }
  if (want == 1) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
    return Tensor::from_data(target, {acc});
  }
  throw ShapeError("gradient reduction mismatch: " + shape_str(g.shape()) +
                   " -> " + shape_str(target));
}

template <typename F>
Tensor ew_binary(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out = Tensor::zeros(out_shape);
  auto oa = out.mutable_data();
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < oa.size(); ++i) oa[i] = f(a[i], b[i]);
  } else if (scalarish(a)) {
    double av = a[0];
    for (std::size_t i = 0; i < oa.size(); ++i) oa[i] = f(av, b[i]);
  } else {
    double bv = b[0];
    for (std::size_t i = 0; i < oa.size(); ++i) oa[i] = f(a[i], bv);
  }
  return out;
}

const Shape& binary_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return a.shape();
  if (scalarish(a) && scalarish(b)) return a.rank() >= b.rank() ? a.shape() : b.shape();
  if (scalarish(b)) return a.shape();
  if (scalarish(a)) return b.shape();
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
}

void check_same_tape(const char* op, Var a, Var b) {
  if (a.tape != b.tape) {
    throw InvalidArgument(std::string(op) + ": operands on different tapes");
  }
}

}  // namespace

const Tensor& Var::value() const { return tape->value_of(id); }
const Shape& Var::shape() const { return value().shape(); }

void GradSink::add(std::uint32_t id, Tensor grad) {
  grad.ensure_finite("gradient");
  if (!present_[id]) {
    slots_[id] = std::move(grad);
    present_[id] = 1;
    return;
  }
  Tensor& dst = slots_[id];
  if (dst.size() != grad.size()) {
    throw ShapeError("gradient accumulation shape mismatch");
  }
  auto d = dst.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += grad[i];
}

Tensor GradSink::take(std::uint32_t id) {
  present_[id] = 0;
  return std::move(slots_[id]);
}

const Tensor& Gradients::at(const Var& leaf) const {
  auto it = by_id_.find(leaf.id);
  if (it == by_id_.end()) {
    throw InvalidArgument("no gradient recorded for this leaf");
  }
  return it->second;
}

Var Tape::leaf(Tensor value, bool trainable) {
  value.ensure_finite("leaf");
  nodes_.push_back(Node{std::move(value), BackwardFn{}, trainable});
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  if (trainable) trainable_.push_back(id);
  return Var{this, id};
}

Var Tape::make(const char* op, Tensor value, BackwardFn backward) {
  value.ensure_finite(op);
  nodes_.push_back(Node{std::move(value), std::move(backward), false});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape != this) throw InvalidArgument("backward: loss not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar");
  }
  GradSink sink(nodes_.size());
  sink.add(loss.id, Tensor::from_data(loss.value().shape(), {1.0}));
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    if (!sink.present(i)) continue;
    const Node& node = nodes_[i];
    if (node.backward) node.backward(sink.at(i), sink);
  }
  Gradients grads;
  for (std::uint32_t id : trainable_) {
    if (id > loss.id || !sink.present(id)) {
      grads.by_id_.emplace(id, Tensor::zeros(nodes_[id].value.shape()));
    } else {
      grads.by_id_.emplace(id, sink.take(id));
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// elementwise binaries
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape("add", a, b);
  Tensor out = ew_binary(a.value(), b.value(), binary_shape("add", a.value(), b.value()),
                         [](double x, double y) { return x + y; });
  return a.tape->make("add", std::move(out), [a, b](const Tensor& g, GradSink& sink) {
    sink.add(a.id, reduce_to(g, a.shape()));
    sink.add(b.id, reduce_to(g, b.shape()));
  });
}

Var sub(Var a, Var b) {
  check_same_tape("sub", a, b);
  Tensor out = ew_binary(a.value(), b.value(), binary_shape("sub", a.value(), b.value()),
                         [](double x, double y) { return x - y; });
  return a.tape->make("sub", std::move(out), [a, b](const Tensor& g, GradSink& sink) {
    sink.add(a.id, reduce_to(g, a.shape()));
    Tensor gb = Tensor::zeros(g.shape());
    auto d = gb.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g[i];
    sink.add(b.id, reduce_to(gb, b.shape()));
  });
}

Var mul(Var a, Var b) {
  check_same_tape("mul", a, b);
  Tensor out = ew_binary(a.value(), b.value(), binary_shape("mul", a.value(), b.value()),
                         [](double x, double y) { return x * y; });
  return a.tape->make("mul", std::move(out), [a, b](const Tensor& g, GradSink& sink) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga = ew_binary(g, bv, g.shape(), [](double x, double y) { return x * y; });
    Tensor gb = ew_binary(g, av, g.shape(), [](double x, double y) { return x * y; });
    sink.add(a.id, reduce_to(ga, a.shape()));
    sink.add(b.id, reduce_to(gb, b.shape()));
  });
}

Var div(Var a, Var b) {
  check_same_tape("div", a, b);
  Tensor out = ew_binary(a.value(), b.value(), binary_shape("div", a.value(), b.value()),
                         [](double x, double y) { return x / y; });
  return a.tape->make("div", std::move(out), [a, b](const Tensor& g, GradSink& sink) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga = ew_binary(g, bv, g.shape(), [](double x, double y) { return x / y; });
    // d(a/b)/db = -a / b^2
    Tensor gb = Tensor::zeros(g.shape());
    auto d = gb.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      double an = scalarish(av) ? av[0] : av[i];
      double bn = scalarish(bv) ? bv[0] : bv[i];
      d[i] = -g[i] * an / (bn * bn);
    }
    sink.add(a.id, reduce_to(ga, a.shape()));
    sink.add(b.id, reduce_to(gb, b.shape()));
  });
}

Var affine(Var x, double scale, double shift) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.shape());
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = scale * xv[i] + shift;
  return x.tape->make("affine", std::move(out), [x, scale](const Tensor& g, GradSink& sink) {
    Tensor gx = Tensor::zeros(g.shape());
    auto d = gx.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = scale * g[i];
    sink.add(x.id, std::move(gx));
  });
}

// ---------------------------------------------------------------------------
// elementwise unaries
// ---------------------------------------------------------------------------

namespace {

// Builds a unary node whose backward multiplies the output gradient by a
// locally computed derivative dfn(x, y). The output handle is known before
// the node is recorded (ids are sequential), so the closure can read the
// stored output value during backward without copying it.
template <typename Fwd, typename Dfn>
Var unary(const char* op, Var x, Fwd fwd, Dfn dfn) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.shape());
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = fwd(xv[i]);
  Var y{x.tape, static_cast<std::uint32_t>(x.tape->node_count())};
  return x.tape->make(op, std::move(out), [x, y, dfn](const Tensor& g, GradSink& sink) {
    const Tensor& xv = x.value();
    const Tensor& yv = y.value();
    Tensor gx = Tensor::zeros(g.shape());
    auto gd = gx.mutable_data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = g[i] * dfn(xv[i], yv[i]);
    sink.add(x.id, std::move(gx));
  });
}

}  // namespace

Var neg(Var x) { return affine(x, -1.0, 0.0); }

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

namespace {
double sigmoid_stable(double v) {
  if (v >= 0.0) {
    double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
  return unary("sigmoid", x, sigmoid_stable,
               [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary("softplus", x,
               [](double v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0); },
               [](double v, double) { return sigmoid_stable(v); });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var reciprocal(Var x) {
  return unary("reciprocal", x, [](double v) { return 1.0 / v; },
               [](double, double y) { return -y * y; });
}

Var clamp_min(Var x, double lo) {
  return unary("clamp_min", x, [lo](double v) { return v < lo ? lo : v; },
               [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

Var clamp(Var x, double lo, double hi) {
  return unary("clamp", x,
               [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
               [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return x.tape->make("sum", Tensor::scalar(acc), [x](const Tensor& g, GradSink& sink) {
    sink.add(x.id, Tensor::full(x.shape(), g[0]));
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  double inv = 1.0 / static_cast<double>(xv.size());
  return x.tape->make("mean", Tensor::scalar(acc * inv), [x, inv](const Tensor& g, GradSink& sink) {
    sink.add(x.id, Tensor::full(x.shape(), g[0] * inv));
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matvec(Var m, Var v) {
  check_same_tape("matvec", m, v);
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || mv.extent(1) != vv.extent(0)) {
    throw ShapeError("matvec: shape mismatch " + shape_str(mv.shape()) + " x " +
                     shape_str(vv.shape()));
  }
  std::size_t r = mv.extent(0), c = mv.extent(1);
  Tensor out = Tensor::zeros({r});
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += mv.at(i, j) * vv[j];
    out[i] = acc;
  }
  return m.tape->make("matvec", std::move(out), [m, v, r, c](const Tensor& g, GradSink& sink) {
    const Tensor& mv = m.value();
    const Tensor& vv = v.value();
    Tensor gm = Tensor::zeros({r, c});
    Tensor gv = Tensor::zeros({c});
    for (std::size_t i = 0; i < r; ++i) {
      double gi = g[i];
      for (std::size_t j = 0; j < c; ++j) {
        gm.at(i, j) = gi * vv[j];
        gv[j] += gi * mv.at(i, j);
      }
    }
    sink.add(m.id, std::move(gm));
    sink.add(v.id, std::move(gv));
  });
}

Var matvec_t(Var m, Var v) {
  check_same_tape("matvec_t", m, v);
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || mv.extent(0) != vv.extent(0)) {
    throw ShapeError("matvec_t: shape mismatch " + shape_str(mv.shape()) + "^T x " +
                     shape_str(vv.shape()));
  }
  std::size_t r = mv.extent(0), c = mv.extent(1);
  Tensor out = Tensor::zeros({c});
  for (std::size_t i = 0; i < r; ++i) {
    double vi = vv[i];
    for (std::size_t j = 0; j < c; ++j) out[j] += mv.at(i, j) * vi;
  }
  return m.tape->make("matvec_t", std::move(out), [m, v, r, c](const Tensor& g, GradSink& sink) {
    const Tensor& mv = m.value();
    const Tensor& vv = v.value();
    Tensor gm = Tensor::zeros({r, c});
    Tensor gv = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        gm.at(i, j) = vv[i] * g[j];
        acc += mv.at(i, j) * g[j];
      }
      gv[i] = acc;
    }
    sink.add(m.id, std::move(gm));
    sink.add(v.id, std::move(gv));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double apv = av.at(i, p);
      if (apv == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += apv * bv.at(p, j);
    }
  }
  return a.tape->make("matmul", std::move(out), [a, b, m, k, n](const Tensor& g, GradSink& sink) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga = Tensor::zeros({m, k});
    Tensor gb = Tensor::zeros({k, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double gij = g.at(i, j);
        if (gij == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga.at(i, p) += gij * bv.at(p, j);
          gb.at(p, j) += gij * av.at(i, p);
        }
      }
    }
    sink.add(a.id, std::move(ga));
    sink.add(b.id, std::move(gb));
  });
}

Var transpose(Var m) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2) throw ShapeError("transpose: rank-2 required");
  std::size_t r = mv.extent(0), c = mv.extent(1);
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = mv.at(i, j);
  return m.tape->make("transpose", std::move(out), [m, r, c](const Tensor& g, GradSink& sink) {
    Tensor gm = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gm.at(i, j) = g.at(j, i);
    sink.add(m.id, std::move(gm));
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Var conv1d(Var signal, Var kernels, bool same_padding) {
  check_same_tape("conv1d", signal, kernels);
  const Tensor& sv = signal.value();
  const Tensor& kv = kernels.value();
  if (sv.rank() != 2 || kv.rank() != 3) {
    throw ShapeError("conv1d: signal must be (channels,length), kernels (out,in,k)");
  }
  std::size_t cin = sv.extent(0), len = sv.extent(1);
  std::size_t cout = kv.extent(0), kin = kv.extent(1), k = kv.extent(2);
  if (kin != cin) {
    throw ShapeError("conv1d: channel mismatch, signal has " + std::to_string(cin) +
                     ", kernels expect " + std::to_string(kin));
  }
  if (same_padding && k % 2 == 0) {
    throw InvalidArgument("conv1d: same padding requires odd kernel size");
  }
  if (!same_padding && k > len) {
    throw ShapeError("conv1d: kernel longer than signal in valid mode");
  }
  std::size_t pad = same_padding ? (k - 1) / 2 : 0;
  std::size_t out_len = same_padding ? len : len - k + 1;
  Tensor out = Tensor::zeros({cout, out_len});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t j = 0; j < k; ++j) {
        double w = kv.at(o, ci, j);
        if (w == 0.0) continue;
        // s = t + j - pad must fall inside the signal
        std::size_t t_lo = (pad > j) ? pad - j : 0;
        std::size_t t_hi = std::min<std::size_t>(out_len, len + pad - j);
        for (std::size_t t = t_lo; t < t_hi; ++t) {
          out.at(o, t) += w * sv.at(ci, t + j - pad);
        }
      }
    }
  }
  return signal.tape->make(
      "conv1d", std::move(out),
      [signal, kernels, cin, len, cout, k, pad, out_len](const Tensor& g, GradSink& sink) {
        const Tensor& sv = signal.value();
        const Tensor& kv = kernels.value();
        Tensor gs = Tensor::zeros({cin, len});
        Tensor gk = Tensor::zeros({cout, cin, k});
        for (std::size_t o = 0; o < cout; ++o) {
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t j = 0; j < k; ++j) {
              double w = kv.at(o, ci, j);
              double gw = 0.0;
              std::size_t t_lo = (pad > j) ? pad - j : 0;
              std::size_t t_hi = std::min<std::size_t>(out_len, len + pad - j);
              for (std::size_t t = t_lo; t < t_hi; ++t) {
                double go = g.at(o, t);
                gs.at(ci, t + j - pad) += go * w;
                gw += go * sv.at(ci, t + j - pad);
              }
              gk.at(o, ci, j) += gw;
            }
          }
        }
        sink.add(signal.id, std::move(gs));
        sink.add(kernels.id, std::move(gk));
      });
}

Var channel_bias(Var signal, Var bias) {
  check_same_tape("channel_bias", signal, bias);
  const Tensor& sv = signal.value();
  const Tensor& bv = bias.value();
  if (sv.rank() != 2 || bv.rank() != 1 || bv.extent(0) != sv.extent(0)) {
    throw ShapeError("channel_bias: bias length must equal channel count");
  }
  std::size_t ch = sv.extent(0), len = sv.extent(1);
  Tensor out = Tensor::zeros({ch, len});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t t = 0; t < len; ++t) out.at(c, t) = sv.at(c, t) + bv[c];
  return signal.tape->make("channel_bias", std::move(out),
                           [signal, bias, ch, len](const Tensor& g, GradSink& sink) {
                             Tensor gb = Tensor::zeros({ch});
                             for (std::size_t c = 0; c < ch; ++c) {
                               double acc = 0.0;
                               for (std::size_t t = 0; t < len; ++t) acc += g.at(c, t);
                               gb[c] = acc;
                             }
                             Tensor gs = Tensor::from_data(
                                 {ch, len}, std::vector<double>(g.data().begin(), g.data().end()));
                             sink.add(signal.id, std::move(gs));
                             sink.add(bias.id, std::move(gb));
                           });
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size()) {
    throw ShapeError("reshape: size mismatch " + shape_str(xv.shape()) + " -> " +
                     shape_str(shape));
  }
  Tensor out = Tensor::from_data(shape, std::vector<double>(xv.data().begin(), xv.data().end()));
  return x.tape->make("reshape", std::move(out), [x](const Tensor& g, GradSink& sink) {
    sink.add(x.id, Tensor::from_data(x.shape(), std::vector<double>(g.data().begin(), g.data().end())));
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw InvalidArgument("stack_rows: no rows");
  std::size_t n = rows[0].value().size();
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != n) {
      throw ShapeError("stack_rows: rows must be equal-length vectors");
    }
  }
  std::size_t k = rows.size();
  Tensor out = Tensor::zeros({k, n});
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor& rv = rows[i].value();
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = rv[j];
  }
  std::vector<Var> held(rows.begin(), rows.end());
  return rows[0].tape->make("stack_rows", std::move(out),
                            [held, n](const Tensor& g, GradSink& sink) {
                              for (std::size_t i = 0; i < held.size(); ++i) {
                                Tensor gi = Tensor::zeros({n});
                                for (std::size_t j = 0; j < n; ++j) gi[j] = g.at(i, j);
                                sink.add(held[i].id, std::move(gi));
                              }
                            });
}

Var row(Var m, std::size_t i) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || i >= mv.extent(0)) throw ShapeError("row: index out of range");
  std::size_t c = mv.extent(1);
  Tensor out = Tensor::zeros({c});
  for (std::size_t j = 0; j < c; ++j) out[j] = mv.at(i, j);
  return m.tape->make("row", std::move(out), [m, i, c](const Tensor& g, GradSink& sink) {
    Tensor gm = Tensor::zeros(m.shape());
    for (std::size_t j = 0; j < c; ++j) gm.at(i, j) = g[j];
    sink.add(m.id, std::move(gm));
  });
}

Var gather(Var x, std::vector<std::size_t> idx) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[idx[i]];
  }
  return x.tape->make("gather", std::move(out),
                      [x, idx = std::move(idx)](const Tensor& g, GradSink& sink) {
                        Tensor gx = Tensor::zeros(x.shape());
                        for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
                        sink.add(x.id, std::move(gx));
                      });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat: no parts");
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 1) throw ShapeError("concat: 1-D parts required");
    total += p.value().size();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t pos = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < p.value().size(); ++i) out[pos++] = p.value()[i];
  }
  std::vector<Var> held(parts.begin(), parts.end());
  return parts[0].tape->make("concat", std::move(out),
                             [held](const Tensor& g, GradSink& sink) {
                               std::size_t pos = 0;
                               for (const Var& p : held) {
                                 std::size_t n = p.value().size();
                                 Tensor gp = Tensor::zeros({n});
                                 for (std::size_t i = 0; i < n; ++i) gp[i] = g[pos + i];
                                 pos += n;
                                 sink.add(p.id, std::move(gp));
                               }
                             });
}

}  // namespace airsum::num
