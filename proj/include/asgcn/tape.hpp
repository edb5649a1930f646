#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/errors.hpp"
#include "asgcn/tensor.hpp"

namespace asgcn {

// Trainable tensor. Gradients are accumulated by Tape::backward and
// consumed by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Reverse-mode tape. One Tape per forward pass; ops append nodes, and
// backward() walks them in reverse, accumulating into Parameter::grad.
class Tape {
public:
  struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
  };

  Var constant(Tensor v) { return push(std::move(v), /*needs_grad=*/false); }

  Var leaf(Parameter& p) {
    Var r = push(p.value, /*needs_grad=*/true);
    nodes_[r.id].param = &p;
    return r;
  }

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() root w.r.t. this node; zeros if the
  // node did not participate.
  const Tensor& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void backward(Var root) {
    Node& r = nodes_[root.id];
    if (r.value.numel() != 1)
      throw ParameterError("backward: root must be scalar, got shape " +
                           shape_str(r.value.shape()));
    if (!std::isfinite(r.value[0]))
      throw NumericError("backward: non-finite loss value");
    accum(root, Tensor::scalar(1.0));
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---

  Var push(Tensor value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, {}, needs_grad});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void set_back(Var v, std::function<void(Tape&)> fn) {
    nodes_[v.id].back = std::move(fn);
  }

  // Adds g into the gradient buffer of v (no-op for constants).
  void accum(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad += g;
  }

  Tensor& grad_buf(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  // deque: references into nodes stay valid while new ops are pushed
  std::deque<Node> nodes_;
};

using Var = Tape::Var;

namespace ops {

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.val(a), t.val(b), "add");
  Tensor out = t.val(a);
  out += t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      tp.accum(a, g);
      tp.accum(b, g);
    });
  return r;
}

inline Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.val(a), t.val(b), "sub");
  Tensor out = t.val(a);
  out -= t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      tp.accum(a, g);
      Tensor neg = g;
      neg *= -1.0;
      tp.accum(b, neg);
    });
  return r;
}

// Hadamard product.
inline Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.val(a), t.val(b), "hadamard");
  Tensor out = hadamard(t.val(a), t.val(b));
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      tp.accum(a, hadamard(g, tp.val(b)));
      tp.accum(b, hadamard(g, tp.val(a)));
    });
  return r;
}

inline Var scale(Tape& t, Var a, double c) {
  Tensor out = t.val(a);
  out *= c;
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, c, r](Tape& tp) {
      Tensor g = tp.grad(r);
      g *= c;
      tp.accum(a, g);
    });
  return r;
}

inline Var add_scalar(Tape& t, Var a, double c) {
  Tensor out = t.val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, r](Tape& tp) { tp.accum(a, tp.grad(r)); });
  return r;
}

inline Var matmul(Tape& t, Var a, Var b) {
  Tensor out = asgcn::matmul(t.val(a), t.val(b));
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(a)) {
        Tensor ga(tp.val(a).shape());
        as_matrix(ga).noalias() = as_matrix(g) * as_matrix(tp.val(b)).transpose();
        tp.accum(a, ga);
      }
      if (tp.needs_grad(b)) {
        Tensor gb(tp.val(b).shape());
        as_matrix(gb).noalias() = as_matrix(tp.val(a)).transpose() * as_matrix(g);
        tp.accum(b, gb);
      }
    });
  return r;
}

// Applies the same [n,n] kernel to each time block of F, where F is
// [T*n, d] with frame-major rows. Used by the graph convolutions so a
// whole sequence runs as a handful of matrix products.
inline Var frames_matmul(Tape& t, Var kernel, Var f) {
  const Tensor& K = t.val(kernel);
  const Tensor& F = t.val(f);
  if (K.rank() != 2 || K.extent(0) != K.extent(1))
    throw DimensionError("frames_matmul: kernel must be square, got " +
                         shape_str(K.shape()));
  const std::size_t n = K.extent(0);
  if (F.rank() != 2 || F.extent(0) % n != 0)
    throw DimensionError("frames_matmul: rows of " + shape_str(F.shape()) +
                         " not a multiple of kernel size " + std::to_string(n));
  const std::size_t frames = F.extent(0) / n;
  const std::size_t d = F.extent(1);
  Tensor out(F.shape());
  for (std::size_t fr = 0; fr < frames; ++fr) {
    ConstMatMap fb(F.data() + fr * n * d, n, d);
    MatMap ob(out.data() + fr * n * d, n, d);
    ob.noalias() = as_matrix(K) * fb;
  }
  bool ng = t.needs_grad(kernel) || t.needs_grad(f);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [kernel, f, r, n, frames, d](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(f)) {
        Tensor gf(tp.val(f).shape());
        for (std::size_t fr = 0; fr < frames; ++fr) {
          ConstMatMap gb(g.data() + fr * n * d, n, d);
          MatMap ob(gf.data() + fr * n * d, n, d);
          ob.noalias() = as_matrix(tp.val(kernel)).transpose() * gb;
        }
        tp.accum(f, gf);
      }
      if (tp.needs_grad(kernel)) {
        Tensor gk(tp.val(kernel).shape());
        auto m = as_matrix(gk);
        for (std::size_t fr = 0; fr < frames; ++fr) {
          ConstMatMap gb(g.data() + fr * n * d, n, d);
          ConstMatMap fb(tp.val(f).data() + fr * n * d, n, d);
          m.noalias() += gb * fb.transpose();
        }
        tp.accum(kernel, gk);
      }
    });
  return r;
}

namespace detail {
// [n,d,T] <-> [T*n,d] copies (frame-major rows).
inline Tensor frames_of(const Tensor& x) {
  const std::size_t n = x.extent(0), d = x.extent(1), T = x.extent(2);
  Tensor out({T * n, d});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const double* src = x.data() + (j * d + c) * T;
      for (std::size_t tt = 0; tt < T; ++tt)
        out(tt * n + j, c) = src[tt];
    }
  return out;
}

inline Tensor unframes_of(const Tensor& f, std::size_t n) {
  const std::size_t T = f.extent(0) / n, d = f.extent(1);
  Tensor out({n, d, T});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      double* dst = out.data() + (j * d + c) * T;
      for (std::size_t tt = 0; tt < T; ++tt)
        dst[tt] = f(tt * n + j, c);
    }
  return out;
}
}  // namespace detail

// [n,d,T] -> [T*n,d]; row t*n+j holds joint j at frame t.
inline Var to_frames(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3)
    throw DimensionError("to_frames: expected [n,d,T], got " +
                         shape_str(X.shape()));
  const std::size_t n = X.extent(0);
  bool ng = t.needs_grad(x);
  Var r = t.push(detail::frames_of(X), ng);
  if (ng)
    t.set_back(r, [x, r, n](Tape& tp) {
      tp.accum(x, detail::unframes_of(tp.grad(r), n));
    });
  return r;
}

inline Var from_frames(Tape& t, Var f, std::size_t n) {
  const Tensor& F = t.val(f);
  if (F.rank() != 2 || F.extent(0) % n != 0)
    throw DimensionError("from_frames: bad shape " + shape_str(F.shape()));
  bool ng = t.needs_grad(f);
  Var r = t.push(detail::unframes_of(F, n), ng);
  if (ng)
    t.set_back(r, [f, r](Tape& tp) {
      tp.accum(f, detail::frames_of(tp.grad(r)));
    });
  return r;
}

inline Var reshape(Tape& t, Var a, Shape s) {
  Tensor out = t.val(a).reshaped(s);
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, r](Tape& tp) {
      tp.accum(a, tp.grad(r).reshaped(tp.val(a).shape()));
    });
  return r;
}

inline Var concat(Tape& t, Var a, Var b, std::size_t axis) {
  Tensor out = asgcn::concat(t.val(a), t.val(b), axis);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, b, axis, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      const Tensor& A = tp.val(a);
      const Tensor& B = tp.val(b);
      std::size_t outer = 1, inner = 1;
      for (std::size_t d = 0; d < axis; ++d) outer *= A.extent(d);
      for (std::size_t d = axis + 1; d < A.rank(); ++d) inner *= A.extent(d);
      const std::size_t wa = A.extent(axis) * inner;
      const std::size_t wb = B.extent(axis) * inner;
      if (tp.needs_grad(a)) {
        Tensor ga(A.shape());
        for (std::size_t o = 0; o < outer; ++o)
          std::copy(g.data() + o * (wa + wb), g.data() + o * (wa + wb) + wa,
                    ga.data() + o * wa);
        tp.accum(a, ga);
      }
      if (tp.needs_grad(b)) {
        Tensor gb(B.shape());
        for (std::size_t o = 0; o < outer; ++o)
          std::copy(g.data() + o * (wa + wb) + wa,
                    g.data() + (o + 1) * (wa + wb), gb.data() + o * wb);
        tp.accum(b, gb);
      }
    });
  return r;
}

// rows r0..r1 (exclusive) of a rank-2 tensor.
inline Var slice_rows(Tape& t, Var a, std::size_t r0, std::size_t r1) {
  const Tensor& A = t.val(a);
  if (A.rank() != 2 || r1 > A.extent(0) || r0 >= r1)
    throw DimensionError("slice_rows: bad range");
  const std::size_t w = A.extent(1);
  Tensor out({r1 - r0, w});
  std::copy(A.data() + r0 * w, A.data() + r1 * w, out.data());
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, r0, w, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor ga(tp.val(a).shape());
      std::copy(g.data(), g.data() + g.numel(), ga.data() + r0 * w);
      tp.accum(a, ga);
    });
  return r;
}

// channel c of [a,b,K] -> [a,b]
inline Var slice_last(Tape& t, Var x, std::size_t c) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3 || c >= X.extent(2))
    throw DimensionError("slice_last: bad index");
  const std::size_t a = X.extent(0), b = X.extent(1), K = X.extent(2);
  Tensor out({a, b});
  for (std::size_t i = 0; i < a * b; ++i) out[i] = X[i * K + c];
  bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, c, K, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gx(tp.val(x).shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i * K + c] = g[i];
      tp.accum(x, gx);
    });
  return r;
}

// p[n,F] -> [n*n, 2F]; row i*n+j is p[i] (+) p[j].
inline Var pair_concat(Tape& t, Var p) {
  const Tensor& P = t.val(p);
  if (P.rank() != 2) throw DimensionError("pair_concat: expected [n,F]");
  const std::size_t n = P.extent(0), f = P.extent(1);
  Tensor out({n * n, 2 * f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double* row = out.data() + (i * n + j) * 2 * f;
      std::copy(P.data() + i * f, P.data() + (i + 1) * f, row);
      std::copy(P.data() + j * f, P.data() + (j + 1) * f, row + f);
    }
  bool ng = t.needs_grad(p);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [p, n, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gp(tp.val(p).shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double* row = g.data() + (i * n + j) * 2 * f;
          double* gi = gp.data() + i * f;
          double* gj = gp.data() + j * f;
          for (std::size_t k = 0; k < f; ++k) {
            gi[k] += row[k];
            gj[k] += row[f + k];
          }
        }
      tp.accum(p, gp);
    });
  return r;
}

// Q[n*n, F] -> [n, F]; mean over the j index of rows i*n+j.
inline Var pair_mean(Tape& t, Var q, std::size_t n) {
  const Tensor& Q = t.val(q);
  if (Q.rank() != 2 || Q.extent(0) != n * n)
    throw DimensionError("pair_mean: expected [n*n,F]");
  const std::size_t f = Q.extent(1);
  Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* row = Q.data() + (i * n + j) * f;
      double* o = out.data() + i * f;
      for (std::size_t k = 0; k < f; ++k) o[k] += row[k];
    }
  out *= 1.0 / static_cast<double>(n);
  bool ng = t.needs_grad(q);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [q, n, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gq(tp.val(q).shape());
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double* row = gq.data() + (i * n + j) * f;
          const double* gi = g.data() + i * f;
          for (std::size_t k = 0; k < f; ++k) row[k] = gi[k] * inv;
        }
      tp.accum(q, gq);
    });
  return r;
}

// out[i,j,:] = s[i,j] * x[i,j,:]
inline Var scale_pairs(Tape& t, Var x, Var s) {
  const Tensor& X = t.val(x);
  const Tensor& S = t.val(s);
  if (X.rank() != 3 || S.rank() != 2 || X.extent(0) != S.extent(0) ||
      X.extent(1) != S.extent(1))
    throw DimensionError("scale_pairs: shape " + shape_str(X.shape()) +
                         " vs " + shape_str(S.shape()));
  const std::size_t p = S.numel(), f = X.extent(2);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < f; ++k) out[i * f + k] = X[i * f + k] * S[i];
  bool ng = t.needs_grad(x) || t.needs_grad(s);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, s, p, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(x)) {
        Tensor gx(tp.val(x).shape());
        const Tensor& S2 = tp.val(s);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < f; ++k)
            gx[i * f + k] = g[i * f + k] * S2[i];
        tp.accum(x, gx);
      }
      if (tp.needs_grad(s)) {
        Tensor gs(tp.val(s).shape());
        const Tensor& X2 = tp.val(x);
        for (std::size_t i = 0; i < p; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < f; ++k)
            acc += g[i * f + k] * X2[i * f + k];
          gs[i] = acc;
        }
        tp.accum(s, gs);
      }
    });
  return r;
}

namespace detail {
template <typename Fwd, typename Bwd>
Var unary(Tape& t, Var a, Fwd fwd, Bwd dydx_from_out_and_in) {
  const Tensor& A = t.val(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = fwd(A[i]);
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, r, dydx_from_out_and_in](Tape& tp) {
      const Tensor& g = tp.grad(r);
      const Tensor& y = tp.val(r);
      const Tensor& x = tp.val(a);
      Tensor ga(x.shape());
      for (std::size_t i = 0; i < ga.numel(); ++i)
        ga[i] = g[i] * dydx_from_out_and_in(y[i], x[i]);
      tp.accum(a, ga);
    });
  return r;
}
}  // namespace detail

inline Var relu(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// alpha = 1
inline Var elu(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double y, double x) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var sigmoid(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y, double) { return y * (1.0 - y); });
}

inline Var tanh_(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return std::tanh(x); },
      [](double y, double) { return 1.0 - y * y; });
}

inline Var exp_(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return std::exp(x); },
      [](double y, double) { return y; });
}

inline Var sqrt_(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return std::sqrt(x); },
      [](double y, double) { return 0.5 / y; });
}

inline Var recip(Tape& t, Var a) {
  return detail::unary(
      t, a, [](double x) { return 1.0 / x; },
      [](double y, double) { return -y * y; });
}

// Counts how often the floor kicked in; exposed for loss diagnostics.
inline std::atomic<std::uint64_t>& log_clamp_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline Var log_clamped(Tape& t, Var a, double floor = 1e-12) {
  const Tensor& A = t.val(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) {
    double x = A[i];
    if (x < floor) {
      x = floor;
      log_clamp_count()++;
    }
    out[i] = std::log(x);
  }
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, r, floor](Tape& tp) {
      const Tensor& g = tp.grad(r);
      const Tensor& x = tp.val(a);
      Tensor ga(x.shape());
      for (std::size_t i = 0; i < ga.numel(); ++i)
        ga[i] = g[i] / std::max(x[i], floor);
      tp.accum(a, ga);
    });
  return r;
}

inline Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  double s = 0.0;
  for (std::size_t i = 0; i < A.numel(); ++i) s += A[i];
  bool ng = t.needs_grad(a);
  Var r = t.push(Tensor::scalar(s), ng);
  if (ng)
    t.set_back(r, [a, r](Tape& tp) {
      double g = tp.grad(r)[0];
      Tensor ga(tp.val(a).shape(), g);
      tp.accum(a, ga);
    });
  return r;
}

inline Var mean_all(Tape& t, Var a) {
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(t.val(a).numel()));
}

// scalar at flat index -> [1]
inline Var pick(Tape& t, Var a, std::size_t index) {
  const Tensor& A = t.val(a);
  if (index >= A.numel()) throw DimensionError("pick: index out of range");
  bool ng = t.needs_grad(a);
  Var r = t.push(Tensor::scalar(A[index]), ng);
  if (ng)
    t.set_back(r, [a, index, r](Tape& tp) {
      Tensor ga(tp.val(a).shape());
      ga[index] = tp.grad(r)[0];
      tp.accum(a, ga);
    });
  return r;
}

// --- rank-2 column-wise broadcast family: x[m,F] (op) v[F] ---

namespace detail {
enum class BcastOp { add, sub, mul };

inline Var bcast0(Tape& t, Var x, Var v, BcastOp op) {
  const Tensor& X = t.val(x);
  const Tensor& V = t.val(v);
  if (X.rank() != 2 || V.rank() != 1 || V.extent(0) != X.extent(1))
    throw DimensionError("bcast0: shape " + shape_str(X.shape()) + " vs " +
                         shape_str(V.shape()));
  const std::size_t m = X.extent(0), f = X.extent(1);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      double a = X(i, k), b = V[k];
      out(i, k) = op == BcastOp::add ? a + b
                  : op == BcastOp::sub ? a - b
                                       : a * b;
    }
  bool ng = t.needs_grad(x) || t.needs_grad(v);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, v, m, f, op, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(x)) {
        if (op == BcastOp::mul) {
          Tensor gx(tp.val(x).shape());
          const Tensor& V2 = tp.val(v);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < f; ++k) gx(i, k) = g(i, k) * V2[k];
          tp.accum(x, gx);
        } else {
          tp.accum(x, g);
        }
      }
      if (tp.needs_grad(v)) {
        Tensor gv(tp.val(v).shape());
        if (op == BcastOp::mul) {
          const Tensor& X2 = tp.val(x);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < f; ++k) gv[k] += g(i, k) * X2(i, k);
        } else {
          double sgn = op == BcastOp::sub ? -1.0 : 1.0;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < f; ++k) gv[k] += sgn * g(i, k);
        }
        tp.accum(v, gv);
      }
    });
  return r;
}
}  // namespace detail

inline Var add_cols(Tape& t, Var x, Var v) {
  return detail::bcast0(t, x, v, detail::BcastOp::add);
}
inline Var sub_cols(Tape& t, Var x, Var v) {
  return detail::bcast0(t, x, v, detail::BcastOp::sub);
}
inline Var mul_cols(Tape& t, Var x, Var v) {
  return detail::bcast0(t, x, v, detail::BcastOp::mul);
}

// column means of x[m,F] -> [F]
inline Var mean_rows(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 2) throw DimensionError("mean_rows: expected rank 2");
  const std::size_t m = X.extent(0), f = X.extent(1);
  if (m == 0) throw ParameterError("mean_rows: empty batch");
  Tensor out({f});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) out[k] += X(i, k);
  out *= 1.0 / static_cast<double>(m);
  bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, m, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gx(tp.val(x).shape());
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < f; ++k) gx(i, k) = g[k] * inv;
      tp.accum(x, gx);
    });
  return r;
}

// row scaling: out[i,:] = x[i,:] * v[i]
inline Var mul_rows(Tape& t, Var x, Var v) {
  const Tensor& X = t.val(x);
  const Tensor& V = t.val(v);
  if (X.rank() != 2 || V.rank() != 1 || V.extent(0) != X.extent(0))
    throw DimensionError("mul_rows: shape " + shape_str(X.shape()) + " vs " +
                         shape_str(V.shape()));
  const std::size_t m = X.extent(0), f = X.extent(1);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) out(i, k) = X(i, k) * V[i];
  bool ng = t.needs_grad(x) || t.needs_grad(v);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, v, m, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(x)) {
        Tensor gx(tp.val(x).shape());
        const Tensor& V2 = tp.val(v);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < f; ++k) gx(i, k) = g(i, k) * V2[i];
        tp.accum(x, gx);
      }
      if (tp.needs_grad(v)) {
        Tensor gv(tp.val(v).shape());
        const Tensor& X2 = tp.val(x);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < f; ++k) acc += g(i, k) * X2(i, k);
          gv[i] = acc;
        }
        tp.accum(v, gv);
      }
    });
  return r;
}

inline Var sum_rows_axis1(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 2) throw DimensionError("sum_rows_axis1: expected rank 2");
  const std::size_t m = X.extent(0), f = X.extent(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < f; ++k) acc += X(i, k);
    out[i] = acc;
  }
  bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, m, f, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gx(tp.val(x).shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < f; ++k) gx(i, k) = g[i];
      tp.accum(x, gx);
    });
  return r;
}

// --- rank-3 middle-axis broadcast family: x[n,d,T] (op) v[d] ---

namespace detail {
inline Var bcast_mid(Tape& t, Var x, Var v, BcastOp op) {
  const Tensor& X = t.val(x);
  const Tensor& V = t.val(v);
  if (X.rank() != 3 || V.rank() != 1 || V.extent(0) != X.extent(1))
    throw DimensionError("bcast_mid: shape " + shape_str(X.shape()) + " vs " +
                         shape_str(V.shape()));
  const std::size_t n = X.extent(0), d = X.extent(1), T = X.extent(2);
  Tensor out(X.shape());
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const double b = V[c];
      const double* src = X.data() + (j * d + c) * T;
      double* dst = out.data() + (j * d + c) * T;
      switch (op) {
        case BcastOp::add:
          for (std::size_t tt = 0; tt < T; ++tt) dst[tt] = src[tt] + b;
          break;
        case BcastOp::sub:
          for (std::size_t tt = 0; tt < T; ++tt) dst[tt] = src[tt] - b;
          break;
        case BcastOp::mul:
          for (std::size_t tt = 0; tt < T; ++tt) dst[tt] = src[tt] * b;
          break;
      }
    }
  bool ng = t.needs_grad(x) || t.needs_grad(v);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, v, n, d, T, op, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      if (tp.needs_grad(x)) {
        if (op == BcastOp::mul) {
          Tensor gx(tp.val(x).shape());
          const Tensor& V2 = tp.val(v);
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < d; ++c) {
              const double b = V2[c];
              const double* gs = g.data() + (j * d + c) * T;
              double* dst = gx.data() + (j * d + c) * T;
              for (std::size_t tt = 0; tt < T; ++tt) dst[tt] = gs[tt] * b;
            }
          tp.accum(x, gx);
        } else {
          tp.accum(x, g);
        }
      }
      if (tp.needs_grad(v)) {
        Tensor gv(tp.val(v).shape());
        const double sgn = op == BcastOp::sub ? -1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < d; ++c) {
            const double* gs = g.data() + (j * d + c) * T;
            double acc = 0.0;
            if (op == BcastOp::mul) {
              const double* xs = tp.val(x).data() + (j * d + c) * T;
              for (std::size_t tt = 0; tt < T; ++tt) acc += gs[tt] * xs[tt];
            } else {
              for (std::size_t tt = 0; tt < T; ++tt) acc += gs[tt];
              acc *= sgn;
            }
            gv[c] += acc;
          }
        tp.accum(v, gv);
      }
    });
  return r;
}
}  // namespace detail

inline Var add_channels(Tape& t, Var x, Var v) {
  return detail::bcast_mid(t, x, v, detail::BcastOp::add);
}
inline Var sub_channels(Tape& t, Var x, Var v) {
  return detail::bcast_mid(t, x, v, detail::BcastOp::sub);
}
inline Var mul_channels(Tape& t, Var x, Var v) {
  return detail::bcast_mid(t, x, v, detail::BcastOp::mul);
}

// mean over joint and time axes of [n,d,T] -> [d]
inline Var mean_joint_time(Tape& t, Var x) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3) throw DimensionError("mean_joint_time: expected [n,d,T]");
  const std::size_t n = X.extent(0), d = X.extent(1), T = X.extent(2);
  if (n * T == 0) throw ParameterError("mean_joint_time: empty input");
  Tensor out({d});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const double* src = X.data() + (j * d + c) * T;
      double acc = 0.0;
      for (std::size_t tt = 0; tt < T; ++tt) acc += src[tt];
      out[c] += acc;
    }
  out *= 1.0 / static_cast<double>(n * T);
  bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, n, d, T, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gx(tp.val(x).shape());
      const double inv = 1.0 / static_cast<double>(n * T);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) {
          double* dst = gx.data() + (j * d + c) * T;
          const double gc = g[c] * inv;
          for (std::size_t tt = 0; tt < T; ++tt) dst[tt] = gc;
        }
      tp.accum(x, gx);
    });
  return r;
}

// softmax along the last axis, treating the tensor as rows of width K.
inline Var softmax_last(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  if (A.rank() == 0 || A.extent(A.rank() - 1) == 0)
    throw DimensionError("softmax_last: empty last axis");
  const std::size_t K = A.extent(A.rank() - 1);
  const std::size_t rows = A.numel() / K;
  Tensor out(A.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = A.data() + i * K;
    double* y = out.data() + i * K;
    double mx = x[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, x[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      y[k] = std::exp(x[k] - mx);
      z += y[k];
    }
    for (std::size_t k = 0; k < K; ++k) y[k] /= z;
  }
  bool ng = t.needs_grad(a);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [a, K, rows, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      const Tensor& y = tp.val(r);
      Tensor ga(tp.val(a).shape());
      for (std::size_t i = 0; i < rows; ++i) {
        const double* gi = g.data() + i * K;
        const double* yi = y.data() + i * K;
        double dot = 0.0;
        for (std::size_t k = 0; k < K; ++k) dot += gi[k] * yi[k];
        double* o = ga.data() + i * K;
        for (std::size_t k = 0; k < K; ++k) o[k] = yi[k] * (gi[k] - dot);
      }
      tp.accum(a, ga);
    });
  return r;
}

// 1-D cross-correlation along time, shared across joints.
// x[n,d_in,T], w[d_out,d_in,k], b[d_out] -> [n,d_out,T_out]
inline Var temporal_conv(Tape& t, Var x, Var w, Var b, std::size_t stride,
                         std::size_t pad) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  const Tensor& B = t.val(b);
  if (X.rank() != 3 || W.rank() != 3 || X.extent(1) != W.extent(1))
    throw DimensionError("temporal_conv: x " + shape_str(X.shape()) +
                         " vs kernel " + shape_str(W.shape()));
  if (B.rank() != 1 || B.extent(0) != W.extent(0))
    throw DimensionError("temporal_conv: bias shape " + shape_str(B.shape()));
  if (stride == 0) throw ParameterError("temporal_conv: stride must be >= 1");
  const std::size_t n = X.extent(0), din = X.extent(1), T = X.extent(2);
  const std::size_t dout = W.extent(0), k = W.extent(2);
  if (k > T + 2 * pad)
    throw DimensionError("temporal_conv: kernel " + std::to_string(k) +
                         " exceeds padded length " +
                         std::to_string(T + 2 * pad));
  const std::size_t tout = (T + 2 * pad - k) / stride + 1;

  Tensor out({n, dout, tout});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t co = 0; co < dout; ++co) {
      double* o = out.data() + (j * dout + co) * tout;
      for (std::size_t tt = 0; tt < tout; ++tt) o[tt] = B[co];
      for (std::size_t ci = 0; ci < din; ++ci) {
        const double* xs = X.data() + (j * din + ci) * T;
        const double* ws = W.data() + (co * din + ci) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double wv = ws[kk];
          if (wv == 0.0) continue;
          for (std::size_t tt = 0; tt < tout; ++tt) {
            const std::ptrdiff_t src =
                static_cast<std::ptrdiff_t>(tt * stride + kk) -
                static_cast<std::ptrdiff_t>(pad);
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(T))
              o[tt] += wv * xs[src];
          }
        }
      }
    }

  bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, w, b, stride, pad, n, din, dout, T, k, tout, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      const Tensor& X2 = tp.val(x);
      const Tensor& W2 = tp.val(w);
      if (tp.needs_grad(b)) {
        Tensor gb(tp.val(b).shape());
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t co = 0; co < dout; ++co) {
            const double* gs = g.data() + (j * dout + co) * tout;
            double acc = 0.0;
            for (std::size_t tt = 0; tt < tout; ++tt) acc += gs[tt];
            gb[co] += acc;
          }
        tp.accum(b, gb);
      }
      if (tp.needs_grad(w)) {
        Tensor gw(tp.val(w).shape());
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t co = 0; co < dout; ++co) {
            const double* gs = g.data() + (j * dout + co) * tout;
            for (std::size_t ci = 0; ci < din; ++ci) {
              const double* xs = X2.data() + (j * din + ci) * T;
              double* ws = gw.data() + (co * din + ci) * k;
              for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (std::size_t tt = 0; tt < tout; ++tt) {
                  const std::ptrdiff_t src =
                      static_cast<std::ptrdiff_t>(tt * stride + kk) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (src >= 0 && src < static_cast<std::ptrdiff_t>(T))
                    acc += gs[tt] * xs[src];
                }
                ws[kk] += acc;
              }
            }
          }
        tp.accum(w, gw);
      }
      if (tp.needs_grad(x)) {
        Tensor gx(tp.val(x).shape());
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t co = 0; co < dout; ++co) {
            const double* gs = g.data() + (j * dout + co) * tout;
            for (std::size_t ci = 0; ci < din; ++ci) {
              double* xd = gx.data() + (j * din + ci) * T;
              const double* ws = W2.data() + (co * din + ci) * k;
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double wv = ws[kk];
                if (wv == 0.0) continue;
                for (std::size_t tt = 0; tt < tout; ++tt) {
                  const std::ptrdiff_t src =
                      static_cast<std::ptrdiff_t>(tt * stride + kk) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (src >= 0 && src < static_cast<std::ptrdiff_t>(T))
                    xd[src] += wv * gs[tt];
                }
              }
            }
          }
        tp.accum(x, gx);
      }
    });
  return r;
}

// Crops or zero-pads [n,d,T] along time to exactly t_out frames.
inline Var time_crop_or_pad(Tape& t, Var x, std::size_t t_out) {
  const Tensor& X = t.val(x);
  if (X.rank() != 3) throw DimensionError("time_crop_or_pad: expected [n,d,T]");
  const std::size_t n = X.extent(0), d = X.extent(1), T = X.extent(2);
  if (T == t_out) return x;
  const std::size_t keep = std::min(T, t_out);
  Tensor out({n, d, t_out});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c)
      std::copy(X.data() + (j * d + c) * T, X.data() + (j * d + c) * T + keep,
                out.data() + (j * d + c) * t_out);
  bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng);
  if (ng)
    t.set_back(r, [x, n, d, T, t_out, keep, r](Tape& tp) {
      const Tensor& g = tp.grad(r);
      Tensor gx(tp.val(x).shape());
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c)
          std::copy(g.data() + (j * d + c) * t_out,
                    g.data() + (j * d + c) * t_out + keep,
                    gx.data() + (j * d + c) * T);
      tp.accum(x, gx);
    });
  return r;
}

// softmax((logits + noise) / tau) along the last axis. Noise is supplied
// by the caller; pass zeros for the deterministic case.
inline Var gumbel_softmax(Tape& t, Var logits, double tau, Var noise) {
  if (!(tau > 0.0))
    throw ParameterError("gumbel_softmax: tau must be positive, got " +
                         std::to_string(tau));
  require_same_shape(t.val(logits), t.val(noise), "gumbel_softmax");
  return softmax_last(t, scale(t, add(t, logits, noise), 1.0 / tau));
}

}  // namespace ops
}  // namespace asgcn
