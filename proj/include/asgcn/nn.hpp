#pragma once

#include <string>
#include <utility>
#include <vector>

#include "asgcn/rng.hpp"
#include "asgcn/tape.hpp"

namespace asgcn {

enum class Mode { train, eval };

using ParamList = std::vector<Parameter*>;
// Non-trainable state that still belongs in checkpoints (BN running stats).
using BufferList = std::vector<std::pair<std::string, Tensor*>>;

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                     Shape shape) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_tensor(std::move(shape), -a, a);
}

struct Dense {
  Parameter w;  // [in, out]
  Parameter b;  // [out]

  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : w(name + "/w", glorot(rng, in, out, {in, out})),
        b(name + "/b", Tensor({out})) {}

  Var operator()(Tape& t, Var x) const {
    return ops::add_cols(t, ops::matmul(t, x, t.leaf(const_cast<Parameter&>(w))),
                         t.leaf(const_cast<Parameter&>(b)));
  }

  void collect(ParamList& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Per-feature batch normalization over the rows of an [m,F] matrix.
// Composed from primitive ops, so the backward pass (including the path
// through the batch statistics) comes from the tape.
struct BatchNorm {
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  std::string name;

  BatchNorm() = default;
  BatchNorm(const std::string& n, std::size_t features)
      : gamma(n + "/gamma", Tensor({features}, 1.0)),
        beta(n + "/beta", Tensor({features})),
        running_mean({features}),
        running_var({features}, 1.0),
        name(n) {}

  Var operator()(Tape& t, Var x, Mode mode) {
    const Shape xs = t.val(x).shape();
    if (xs.size() != 2 || xs[1] != gamma.value.extent(0))
      throw DimensionError("batch_norm " + name + ": input " + shape_str(xs));
    Var g = t.leaf(gamma);
    Var b = t.leaf(beta);
    if (mode == Mode::train) {
      if (xs[0] == 0)
        throw ParameterError("batch_norm " + name + ": empty batch");
      Var mu = ops::mean_rows(t, x);
      Var xc = ops::sub_cols(t, x, mu);
      Var var = ops::mean_rows(t, ops::mul(t, xc, xc));
      update_running(t.val(mu), t.val(var));
      Var inv = ops::recip(t, ops::sqrt_(t, ops::add_scalar(t, var, eps)));
      return ops::add_cols(t, ops::mul_cols(t, ops::mul_cols(t, xc, inv), g), b);
    }
    Var mu = t.constant(running_mean);
    Tensor inv_sd(running_var.shape());
    for (std::size_t i = 0; i < inv_sd.numel(); ++i)
      inv_sd[i] = 1.0 / std::sqrt(running_var[i] + eps);
    Var xn = ops::mul_cols(t, ops::sub_cols(t, x, mu), t.constant(inv_sd));
    return ops::add_cols(t, ops::mul_cols(t, xn, g), b);
  }

  void update_running(const Tensor& mu, const Tensor& var) {
    for (std::size_t i = 0; i < running_mean.numel(); ++i) {
      running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mu[i];
      running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var[i];
    }
  }

  void collect(ParamList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(BufferList& out) {
    out.emplace_back(name + "/running_mean", &running_mean);
    out.emplace_back(name + "/running_var", &running_var);
  }
};

// Per-channel batch normalization for [n,d,T] feature maps; statistics
// are taken over the joint and time axes.
struct BatchNorm3d {
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  std::string name;

  BatchNorm3d() = default;
  BatchNorm3d(const std::string& n, std::size_t channels)
      : gamma(n + "/gamma", Tensor({channels}, 1.0)),
        beta(n + "/beta", Tensor({channels})),
        running_mean({channels}),
        running_var({channels}, 1.0),
        name(n) {}

  Var operator()(Tape& t, Var x, Mode mode) {
    const Shape xs = t.val(x).shape();
    if (xs.size() != 3 || xs[1] != gamma.value.extent(0))
      throw DimensionError("batch_norm3d " + name + ": input " + shape_str(xs));
    Var g = t.leaf(gamma);
    Var b = t.leaf(beta);
    if (mode == Mode::train) {
      if (xs[0] * xs[2] == 0)
        throw ParameterError("batch_norm3d " + name + ": empty batch");
      Var mu = ops::mean_joint_time(t, x);
      Var xc = ops::sub_channels(t, x, mu);
      Var var = ops::mean_joint_time(t, ops::mul(t, xc, xc));
      update_running(t.val(mu), t.val(var));
      Var inv = ops::recip(t, ops::sqrt_(t, ops::add_scalar(t, var, eps)));
      return ops::add_channels(
          t, ops::mul_channels(t, ops::mul_channels(t, xc, inv), g), b);
    }
    Tensor inv_sd(running_var.shape());
    for (std::size_t i = 0; i < inv_sd.numel(); ++i)
      inv_sd[i] = 1.0 / std::sqrt(running_var[i] + eps);
    Var xn = ops::mul_channels(
        t, ops::sub_channels(t, x, t.constant(running_mean)),
        t.constant(inv_sd));
    return ops::add_channels(t, ops::mul_channels(t, xn, g), b);
  }

  void update_running(const Tensor& mu, const Tensor& var) {
    for (std::size_t i = 0; i < running_mean.numel(); ++i) {
      running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mu[i];
      running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var[i];
    }
  }

  void collect(ParamList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(BufferList& out) {
    out.emplace_back(name + "/running_mean", &running_mean);
    out.emplace_back(name + "/running_var", &running_var);
  }
};

// Gated recurrent unit over rows: state h[m,H], input x[m,I].
//   r = sigmoid(x Wxr + h Whr + br)
//   z = sigmoid(x Wxz + h Whz + bz)
//   n = tanh(x Wxn + r o (h Whn) + bn)
//   h' = (1 - z) o n + z o h
struct GruCell {
  Dense xr, xz, xn;  // input maps carry the gate biases
  Parameter whr, whz, whn;
  std::size_t hidden = 0;

  GruCell() = default;
  GruCell(const std::string& name, std::size_t in, std::size_t h, Rng& rng)
      : xr(name + "/xr", in, h, rng),
        xz(name + "/xz", in, h, rng),
        xn(name + "/xn", in, h, rng),
        whr(name + "/whr", glorot(rng, h, h, {h, h})),
        whz(name + "/whz", glorot(rng, h, h, {h, h})),
        whn(name + "/whn", glorot(rng, h, h, {h, h})),
        hidden(h) {}

  Var step(Tape& t, Var x, Var h) const {
    auto& self = const_cast<GruCell&>(*this);
    Var r = ops::sigmoid(
        t, ops::add(t, xr(t, x), ops::matmul(t, h, t.leaf(self.whr))));
    Var z = ops::sigmoid(
        t, ops::add(t, xz(t, x), ops::matmul(t, h, t.leaf(self.whz))));
    Var nn = ops::tanh_(
        t, ops::add(t, xn(t, x),
                    ops::mul(t, r, ops::matmul(t, h, t.leaf(self.whn)))));
    // (1-z) o n + z o h = n - z o n + z o h
    Var zn = ops::mul(t, z, nn);
    Var zh = ops::mul(t, z, h);
    return ops::add(t, ops::sub(t, nn, zn), zh);
  }

  void collect(ParamList& out) {
    xr.collect(out);
    xz.collect(out);
    xn.collect(out);
    out.push_back(&whr);
    out.push_back(&whz);
    out.push_back(&whn);
  }
};

}  // namespace asgcn
