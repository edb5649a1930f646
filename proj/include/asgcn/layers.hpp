#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/graph.hpp"
#include "asgcn/nn.hpp"
#include "asgcn/tape.hpp"

namespace asgcn {

// Graph convolution over the inferred link kernels:
//   sum_c K_act^(c) X W^(c)
struct AgcLayer {
  std::vector<Parameter> weights;  // C of [d_in, d_out]
  std::size_t d_in = 0, d_out = 0;

  AgcLayer() = default;
  AgcLayer(const std::string& name, std::size_t link_types, std::size_t in,
           std::size_t out, Rng& rng)
      : d_in(in), d_out(out) {
    for (std::size_t c = 0; c < link_types; ++c)
      weights.emplace_back(name + "/w" + std::to_string(c + 1),
                           glorot(rng, in, out, {in, out}));
  }

  // frames: [T*n, d_in] (T=1 gives the single-frame case);
  // kernels: one [n,n] Var per link type.
  Var operator()(Tape& t, Var frames, const std::vector<Var>& kernels) const {
    if (kernels.size() != weights.size())
      throw ValidationError("agc: " + std::to_string(kernels.size()) +
                            " kernels for " + std::to_string(weights.size()) +
                            " weight matrices");
    using namespace ops;
    Var acc;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      auto& w = const_cast<Parameter&>(weights[c]);
      Var term = frames_matmul(t, kernels[c], matmul(t, frames, t.leaf(w)));
      acc = c == 0 ? term : add(t, acc, term);
    }
    return acc;
  }

  void collect(ParamList& ps) {
    for (auto& w : weights) ps.push_back(&w);
  }
};

// Graph convolution over polynomial structural kernels:
//   sum_l sum_p (M^(p,l) o A_hat^(p)l) X W^(p,l)
// Masks start at all-ones so the transition powers are the initial
// edge weights.
struct SgcLayer {
  struct Term {
    Parameter mask;    // [n,n]
    Parameter weight;  // [d_in, d_out]
  };
  std::vector<Term> terms;  // index (l-1)*3 + partition
  std::size_t order = 0;
  std::size_t d_in = 0, d_out = 0;

  SgcLayer() = default;
  SgcLayer(const std::string& name, std::size_t n, std::size_t L,
           std::size_t in, std::size_t out, Rng& rng)
      : order(L), d_in(in), d_out(out) {
    for (std::size_t l = 1; l <= L; ++l)
      for (Part p : kParts) {
        std::string tag = name + "/l" + std::to_string(l) + "_" + part_name(p);
        terms.push_back(Term{Parameter(tag + "/mask", Tensor({n, n}, 1.0)),
                             Parameter(tag + "/w",
                                       glorot(rng, in, out, {in, out}))});
      }
  }

  Var operator()(Tape& t, Var frames, const GraphKernels& kernels) const {
    if (kernels.order < order)
      throw ValidationError("sgc: kernels built with order " +
                            std::to_string(kernels.order) +
                            ", layer needs " + std::to_string(order));
    using namespace ops;
    Var acc;
    bool first = true;
    for (std::size_t l = 1; l <= order; ++l)
      for (Part p : kParts) {
        auto& term =
            const_cast<Term&>(terms[(l - 1) * 3 + static_cast<std::size_t>(p)]);
        Var k = mul(t, t.leaf(term.mask), t.constant(kernels.power(p, l)));
        Var out = frames_matmul(t, k, matmul(t, frames, t.leaf(term.weight)));
        acc = first ? out : add(t, acc, out);
        first = false;
      }
    return acc;
  }

  void collect(ParamList& ps) {
    for (auto& term : terms) {
      ps.push_back(&term.mask);
      ps.push_back(&term.weight);
    }
  }
};

enum class AsgcForm {
  convex,    // (1-lambda) SGC + lambda AGC
  additive,  // SGC + lambda AGC
};

// Combined actional-structural convolution. The actional branch is
// optional (structural-only models); with both branches present the
// outputs are blended per `form`.
struct AsgcLayer {
  SgcLayer sgc;
  std::optional<AgcLayer> agc;
  double lambda = 0.5;
  AsgcForm form = AsgcForm::convex;

  AsgcLayer() = default;
  AsgcLayer(const std::string& name, std::size_t n, std::size_t order,
            std::size_t link_types, bool with_agc, std::size_t in,
            std::size_t out, double lam, AsgcForm f, Rng& rng)
      : sgc(name + "/sgc", n, order, in, out, rng), lambda(lam), form(f) {
    if (with_agc) agc.emplace(name + "/agc", link_types, in, out, rng);
    if (agc && agc->d_out != sgc.d_out)
      throw ValidationError("asgc: branch output widths differ");
  }

  Var operator()(Tape& t, Var frames, const GraphKernels& kernels,
                 const std::vector<Var>* agc_kernels) const {
    using namespace ops;
    Var xs = sgc(t, frames, kernels);
    if (!agc) return xs;
    if (!agc_kernels)
      throw ValidationError("asgc: layer has an actional branch but no "
                            "actional kernels were provided");
    Var xa = (*agc)(t, frames, *agc_kernels);
    if (form == AsgcForm::convex)
      return add(t, scale(t, xs, 1.0 - lambda), scale(t, xa, lambda));
    return add(t, xs, scale(t, xa, lambda));
  }

  void collect(ParamList& ps) {
    sgc.collect(ps);
    if (agc) agc->collect(ps);
  }
};

// ASGC -> BN -> ReLU -> T-CN -> BN -> (+ residual) -> ReLU
struct AsgcnBlockConfig {
  std::size_t d_in = 0, d_out = 0;
  std::size_t stride = 1;
  std::size_t tcn_kernel = 7;
  std::size_t tcn_pad = 3;
  bool use_bn = true;
  bool use_residual = true;
};

struct AsgcnBlock {
  AsgcnBlockConfig cfg;
  AsgcLayer asgc;
  BatchNorm3d bn1, bn2;
  // no T-CN bias: the batch norm right after would absorb it exactly
  Parameter tcn_w;
  bool residual_identity = false;
  Parameter res_w, res_b;  // 1x1 strided map when shapes differ

  AsgcnBlock() = default;
  AsgcnBlock(const std::string& name, const AsgcnBlockConfig& c, std::size_t n,
             std::size_t order, std::size_t link_types, bool with_agc,
             double lambda, AsgcForm form, Rng& rng)
      : cfg(c),
        asgc(name + "/asgc", n, order, link_types, with_agc, c.d_in, c.d_out,
             lambda, form, rng),
        bn1(name + "/bn1", c.d_out),
        bn2(name + "/bn2", c.d_out),
        tcn_w(name + "/tcn/w", glorot(rng, c.d_out * c.tcn_kernel, c.d_out,
                                      {c.d_out, c.d_out, c.tcn_kernel})) {
    residual_identity = c.d_in == c.d_out && c.stride == 1;
    if (cfg.use_residual && !residual_identity) {
      res_w = Parameter(name + "/res/w",
                        glorot(rng, c.d_in, c.d_out, {c.d_out, c.d_in, 1}));
      res_b = Parameter(name + "/res/b", Tensor({c.d_out}));
    }
  }

  // x: [n, d_in, T] -> [n, d_out, T_out]
  Var operator()(Tape& t, Var x, const GraphKernels& kernels,
                 const std::vector<Var>* agc_kernels, Mode mode) {
    using namespace ops;
    const std::size_t n = t.val(x).extent(0);
    Var f = to_frames(t, x);
    Var y = from_frames(t, asgc(t, f, kernels, agc_kernels), n);
    if (cfg.use_bn) y = bn1(t, y, mode);
    y = relu(t, y);
    y = temporal_conv(t, y, t.leaf(tcn_w),
                      t.constant(Tensor({cfg.d_out})), cfg.stride,
                      cfg.tcn_pad);
    if (cfg.use_bn) y = bn2(t, y, mode);
    if (cfg.use_residual) {
      Var res = residual_identity
                    ? x
                    : temporal_conv(t, x, t.leaf(res_w), t.leaf(res_b),
                                    cfg.stride, 0);
      // non-standard T-CN padding can leave the strided 1x1 map a frame
      // or two off; align on the time axis
      res = time_crop_or_pad(t, res, t.val(y).extent(2));
      y = add(t, y, res);
    }
    return relu(t, y);
  }

  void collect(ParamList& ps) {
    asgc.collect(ps);
    if (cfg.use_bn) {
      bn1.collect(ps);
      bn2.collect(ps);
    }
    ps.push_back(&tcn_w);
    if (cfg.use_residual && !residual_identity) {
      ps.push_back(&res_w);
      ps.push_back(&res_b);
    }
  }
  void collect_buffers(BufferList& bs) {
    if (cfg.use_bn) {
      bn1.collect_buffers(bs);
      bn2.collect_buffers(bs);
    }
  }
};

}  // namespace asgcn
