#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/data.hpp"
#include "asgcn/nn.hpp"
#include "asgcn/rng.hpp"
#include "asgcn/tape.hpp"

namespace asgcn {

struct AimConfig {
  std::size_t link_types = 3;  // C, ghost excluded
  double ghost_prior = 0.95;   // P0
  double tau = 0.5;
  double sigma2 = 5e-3;
  std::size_t frames = 50;     // encoder downsample target

  void validate() const {
    if (link_types < 1) throw ParameterError("aim: link_types must be >= 1");
    if (!(tau > 0.0)) throw ParameterError("aim: tau must be positive");
    if (!(ghost_prior > 0.0 && ghost_prior < 1.0))
      throw ParameterError("aim: ghost prior must lie in (0,1)");
    if (!(sigma2 > 0.0)) throw ParameterError("aim: sigma2 must be positive");
    if (frames < 2) throw ParameterError("aim: frames must be >= 2");
  }

  // [P0, (1-P0)/C, ...]; normalized so the categorical prior sums to 1.
  std::vector<double> prior() const {
    std::vector<double> p(link_types + 1, (1.0 - ghost_prior) / link_types);
    p[0] = ghost_prior;
    return p;
  }
};

// --- preprocessing ---

// Picks `target` frames from the valid prefix at regular intervals;
// zero-pads when the clip is shorter than the target.
inline Tensor downsample_frames(const SkeletonSequence& s,
                                std::size_t target) {
  if (s.valid_frames == 0)
    throw ValidationError("aim preprocess: sequence " + s.sample_id +
                          " has no valid frames");
  const std::size_t n = s.data.extent(0), d = s.data.extent(1);
  Tensor out({n, d, target});
  const std::size_t take = std::min(s.valid_frames, target);
  for (std::size_t k = 0; k < take; ++k) {
    std::size_t src = 0;
    if (take == s.valid_frames) {
      src = k;  // shorter than target: copy then zero-pad
    } else {
      src = static_cast<std::size_t>(std::llround(
          static_cast<double>(k) * static_cast<double>(s.valid_frames - 1) /
          static_cast<double>(target - 1)));
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) out(j, c, k) = s.data(j, c, src);
  }
  return out;
}

// [n,3,F] -> [n, 3F]; per joint, channel-major frame blocks.
inline Tensor flatten_joint_features(const Tensor& x) {
  const std::size_t n = x.extent(0);
  return x.reshaped({n, x.extent(1) * x.extent(2)});
}

inline Tensor preprocess_for_aim(const SkeletonSequence& s,
                                 const AimConfig& cfg) {
  return flatten_joint_features(downsample_frames(s, cfg.frames));
}

// --- encoder ---
// Two propagation rounds between joints and links. The first pair step
// is plain concatenation; the aggregation over links is a mean.

struct AimEncoder {
  Dense j1a, j1b;
  BatchNorm j1bn;
  Dense j2a, j2b;
  BatchNorm j2bn;
  Dense pa, pb;
  BatchNorm pbn;
  Dense out;
  std::size_t link_types = 3;
  std::size_t in_width = 150;

  AimEncoder() = default;
  AimEncoder(const AimConfig& cfg, Rng& rng, std::size_t hidden = 128)
      : j1a("encoder/joint1/fc1", 3 * cfg.frames, hidden, rng),
        j1b("encoder/joint1/fc2", hidden, hidden, rng),
        j1bn("encoder/joint1/bn", hidden),
        j2a("encoder/joint2/fc1", 3 * hidden, hidden, rng),
        j2b("encoder/joint2/fc2", hidden, hidden, rng),
        j2bn("encoder/joint2/bn", hidden),
        pa("encoder/pair/fc1", 2 * hidden, hidden, rng),
        pb("encoder/pair/fc2", hidden, hidden, rng),
        pbn("encoder/pair/bn", hidden),
        out("encoder/pair/out", hidden, cfg.link_types + 1, rng),
        link_types(cfg.link_types),
        in_width(3 * cfg.frames) {}

  // x: [n, 3*frames]; noise: [n, n, C+1] Gumbel draws (zeros for the
  // deterministic case). Returns link probabilities [n, n, C+1].
  Var operator()(Tape& t, Var x, const AimConfig& cfg, const Tensor& noise,
                 Mode mode) {
    const std::size_t n = t.val(x).extent(0);
    if (t.val(x).rank() != 2 || t.val(x).extent(1) != in_width)
      throw DimensionError("aim encode: input " +
                           shape_str(t.val(x).shape()) + ", expected [n," +
                           std::to_string(in_width) + "]");
    if (noise.shape() != Shape{n, n, link_types + 1})
      throw DimensionError("aim encode: noise shape " +
                           shape_str(noise.shape()));
    using namespace ops;
    Var p1 = j1bn(t, elu(t, j1b(t, elu(t, j1a(t, x)))), mode);
    Var q2 = pair_concat(t, p1);                       // [n*n, 2h]
    Var agg = pair_mean(t, q2, n);                     // [n, 2h]
    Var p2in = concat(t, agg, p1, 1);                  // [n, 3h]
    Var p2 = j2bn(t, elu(t, j2b(t, elu(t, j2a(t, p2in)))), mode);
    Var q3 = pair_concat(t, p2);                       // [n*n, 2h]
    Var h = pbn(t, elu(t, pb(t, elu(t, pa(t, q3)))), mode);
    Var logits = out(t, h);                            // [n*n, C+1]
    Var probs = gumbel_softmax(
        t, reshape(t, logits, {n, n, link_types + 1}), cfg.tau,
        t.constant(noise));
    return probs;
  }

  void collect(ParamList& ps) {
    j1a.collect(ps);
    j1b.collect(ps);
    j1bn.collect(ps);
    j2a.collect(ps);
    j2b.collect(ps);
    j2bn.collect(ps);
    pa.collect(ps);
    pb.collect(ps);
    pbn.collect(ps);
    out.collect(ps);
  }
  void collect_buffers(BufferList& bs) {
    j1bn.collect_buffers(bs);
    j2bn.collect_buffers(bs);
    pbn.collect_buffers(bs);
  }
};

// --- decoder ---
// Per link type: a joint embedding and a pair map; features weighted by
// the link probabilities, aggregated, then pushed through a GRU.

struct AimDecoder {
  std::vector<Dense> fv;  // 3 -> hidden, relu
  std::vector<Dense> fe;  // 2*hidden -> hidden, relu
  GruCell gru;            // input hidden+3
  Dense fout;             // hidden -> 3
  std::size_t hidden = 64;
  std::size_t link_types = 3;

  AimDecoder() = default;
  AimDecoder(const AimConfig& cfg, Rng& rng, std::size_t h = 64)
      : gru("decoder/gru", h + 3, h, rng),
        fout("decoder/out", h, 3, rng),
        hidden(h),
        link_types(cfg.link_types) {
    for (std::size_t c = 0; c < cfg.link_types; ++c) {
      fv.emplace_back("decoder/type" + std::to_string(c + 1) + "/fv", 3, h,
                      rng);
      fe.emplace_back("decoder/type" + std::to_string(c + 1) + "/fe", 2 * h, h,
                      rng);
    }
  }

  Tensor initial_state(std::size_t n) const { return Tensor({n, hidden}); }

  // One prediction step: (x_t, S_t, A) -> (mu_{t+1}, S_{t+1}).
  std::pair<Var, Var> step(Tape& t, Var x_t, Var state, Var a) const {
    using namespace ops;
    const std::size_t n = t.val(x_t).extent(0);
    Var q = t.constant(Tensor({n, n, hidden}));
    for (std::size_t c = 0; c < link_types; ++c) {
      Var e = relu(t, fv[c](t, x_t));                       // [n,h]
      Var pc = relu(t, fe[c](t, pair_concat(t, e)));        // [n*n,h]
      Var w = slice_last(t, a, c + 1);                      // ghost excluded
      q = add(t, q, scale_pairs(t, reshape(t, pc, {n, n, hidden}), w));
    }
    Var mq = pair_mean(t, reshape(t, q, {n * n, hidden}), n);  // [n,h]
    Var p = concat(t, mq, x_t, 1);                             // [n,h+3]
    Var next = gru.step(t, p, state);
    Var mu = fout(t, next);
    return {mu, next};
  }

  void collect(ParamList& ps) {
    for (auto& d : fv) d.collect(ps);
    for (auto& d : fe) d.collect(ps);
    gru.collect(ps);
    fout.collect(ps);
  }
};

enum class DecodeMode { teacher_forced, free_running };

// Rolls the decoder over frames [n,3,F]; returns F-1 mean predictions
// for frames 1..F-1. In free-running mode the first `burn_in` inputs
// come from the ground truth, later inputs are the model's own means.
inline std::vector<Var> decode_sequence(Tape& t, const AimDecoder& dec,
                                        const Tensor& frames, Var a,
                                        DecodeMode mode,
                                        std::size_t burn_in = 0) {
  const std::size_t n = frames.extent(0), F = frames.extent(2);
  if (F < 2) throw ParameterError("decode_sequence: need at least 2 frames");
  if (mode == DecodeMode::free_running && burn_in >= F)
    throw ParameterError("decode_sequence: burn_in " +
                         std::to_string(burn_in) + " >= frames " +
                         std::to_string(F));
  auto frame_at = [&](std::size_t tt) {
    Tensor x({n, 3});
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < 3; ++c) x(j, c) = frames(j, c, tt);
    return x;
  };
  std::vector<Var> mus;
  Var state = t.constant(dec.initial_state(n));
  Var input = t.constant(frame_at(0));
  for (std::size_t tt = 0; tt + 1 < F; ++tt) {
    auto [mu, next] = dec.step(t, input, state, a);
    mus.push_back(mu);
    state = next;
    if (tt + 2 < F) {
      const bool use_truth =
          mode == DecodeMode::teacher_forced || (tt + 1) < burn_in;
      input = use_truth ? t.constant(frame_at(tt + 1)) : mu;
    }
  }
  return mus;
}

// --- loss ---

// sum_i sum_t ||x_i^t - mu_i^t||^2 / (2 sigma^2)
//   + sum_pairs KL(posterior || prior), both terms over the tape.
inline Var aim_loss(Tape& t, const Tensor& frames,
                    const std::vector<Var>& mus, Var a,
                    const AimConfig& cfg) {
  using namespace ops;
  const std::size_t n = frames.extent(0), F = frames.extent(2);
  if (mus.size() != F - 1)
    throw DimensionError("aim_loss: got " + std::to_string(mus.size()) +
                         " predictions for " + std::to_string(F) + " frames");
  Var nll = t.constant(Tensor::scalar(0.0));
  for (std::size_t tt = 0; tt + 1 < F; ++tt) {
    Tensor target({n, 3});
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < 3; ++c) target(j, c) = frames(j, c, tt + 1);
    Var diff = sub(t, mus[tt], t.constant(target));
    nll = add(t, nll, sum_all(t, mul(t, diff, diff)));
  }
  nll = scale(t, nll, 1.0 / (2.0 * cfg.sigma2));

  // categorical KL against the broadcast prior, all C+1 categories
  const std::vector<double> prior = cfg.prior();
  const Tensor& A = t.val(a);
  Tensor log_prior(A.shape());
  const std::size_t K = cfg.link_types + 1;
  for (std::size_t i = 0; i < A.numel(); ++i)
    log_prior[i] = std::log(prior[i % K]);
  Var kl = sum_all(
      t, mul(t, a, sub(t, log_clamped(t, a, 1e-300), t.constant(log_prior))));
  Var loss = add(t, nll, kl);
  if (!t.val(loss).all_finite())
    throw NumericError("aim_loss: non-finite loss");
  return loss;
}

// Raw-value KL of a probability tensor against the config prior; used
// for metrics without a tape.
inline double kl_to_prior(const Tensor& probs, const AimConfig& cfg) {
  const std::vector<double> prior = cfg.prior();
  const std::size_t K = cfg.link_types + 1;
  double kl = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const double p = probs[i];
    if (p > 0.0) kl += p * (std::log(p) - std::log(prior[i % K]));
  }
  return kl;
}

// --- actional kernels ---

// Row-normalizes each A-link slice; the ghost channel feeds no kernel.
inline std::vector<Var> actional_kernels(Tape& t, Var a,
                                         std::size_t link_types) {
  using namespace ops;
  std::vector<Var> kernels;
  for (std::size_t c = 0; c < link_types; ++c) {
    Var s = slice_last(t, a, c + 1);
    Var rs = sum_rows_axis1(t, s);
    kernels.push_back(mul_rows(t, s, recip(t, rs)));
  }
  return kernels;
}

// Convenience container for the full module.
struct AimModel {
  AimConfig cfg;
  AimEncoder encoder;
  AimDecoder decoder;

  AimModel() = default;
  AimModel(const AimConfig& c, Rng& rng)
      : cfg(c), encoder(c, rng), decoder(c, rng) {
    cfg.validate();
  }

  ParamList encoder_params() {
    ParamList ps;
    encoder.collect(ps);
    return ps;
  }
  ParamList all_params() {
    ParamList ps;
    encoder.collect(ps);
    decoder.collect(ps);
    return ps;
  }
  BufferList buffers() {
    BufferList bs;
    encoder.collect_buffers(bs);
    return bs;
  }
};

}  // namespace asgcn
