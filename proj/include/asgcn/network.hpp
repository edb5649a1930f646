#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/aim.hpp"
#include "asgcn/layers.hpp"

namespace asgcn {

enum class LinksMode { s, a, as };

inline LinksMode links_mode_from(const std::string& s) {
  if (s == "s") return LinksMode::s;
  if (s == "a") return LinksMode::a;
  if (s == "as") return LinksMode::as;
  throw ValidationError("links mode must be one of s|a|as, got '" + s + "'");
}
inline const char* to_string(LinksMode m) {
  switch (m) {
    case LinksMode::s: return "s";
    case LinksMode::a: return "a";
    default: return "as";
  }
}

struct ModelConfig {
  std::size_t num_classes = 2;
  LinksMode links = LinksMode::as;
  std::size_t order = 2;       // polynomial order of the structural links
  double lambda = 0.5;         // actional/structural blend
  AsgcForm form = AsgcForm::convex;
  std::string blocks = "full"; // "full" (9 blocks) or "toy" (3 blocks)
  std::size_t horizon = 10;    // future frames predicted
  bool prediction_head = true;
  AimConfig aim;

  bool use_agc() const { return links != LinksMode::s; }
  // with A-links only, the structural part degenerates to the skeleton
  std::size_t sgc_order() const { return links == LinksMode::a ? 1 : order; }

  void validate() const {
    if (num_classes < 2)
      throw ValidationError("model: num_classes must be >= 2");
    if (order < 1) throw ValidationError("model: order must be >= 1");
    if (lambda < 0.0 || lambda > 1.0)
      throw ValidationError("model: lambda must lie in [0,1]");
    if (blocks != "full" && blocks != "toy")
      throw ValidationError("model: blocks preset must be full|toy");
    if (horizon < 1) throw ValidationError("model: horizon must be >= 1");
    aim.validate();
  }
};

inline std::vector<std::pair<std::size_t, std::size_t>> backbone_spec(
    const std::string& preset) {
  if (preset == "toy") return {{16, 1}, {32, 2}, {64, 2}};
  return {{64, 1},  {64, 1},  {64, 1},  {128, 2}, {128, 1},
          {128, 1}, {256, 2}, {256, 1}, {256, 1}};
}

using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

// Nine AS-GCN blocks (three in the toy preset); halves the frame count
// twice, so T must be divisible by 4.
struct Backbone {
  std::vector<AsgcnBlock> blocks;
  std::size_t d_out = 0;

  Backbone() = default;
  Backbone(const ModelConfig& cfg, std::size_t n, Rng& rng) {
    std::size_t d_in = 3;
    const auto spec = backbone_spec(cfg.blocks);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      AsgcnBlockConfig bc;
      bc.d_in = d_in;
      bc.d_out = spec[i].first;
      bc.stride = spec[i].second;
      blocks.emplace_back("backbone/block" + std::to_string(i + 1), bc, n,
                          cfg.sgc_order(), cfg.aim.link_types, cfg.use_agc(),
                          cfg.lambda, cfg.form, rng);
      d_in = spec[i].first;
    }
    d_out = d_in;
  }

  Var operator()(Tape& t, Var x, const GraphKernels& kernels,
                 const std::vector<Var>* agc_kernels, Mode mode,
                 ShapeTrace* trace = nullptr) {
    if (t.val(x).extent(2) % 4 != 0)
      throw DimensionError("backbone: frame count " +
                           std::to_string(t.val(x).extent(2)) +
                           " must be divisible by 4 (pad upstream)");
    Var y = x;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      y = blocks[i](t, y, kernels, agc_kernels, mode);
      if (trace)
        trace->emplace_back("backbone/block" + std::to_string(i + 1),
                            t.val(y).shape());
    }
    return y;
  }

  void collect(ParamList& ps) {
    for (auto& b : blocks) b.collect(ps);
  }
  void collect_buffers(BufferList& bs) {
    for (auto& b : blocks) b.collect_buffers(bs);
  }
};

// Global average pool over joints and time, then a softmax classifier.
struct RecognitionHead {
  Dense classifier;

  RecognitionHead() = default;
  RecognitionHead(std::size_t d_in, std::size_t classes, Rng& rng)
      : classifier("recognition/fc", d_in, classes, rng) {}

  // features [n,d,T'] -> class probabilities [1, classes]
  Var operator()(Tape& t, Var features) const {
    using namespace ops;
    Var pooled = mean_joint_time(t, features);
    Var logits =
        classifier(t, reshape(t, pooled, {1, t.val(pooled).extent(0)}));
    return softmax_last(t, logits);
  }

  void collect(ParamList& ps) { classifier.collect(ps); }
};

// -log p[label], clamped at 1e-12 (clamps are counted by
// ops::log_clamp_count for diagnostics).
inline Var recognition_loss(Tape& t, Var probs, std::size_t label) {
  const Tensor& p = t.val(probs);
  if (label >= p.numel())
    throw ParameterError("recognition_loss: label " + std::to_string(label) +
                         " out of range for " + std::to_string(p.numel()) +
                         " classes");
  using namespace ops;
  return scale(t, log_clamped(t, pick(t, probs, label), 1e-12), -1.0);
}

// Mean over joints and future frames of the squared coordinate-vector
// error; a constant unit error on every coordinate scores exactly d=3.
inline Var prediction_loss(Tape& t, Var pred, const Tensor& target) {
  const Tensor& p = t.val(pred);
  if (!p.same_shape(target))
    throw DimensionError("prediction_loss: pred " + shape_str(p.shape()) +
                         " vs target " + shape_str(target.shape()));
  const double norm =
      static_cast<double>(p.extent(0)) * static_cast<double>(p.extent(2));
  using namespace ops;
  Var diff = sub(t, pred, t.constant(target));
  return scale(t, sum_all(t, mul(t, diff, diff)), 1.0 / norm);
}

// Time-collapsing stack followed by reconstruction blocks that re-inject
// the last observed frame, a per-joint linear readout, and a residual
// copy of the last frame tiled over the horizon.
struct PredictionHead {
  std::vector<AsgcnBlock> down;
  std::vector<AsgcnBlock> recon;
  Dense fc;  // [30+3 -> 3*horizon]
  std::size_t horizon = 10;
  std::size_t expected_frames = 0;

  PredictionHead() = default;
  PredictionHead(const ModelConfig& cfg, std::size_t n, std::size_t d_in,
                 std::size_t frames_in, Rng& rng)
      : horizon(cfg.horizon), expected_frames(frames_in) {
    struct Stage {
      std::size_t d_out, stride, kernel, pad;
    };
    std::vector<Stage> stages;
    std::size_t frames = frames_in;
    const std::size_t width = cfg.blocks == "full" ? 128 : 64;
    if (cfg.blocks == "full" && frames_in == 75) {
      // the reference stack: 75 -> 39 -> 19 -> 10 -> 5 -> 1
      stages = {{width, 2, 7, 4},
                {width, 2, 7, 2},
                {width, 2, 7, 3},
                {width, 2, 3, 1},
                {width, 1, 5, 0}};
    } else {
      while (frames > 1) {
        stages.push_back({width, 2, 7, 3});  // t -> ceil(t/2)
        frames = (frames + 1) / 2;
      }
    }
    std::size_t d = d_in;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      AsgcnBlockConfig bc;
      bc.d_in = d;
      bc.d_out = stages[i].d_out;
      bc.stride = stages[i].stride;
      bc.tcn_kernel = stages[i].kernel;
      bc.tcn_pad = stages[i].pad;
      down.emplace_back("prediction/down" + std::to_string(i + 1), bc, n,
                        cfg.sgc_order(), cfg.aim.link_types, cfg.use_agc(),
                        cfg.lambda, cfg.form, rng);
      d = stages[i].d_out;
    }
    const std::size_t recon_widths[3] = {64, 32, 30};
    for (std::size_t i = 0; i < 3; ++i) {
      AsgcnBlockConfig bc;
      bc.d_in = d + 3;  // last observed frame concatenated per block
      bc.d_out = recon_widths[i];
      bc.stride = 1;
      bc.tcn_kernel = 1;
      bc.tcn_pad = 0;
      recon.emplace_back("prediction/recon" + std::to_string(i + 1), bc, n,
                         cfg.sgc_order(), cfg.aim.link_types, cfg.use_agc(),
                         cfg.lambda, cfg.form, rng);
      d = recon_widths[i];
    }
    fc = Dense("prediction/fc", d + 3, 3 * horizon, rng);
  }

  // features [n,d,T'], last_frame [n,3] -> [n,3,horizon]
  Var operator()(Tape& t, Var features, const Tensor& last_frame,
                 const GraphKernels& kernels,
                 const std::vector<Var>* agc_kernels, Mode mode,
                 ShapeTrace* trace = nullptr) {
    using namespace ops;
    const std::size_t n = t.val(features).extent(0);
    if (last_frame.shape() != Shape{n, 3})
      throw DimensionError("prediction head: last_frame " +
                           shape_str(last_frame.shape()));
    Var y = features;
    for (std::size_t i = 0; i < down.size(); ++i) {
      y = down[i](t, y, kernels, agc_kernels, mode);
      if (trace)
        trace->emplace_back("prediction/down" + std::to_string(i + 1),
                            t.val(y).shape());
    }
    if (t.val(y).extent(2) != 1)
      throw DimensionError("prediction head: expected single-frame features "
                           "after downsampling, got " +
                           shape_str(t.val(y).shape()));
    Var lf = t.constant(last_frame.reshaped({n, 3, 1}));
    for (std::size_t i = 0; i < recon.size(); ++i) {
      y = concat(t, y, lf, 1);
      y = recon[i](t, y, kernels, agc_kernels, mode);
      if (trace)
        trace->emplace_back("prediction/recon" + std::to_string(i + 1),
                            t.val(y).shape());
    }
    y = concat(t, y, lf, 1);                          // [n, 33, 1]
    Var flat = reshape(t, y, {n, t.val(y).extent(1)});
    Var out = fc(t, flat);                            // [n, 3*horizon]
    Tensor tiled({n, 3 * horizon});
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < horizon; ++h)
          tiled(j, c * horizon + h) = last_frame(j, c);
    out = add(t, out, t.constant(tiled));
    Var shaped = reshape(t, out, {n, 3, horizon});
    if (trace) trace->emplace_back("prediction/out", t.val(shaped).shape());
    return shaped;
  }

  void collect(ParamList& ps) {
    for (auto& b : down) b.collect(ps);
    for (auto& b : recon) b.collect(ps);
    fc.collect(ps);
  }
  void collect_buffers(BufferList& bs) {
    for (auto& b : down) b.collect_buffers(bs);
    for (auto& b : recon) b.collect_buffers(bs);
  }
};

// Per-(joint, frame) L2 norm over the channel axis of a feature map;
// the raw data behind response visualizations.
inline Tensor export_feature_responses(const Tensor& features) {
  if (features.rank() != 3)
    throw DimensionError("feature responses: expected [n,d,T]");
  const std::size_t n = features.extent(0), d = features.extent(1),
                    T = features.extent(2);
  Tensor out({n, T});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t tt = 0; tt < T; ++tt) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double v = features(j, c, tt);
        acc += v * v;
      }
      out(j, tt) = std::sqrt(acc);
    }
  return out;
}

// --- the full model ---

struct Model {
  SkeletonGraph graph;
  ModelConfig cfg;
  GraphKernels kernels;
  AimModel aim;
  Backbone backbone;
  RecognitionHead recognition;
  std::optional<PredictionHead> prediction;
  std::size_t backbone_frames = 0;  // frame count entering the backbone

  Model() = default;
  Model(const SkeletonGraph& g, const ModelConfig& c, std::size_t input_frames,
        std::uint64_t init_seed)
      : graph(g), cfg(c) {
    cfg.validate();
    g.validate();
    kernels = build_kernels(build_partitions(g), cfg.sgc_order());
    Rng rng(derive_seed(init_seed, "init"));
    aim = AimModel(cfg.aim, rng);
    backbone = Backbone(cfg, g.n, rng);
    recognition = RecognitionHead(backbone.d_out, cfg.num_classes, rng);
    backbone_frames = input_frames;
    if (cfg.prediction_head) {
      if (input_frames % 4 != 0)
        throw ValidationError("model: input frames must be divisible by 4");
      prediction.emplace(cfg, g.n, backbone.d_out, input_frames / 4, rng);
    }
  }

  ParamList trainable_params() {
    ParamList ps;
    aim.encoder.collect(ps);
    backbone.collect(ps);
    recognition.collect(ps);
    if (prediction) prediction->collect(ps);
    return ps;
  }
  // decoder included: it is trained in the warm-up phase and kept in
  // checkpoints even though the main model never calls it
  ParamList all_params() {
    ParamList ps = trainable_params();
    aim.decoder.collect(ps);
    return ps;
  }
  BufferList buffers() {
    BufferList bs;
    aim.encoder.collect_buffers(bs);
    backbone.collect_buffers(bs);
    if (prediction) prediction->collect_buffers(bs);
    return bs;
  }
};

// Output of one sample's forward pass.
struct SampleForward {
  Var probs;                     // [1, classes]
  Var features;                  // backbone output [n,d,T']
  std::optional<Var> prediction; // [n,3,horizon]
  Tensor link_probs;             // encoder output (value copy)
};

// Runs encoder -> backbone -> heads for one model input. `input` is the
// [n,3,T] tensor fed to the backbone; `aim_input` the [n,3F] flattened
// clip for the encoder; `last_frame`/`with_prediction` drive the head.
inline SampleForward forward_sample(Tape& t, Model& m, const Tensor& input,
                                    const Tensor& aim_input,
                                    const Tensor& last_frame,
                                    const Tensor& gumbel_noise, Mode mode,
                                    bool with_prediction,
                                    ShapeTrace* trace = nullptr) {
  SampleForward out;
  std::vector<Var> agc_kernels;
  const std::vector<Var>* agc_ptr = nullptr;
  if (m.cfg.use_agc()) {
    Var a = m.aim.encoder(t, t.constant(aim_input), m.cfg.aim, gumbel_noise,
                          mode);
    out.link_probs = t.val(a);
    agc_kernels = actional_kernels(t, a, m.cfg.aim.link_types);
    agc_ptr = &agc_kernels;
  }
  Var x = t.constant(input);
  out.features = m.backbone(t, x, m.kernels, agc_ptr, mode, trace);
  out.probs = m.recognition(t, out.features);
  if (with_prediction && m.prediction)
    out.prediction = (*m.prediction)(t, out.features, last_frame, m.kernels,
                                     agc_ptr, mode, trace);
  return out;
}

}  // namespace asgcn
