#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/checkpoint.hpp"
#include "asgcn/data.hpp"
#include "asgcn/network.hpp"
#include "asgcn/optim.hpp"

namespace asgcn {

struct TrainConfig {
  std::size_t epochs = 100;       // joint phase
  std::size_t aim_epochs = 10;    // warm-up phase
  std::size_t batch = 32;
  double lr = 0.1;                // SGD base rate
  double momentum = 0.9;
  double lr_decay = 0.1;
  std::size_t lr_decay_interval = 20;
  double aim_lr = 5e-4;           // Adam rate for the warm-up
  double alpha = 1.0;             // prediction-loss weight
  std::uint64_t seed = 1;

  void validate() const {
    if (batch < 1) throw ValidationError("train: batch must be >= 1");
    if (!(lr > 0.0) || !(aim_lr > 0.0))
      throw ValidationError("train: learning rates must be positive");
    if (alpha < 0.0) throw ValidationError("train: alpha must be >= 0");
    if (!(lr_decay > 0.0)) throw ValidationError("train: lr decay factor");
  }
};

// --- metrics stream (JSON lines) ---

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss_recog = 0.0;
  double loss_pred = 0.0;
  double loss_aim_kl = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"split", split},
            {"loss_recog", loss_recog}, {"loss_pred", loss_pred},
            {"loss_aim_kl", loss_aim_kl}, {"top1", top1},
            {"top5", top5},         {"lr", lr},
            {"wall_ms", wall_ms}};
  }
};

class MetricsWriter {
public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& path, const nlohmann::json& header,
                bool append = false)
      : out_(path, append ? std::ios::app : std::ios::out) {
    if (!out_) throw IoError("cannot write metrics: " + path);
    if (!append) out_ << nlohmann::json{{"header", header}}.dump() << "\n";
  }
  void row(const MetricsRow& r) {
    if (out_.is_open()) {
      out_ << r.to_json().dump() << "\n";
      out_.flush();
    }
    rows.push_back(r);
  }
  std::vector<MetricsRow> rows;

private:
  std::ofstream out_;
};

// --- per-sample preparation ---

// The model consumes the clip minus the prediction horizon (padded up to
// a multiple of 4); the held-out tail is the prediction target.
struct PreparedSample {
  Tensor input;       // [n,3,T_in]
  Tensor aim_input;   // [n,3F] flattened for the encoder
  Tensor last_frame;  // [n,3] final observed frame
  Tensor target;      // [n,3,horizon]; empty when unavailable
  std::optional<int> label;
  std::string sample_id;
};

inline PreparedSample prepare_sample(const SkeletonSequence& seq,
                                     const AimConfig& aim_cfg,
                                     std::size_t horizon) {
  PreparedSample out;
  out.sample_id = seq.sample_id;
  out.label = seq.label;
  const std::size_t n = seq.data.extent(0);
  const std::size_t t_raw = seq.valid_frames > horizon
                                ? seq.valid_frames - horizon
                                : seq.valid_frames;
  Tensor clip({n, 3, t_raw});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < t_raw; ++t)
        clip(j, c, t) = seq.data(j, c, t);
  const std::size_t t_in = ((t_raw + 3) / 4) * 4;
  out.input = pad_repeat(clip, t_in);

  SkeletonSequence view;
  view.sample_id = seq.sample_id;
  view.n = n;
  view.valid_frames = t_raw;
  view.data = clip;
  out.aim_input = flatten_joint_features(downsample_frames(view, aim_cfg.frames));

  out.last_frame = Tensor({n, 3});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < 3; ++c)
      out.last_frame(j, c) = clip(j, c, t_raw - 1);

  if (seq.valid_frames >= t_raw + horizon) {
    out.target = Tensor({n, 3, horizon});
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < horizon; ++h)
          out.target(j, c, h) = seq.data(j, c, t_raw + h);
  }
  return out;
}

inline Tensor zero_gumbel_noise(const Model& m) {
  return Tensor({m.graph.n, m.graph.n, m.cfg.aim.link_types + 1});
}

// --- evaluation ---

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double loss_recog = 0.0;
  double loss_pred = 0.0;
  double kl = 0.0;
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
};

inline EvalResult evaluate(Model& m, const Dataset& ds, double alpha) {
  EvalResult res;
  const std::size_t classes = m.cfg.num_classes;
  res.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  const std::size_t topk = std::min<std::size_t>(5, classes);
  const Tensor noise = zero_gumbel_noise(m);
  const bool with_pred = alpha > 0.0 && m.prediction.has_value();

  for (const auto& seq : ds) {
    if (!seq.label) continue;
    const std::size_t label = static_cast<std::size_t>(*seq.label);
    if (label >= classes)
      throw ValidationError("eval: label " + std::to_string(label) +
                            " exceeds num_classes=" + std::to_string(classes));
    PreparedSample ps = prepare_sample(seq, m.cfg.aim, m.cfg.horizon);
    Tape t;
    SampleForward fw =
        forward_sample(t, m, ps.input, ps.aim_input, ps.last_frame, noise,
                       Mode::eval, with_pred && !ps.target.empty());
    const Tensor& probs = t.val(fw.probs);
    // rank of the true class (stable ties by index)
    std::size_t argmax = 0, better = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (probs[c] > probs[argmax]) argmax = c;
      if (probs[c] > probs[label] || (probs[c] == probs[label] && c < label))
        ++better;
    }
    res.confusion[label][argmax]++;
    if (argmax == label) res.top1 += 1.0;
    if (better < topk) res.top5 += 1.0;
    res.loss_recog += -std::log(std::max(probs[label], 1e-12));
    if (fw.prediction) {
      Tape::Var l = prediction_loss(t, *fw.prediction, ps.target);
      res.loss_pred += t.val(l)[0];
    }
    if (!fw.link_probs.empty())
      res.kl += kl_to_prior(fw.link_probs, m.cfg.aim);
    res.count++;
  }
  if (res.count > 0) {
    const double inv = 1.0 / static_cast<double>(res.count);
    res.top1 *= inv;
    res.top5 *= inv;
    res.loss_recog *= inv;
    res.loss_pred *= inv;
    res.kl *= inv;
  }
  return res;
}

// --- phase 1: AIM warm-up ---

// Minimizes the decoder NLL plus the link KL with Adam. Returns the
// mean loss of the final epoch.
inline double pretrain_aim(Model& m, const Dataset& train,
                           const TrainConfig& cfg, MetricsWriter* metrics,
                           AdamOptimizer* opt_in = nullptr) {
  if (train.empty()) throw ValidationError("aim pretraining: empty dataset");
  ParamList params = m.aim.all_params();
  AdamOptimizer local(params);
  AdamOptimizer& opt = opt_in ? *opt_in : local;

  double last_epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.aim_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, "aim_shuffle", epoch));
    shuffle_rng.shuffle(order);

    double epoch_nll = 0.0, epoch_kl = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
      const double inv_batch = 1.0 / static_cast<double>(b1 - b0);
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        const SkeletonSequence& seq = train[order[k]];
        Tensor frames = downsample_frames(seq, m.cfg.aim.frames);
        Tensor feat = flatten_joint_features(frames);
        Rng nrng(derive_seed(cfg.seed, "gumbel_aim", epoch, order[k]));
        Tensor noise = nrng.gumbel_tensor(
            {seq.n, seq.n, m.cfg.aim.link_types + 1});
        Tape t;
        Var a = m.aim.encoder(t, t.constant(feat), m.cfg.aim, noise,
                              Mode::train);
        auto mus = decode_sequence(t, m.aim.decoder, frames, a,
                                   DecodeMode::teacher_forced);
        Var loss = aim_loss(t, frames, mus, a, m.cfg.aim);
        const double lv = t.val(loss)[0];
        if (!std::isfinite(lv))
          throw NumericError("aim pretraining diverged at epoch " +
                             std::to_string(epoch));
        epoch_kl += kl_to_prior(t.val(a), m.cfg.aim);
        epoch_nll += lv - kl_to_prior(t.val(a), m.cfg.aim);
        t.backward(ops::scale(t, loss, inv_batch));
      }
      opt.step(params, cfg.aim_lr);
    }
    const double inv = 1.0 / static_cast<double>(train.size());
    last_epoch_loss = (epoch_nll + epoch_kl) * inv;
    if (!std::isfinite(last_epoch_loss))
      throw NumericError("aim pretraining diverged at epoch " +
                         std::to_string(epoch));
    if (metrics) {
      MetricsRow row;
      row.epoch = epoch;
      row.split = "aim_train";
      row.loss_pred = epoch_nll * inv;
      row.loss_aim_kl = epoch_kl * inv;
      row.lr = cfg.aim_lr;
      row.wall_ms =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - t0)
              .count();
      metrics->row(row);
    }
  }
  return last_epoch_loss;
}

// Mean AIM loss over a dataset with noise-free links; used as the
// warm-up progress probe.
inline double aim_dataset_loss(Model& m, const Dataset& ds) {
  double total = 0.0;
  for (const auto& seq : ds) {
    Tensor frames = downsample_frames(seq, m.cfg.aim.frames);
    Tensor feat = flatten_joint_features(frames);
    Tensor noise({seq.n, seq.n, m.cfg.aim.link_types + 1});
    Tape t;
    Var a = m.aim.encoder(t, t.constant(feat), m.cfg.aim, noise, Mode::eval);
    auto mus = decode_sequence(t, m.aim.decoder, frames, a,
                               DecodeMode::teacher_forced);
    total += t.val(aim_loss(t, frames, mus, a, m.cfg.aim))[0];
  }
  return ds.empty() ? 0.0 : total / static_cast<double>(ds.size());
}

// --- phase 2: joint recognition + prediction training ---

struct EpochStats {
  double loss_recog = 0.0;
  double loss_pred = 0.0;
  double kl = 0.0;
  double top1 = 0.0;
  std::size_t count = 0;
};

// One optimizer step over a batch of samples. Gradients flow into the
// backbone, both heads, and the AIM encoder; the decoder stays frozen.
inline void joint_batch_step(Model& m, const Dataset& train,
                             const std::vector<std::size_t>& order,
                             std::size_t b0, std::size_t b1,
                             const TrainConfig& cfg, std::size_t epoch,
                             SgdOptimizer& opt, double lr, EpochStats& stats) {
  ParamList params = m.trainable_params();
  for (Parameter* p : params) p->zero_grad();
  const double inv_batch = 1.0 / static_cast<double>(b1 - b0);
  const bool with_pred = cfg.alpha > 0.0 && m.prediction.has_value();

  for (std::size_t k = b0; k < b1; ++k) {
    const SkeletonSequence& seq = train[order[k]];
    if (!seq.label)
      throw ValidationError("train: sample " + seq.sample_id + " has no label");
    PreparedSample ps = prepare_sample(seq, m.cfg.aim, m.cfg.horizon);
    Rng nrng(derive_seed(cfg.seed, "gumbel", epoch, order[k]));
    Tensor noise =
        m.cfg.use_agc()
            ? nrng.gumbel_tensor({seq.n, seq.n, m.cfg.aim.link_types + 1})
            : zero_gumbel_noise(m);
    Tape t;
    SampleForward fw =
        forward_sample(t, m, ps.input, ps.aim_input, ps.last_frame, noise,
                       Mode::train, with_pred && !ps.target.empty());
    Var loss = recognition_loss(t, fw.probs,
                                static_cast<std::size_t>(*ps.label));
    stats.loss_recog += t.val(loss)[0];
    if (fw.prediction) {
      Var lp = prediction_loss(t, *fw.prediction, ps.target);
      stats.loss_pred += t.val(lp)[0];
      loss = ops::add(t, loss, ops::scale(t, lp, cfg.alpha));
    }
    if (!std::isfinite(t.val(loss)[0]))
      throw NumericError("joint training: non-finite loss at epoch " +
                         std::to_string(epoch) + ", sample " + seq.sample_id);
    if (!fw.link_probs.empty())
      stats.kl += kl_to_prior(fw.link_probs, m.cfg.aim);

    const Tensor& probs = t.val(fw.probs);
    std::size_t argmax = 0;
    for (std::size_t c = 1; c < m.cfg.num_classes; ++c)
      if (probs[c] > probs[argmax]) argmax = c;
    if (argmax == static_cast<std::size_t>(*ps.label)) stats.top1 += 1.0;
    stats.count++;

    t.backward(ops::scale(t, loss, inv_batch));
  }
  opt.step(params, lr);
}

// --- checkpoint plumbing ---

inline Checkpoint model_checkpoint(Model& m, nlohmann::json meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (Parameter* p : m.all_params()) ckpt.tensors.emplace(p->name, p->value);
  for (auto& [name, buf] : m.buffers()) ckpt.tensors.emplace(name, *buf);
  return ckpt;
}

inline void add_optimizer_state(Checkpoint& ckpt, Model& m,
                                SgdOptimizer& opt) {
  ParamList params = m.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    ckpt.tensors.emplace("opt/sgd/velocity/" + params[i]->name,
                         opt.velocity()[i]);
  ckpt.meta["sgd_step_count"] = opt.step_count();
}

inline void restore_model(Model& m, const Checkpoint& ckpt) {
  for (Parameter* p : m.all_params()) {
    const Tensor& t = ckpt.at(p->name);
    if (!(t.shape() == p->value.shape()))
      throw ValidationError("checkpoint: shape mismatch for '" + p->name +
                            "': " + shape_str(t.shape()) + " vs " +
                            shape_str(p->value.shape()));
    p->value = t;
    p->zero_grad();
  }
  for (auto& [name, buf] : m.buffers()) *buf = ckpt.at(name);
}

inline void restore_optimizer(SgdOptimizer& opt, Model& m,
                              const Checkpoint& ckpt) {
  ParamList params = m.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string key = "opt/sgd/velocity/" + params[i]->name;
    if (ckpt.has(key)) opt.velocity()[i] = ckpt.at(key);
  }
  opt.set_step_count(ckpt.meta.value("sgd_step_count", 0ull));
}

// --- the full two-phase protocol ---

struct TrainOutcome {
  double best_val_top1 = 0.0;
  std::size_t best_epoch = 0;
  double final_train_top1 = 0.0;
  std::string best_path, final_path;
};

struct TrainPaths {
  std::string out_dir;  // receives aim.ckpt, last.ckpt, best.ckpt, final.ckpt
  std::string metrics_path;
};

// Phase 1 warms up the AIM with Adam, phase 2 trains the joint model
// with scheduled SGD. Checkpoints land at best-validation and final
// epochs; last.ckpt after every epoch makes interrupted runs resumable.
inline TrainOutcome train_protocol(Model& m, const DataSplit& split,
                                   const TrainConfig& cfg,
                                   const TrainPaths& paths,
                                   const Checkpoint* resume_from = nullptr) {
  cfg.validate();
  if (split.train.empty()) throw ValidationError("train: empty training set");

  nlohmann::json header;
  header["seed"] = cfg.seed;
  header["sub_seeds"] = {
      {"init", derive_seed(cfg.seed, "init")},
      {"shuffle", derive_seed(cfg.seed, "shuffle", 0)},
      {"gumbel", derive_seed(cfg.seed, "gumbel", 0, 0)},
  };
  header["batch"] = cfg.batch;
  header["lr"] = cfg.lr;
  header["aim_lr"] = cfg.aim_lr;
  header["alpha"] = cfg.alpha;
  const bool resuming = resume_from != nullptr;
  MetricsWriter metrics(paths.metrics_path, header, /*append=*/resuming);

  Schedule schedule{cfg.lr, cfg.lr_decay, cfg.lr_decay_interval};
  SgdOptimizer sgd(m.trainable_params(), cfg.momentum);

  std::size_t start_epoch = 0;
  if (resuming) {
    restore_model(m, *resume_from);
    restore_optimizer(sgd, m, *resume_from);
    start_epoch = resume_from->meta.value("epoch", 0ull) + 1;
  } else if (cfg.aim_epochs > 0 && m.cfg.use_agc()) {
    pretrain_aim(m, split.train, cfg, &metrics);
    if (!paths.out_dir.empty()) {
      Checkpoint aim_ckpt = model_checkpoint(
          m, {{"phase", "aim"}, {"seed", cfg.seed}});
      save_checkpoint(aim_ckpt, paths.out_dir + "/aim.ckpt");
    }
  }

  TrainOutcome outcome;
  if (resuming) {
    outcome.best_val_top1 = resume_from->meta.value("best_val_top1", 0.0);
    outcome.best_epoch = resume_from->meta.value("best_epoch", 0ull);
  }

  EpochStats last_train_stats;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = schedule.lr(epoch);
    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch)
      joint_batch_step(m, split.train, order, b0,
                       std::min(order.size(), b0 + cfg.batch), cfg, epoch,
                       sgd, lr, stats);
    last_train_stats = stats;

    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(
                                 1, stats.count));
    MetricsRow row;
    row.epoch = epoch;
    row.split = "train";
    row.loss_recog = stats.loss_recog * inv;
    row.loss_pred = stats.loss_pred * inv;
    row.loss_aim_kl = stats.kl * inv;
    row.top1 = stats.top1 * inv;
    row.top5 = 0.0;  // tracked on evaluation splits
    row.lr = lr;
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    metrics.row(row);

    if (!split.val.empty()) {
      EvalResult val = evaluate(m, split.val, cfg.alpha);
      MetricsRow vrow;
      vrow.epoch = epoch;
      vrow.split = "val";
      vrow.loss_recog = val.loss_recog;
      vrow.loss_pred = val.loss_pred;
      vrow.loss_aim_kl = val.kl;
      vrow.top1 = val.top1;
      vrow.top5 = val.top5;
      vrow.lr = lr;
      vrow.wall_ms = 0.0;
      metrics.row(vrow);
      if (val.top1 > outcome.best_val_top1 || epoch == start_epoch) {
        outcome.best_val_top1 = std::max(outcome.best_val_top1, val.top1);
        outcome.best_epoch = epoch;
        if (!paths.out_dir.empty()) {
          Checkpoint best = model_checkpoint(
              m, {{"phase", "best"},
                  {"epoch", epoch},
                  {"seed", cfg.seed},
                  {"val_top1", val.top1}});
          save_checkpoint(best, paths.out_dir + "/best.ckpt");
          outcome.best_path = paths.out_dir + "/best.ckpt";
        }
      }
    }

    if (!paths.out_dir.empty()) {
      Checkpoint last = model_checkpoint(
          m, {{"phase", "last"},
              {"epoch", epoch},
              {"seed", cfg.seed},
              {"best_val_top1", outcome.best_val_top1},
              {"best_epoch", outcome.best_epoch}});
      add_optimizer_state(last, m, sgd);
      save_checkpoint(last, paths.out_dir + "/last.ckpt");
    }
  }

  outcome.final_train_top1 =
      last_train_stats.count
          ? last_train_stats.top1 / static_cast<double>(last_train_stats.count)
          : 0.0;
  if (!paths.out_dir.empty()) {
    Checkpoint fin = model_checkpoint(
        m, {{"phase", "final"},
            {"epoch", cfg.epochs == 0 ? 0 : cfg.epochs - 1},
            {"seed", cfg.seed},
            {"best_val_top1", outcome.best_val_top1},
            {"best_epoch", outcome.best_epoch}});
    add_optimizer_state(fin, m, sgd);
    save_checkpoint(fin, paths.out_dir + "/final.ckpt");
    outcome.final_path = paths.out_dir + "/final.ckpt";
    if (outcome.best_path.empty()) outcome.best_path = outcome.final_path;
  }
  return outcome;
}

}  // namespace asgcn
