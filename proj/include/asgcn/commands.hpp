#pragma once

#include <filesystem>
#include <iostream>

#include "asgcn/ablate.hpp"
#include "asgcn/config.hpp"

namespace asgcn {

namespace detail {

inline Dataset load_labeled(const std::string& path, const SkeletonGraph& g,
                            const RunConfig& cfg) {
  if (!std::filesystem::exists(path))
    throw ValidationError("dataset not found: " + path);
  LoadOptions opt;
  opt.target_frames = cfg.target_frames;
  opt.normalize = true;
  return load_dataset(path, g, opt);
}

// Training data: either the synthetic benchmark or JSONL files; a lone
// train file is split by the configured fractions.
inline DataSplit resolve_split(const RunConfig& cfg) {
  if (cfg.synth) return benchmark_split(cfg, cfg.seed);
  if (cfg.data_train.empty())
    throw ValidationError("no training data: set --data-train or --synth");
  SkeletonGraph g = resolve_graph(cfg.graph);
  DataSplit split;
  if (!cfg.data_val.empty() || !cfg.data_test.empty()) {
    split.train = load_labeled(cfg.data_train, g, cfg);
    if (!cfg.data_val.empty())
      split.val = load_labeled(cfg.data_val, g, cfg);
    if (!cfg.data_test.empty())
      split.test = load_labeled(cfg.data_test, g, cfg);
    return split;
  }
  Dataset all = load_labeled(cfg.data_train, g, cfg);
  return split_dataset(all, {cfg.split_train, cfg.split_val, cfg.split_test},
                       derive_seed(cfg.seed, "split"));
}

// Evaluation-style commands read one dataset: --data-test, falling back
// to the synth benchmark's test split.
inline Dataset resolve_eval_set(const RunConfig& cfg,
                                const SkeletonGraph& g) {
  if (!cfg.data_test.empty()) return load_labeled(cfg.data_test, g, cfg);
  if (cfg.synth) return benchmark_split(cfg, cfg.seed).test;
  throw ValidationError("no evaluation data: set --data-test or --synth");
}

inline Model build_model(const RunConfig& cfg, const DataSplit& split) {
  ModelConfig mc = cfg.model_config();
  SkeletonGraph g = resolve_graph(cfg.graph);
  if (!split.train.empty() && split.train.front().n != g.n)
    throw ValidationError("dataset joint count does not match graph");
  return Model(g, mc, input_frames_of(split.train, mc), cfg.seed);
}

inline Model load_model(const std::string& checkpoint_path, Checkpoint* out) {
  if (checkpoint_path.empty())
    throw ValidationError("this command requires --checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!ckpt.meta.contains("model"))
    throw ValidationError("checkpoint has no model metadata: " +
                          checkpoint_path);
  Model m = model_from_meta(ckpt.meta.at("model"));
  restore_model(m, ckpt);
  if (out) *out = std::move(ckpt);
  return m;
}

inline void attach_model_meta(const std::string& path, Model& m) {
  Checkpoint ckpt = load_checkpoint(path);
  ckpt.meta["model"] = model_meta(m);
  save_checkpoint(ckpt, path);
}

}  // namespace detail

// --- pretrain-aim ---

inline int cmd_pretrain_aim(const RunConfig& cfg) {
  cfg.validate();
  DataSplit split = detail::resolve_split(cfg);
  Model m = detail::build_model(cfg, split);
  std::filesystem::create_directories(cfg.out);

  nlohmann::json header{{"seed", cfg.seed}, {"command", "pretrain-aim"},
                        {"aim_lr", cfg.aim_lr}, {"batch", cfg.batch}};
  MetricsWriter metrics(cfg.out + "/aim_metrics.jsonl", header);
  TrainConfig tc = cfg.train_config();
  pretrain_aim(m, split.train, tc, &metrics);

  Checkpoint ckpt = model_checkpoint(
      m, {{"phase", "aim"}, {"seed", cfg.seed}, {"model", model_meta(m)}});
  save_checkpoint(ckpt, cfg.out + "/aim.ckpt");
  std::cout << nlohmann::json{{"checkpoint", cfg.out + "/aim.ckpt"},
                              {"epochs", cfg.aim_epochs}}
                   .dump()
            << "\n";
  return 0;
}

// --- train ---

inline int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  DataSplit split = detail::resolve_split(cfg);
  Model m = detail::build_model(cfg, split);
  std::filesystem::create_directories(cfg.out);

  TrainConfig tc = cfg.train_config();
  Checkpoint resume_ckpt;
  const Checkpoint* resume = nullptr;
  if (!cfg.resume.empty()) {
    resume_ckpt = load_checkpoint(cfg.resume);
    resume = &resume_ckpt;
  } else if (!cfg.from_aim.empty()) {
    // warmed-up AIM from a previous pretrain run; skip phase 1
    Checkpoint aim = load_checkpoint(cfg.from_aim);
    Model warm = detail::load_model(cfg.from_aim, nullptr);
    ParamList dst = m.aim.all_params();
    ParamList src = warm.aim.all_params();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i]->value = src[i]->value;
    BufferList dbuf = m.aim.buffers();
    BufferList sbuf = warm.aim.buffers();
    for (std::size_t i = 0; i < dbuf.size(); ++i)
      *dbuf[i].second = *sbuf[i].second;
    tc.aim_epochs = 0;
  }

  TrainPaths paths{cfg.out, cfg.out + "/metrics.jsonl"};
  TrainOutcome outcome = train_protocol(m, split, tc, paths, resume);
  for (const std::string& p :
       {paths.out_dir + "/best.ckpt", paths.out_dir + "/final.ckpt",
        paths.out_dir + "/last.ckpt"})
    if (std::filesystem::exists(p)) detail::attach_model_meta(p, m);

  nlohmann::json report{{"best_val_top1", outcome.best_val_top1},
                        {"best_epoch", outcome.best_epoch},
                        {"final_train_top1", outcome.final_train_top1},
                        {"checkpoint", outcome.final_path}};
  if (!split.test.empty()) {
    EvalResult test = evaluate(m, split.test, tc.alpha);
    report["test_top1"] = test.top1;
    report["test_top5"] = test.top5;
  }
  std::cout << report.dump() << "\n";
  return 0;
}

// --- eval ---

inline int cmd_eval(const RunConfig& cfg) {
  Model m = detail::load_model(cfg.checkpoint, nullptr);
  Dataset ds = detail::resolve_eval_set(cfg, m.graph);
  if (ds.empty()) throw ValidationError("eval: dataset is empty");
  for (const auto& s : ds) {
    if (!s.label) throw ValidationError("eval: sample " + s.sample_id +
                                        " has no label");
    if (static_cast<std::size_t>(*s.label) >= m.cfg.num_classes)
      throw ValidationError("eval: label " + std::to_string(*s.label) +
                            " out of range for " +
                            std::to_string(m.cfg.num_classes) + " classes");
  }
  EvalResult res = evaluate(m, ds, cfg.no_prediction_head ? 0.0 : cfg.alpha);

  std::filesystem::create_directories(cfg.out);
  const std::string cm_path = cfg.out + "/confusion.csv";
  std::ofstream cm(cm_path);
  for (std::size_t i = 0; i < res.confusion.size(); ++i) {
    for (std::size_t j = 0; j < res.confusion[i].size(); ++j)
      cm << (j ? "," : "") << res.confusion[i][j];
    cm << "\n";
  }
  std::cout << nlohmann::json{{"top1", res.top1},
                              {"top5", res.top5},
                              {"loss", res.loss_recog},
                              {"count", res.count},
                              {"confusion_matrix_path", cm_path}}
                   .dump()
            << "\n";
  return 0;
}

// --- predict ---

inline int cmd_predict(const RunConfig& cfg) {
  Model m = detail::load_model(cfg.checkpoint, nullptr);
  if (!m.prediction)
    throw ValidationError("predict: checkpoint has no prediction head");
  Dataset ds = detail::resolve_eval_set(cfg, m.graph);
  std::filesystem::create_directories(cfg.out);
  const std::string out_path = cfg.out + "/predictions.jsonl";
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);

  const Tensor noise = zero_gumbel_noise(m);
  const std::size_t horizon = m.cfg.horizon;
  std::size_t skipped = 0, count = 0;
  double mse_sum = 0.0;
  for (const auto& seq : ds) {
    if (seq.valid_frames < horizon + 1) {
      std::cerr << "warning: skipping " << seq.sample_id << " ("
                << seq.valid_frames << " frames < horizon+1)\n";
      ++skipped;
      continue;
    }
    PreparedSample ps = prepare_sample(seq, m.cfg.aim, horizon);
    Tape t;
    SampleForward fw = forward_sample(t, m, ps.input, ps.aim_input,
                                      ps.last_frame, noise, Mode::eval, true);
    const Tensor& pred = t.val(*fw.prediction);

    nlohmann::json rec;
    rec["id"] = seq.sample_id;
    rec["label"] = seq.label ? nlohmann::json(*seq.label)
                             : nlohmann::json(nullptr);
    rec["n"] = seq.n;
    rec["t_valid"] = horizon;
    auto to_frames_json = [&](const Tensor& x) {
      auto joints = nlohmann::json::array();
      for (std::size_t j = 0; j < x.extent(0); ++j) {
        auto chans = nlohmann::json::array();
        for (std::size_t c = 0; c < 3; ++c) {
          auto frames = nlohmann::json::array();
          for (std::size_t h = 0; h < horizon; ++h)
            frames.push_back(x(j, c, h));
          chans.push_back(std::move(frames));
        }
        joints.push_back(std::move(chans));
      }
      return joints;
    };
    rec["data"] = to_frames_json(pred);  // predictions, loader-compatible
    rec["target"] = to_frames_json(ps.target);
    auto mses = nlohmann::json::array();
    double sample_mse = 0.0;
    for (std::size_t h = 0; h < horizon; ++h) {
      double acc = 0.0;
      for (std::size_t j = 0; j < seq.n; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = pred(j, c, h) - ps.target(j, c, h);
          acc += d * d;
        }
      acc /= static_cast<double>(seq.n * 3);
      mses.push_back(acc);
      sample_mse += acc;
    }
    rec["per_frame_mse"] = mses;
    out << rec.dump() << "\n";
    mse_sum += sample_mse / static_cast<double>(horizon);
    ++count;
  }
  const double mean_mse = count ? mse_sum / static_cast<double>(count) : 0.0;
  std::cout << nlohmann::json{{"mean_mse", mean_mse},
                              {"count", count},
                              {"skipped", skipped},
                              {"output", out_path}}
                   .dump()
            << "\n";
  return 0;
}

// --- export-links ---

inline int cmd_export_links(const RunConfig& cfg) {
  Model m = detail::load_model(cfg.checkpoint, nullptr);
  Dataset ds = detail::resolve_eval_set(cfg, m.graph);
  std::filesystem::create_directories(cfg.out);
  const std::string out_path = cfg.out + "/links.jsonl";
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);

  const Tensor noise = zero_gumbel_noise(m);
  const std::size_t K = m.cfg.aim.link_types + 1;
  for (const auto& seq : ds) {
    PreparedSample ps = prepare_sample(seq, m.cfg.aim, m.cfg.horizon);
    Tape t;
    Var a = m.aim.encoder(t, t.constant(ps.aim_input), m.cfg.aim, noise,
                          Mode::eval);
    const Tensor& probs = t.val(a);
    nlohmann::json rec;
    rec["sample_id"] = seq.sample_id;
    auto pj = nlohmann::json::array();
    for (std::size_t i = 0; i < seq.n; ++i) {
      auto row = nlohmann::json::array();
      for (std::size_t j = 0; j < seq.n; ++j) {
        auto cell = nlohmann::json::array();
        for (std::size_t k = 0; k < K; ++k) cell.push_back(probs(i, j, k));
        row.push_back(std::move(cell));
      }
      pj.push_back(std::move(row));
    }
    rec["probs"] = std::move(pj);
    auto edges = nlohmann::json::array();
    for (std::size_t i = 0; i < seq.n; ++i)
      for (std::size_t j = 0; j < seq.n; ++j)
        for (std::size_t c = 1; c < K; ++c)
          if (probs(i, j, c) > cfg.threshold)
            edges.push_back({i, j, c, probs(i, j, c)});
    rec["threshold_edges"] = std::move(edges);
    out << rec.dump() << "\n";
  }
  std::cout << nlohmann::json{{"output", out_path},
                              {"threshold", cfg.threshold},
                              {"count", ds.size()}}
                   .dump()
            << "\n";
  return 0;
}

// --- export-features ---

inline int cmd_export_features(const RunConfig& cfg) {
  Model m = detail::load_model(cfg.checkpoint, nullptr);
  Dataset ds = detail::resolve_eval_set(cfg, m.graph);
  std::filesystem::create_directories(cfg.out);
  const std::string out_path = cfg.out + "/features.jsonl";
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);

  const Tensor noise = zero_gumbel_noise(m);
  for (const auto& seq : ds) {
    PreparedSample ps = prepare_sample(seq, m.cfg.aim, m.cfg.horizon);
    Tape t;
    SampleForward fw = forward_sample(t, m, ps.input, ps.aim_input,
                                      ps.last_frame, noise, Mode::eval, false);
    Tensor resp = export_feature_responses(t.val(fw.features));
    nlohmann::json rec;
    rec["sample_id"] = seq.sample_id;
    auto rows = nlohmann::json::array();
    for (std::size_t j = 0; j < resp.extent(0); ++j) {
      auto row = nlohmann::json::array();
      for (std::size_t tt = 0; tt < resp.extent(1); ++tt)
        row.push_back(resp(j, tt));
      rows.push_back(std::move(row));
    }
    rec["responses"] = std::move(rows);
    out << rec.dump() << "\n";
  }
  std::cout << nlohmann::json{{"output", out_path}, {"count", ds.size()}}
                   .dump()
            << "\n";
  return 0;
}

// --- ablate ---

inline int cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  if (!cfg.synth)
    throw ValidationError("ablate: the sweep harness runs on --synth data");
  std::vector<AblationCell> cells = build_cells(cfg);
  std::vector<CellResult> results = run_ablation(cfg, cells, cfg.out);
  write_ablation_outputs(results, cfg.out);

  std::size_t failed = 0;
  for (const auto& r : results)
    if (!r.ok) ++failed;
  std::cout << nlohmann::json{{"cells", cells.size()},
                              {"seeds", cfg.ablate_seeds},
                              {"failed", failed},
                              {"results_csv", cfg.out + "/results.csv"},
                              {"results_json", cfg.out + "/results.json"}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace asgcn
