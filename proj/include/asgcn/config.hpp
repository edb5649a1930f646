#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "asgcn/data.hpp"
#include "asgcn/network.hpp"
#include "asgcn/train.hpp"

namespace asgcn {

// Everything a run needs, assembled from defaults, an optional TOML
// config file, and command-line flags (flags win).
struct RunConfig {
  // graph & data
  std::string graph = "synth17";   // preset name or JSON path
  std::string data_train, data_val, data_test;
  bool synth = false;
  std::string synth_preset = "limb-phase";  // or "constant-velocity"
  std::size_t synth_samples = 200;          // per class
  double synth_noise = 0.01;
  std::size_t synth_frames = 30;
  double split_train = 0.7, split_val = 0.1, split_test = 0.2;
  std::size_t target_frames = 0;  // pad loaded clips to at least this

  // model
  std::size_t num_classes = 4;
  std::string links = "as";
  std::size_t order = 2;
  std::size_t link_types = 3;  // C
  double ghost_prior = 0.95;   // P0
  double tau = 0.5;
  double sigma2 = 5e-3;
  double lambda = 0.5;
  std::string asgc_form = "convex";
  std::string blocks = "full";
  std::size_t aim_frames = 50;
  std::size_t horizon = 10;
  bool no_prediction_head = false;

  // training
  std::size_t epochs = 100;
  std::size_t aim_epochs = 10;
  std::size_t batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double lr_decay = 0.1;
  std::size_t lr_decay_interval = 20;
  double aim_lr = 5e-4;
  double alpha = 1.0;
  std::uint64_t seed = 1;

  // io / command arguments
  std::string out = "runs/default";
  std::string checkpoint;
  std::string from_aim;
  std::string resume;
  double threshold = 0.9;

  // ablation sweep axes (comma lists; empty = keep the base value)
  std::string sweep_links;
  std::string sweep_order;
  std::string sweep_c;
  std::string sweep_p0;
  std::string sweep_pred;
  std::size_t ablate_seeds = 1;

  void validate() const {
    model_config();  // throws on bad model fields
    train_config().validate();
    if (synth_preset != "limb-phase" && synth_preset != "constant-velocity")
      throw ValidationError(
          "config: synth_preset must be limb-phase|constant-velocity");
    if (synth && synth_samples < 1)
      throw ValidationError("config: synth_samples must be >= 1");
    if (split_train < 0 || split_val < 0 || split_test < 0 ||
        std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
      throw ValidationError("config: split fractions must sum to 1");
    if (threshold < 0.0 || threshold > 1.0)
      throw ValidationError("config: threshold must lie in [0,1]");
    if (ablate_seeds < 1)
      throw ValidationError("config: ablate_seeds must be >= 1");
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.num_classes = num_classes;
    mc.links = links_mode_from(links);
    mc.order = order;
    mc.lambda = lambda;
    if (asgc_form == "convex")
      mc.form = AsgcForm::convex;
    else if (asgc_form == "additive")
      mc.form = AsgcForm::additive;
    else
      throw ValidationError("config: asgc_form must be convex|additive");
    mc.blocks = blocks;
    mc.horizon = horizon;
    mc.prediction_head = !no_prediction_head && alpha > 0.0;
    mc.aim.link_types = link_types;
    mc.aim.ghost_prior = ghost_prior;
    mc.aim.tau = tau;
    mc.aim.sigma2 = sigma2;
    mc.aim.frames = aim_frames;
    mc.validate();
    return mc;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.aim_epochs = aim_epochs;
    tc.batch = batch;
    tc.lr = lr;
    tc.momentum = momentum;
    tc.lr_decay = lr_decay;
    tc.lr_decay_interval = lr_decay_interval;
    tc.aim_lr = aim_lr;
    tc.alpha = no_prediction_head ? 0.0 : alpha;
    tc.seed = seed;
    return tc;
  }
};

// --- model (de)serialization via checkpoint metadata ---

inline nlohmann::json model_meta(const Model& m) {
  nlohmann::json j;
  j["num_classes"] = m.cfg.num_classes;
  j["links"] = to_string(m.cfg.links);
  j["order"] = m.cfg.order;
  j["lambda"] = m.cfg.lambda;
  j["form"] = m.cfg.form == AsgcForm::convex ? "convex" : "additive";
  j["blocks"] = m.cfg.blocks;
  j["horizon"] = m.cfg.horizon;
  j["prediction_head"] = m.cfg.prediction_head;
  j["aim"] = {{"link_types", m.cfg.aim.link_types},
              {"ghost_prior", m.cfg.aim.ghost_prior},
              {"tau", m.cfg.aim.tau},
              {"sigma2", m.cfg.aim.sigma2},
              {"frames", m.cfg.aim.frames}};
  j["input_frames"] = m.backbone_frames;
  j["graph"] = graph_to_json(m.graph);
  return j;
}

inline Model model_from_meta(const nlohmann::json& j) {
  try {
    ModelConfig mc;
    mc.num_classes = j.at("num_classes").get<std::size_t>();
    mc.links = links_mode_from(j.at("links").get<std::string>());
    mc.order = j.at("order").get<std::size_t>();
    mc.lambda = j.at("lambda").get<double>();
    mc.form = j.at("form").get<std::string>() == "additive"
                  ? AsgcForm::additive
                  : AsgcForm::convex;
    mc.blocks = j.at("blocks").get<std::string>();
    mc.horizon = j.at("horizon").get<std::size_t>();
    mc.prediction_head = j.at("prediction_head").get<bool>();
    const auto& a = j.at("aim");
    mc.aim.link_types = a.at("link_types").get<std::size_t>();
    mc.aim.ghost_prior = a.at("ghost_prior").get<double>();
    mc.aim.tau = a.at("tau").get<double>();
    mc.aim.sigma2 = a.at("sigma2").get<double>();
    mc.aim.frames = a.at("frames").get<std::size_t>();
    SkeletonGraph g = graph_from_json(j.at("graph"), "checkpoint meta");
    return Model(g, mc, j.at("input_frames").get<std::size_t>(), /*seed=*/0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint model metadata: ") + e.what());
  }
}

}  // namespace asgcn
