// Command-line driver: skeleton action recognition and future pose
// prediction over actional-structural graph convolutions.

#include <CLI11.hpp>

#include <functional>
#include <iostream>

#include "asgcn/commands.hpp"

using namespace asgcn;

namespace {

void add_common_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->set_config("--config", "", "TOML config file (flags override it)");
  cmd->allow_config_extras(false);

  cmd->add_option("--graph", cfg.graph,
                  "graph preset (ntu25|kinetics18|synth17) or JSON path");
  cmd->add_option("--data-train", cfg.data_train, "training set (JSON lines)");
  cmd->add_option("--data-val", cfg.data_val, "validation set (JSON lines)");
  cmd->add_option("--data-test", cfg.data_test, "test set (JSON lines)");
  cmd->add_flag("--synth", cfg.synth, "use the built-in synthetic benchmark");
  cmd->add_option("--synth-preset", cfg.synth_preset,
                  "limb-phase | constant-velocity");
  cmd->add_option("--synth-samples", cfg.synth_samples,
                  "synthetic samples per class");
  cmd->add_option("--synth-noise", cfg.synth_noise,
                  "synthetic coordinate noise stddev");
  cmd->add_option("--synth-frames", cfg.synth_frames,
                  "synthetic clip length in frames");
  cmd->add_option("--split-train", cfg.split_train, "train fraction");
  cmd->add_option("--split-val", cfg.split_val, "validation fraction");
  cmd->add_option("--split-test", cfg.split_test, "test fraction");
  cmd->add_option("--target-frames", cfg.target_frames,
                  "pad loaded clips to at least this many frames");

  cmd->add_option("--num-classes", cfg.num_classes, "number of action classes");
  cmd->add_option("--links", cfg.links, "link types: s | a | as");
  cmd->add_option("--order", cfg.order, "polynomial order of structural links");
  cmd->add_option("--C", cfg.link_types, "number of actional link types");
  cmd->add_option("--P0", cfg.ghost_prior, "ghost-link prior probability");
  cmd->add_option("--tau", cfg.tau, "gumbel-softmax temperature");
  cmd->add_option("--sigma2", cfg.sigma2, "decoder output variance");
  cmd->add_option("--lambda", cfg.lambda, "actional/structural blend weight");
  cmd->add_option("--asgc-form", cfg.asgc_form,
                  "combination form: convex | additive");
  cmd->add_option("--blocks", cfg.blocks, "backbone preset: full | toy");
  cmd->add_option("--aim-frames", cfg.aim_frames,
                  "frames the link encoder downsamples to");
  cmd->add_option("--horizon", cfg.horizon, "future frames to predict");
  cmd->add_flag("--no-prediction-head", cfg.no_prediction_head,
                "train without the future-pose head");

  cmd->add_option("--epochs", cfg.epochs, "joint-training epochs");
  cmd->add_option("--aim-epochs", cfg.aim_epochs, "warm-up epochs");
  cmd->add_option("--batch", cfg.batch, "batch size");
  cmd->add_option("--lr", cfg.lr, "SGD base learning rate");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--lr-decay", cfg.lr_decay, "learning-rate decay factor");
  cmd->add_option("--lr-decay-interval", cfg.lr_decay_interval,
                  "epochs between decays");
  cmd->add_option("--aim-lr", cfg.aim_lr, "Adam rate for the warm-up");
  cmd->add_option("--alpha", cfg.alpha, "prediction-loss weight");
  cmd->add_option("--seed", cfg.seed, "master random seed");

  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint to load");
  cmd->add_option("--from-aim", cfg.from_aim,
                  "start joint training from a warm-up checkpoint");
  cmd->add_option("--resume", cfg.resume, "resume from a last.ckpt");
  cmd->add_option("--threshold", cfg.threshold,
                  "probability threshold for exported links");

  cmd->add_option("--sweep-links", cfg.sweep_links,
                  "ablation axis, e.g. s,a,as");
  cmd->add_option("--sweep-order", cfg.sweep_order,
                  "ablation axis, e.g. 1,2,3,4");
  cmd->add_option("--sweep-C", cfg.sweep_c, "ablation axis, e.g. 1,2,3,4,5");
  cmd->add_option("--sweep-P0", cfg.sweep_p0,
                  "ablation axis, e.g. 0.99,0.95,0.5,0.2");
  cmd->add_option("--sweep-pred", cfg.sweep_pred, "ablation axis: on,off");
  cmd->add_option("--ablate-seeds", cfg.ablate_seeds,
                  "seeds per ablation cell");
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    std::cerr << nlohmann::json{
                     {"error",
                      {{"code", static_cast<int>(e.code())},
                       {"message", e.what()}}}}
                     .dump()
              << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{
                     {"error", {{"code", 1}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "asgcn: skeleton action recognition and future pose prediction\n"
      "with inferred actional links and polynomial structural links"};
  app.require_subcommand(1);

  RunConfig cfg;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&);
  };
  const Cmd cmds[] = {
      {"pretrain-aim", "warm up the link-inference module", cmd_pretrain_aim},
      {"train", "two-phase training: warm-up, then joint recognition "
                "and prediction", cmd_train},
      {"eval", "top-1/top-5 accuracy and confusion matrix of a checkpoint",
       cmd_eval},
      {"predict", "predict the next frames for each clip", cmd_predict},
      {"export-links", "write inferred link distributions and thresholded "
                       "edges", cmd_export_links},
      {"export-features", "write per-joint feature response magnitudes",
       cmd_export_features},
      {"ablate", "sweep links/order/C/P0/prediction over shared seeds",
       cmd_ablate},
  };
  for (const Cmd& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common_options(sub, cfg);
    sub->callback([&cfg, fn = c.fn]() {
      int rc = run_guarded([&]() { return fn(cfg); });
      if (rc != 0) std::exit(rc);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // validation failure
  }
  return 0;
}
