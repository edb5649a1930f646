#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "asgcn/train.hpp"

using namespace asgcn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("asgcn_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.blocks = "toy";
  cfg.links = LinksMode::as;
  cfg.order = 1;
  cfg.aim.frames = 6;
  cfg.horizon = 4;
  return cfg;
}

// a tiny two-class dataset over the 17-joint figure
DataSplit tiny_split(std::size_t per_class, std::uint64_t seed) {
  auto synth = limb_phase_benchmark(per_class, seed, 0.02, /*frames=*/20);
  synth.classes.resize(2);
  Dataset ds = generate_synthetic(synth);
  DataSplit split;
  split.train = ds;
  return split;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// metrics files match except for the wall-clock field
std::string strip_wall(const std::string& s) {
  std::string out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_ms");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule closed form") {
  Schedule s{0.1, 0.1, 20};
  CHECK(s.lr(0) == Catch::Approx(0.1));
  CHECK(s.lr(19) == Catch::Approx(0.1));
  CHECK(s.lr(20) == Catch::Approx(0.01));
  CHECK(s.lr(39) == Catch::Approx(0.01));
  CHECK(s.lr(40) == Catch::Approx(0.001));
  CHECK(s.lr(45) == Catch::Approx(0.001));  // 0.1 * 0.1^2
  CHECK(s.lr(99) == Catch::Approx(1e-5));
}

TEST_CASE("sgd step") {
  Parameter w("w", Tensor::row({1.0, 2.0}));
  ParamList ps{&w};
  SECTION("zero gradient leaves parameters unchanged") {
    SgdOptimizer opt(ps, 0.9);
    w.zero_grad();
    opt.step(ps, 0.1);
    CHECK(w.value[0] == 1.0);
    CHECK(w.value[1] == 2.0);
    CHECK(opt.step_count() == 1);
  }
  SECTION("single scalar without momentum: w - lr*g") {
    SgdOptimizer opt(ps, 0.0);
    w.grad = Tensor::row({0.5, -1.0});
    opt.step(ps, 0.2);
    CHECK(w.value[0] == Catch::Approx(1.0 - 0.2 * 0.5));
    CHECK(w.value[1] == Catch::Approx(2.0 + 0.2));
  }
  SECTION("momentum accumulates") {
    SgdOptimizer opt(ps, 0.5);
    w.grad = Tensor::row({1.0, 0.0});
    opt.step(ps, 0.1);   // v=1, w -= 0.1
    opt.step(ps, 0.1);   // v=1.5, w -= 0.15
    CHECK(w.value[0] == Catch::Approx(1.0 - 0.1 - 0.15));
  }
  SECTION("non-finite gradient names the parameter") {
    SgdOptimizer opt(ps);
    w.grad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH(opt.step(ps, 0.1),
                      Catch::Matchers::ContainsSubstring("'w'"));
  }
}

TEST_CASE("adam step") {
  Parameter w("w", Tensor::row({1.0}));
  ParamList ps{&w};
  SECTION("zero gradients leave parameters unchanged") {
    AdamOptimizer opt(ps);
    w.zero_grad();
    opt.step(ps, 0.001);
    CHECK(w.value[0] == 1.0);
  }
  SECTION("first step has magnitude close to lr") {
    AdamOptimizer opt(ps);
    w.grad = Tensor::row({0.37});
    opt.step(ps, 0.01);
    // bias-corrected first step: lr * g / (|g| + eps') ~ lr
    CHECK(std::abs(1.0 - w.value[0]) == Catch::Approx(0.01).epsilon(1e-3));
  }
  SECTION("step count increments by one per call") {
    AdamOptimizer opt(ps);
    w.zero_grad();
    opt.step(ps, 0.1);
    opt.step(ps, 0.1);
    CHECK(opt.step_count() == 2);
  }
}

TEST_CASE("optimizers are deterministic") {
  auto run = [](double seed_val) {
    Parameter w("w", Tensor::row({seed_val, -seed_val}));
    ParamList ps{&w};
    SgdOptimizer opt(ps, 0.9);
    for (int i = 0; i < 5; ++i) {
      w.grad = Tensor::row({0.1 * i, -0.2});
      opt.step(ps, 0.05);
    }
    return w.value;
  };
  CHECK(run(1.5) == run(1.5));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto dir = fresh_dir("ckpt");
  Rng rng(3);
  Checkpoint ckpt;
  ckpt.meta = {{"epoch", 7}, {"seed", 42}};
  ckpt.tensors.emplace("a/w", rng.normal_tensor({3, 4}, 0, 1));
  ckpt.tensors.emplace("b/bias", rng.normal_tensor({5}, 0, 100));
  auto path = (dir / "t.ckpt").string();
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.meta["epoch"] == 7);
  CHECK(back.at("a/w") == ckpt.at("a/w"));
  CHECK(back.at("b/bias") == ckpt.at("b/bias"));
  CHECK_THROWS_AS(back.at("missing"), ValidationError);

  // identical contents -> identical bytes
  auto path2 = (dir / "t2.ckpt").string();
  save_checkpoint(back, path2);
  CHECK(slurp(path) == slurp(path2));

  CHECK_THROWS_AS(load_checkpoint((dir / "nope.ckpt").string()), IoError);
}

TEST_CASE("aim warm-up reduces the aim loss") {
  auto split = tiny_split(6, 5);
  ModelConfig mc = tiny_model_config();
  Model m(synth17_graph(), mc, 16, /*seed=*/9);
  TrainConfig tc;
  tc.aim_epochs = 2;
  tc.batch = 8;
  tc.seed = 9;
  const double before = aim_dataset_loss(m, split.train);
  pretrain_aim(m, split.train, tc, nullptr);
  const double after = aim_dataset_loss(m, split.train);
  CHECK(after < before);
}

TEST_CASE("two runs with the same seed are bit-identical") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.epochs = 2;
  tc.aim_epochs = 1;
  tc.batch = 4;
  tc.lr = 0.05;
  tc.seed = 31;

  auto run = [&](const std::string& tag) {
    auto dir = fresh_dir(tag);
    auto split = tiny_split(4, 21);
    Model m(synth17_graph(), mc, 16, tc.seed);
    TrainPaths paths{dir.string(), (dir / "metrics.jsonl").string()};
    train_protocol(m, split, tc, paths);
    return dir;
  };
  auto d1 = run("det1");
  auto d2 = run("det2");
  CHECK(slurp(d1 / "final.ckpt") == slurp(d2 / "final.ckpt"));
  CHECK(strip_wall(slurp(d1 / "metrics.jsonl")) ==
        strip_wall(slurp(d2 / "metrics.jsonl")));
}

TEST_CASE("resume reproduces an uninterrupted run bit-exactly") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.epochs = 4;
  tc.aim_epochs = 1;
  tc.batch = 4;
  tc.lr = 0.05;
  tc.seed = 77;

  // uninterrupted run
  auto full_dir = fresh_dir("resume_full");
  {
    auto split = tiny_split(4, 13);
    Model m(synth17_graph(), mc, 16, tc.seed);
    TrainPaths paths{full_dir.string(),
                     (full_dir / "metrics.jsonl").string()};
    train_protocol(m, split, tc, paths);
  }

  // interrupted after 2 epochs, then resumed
  auto part_dir = fresh_dir("resume_part");
  {
    auto split = tiny_split(4, 13);
    Model m(synth17_graph(), mc, 16, tc.seed);
    TrainConfig tc2 = tc;
    tc2.epochs = 2;
    TrainPaths paths{part_dir.string(),
                     (part_dir / "metrics.jsonl").string()};
    train_protocol(m, split, tc2, paths);
  }
  {
    auto split = tiny_split(4, 13);
    Model m(synth17_graph(), mc, 16, tc.seed);
    Checkpoint last = load_checkpoint((part_dir / "last.ckpt").string());
    TrainPaths paths{part_dir.string(),
                     (part_dir / "metrics.jsonl").string()};
    train_protocol(m, split, tc, paths, &last);
  }
  CHECK(slurp(full_dir / "final.ckpt") == slurp(part_dir / "final.ckpt"));

  // metrics rows (minus wall clock) must agree line for line after the
  // header; the resumed fileews appends to the same stream
  auto full_rows = strip_wall(slurp(full_dir / "metrics.jsonl"));
  auto part_rows = strip_wall(slurp(part_dir / "metrics.jsonl"));
  // drop header lines (the resumed file has one header; both identical)
  auto drop_header = [](const std::string& s) {
    return s.substr(s.find('\n') + 1);
  };
  CHECK(drop_header(full_rows) == drop_header(part_rows));
}

TEST_CASE("training loss decreases on the tiny benchmark") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.epochs = 5;
  tc.aim_epochs = 1;
  tc.batch = 8;
  tc.lr = 0.05;
  tc.seed = 3;
  auto dir = fresh_dir("learn");
  auto split = tiny_split(8, 17);
  Model m(synth17_graph(), mc, 16, tc.seed);
  TrainPaths paths{dir.string(), (dir / "metrics.jsonl").string()};
  train_protocol(m, split, tc, paths);

  // compare first and last train epochs from the metrics stream
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  double first_loss = -1, last_loss = -1;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("split") || j["split"] != "train") continue;
    double total = j["loss_recog"].get<double>() +
                   j["loss_pred"].get<double>();
    if (first_loss < 0) first_loss = total;
    last_loss = total;
  }
  CHECK(first_loss > 0);
  CHECK(last_loss < first_loss);
}
