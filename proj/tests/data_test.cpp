#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "asgcn/data.hpp"

using namespace asgcn;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "asgcn_data_test";
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("pad_repeat") {
  SECTION("no-op at equal length") {
    Tensor x({2, 3, 5}, 1.25);
    CHECK(pad_repeat(x, 5) == x);
  }
  SECTION("modular repetition [A,B] -> [A,B,A,B,A]") {
    Tensor x({1, 3, 2});
    for (std::size_t c = 0; c < 3; ++c) {
      x(0, c, 0) = 10.0 + c;  // frame A
      x(0, c, 1) = 20.0 + c;  // frame B
    }
    Tensor out = pad_repeat(x, 5);
    REQUIRE(out.shape() == Shape{1, 3, 5});
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(out(0, c, 0) == 10.0 + c);
      CHECK(out(0, c, 1) == 20.0 + c);
      CHECK(out(0, c, 2) == 10.0 + c);
      CHECK(out(0, c, 3) == 20.0 + c);
      CHECK(out(0, c, 4) == 10.0 + c);
    }
  }
  SECTION("single frame pads to a constant sequence") {
    Tensor x({2, 3, 1}, 7.0);
    Tensor out = pad_repeat(x, 4);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 7.0);
  }
  SECTION("prefix of the padded tensor equals the input exactly") {
    Rng rng(3);
    Tensor x = rng.normal_tensor({3, 3, 7}, 0, 1);
    Tensor out = pad_repeat(x, 20);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 7; ++t)
          CHECK(out(j, c, t) == x(j, c, t));
  }
  SECTION("target shorter than the sequence errors") {
    CHECK_THROWS_AS(pad_repeat(Tensor({1, 3, 5}), 4), ParameterError);
  }
}

TEST_CASE("dataset JSONL round-trip is bit-exact") {
  auto dir = temp_dir();
  auto path = (dir / "ds.jsonl").string();

  Rng rng(9);
  Dataset ds;
  for (int i = 0; i < 3; ++i) {
    SkeletonSequence s;
    s.sample_id = "seq" + std::to_string(i);
    s.label = i % 2;
    s.n = 17;
    s.valid_frames = 11;
    s.data = rng.normal_tensor({17, 3, 11}, 0, 1);
    ds.push_back(s);
  }
  save_dataset(ds, path);

  LoadOptions opt;
  opt.target_frames = 11;
  opt.normalize = false;
  auto g = synth17_graph();
  Dataset back = load_dataset(path, g, opt);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].sample_id == ds[i].sample_id);
    CHECK(back[i].label == ds[i].label);
    CHECK(back[i].data == ds[i].data);  // bit-exact
  }

  // saving the loaded copy reproduces the file byte for byte
  auto path2 = (dir / "ds2.jsonl").string();
  save_dataset(back, path2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("load_dataset validation") {
  auto dir = temp_dir();
  auto g = synth17_graph();

  SECTION("empty file gives an empty dataset") {
    auto path = (dir / "empty.jsonl").string();
    std::ofstream(path).close();
    CHECK(load_dataset(path, g).empty());
  }
  SECTION("malformed line reports the line number") {
    auto path = (dir / "bad.jsonl").string();
    std::ofstream(path) << "{broken\n";
    CHECK_THROWS_AS(load_dataset(path, g), ParseError);
    try {
      load_dataset(path, g);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":1") != std::string::npos);
    }
  }
  SECTION("joint count mismatch is a validation error") {
    SkeletonSequence s;
    s.sample_id = "x";
    s.n = 4;
    s.valid_frames = 2;
    s.data = Tensor({4, 3, 2});
    auto path = (dir / "mismatch.jsonl").string();
    save_dataset({s}, path);
    CHECK_THROWS_AS(load_dataset(path, g), ValidationError);
  }
  SECTION("short sequences are padded by repetition") {
    SkeletonSequence s;
    s.sample_id = "short";
    s.n = 17;
    s.valid_frames = 103;
    Rng rng(5);
    s.data = rng.normal_tensor({17, 3, 103}, 0, 1);
    auto path = (dir / "short.jsonl").string();
    save_dataset({s}, path);
    LoadOptions opt;
    opt.target_frames = 300;
    opt.normalize = false;
    auto back = load_dataset(path, g, opt);
    REQUIRE(back.size() == 1);
    CHECK(back[0].frames() == 300);
    CHECK(back[0].valid_frames == 103);
    CHECK(back[0].data(0, 0, 103) == back[0].data(0, 0, 0));
    CHECK(back[0].data(5, 1, 299) == back[0].data(5, 1, 299 % 103));
  }
}

TEST_CASE("translation normalization is exact for representable shifts") {
  auto g = synth17_graph();
  // dyadic-rational coordinates, so adding 0.5 is exact in binary fp
  Rng rng(21);
  SkeletonSequence a;
  a.sample_id = "a";
  a.n = 17;
  a.valid_frames = 4;
  a.data = Tensor({17, 3, 4});
  for (std::size_t i = 0; i < a.data.numel(); ++i)
    a.data[i] = static_cast<double>(rng.index(64)) / 8.0;
  SkeletonSequence b = a;
  for (std::size_t i = 0; i < b.data.numel(); ++i) b.data[i] += 0.5;

  center_sequence(a, g.center);
  center_sequence(b, g.center);
  CHECK(a.data == b.data);  // bitwise identical after centering

  // and centering is idempotent
  SkeletonSequence c = a;
  center_sequence(c, g.center);
  CHECK(c.data == a.data);
}

TEST_CASE("synthetic generation") {
  SECTION("deterministic under a fixed seed") {
    auto cfg = limb_phase_benchmark(4, 77);
    Dataset d1 = generate_synthetic(cfg);
    Dataset d2 = generate_synthetic(cfg);
    REQUIRE(d1.size() == d2.size());
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i].data == d2[i].data);
  }
  SECTION("zero noise follows the parametric motion exactly") {
    auto cfg = limb_phase_benchmark(2, 5, /*noise_std=*/0.0);
    Dataset ds = generate_synthetic(cfg);
    const Tensor base = synth17_base_pose();
    // static joints stay at the base pose
    for (const auto& s : ds)
      for (std::size_t t = 0; t < s.frames(); ++t) {
        CHECK(s.data(0, 0, t) == base(0, 0));   // torso never moves
        CHECK(s.data(2, 1, t) == base(2, 1));   // head never moves
      }
  }
  SECTION("identical class specs are rejected") {
    auto cfg = limb_phase_benchmark(2, 5);
    cfg.classes[1] = cfg.classes[0];
    CHECK_THROWS_AS(generate_synthetic(cfg), ValidationError);
  }
  SECTION("fewer than two classes is rejected") {
    SynthConfig cfg;
    cfg.classes.resize(1);
    CHECK_THROWS_AS(generate_synthetic(cfg), ValidationError);
  }
  SECTION("constant velocity drifts linearly") {
    auto cfg = constant_velocity_benchmark(2, 3, /*noise_std=*/0.0);
    Dataset ds = generate_synthetic(cfg);
    const auto& s = ds.front();
    const double step0 = s.data(0, 0, 1) - s.data(0, 0, 0);
    for (std::size_t t = 2; t < s.frames(); ++t)
      CHECK(s.data(0, 0, t) - s.data(0, 0, t - 1) ==
            Catch::Approx(step0).margin(1e-12));
    CHECK(step0 > 0.0);  // class 0 drifts toward +x
  }
}

TEST_CASE("stratified split") {
  auto cfg = limb_phase_benchmark(20, 11);
  Dataset ds = generate_synthetic(cfg);

  SECTION("fractions (1,0,0) puts everything in train") {
    auto split = split_dataset(ds, {1.0, 0.0, 0.0}, 1);
    CHECK(split.train.size() == ds.size());
    CHECK(split.val.empty());
    CHECK(split.test.empty());
  }
  SECTION("ratios preserved within one sample per class") {
    auto split = split_dataset(ds, {0.7, 0.1, 0.2}, 1);
    std::map<int, int> train_counts;
    for (const auto& s : split.train) train_counts[*s.label]++;
    for (auto [label, count] : train_counts)
      CHECK(std::abs(count - 14) <= 1);
    CHECK(split.train.size() + split.val.size() + split.test.size() ==
          ds.size());
  }
  SECTION("same seed, same split") {
    auto s1 = split_dataset(ds, {0.6, 0.2, 0.2}, 9);
    auto s2 = split_dataset(ds, {0.6, 0.2, 0.2}, 9);
    REQUIRE(s1.train.size() == s2.train.size());
    for (std::size_t i = 0; i < s1.train.size(); ++i)
      CHECK(s1.train[i].sample_id == s2.train[i].sample_id);
  }
  SECTION("splits are disjoint") {
    auto split = split_dataset(ds, {0.5, 0.25, 0.25}, 2);
    std::set<std::string> seen;
    for (const auto* part : {&split.train, &split.val, &split.test})
      for (const auto& s : *part) CHECK(seen.insert(s.sample_id).second);
  }
  SECTION("tiny class under stratification errors") {
    Dataset small(ds.begin(), ds.begin() + 2);  // class 0 only, 2 samples
    CHECK_THROWS_AS(split_dataset(small, {0.5, 0.25, 0.25}, 1),
                    ValidationError);
  }
  SECTION("bad fractions error") {
    CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), ParameterError);
  }
}
