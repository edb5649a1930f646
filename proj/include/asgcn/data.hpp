#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "asgcn/errors.hpp"
#include "asgcn/graph.hpp"
#include "asgcn/rng.hpp"
#include "asgcn/tensor.hpp"

namespace asgcn {

// One skeleton clip: [n, 3, T] after padding, with the original length
// kept so downstream code can ignore the repeated tail.
struct SkeletonSequence {
  std::string sample_id;
  std::optional<int> label;
  std::size_t n = 0;
  std::size_t valid_frames = 0;
  Tensor data;  // [n, 3, T]

  std::size_t frames() const { return data.rank() == 3 ? data.extent(2) : 0; }
};

using Dataset = std::vector<SkeletonSequence>;

// Frames t >= T_valid copy frame (t mod T_valid).
inline Tensor pad_repeat(const Tensor& x, std::size_t target) {
  if (x.rank() != 3) throw DimensionError("pad_repeat: expected [n,3,T]");
  const std::size_t n = x.extent(0), d = x.extent(1), tv = x.extent(2);
  if (tv < 1) throw ParameterError("pad_repeat: no valid frames");
  if (target < tv)
    throw ParameterError("pad_repeat: target " + std::to_string(target) +
                         " shorter than sequence " + std::to_string(tv));
  if (target == tv) return x;
  Tensor out({n, d, target});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const double* src = x.data() + (j * d + c) * tv;
      double* dst = out.data() + (j * d + c) * target;
      for (std::size_t t = 0; t < target; ++t) dst[t] = src[t % tv];
    }
  return out;
}

// Subtracts the center joint's channels at the first frame from every
// joint and frame. Makes model inputs invariant to global translation.
inline void center_sequence(SkeletonSequence& s, std::size_t center_joint) {
  const std::size_t n = s.data.extent(0), d = s.data.extent(1),
                    T = s.data.extent(2);
  for (std::size_t c = 0; c < d; ++c) {
    const double offset = s.data(center_joint, c, 0);
    for (std::size_t j = 0; j < n; ++j) {
      double* row = s.data.data() + (j * d + c) * T;
      for (std::size_t t = 0; t < T; ++t) row[t] -= offset;
    }
  }
}

// --- JSON-lines dataset format ---
// {"id": str, "label": int|null, "n": int, "t_valid": int,
//  "data": [n][3][t_valid]}
// Unknown extra fields are ignored so derived files (e.g. prediction
// output) stay loadable.

inline nlohmann::json sequence_to_json(const SkeletonSequence& s) {
  nlohmann::json j;
  j["id"] = s.sample_id;
  if (s.label)
    j["label"] = *s.label;
  else
    j["label"] = nullptr;
  j["n"] = s.n;
  j["t_valid"] = s.valid_frames;
  auto joints = nlohmann::json::array();
  const std::size_t d = s.data.extent(1), T = s.data.extent(2);
  for (std::size_t jn = 0; jn < s.n; ++jn) {
    auto chans = nlohmann::json::array();
    for (std::size_t c = 0; c < d; ++c) {
      auto frames = nlohmann::json::array();
      for (std::size_t t = 0; t < s.valid_frames; ++t)
        frames.push_back(s.data(jn, c, t));
      chans.push_back(std::move(frames));
    }
    joints.push_back(std::move(chans));
  }
  (void)T;
  j["data"] = std::move(joints);
  return j;
}

inline SkeletonSequence sequence_from_json(const nlohmann::json& j,
                                           const std::string& origin) {
  try {
    SkeletonSequence s;
    s.sample_id = j.at("id").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null())
      s.label = j.at("label").get<int>();
    s.n = j.at("n").get<std::size_t>();
    s.valid_frames = j.at("t_valid").get<std::size_t>();
    const auto& data = j.at("data");
    if (data.size() != s.n)
      throw ParseError(origin + ": data has " + std::to_string(data.size()) +
                       " joints, header says " + std::to_string(s.n));
    if (s.valid_frames < 1) throw ParseError(origin + ": t_valid < 1");
    s.data = Tensor({s.n, 3, s.valid_frames});
    for (std::size_t jn = 0; jn < s.n; ++jn) {
      const auto& chans = data.at(jn);
      if (chans.size() != 3)
        throw ParseError(origin + ": expected 3 channels per joint");
      for (std::size_t c = 0; c < 3; ++c) {
        const auto& frames = chans.at(c);
        if (frames.size() != s.valid_frames)
          throw ParseError(origin + ": frame count mismatch in data");
        for (std::size_t t = 0; t < s.valid_frames; ++t)
          s.data(jn, c, t) = frames.at(t).get<double>();
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

struct LoadOptions {
  std::size_t target_frames = 300;  // pad to at least this many frames
  bool normalize = true;            // center-joint translation removal
};

inline Dataset load_dataset(const std::string& path, const SkeletonGraph& g,
                            const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    SkeletonSequence s =
        sequence_from_json(j, path + ":" + std::to_string(lineno));
    if (s.n != g.n)
      throw ValidationError(path + ":" + std::to_string(lineno) + " (" +
                            s.sample_id + "): joint count " +
                            std::to_string(s.n) + " does not match graph n=" +
                            std::to_string(g.n));
    if (opt.normalize) center_sequence(s, g.center);
    const std::size_t target = std::max(opt.target_frames, s.valid_frames);
    s.data = pad_repeat(s.data, target);
    out.push_back(std::move(s));
  }
  return out;
}

// Writes only the valid frames; padding is reconstructed on load.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset: " + path);
  for (const auto& s : ds) out << sequence_to_json(s).dump() << "\n";
}

// --- synthetic generator ---

enum class MotionKind { oscillation, constant_velocity };

struct MotionGroup {
  std::vector<std::size_t> joints;
  MotionKind kind = MotionKind::oscillation;
  std::size_t axis = 0;
  double amplitude = 0.3;     // oscillation
  double cycles = 3.0;        // oscillations over the whole clip
  double phase_offset = 0.0;  // relative to the per-sample global phase
  bool independent_phase = false;
  double speed_min = 0.005;   // constant velocity, per frame
  double speed_max = 0.02;
  double direction = 1.0;
};

struct ClassSpec {
  std::string name;
  std::vector<MotionGroup> groups;

  friend bool operator==(const ClassSpec& a, const ClassSpec& b) {
    if (a.groups.size() != b.groups.size()) return false;
    for (std::size_t i = 0; i < a.groups.size(); ++i) {
      const auto& x = a.groups[i];
      const auto& y = b.groups[i];
      if (x.joints != y.joints || x.kind != y.kind || x.axis != y.axis ||
          x.amplitude != y.amplitude || x.cycles != y.cycles ||
          x.phase_offset != y.phase_offset ||
          x.independent_phase != y.independent_phase ||
          x.speed_min != y.speed_min || x.speed_max != y.speed_max ||
          x.direction != y.direction)
        return false;
    }
    return true;
  }
};

struct SynthConfig {
  std::string graph = "synth17";
  std::vector<ClassSpec> classes;
  std::size_t samples_per_class = 200;
  std::size_t frames = 42;
  double noise_std = 0.03;
  std::uint64_t seed = 1;
};

// Rest pose for the 17-joint stick figure.
inline Tensor synth17_base_pose() {
  Tensor pose({17, 3});
  const double xyz[17][3] = {
      {0.00, 0.00, 0.00},   // torso
      {0.00, 0.40, 0.00},   // chest
      {0.00, 0.75, 0.00},   // head
      {-0.25, 0.35, 0.00},  // l_shoulder
      {-0.45, 0.15, 0.00},  // l_elbow
      {-0.60, -0.05, 0.00}, // l_hand
      {0.25, 0.35, 0.00},   // r_shoulder
      {0.45, 0.15, 0.00},   // r_elbow
      {0.60, -0.05, 0.00},  // r_hand
      {-0.15, -0.20, 0.00}, // l_hip
      {-0.18, -0.60, 0.00}, // l_knee
      {-0.20, -1.00, 0.00}, // l_ankle
      {-0.25, -1.10, 0.05}, // l_foot
      {0.15, -0.20, 0.00},  // r_hip
      {0.18, -0.60, 0.00},  // r_knee
      {0.20, -1.00, 0.00},  // r_ankle
      {0.25, -1.10, 0.05},  // r_foot
  };
  for (std::size_t j = 0; j < 17; ++j)
    for (std::size_t c = 0; c < 3; ++c) pose(j, c) = xyz[j][c];
  return pose;
}

// Four classes that share identical per-joint motion statistics and
// differ only in the relative phase between far-apart limb tips
// (hands and feet). Any single class pair needs cross-body context to
// separate, and two of the six pairs need hand-to-foot range.
inline SynthConfig limb_phase_benchmark(std::size_t samples_per_class = 200,
                                        std::uint64_t seed = 1,
                                        double noise_std = 0.01,
                                        std::size_t frames = 30) {
  const std::size_t kLHand = 5, kRHand = 8, kLFoot = 12, kRFoot = 16;
  const double pi = 3.14159265358979323846;
  SynthConfig cfg;
  cfg.samples_per_class = samples_per_class;
  cfg.seed = seed;
  cfg.noise_std = noise_std;
  cfg.frames = frames;
  // sign patterns of (r_hand, l_foot, r_foot) relative to l_hand
  const double signs[4][3] = {
      {0, 0, 0}, {0, pi, pi}, {pi, 0, pi}, {pi, pi, 0}};
  for (int c = 0; c < 4; ++c) {
    ClassSpec spec;
    spec.name = "phase" + std::to_string(c);
    auto group = [&](std::size_t joint, double offset) {
      MotionGroup g;
      g.joints = {joint};
      g.kind = MotionKind::oscillation;
      g.axis = 0;
      g.amplitude = 0.5;
      g.cycles = 4.0;
      g.phase_offset = offset;
      return g;
    };
    spec.groups.push_back(group(kLHand, 0.0));
    spec.groups.push_back(group(kRHand, signs[c][0]));
    spec.groups.push_back(group(kLFoot, signs[c][1]));
    spec.groups.push_back(group(kRFoot, signs[c][2]));
    cfg.classes.push_back(std::move(spec));
  }
  return cfg;
}

// Whole-body translation at a constant per-sample velocity; two classes
// by direction. Used to exercise the future-pose head.
inline SynthConfig constant_velocity_benchmark(
    std::size_t samples_per_class = 100, std::uint64_t seed = 1,
    double noise_std = 0.01, std::size_t frames = 30) {
  SynthConfig cfg;
  cfg.samples_per_class = samples_per_class;
  cfg.seed = seed;
  cfg.noise_std = noise_std;
  cfg.frames = frames;
  for (int c = 0; c < 2; ++c) {
    ClassSpec spec;
    spec.name = c == 0 ? "drift_pos_x" : "drift_neg_x";
    MotionGroup g;
    g.kind = MotionKind::constant_velocity;
    g.axis = 0;
    g.direction = c == 0 ? 1.0 : -1.0;
    g.joints.resize(17);
    for (std::size_t j = 0; j < 17; ++j) g.joints[j] = j;
    spec.groups.push_back(std::move(g));
    cfg.classes.push_back(std::move(spec));
  }
  return cfg;
}

inline Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.classes.size() < 2)
    throw ValidationError("synthetic: need at least 2 classes");
  for (std::size_t a = 0; a < cfg.classes.size(); ++a)
    for (std::size_t b = a + 1; b < cfg.classes.size(); ++b)
      if (cfg.classes[a] == cfg.classes[b])
        throw ValidationError("synthetic: classes " + std::to_string(a) +
                              " and " + std::to_string(b) +
                              " have identical motion specs");
  if (cfg.frames < 2) throw ParameterError("synthetic: frames must be >= 2");
  SkeletonGraph g = resolve_graph(cfg.graph);
  const Tensor base = cfg.graph == "synth17"
                          ? synth17_base_pose()
                          : Tensor({g.n, 3});  // origin-centered fallback
  const double two_pi = 6.283185307179586;

  Dataset out;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const ClassSpec& spec = cfg.classes[c];
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Rng rng(derive_seed(cfg.seed, "synth", c, s));
      SkeletonSequence seq;
      seq.sample_id =
          "synth-c" + std::to_string(c) + "-s" + std::to_string(s);
      seq.label = static_cast<int>(c);
      seq.n = g.n;
      seq.valid_frames = cfg.frames;
      seq.data = Tensor({g.n, 3, cfg.frames});
      for (std::size_t j = 0; j < g.n; ++j)
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t t = 0; t < cfg.frames; ++t)
            seq.data(j, ch, t) = base(j, ch);

      const double global_phase = rng.uniform(0.0, two_pi);
      for (const MotionGroup& grp : spec.groups) {
        if (grp.kind == MotionKind::oscillation) {
          double phase = global_phase + grp.phase_offset;
          if (grp.independent_phase) phase = rng.uniform(0.0, two_pi);
          for (std::size_t t = 0; t < cfg.frames; ++t) {
            const double v =
                grp.amplitude *
                std::sin(two_pi * grp.cycles * static_cast<double>(t) /
                             static_cast<double>(cfg.frames) +
                         phase);
            for (std::size_t j : grp.joints) seq.data(j, grp.axis, t) += v;
          }
        } else {
          const double speed =
              rng.uniform(grp.speed_min, grp.speed_max) * grp.direction;
          for (std::size_t t = 0; t < cfg.frames; ++t)
            for (std::size_t j : grp.joints)
              seq.data(j, grp.axis, t) += speed * static_cast<double>(t);
        }
      }
      if (cfg.noise_std > 0.0)
        for (std::size_t i = 0; i < seq.data.numel(); ++i)
          seq.data[i] += rng.normal(0.0, cfg.noise_std);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

// --- stratified split ---

struct SplitFractions {
  double train = 0.7, val = 0.1, test = 0.2;
};

struct DataSplit {
  Dataset train, val, test;
};

inline DataSplit split_dataset(const Dataset& ds, SplitFractions f,
                               std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ParameterError("split: fractions must be nonnegative and sum to 1");
  int nonzero = (f.train > 0) + (f.val > 0) + (f.test > 0);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[ds[i].label.value_or(-1)].push_back(i);

  DataSplit out;
  for (auto& [label, idx] : by_class) {
    if (nonzero > 1 && idx.size() < 3)
      throw ValidationError("split: class " + std::to_string(label) +
                            " has fewer than 3 samples");
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label + 1)));
    rng.shuffle(idx);
    const double m = static_cast<double>(idx.size());
    const std::size_t c1 = static_cast<std::size_t>(std::llround(f.train * m));
    const std::size_t c2 =
        static_cast<std::size_t>(std::llround((f.train + f.val) * m));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const SkeletonSequence& s = ds[idx[k]];
      if (k < c1)
        out.train.push_back(s);
      else if (k < c2)
        out.val.push_back(s);
      else
        out.test.push_back(s);
    }
  }
  return out;
}

}  // namespace asgcn
