#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "asgcn/errors.hpp"
#include "asgcn/tensor.hpp"

namespace asgcn {

// Physical skeleton: joints, bones, and the joint designated as body
// center for the neighbor partition.
struct SkeletonGraph {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, std::size_t>> bones;
  std::size_t center = 0;
  std::vector<std::string> names;  // optional joint labels

  void validate() const {
    if (n == 0) throw ValidationError("graph: joint count must be positive");
    if (center >= n) throw ValidationError("graph: center out of range");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto [i, j] : bones) {
      if (i >= n || j >= n)
        throw ValidationError("graph: bone endpoint out of range");
      if (i == j) throw ValidationError("graph: self-pair bone");
      auto key = std::minmax(i, j);
      if (!seen.insert({key.first, key.second}).second)
        throw ValidationError("graph: duplicate bone");
    }
    auto dist = hop_distances(*this);
    for (std::size_t i = 0; i < n; ++i)
      if (dist[i] < 0)
        throw ValidationError("graph: joint " + std::to_string(i) +
                              " is not connected to the center");
  }

  // BFS hop distance to the center; -1 for unreachable joints.
  static std::vector<int> hop_distances(const SkeletonGraph& g) {
    std::vector<std::vector<std::size_t>> adj(g.n);
    for (auto [i, j] : g.bones) {
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
    std::vector<int> dist(g.n, -1);
    std::deque<std::size_t> q{g.center};
    dist[g.center] = 0;
    while (!q.empty()) {
      std::size_t u = q.front();
      q.pop_front();
      for (std::size_t v : adj[u])
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          q.push_back(v);
        }
    }
    return dist;
  }
};

enum class Part { root = 0, centripetal = 1, centrifugal = 2 };
inline const char* part_name(Part p) {
  switch (p) {
    case Part::root: return "root";
    case Part::centripetal: return "centripetal";
    default: return "centrifugal";
  }
}
inline constexpr Part kParts[] = {Part::root, Part::centripetal,
                                  Part::centrifugal};

// Adjacency with self-loops split into the three partition groups so
// that parts sum exactly back to the base matrix.
struct PartitionedAdjacency {
  std::size_t n = 0;
  Tensor base;                 // bone adjacency + identity
  std::array<Tensor, 3> part;  // indexed by Part

  const Tensor& operator[](Part p) const {
    return part[static_cast<std::size_t>(p)];
  }
  Tensor& operator[](Part p) { return part[static_cast<std::size_t>(p)]; }
};

// Splits each bone (i,j) by whether the neighbor j sits closer to the
// center than i (centripetal), farther (centrifugal), or at the same
// distance (half weight to each). The diagonal is the root group.
inline PartitionedAdjacency build_partitions(const SkeletonGraph& g) {
  g.validate();
  auto dist = SkeletonGraph::hop_distances(g);
  PartitionedAdjacency pa;
  pa.n = g.n;
  pa.base = identity(g.n);
  for (auto& m : pa.part) m = Tensor({g.n, g.n});
  pa[Part::root] = identity(g.n);
  for (auto [i, j] : g.bones) {
    pa.base(i, j) = 1.0;
    pa.base(j, i) = 1.0;
    auto deposit = [&](std::size_t row, std::size_t col) {
      // entry (row, col): col's features flow into row
      if (dist[col] < dist[row])
        pa[Part::centripetal](row, col) += 1.0;
      else if (dist[col] > dist[row])
        pa[Part::centrifugal](row, col) += 1.0;
      else {
        pa[Part::centripetal](row, col) += 0.5;
        pa[Part::centrifugal](row, col) += 0.5;
      }
    };
    deposit(i, j);
    deposit(j, i);
  }
  return pa;
}

// D^{-1/2} A D^{-1/2}; zero-degree rows/columns map to zero.
inline Tensor sym_normalize(const Tensor& a) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1))
    throw DimensionError("sym_normalize: expected square matrix, got " +
                         shape_str(a.shape()));
  const std::size_t n = a.extent(0);
  std::vector<double> dinv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a(i, j) < 0.0)
        throw ValidationError("sym_normalize: negative entry at (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
      deg += a(i, j);
    }
    dinv[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = dinv[i] * a(i, j) * dinv[j];
  return out;
}

// Row-stochastic transition matrix D^{-1} A; zero-degree rows stay zero.
inline Tensor transition(const Tensor& a) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1))
    throw DimensionError("transition: expected square matrix, got " +
                         shape_str(a.shape()));
  const std::size_t n = a.extent(0);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a(i, j) < 0.0)
        throw ValidationError("transition: negative entry at (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
      deg += a(i, j);
    }
    if (deg > 0.0)
      for (std::size_t j = 0; j < n; ++j) out(i, j) = a(i, j) / deg;
  }
  return out;
}

// Fixed (non-learned) kernels shared by every layer of a model.
struct GraphKernels {
  std::size_t n = 0;
  std::size_t order = 0;                   // L
  std::array<Tensor, 3> sym_norm;          // per partition
  std::vector<std::array<Tensor, 3>> transition_powers;  // [l-1][part]
  Tensor base_transition;                  // full-graph  D^{-1} A
  std::vector<Tensor> base_powers;         // [l-1] powers of the above

  const Tensor& power(Part p, std::size_t l) const {
    return transition_powers[l - 1][static_cast<std::size_t>(p)];
  }
};

inline GraphKernels build_kernels(const PartitionedAdjacency& pa,
                                  std::size_t order) {
  if (order < 1) throw ParameterError("build_kernels: order must be >= 1");
  GraphKernels k;
  k.n = pa.n;
  k.order = order;
  for (Part p : kParts)
    k.sym_norm[static_cast<std::size_t>(p)] = sym_normalize(pa[p]);
  std::array<Tensor, 3> cur;
  for (Part p : kParts)
    cur[static_cast<std::size_t>(p)] = transition(pa[p]);
  std::array<Tensor, 3> base = cur;
  k.transition_powers.push_back(cur);
  for (std::size_t l = 2; l <= order; ++l) {
    for (std::size_t pi = 0; pi < 3; ++pi)
      cur[pi] = matmul(cur[pi], base[pi]);
    k.transition_powers.push_back(cur);
  }
  k.base_transition = transition(pa.base);
  Tensor bp = k.base_transition;
  k.base_powers.push_back(bp);
  for (std::size_t l = 2; l <= order; ++l) {
    bp = matmul(bp, k.base_transition);
    k.base_powers.push_back(bp);
  }
  return k;
}

// Test oracle: true at (i,j) iff a bone path of length <= l exists.
inline Tensor hop_reachability(const SkeletonGraph& g, std::size_t l) {
  std::vector<std::vector<std::size_t>> adj(g.n);
  for (auto [i, j] : g.bones) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  Tensor out({g.n, g.n});
  for (std::size_t s = 0; s < g.n; ++s) {
    std::vector<int> dist(g.n, -1);
    std::deque<std::size_t> q{s};
    dist[s] = 0;
    while (!q.empty()) {
      std::size_t u = q.front();
      q.pop_front();
      if (static_cast<std::size_t>(dist[u]) >= l) continue;
      for (std::size_t v : adj[u])
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          q.push_back(v);
        }
    }
    for (std::size_t j = 0; j < g.n; ++j)
      if (dist[j] >= 0 && static_cast<std::size_t>(dist[j]) <= l)
        out(s, j) = 1.0;
  }
  return out;
}

// Pattern-level reachability of an arbitrary nonnegative matrix support,
// counting paths of length <= l (including the empty path).
inline Tensor support_reachability(const Tensor& a, std::size_t l) {
  const std::size_t n = a.extent(0);
  Tensor reach = identity(n);
  Tensor frontier = identity(n);
  for (std::size_t step = 0; step < l; ++step) {
    Tensor next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        if (frontier(i, k) > 0.0)
          for (std::size_t j = 0; j < n; ++j)
            if (a(k, j) != 0.0) next(i, j) = 1.0;
    frontier = next;
    for (std::size_t i = 0; i < n * n; ++i)
      if (frontier[i] > 0.0) reach[i] = 1.0;
  }
  return reach;
}

// --- graph definition file: {"n", "center", "bones": [[i,j],...], "names"?} ---

inline SkeletonGraph graph_from_json(const nlohmann::json& j,
                                     const std::string& origin) {
  try {
    SkeletonGraph g;
    g.n = j.at("n").get<std::size_t>();
    g.center = j.at("center").get<std::size_t>();
    for (const auto& b : j.at("bones"))
      g.bones.emplace_back(b.at(0).get<std::size_t>(),
                           b.at(1).get<std::size_t>());
    if (j.contains("names"))
      g.names = j.at("names").get<std::vector<std::string>>();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("graph file " + origin + ": " + e.what());
  }
}

inline nlohmann::json graph_to_json(const SkeletonGraph& g) {
  nlohmann::json j;
  j["n"] = g.n;
  j["center"] = g.center;
  auto bones = nlohmann::json::array();
  for (auto [a, b] : g.bones) bones.push_back({a, b});
  j["bones"] = bones;
  if (!g.names.empty()) j["names"] = g.names;
  return j;
}

inline SkeletonGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("graph file " + path + ": " + e.what());
  }
  return graph_from_json(j, path);
}

inline void save_graph(const SkeletonGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file: " + path);
  out << graph_to_json(g).dump(2) << "\n";
}

// 25-joint depth-sensor layout (pairs 1-based in the usual listing).
inline SkeletonGraph ntu25_graph() {
  SkeletonGraph g;
  g.n = 25;
  g.center = 20;  // spine
  const std::pair<int, int> bones1[] = {
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},
      {7, 6},   {8, 7},   {9, 21},  {10, 9},  {11, 10}, {12, 11},
      {13, 1},  {14, 13}, {15, 14}, {16, 15}, {17, 1},  {18, 17},
      {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  for (auto [a, b] : bones1)
    g.bones.emplace_back(static_cast<std::size_t>(a - 1),
                         static_cast<std::size_t>(b - 1));
  return g;
}

// 18-joint pose-estimation layout, neck-centered.
inline SkeletonGraph kinetics18_graph() {
  SkeletonGraph g;
  g.n = 18;
  g.center = 1;  // neck
  const std::pair<int, int> bones0[] = {
      {4, 3},   {3, 2},  {7, 6},  {6, 5},  {13, 12}, {12, 11},
      {10, 9},  {9, 8},  {11, 5}, {8, 2},  {5, 1},   {2, 1},
      {0, 1},   {15, 0}, {14, 0}, {17, 15}, {16, 14}};
  for (auto [a, b] : bones0)
    g.bones.emplace_back(static_cast<std::size_t>(a),
                         static_cast<std::size_t>(b));
  return g;
}

// 17-joint stick figure used by the synthetic generator: torso-rooted,
// three-segment arms and legs so the limb tips sit far apart in hops.
inline SkeletonGraph synth17_graph() {
  SkeletonGraph g;
  g.n = 17;
  g.center = 0;
  g.names = {"torso",  "chest",  "head",   "l_shoulder", "l_elbow", "l_hand",
             "r_shoulder", "r_elbow", "r_hand", "l_hip",  "l_knee",
             "l_ankle", "l_foot", "r_hip",  "r_knee", "r_ankle", "r_foot"};
  const std::pair<int, int> bones[] = {
      {0, 1}, {1, 2}, {1, 3}, {3, 4}, {4, 5}, {1, 6}, {6, 7}, {7, 8},
      {0, 9}, {9, 10}, {10, 11}, {11, 12}, {0, 13}, {13, 14}, {14, 15},
      {15, 16}};
  for (auto [a, b] : bones)
    g.bones.emplace_back(static_cast<std::size_t>(a),
                         static_cast<std::size_t>(b));
  return g;
}

// Resolves a preset name or a path to a JSON graph file.
inline SkeletonGraph resolve_graph(const std::string& spec) {
  if (spec == "ntu25") return ntu25_graph();
  if (spec == "kinetics18") return kinetics18_graph();
  if (spec == "synth17") return synth17_graph();
  return load_graph(spec);
}

}  // namespace asgcn
