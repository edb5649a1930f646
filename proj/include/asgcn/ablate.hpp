#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "asgcn/config.hpp"

namespace asgcn {

struct AblationCell {
  std::string links = "as";
  std::size_t order = 2;
  std::size_t link_types = 3;
  double ghost_prior = 0.95;
  bool prediction = true;

  std::string name() const {
    std::ostringstream os;
    os << "links-" << links << "_order-" << order << "_C-" << link_types
       << "_P0-" << ghost_prior << "_pred-" << (prediction ? "on" : "off");
    return os.str();
  }
};

struct CellResult {
  AblationCell cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double top1 = 0.0;
  double top5 = 0.0;
  double loss_recog = 0.0;
  double pred_loss = 0.0;
};

inline std::size_t worker_count(std::size_t jobs) {
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ASGCN_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v >= 1) workers = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(workers, jobs));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Cross product of the sweep axes; absent axes keep the base value.
inline std::vector<AblationCell> build_cells(const RunConfig& cfg) {
  auto links = split_list(cfg.sweep_links);
  if (links.empty()) links = {cfg.links};
  auto orders = split_list(cfg.sweep_order);
  if (orders.empty()) orders = {std::to_string(cfg.order)};
  auto cs = split_list(cfg.sweep_c);
  if (cs.empty()) cs = {std::to_string(cfg.link_types)};
  auto p0s = split_list(cfg.sweep_p0);
  if (p0s.empty()) p0s = {std::to_string(cfg.ghost_prior)};
  auto preds = split_list(cfg.sweep_pred);
  if (preds.empty()) preds = {cfg.no_prediction_head ? "off" : "on"};

  std::vector<AblationCell> cells;
  for (const auto& l : links) {
    links_mode_from(l);  // validates
    for (const auto& o : orders)
      for (const auto& c : cs)
        for (const auto& p : p0s)
          for (const auto& pr : preds) {
            if (pr != "on" && pr != "off")
              throw ValidationError("ablate: pred axis values must be on|off");
            AblationCell cell;
            cell.links = l;
            cell.order = static_cast<std::size_t>(std::stoul(o));
            cell.link_types = static_cast<std::size_t>(std::stoul(c));
            cell.ghost_prior = std::stod(p);
            cell.prediction = pr == "on";
            cells.push_back(cell);
          }
  }
  return cells;
}

// Shared desk-scale benchmark for one master seed: generate, center,
// split. All cells of a sweep see identical data for a given seed.
inline DataSplit benchmark_split(const RunConfig& cfg, std::uint64_t seed) {
  SynthConfig synth =
      cfg.synth_preset == "constant-velocity"
          ? constant_velocity_benchmark(cfg.synth_samples,
                                        derive_seed(seed, "synthdata"),
                                        cfg.synth_noise, cfg.synth_frames)
          : limb_phase_benchmark(cfg.synth_samples,
                                 derive_seed(seed, "synthdata"),
                                 cfg.synth_noise, cfg.synth_frames);
  Dataset ds = generate_synthetic(synth);
  SkeletonGraph g = resolve_graph(synth.graph);
  for (auto& s : ds) center_sequence(s, g.center);
  return split_dataset(ds, {cfg.split_train, cfg.split_val, cfg.split_test},
                       derive_seed(seed, "split"));
}

inline std::size_t input_frames_of(const Dataset& ds, const ModelConfig& mc) {
  if (ds.empty()) throw ValidationError("empty dataset");
  const std::size_t t_raw = ds.front().valid_frames > mc.horizon
                                ? ds.front().valid_frames - mc.horizon
                                : ds.front().valid_frames;
  return ((t_raw + 3) / 4) * 4;
}

// Trains one cell on a prepared split and evaluates on the test part.
inline CellResult run_cell(const RunConfig& base, const AblationCell& cell,
                           std::uint64_t seed, const DataSplit& split,
                           const std::string& out_dir) {
  CellResult res;
  res.cell = cell;
  res.seed = seed;
  try {
    RunConfig cfg = base;
    cfg.links = cell.links;
    cfg.order = cell.order;
    cfg.link_types = cell.link_types;
    cfg.ghost_prior = cell.ghost_prior;
    cfg.no_prediction_head = !cell.prediction;
    cfg.seed = seed;

    ModelConfig mc = cfg.model_config();
    mc.num_classes = cfg.num_classes;
    SkeletonGraph g = resolve_graph(cfg.graph);
    Model model(g, mc, input_frames_of(split.train, mc), seed);

    std::filesystem::create_directories(out_dir);
    TrainPaths paths{out_dir, out_dir + "/metrics.jsonl"};
    TrainConfig tc = cfg.train_config();
    train_protocol(model, split, tc, paths);

    EvalResult ev = evaluate(model, split.test, tc.alpha);
    res.top1 = ev.top1;
    res.top5 = ev.top5;
    res.loss_recog = ev.loss_recog;
    res.pred_loss = ev.loss_pred;
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

// Runs cells x seeds, parallel across worker threads (capped by
// ASGCN_THREADS); any cell failure is recorded and the sweep continues.
inline std::vector<CellResult> run_ablation(const RunConfig& base,
                                            const std::vector<AblationCell>& cells,
                                            const std::string& out_dir) {
  struct Job {
    std::size_t cell_index;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t ci = 0; ci < cells.size(); ++ci)
    for (std::size_t si = 0; si < base.ablate_seeds; ++si)
      jobs.push_back({ci, base.seed + si});

  // one benchmark per seed, shared across cells
  std::map<std::uint64_t, DataSplit> data;
  for (std::size_t si = 0; si < base.ablate_seeds; ++si) {
    const std::uint64_t seed = base.seed + si;
    data.emplace(seed, benchmark_split(base, seed));
  }

  std::vector<CellResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) break;
      const Job& job = jobs[j];
      const AblationCell& cell = cells[job.cell_index];
      const std::string cell_dir = out_dir + "/cells/" + cell.name() +
                                   "_seed-" + std::to_string(job.seed);
      results[j] = run_cell(base, cell, job.seed, data.at(job.seed), cell_dir);
    }
  };
  const std::size_t workers = worker_count(jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return results;
}

inline nlohmann::json cell_result_json(const CellResult& r) {
  return {{"links", r.cell.links},
          {"order", r.cell.order},
          {"C", r.cell.link_types},
          {"P0", r.cell.ghost_prior},
          {"pred", r.cell.prediction},
          {"seed", r.seed},
          {"ok", r.ok},
          {"error", r.error},
          {"top1", r.top1},
          {"top5", r.top5},
          {"loss_recog", r.loss_recog},
          {"pred_loss", r.pred_loss}};
}

inline void write_ablation_outputs(const std::vector<CellResult>& results,
                                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir + "/results.csv");
  if (!csv) throw IoError("cannot write " + out_dir + "/results.csv");
  csv << "links,order,C,P0,pred,seed,ok,top1,top5,loss_recog,pred_loss\n";
  for (const auto& r : results)
    csv << r.cell.links << "," << r.cell.order << "," << r.cell.link_types
        << "," << r.cell.ghost_prior << "," << (r.cell.prediction ? 1 : 0)
        << "," << r.seed << "," << (r.ok ? 1 : 0) << "," << r.top1 << ","
        << r.top5 << "," << r.loss_recog << "," << r.pred_loss << "\n";

  // per-cell means over seeds
  std::map<std::string, std::pair<double, std::size_t>> means;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    rows.push_back(cell_result_json(r));
    if (r.ok) {
      auto& [sum, count] = means[r.cell.name()];
      sum += r.top1;
      count++;
    }
  }
  nlohmann::json mean_json = nlohmann::json::object();
  for (const auto& [name, sc] : means)
    mean_json[name] = sc.second ? sc.first / sc.second : 0.0;
  nlohmann::json out{{"cells", rows}, {"mean_top1", mean_json}};
  std::ofstream js(out_dir + "/results.json");
  if (!js) throw IoError("cannot write " + out_dir + "/results.json");
  js << out.dump(2) << "\n";
}

}  // namespace asgcn
