#pragma once

// Experiment engine: scene suite -> cues -> pseudo labels -> training with
// optional refinement -> periodic evaluation, plus the on-disk artifacts.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "wsis/evaluate.hpp"
#include "wsis/json_io.hpp"
#include "wsis/pam.hpp"
#include "wsis/scene.hpp"
#include "wsis/train.hpp"
#include "wsis/transfer.hpp"

namespace wsis {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::vector<std::string> keys) : Error(what), keys_(std::move(keys)) {}
  [[nodiscard]] const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

struct AblationFlags {
  bool pam = true;
  bool iag = true;
  bool refine = true;
  bool clustering = true;
};

struct ExperimentConfig {
  SceneSuiteConfig scenes;
  int num_scenes = 4;
  std::uint64_t seed = 0;
  AblationFlags flags;
  int iterations = 2000;
  double lr = 0.5;
  /// Metrics row every this many iterations (plus iteration 0 and the last).
  int eval_interval = 250;
  bool dump_labels = true;
  bool plot_tsv = false;
  std::filesystem::path output_dir = "wsis_out";
  int threads = 1;

  /// Narrower center targets than the encoder default suit the small scenes.
  RefineConfig refine{.sigma = 3.0};
  ModelConfig model;
  TransferConfig transfer;
  double cue_threshold = kDefaultCueThreshold;
  /// Controller bias used when no explicit parameters are given.
  double pam_bias = 0.85;
};

struct MetricsRow {
  int iteration = 0;
  std::size_t true_positives = 0;
  double map25 = 0.0, map50 = 0.0, map70 = 0.0, map75 = 0.0;
  double l_center = 0.0, l_offset = 0.0, l_sem = 0.0, total = 0.0;
};

/// Everything fixed before training for one scene.
struct PreparedScene {
  Scene scene;
  PeakCueSet cues;
  TransferResult transfer;
  PseudoSupervision supervision;
  SceneFeatures features;
};

inline PreparedScene prepare_scene(const ExperimentConfig& cfg, std::size_t index) {
  auto spec = random_scene_spec(cfg.scenes, cfg.seed * 1000003ULL + index);
  auto scene = generate_scene(spec);
  const int k = scene.activations.num_channels();
  const auto act = cfg.flags.pam ? pam_forward(scene.activations, PamParams::constant(k, cfg.pam_bias))
                                 : scene.activations;
  auto cues = extract_instance_cues(act, cfg.cue_threshold, cfg.refine.nms_kernel);
  auto tr = transfer_knowledge(scene.semantic, cues, cfg.transfer);
  PseudoSupervision sup{labels_to_targets(tr.labels, scene.semantic.num_classes(), cfg.refine.sigma), scene.semantic};
  auto feat = compute_features(scene.semantic, cfg.model);
  return {std::move(scene), std::move(cues), std::move(tr), std::move(sup), std::move(feat)};
}

/// Training trace of one scene: decoded labels and losses at each checkpoint.
struct SceneTrace {
  std::vector<int> checkpoints;
  std::vector<InstanceLabelSet> decoded;
  std::vector<LossReport> losses;
  std::optional<InstanceLabelSet> last_refined;
};

inline std::vector<int> checkpoint_iterations(const ExperimentConfig& cfg) {
  std::vector<int> it{0};
  const int step = std::max(1, cfg.eval_interval);
  for (int i = step; i < cfg.iterations; i += step) it.push_back(i);
  if (cfg.iterations > 0) it.push_back(cfg.iterations);
  return it;
}

inline TrainFlags train_flags(const ExperimentConfig& cfg) {
  return {cfg.flags.iag, cfg.flags.refine};
}

inline RefineConfig effective_refine(const ExperimentConfig& cfg) {
  auto r = cfg.refine;
  r.use_clustering = cfg.flags.clustering;
  return r;
}

/// Trains one scene. Checkpoint 0 reports the pseudo labels themselves.
inline SceneTrace train_scene(const ExperimentConfig& cfg, const PreparedScene& ps, std::uint64_t seed) {
  SceneTrace trace;
  trace.checkpoints = checkpoint_iterations(cfg);
  const auto rcfg = effective_refine(cfg);
  const auto flags = train_flags(cfg);
  const DecodeConfig dcfg{rcfg.delta_c, rcfg.nms_kernel};
  auto state = init_state(ps.features, cfg.model, seed);

  auto record = [&](const LossReport& l, const Outputs& out, bool initial) {
    trace.losses.push_back(l);
    trace.decoded.push_back(initial ? ps.transfer.labels
                                    : decode_instances(out.center, out.offset, out.sem_label, dcfg));
  };
  std::size_t next = 0;
  while (next < trace.checkpoints.size()) {
    const int target = trace.checkpoints[next];
    while (state.iteration < target) {
      auto res = train_step(state, ps.features, ps.supervision, rcfg, flags, cfg.lr, cfg.model);
      if (res.refined) trace.last_refined = std::move(res.refined->labels);
    }
    const auto out = forward(state, ps.features, cfg.model);
    const auto res = evaluate_losses(out, ps.supervision, rcfg, flags);
    record(res.losses, out, target == 0);
    ++next;
  }
  return trace;
}

struct ExperimentResult {
  std::vector<PreparedScene> scenes;
  std::vector<SceneTrace> traces;
  std::vector<MetricsRow> rows;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 256));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = cursor.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Simulation only; no files are touched.
inline ExperimentResult simulate(const ExperimentConfig& cfg) {
  ExperimentResult res;
  const auto n = static_cast<std::size_t>(cfg.num_scenes);
  res.scenes.resize(n);
  res.traces.resize(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    res.scenes[i] = prepare_scene(cfg, i);
    res.traces[i] = train_scene(cfg, res.scenes[i], cfg.seed * 7919ULL + i);
  });

  const auto checkpoints = checkpoint_iterations(cfg);
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    std::vector<ImagePair> pairs;
    MetricsRow row;
    row.iteration = checkpoints[k];
    for (std::size_t i = 0; i < n; ++i) {
      pairs.push_back({&res.traces[i].decoded[k], &res.scenes[i].scene.truth});
      const auto& l = res.traces[i].losses[k];
      row.l_center += l.l_center / static_cast<double>(n);
      row.l_offset += l.l_offset / static_cast<double>(n);
      row.l_sem += l.l_sem / static_cast<double>(n);
      row.total += l.total / static_cast<double>(n);
    }
    const auto ev = evaluate(pairs, kDefaultIouThresholds);
    row.true_positives = ev.at(0.5).true_positives;
    row.map25 = ev.at(0.25).map;
    row.map50 = ev.at(0.5).map;
    row.map70 = ev.at(0.7).map;
    row.map75 = ev.at(0.75).map;
    res.rows.push_back(row);
  }
  return res;
}

// Config parsing ------------------------------------------------------------

namespace detail {

inline Shape parse_shape(const std::string& s) {
  if (s == "disc") return Shape::Disc;
  if (s == "rectangle") return Shape::Rectangle;
  if (s == "blob") return Shape::Blob;
  throw ConfigError("unknown shape '" + s + "'", {"scenes.shapes"});
}

inline void check_keys(const nlohmann::json& j, const std::string& prefix, const std::set<std::string>& allowed,
                       std::vector<std::string>& bad) {
  if (!j.is_object()) {
    bad.push_back(prefix.empty() ? "<root>" : prefix);
    return;
  }
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) bad.push_back(prefix.empty() ? k : prefix + "." + k);
}

}  // namespace detail

/// Parses and validates an experiment config. Unknown or ill-typed keys are
/// collected and reported together.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  std::vector<std::string> bad;
  detail::check_keys(j, "",
                     {"scenes", "flags", "iterations", "lr", "seed", "output_dir", "eval_interval", "dump_labels",
                      "plot_tsv", "threads", "refine", "model", "transfer", "cue_threshold", "pam_bias"},
                     bad);
  if (!bad.empty() && bad.front() == "<root>") throw ConfigError("config must be a JSON object", bad);
  for (const char* req : {"scenes", "flags", "iterations", "lr", "seed", "output_dir"})
    if (!j.contains(req)) bad.push_back(std::string(req) + " (missing)");

  ExperimentConfig cfg;
  auto get = [&](const json& obj, const char* key, const std::string& path, auto& dst) {
    if (!obj.contains(key)) return;
    try {
      dst = obj.at(key).get<std::remove_reference_t<decltype(dst)>>();
    } catch (const json::exception&) {
      bad.push_back(path);
    }
  };

  if (j.contains("scenes")) {
    const auto& s = j.at("scenes");
    detail::check_keys(s, "scenes",
                       {"count", "height", "width", "num_classes", "min_instances", "max_instances", "min_size",
                        "max_size", "shapes", "min_gap", "drop_rate", "spurious_peak_rate"},
                       bad);
    if (s.is_object()) {
      int h = cfg.scenes.grid.height, w = cfg.scenes.grid.width;
      get(s, "count", "scenes.count", cfg.num_scenes);
      get(s, "height", "scenes.height", h);
      get(s, "width", "scenes.width", w);
      get(s, "num_classes", "scenes.num_classes", cfg.scenes.num_classes);
      get(s, "min_instances", "scenes.min_instances", cfg.scenes.min_instances);
      get(s, "max_instances", "scenes.max_instances", cfg.scenes.max_instances);
      get(s, "min_size", "scenes.min_size", cfg.scenes.min_size);
      get(s, "max_size", "scenes.max_size", cfg.scenes.max_size);
      get(s, "min_gap", "scenes.min_gap", cfg.scenes.min_gap);
      get(s, "drop_rate", "scenes.drop_rate", cfg.scenes.drop_rate);
      get(s, "spurious_peak_rate", "scenes.spurious_peak_rate", cfg.scenes.spurious_peak_rate);
      if (h < 8 || w < 8) bad.push_back("scenes.height/width");
      else cfg.scenes.grid = ImageGrid(h, w);
      if (s.contains("shapes")) {
        std::vector<std::string> names;
        get(s, "shapes", "scenes.shapes", names);
        cfg.scenes.shapes.clear();
        for (const auto& nm : names) {
          try {
            cfg.scenes.shapes.push_back(detail::parse_shape(nm));
          } catch (const ConfigError&) {
            bad.push_back("scenes.shapes");
          }
        }
      }
      if (cfg.num_scenes < 1) bad.push_back("scenes.count");
      if (cfg.scenes.num_classes < 1) bad.push_back("scenes.num_classes");
      if (cfg.scenes.min_instances < 0 || cfg.scenes.max_instances < cfg.scenes.min_instances)
        bad.push_back("scenes.min_instances/max_instances");
      if (!(cfg.scenes.min_size > 0.0) || cfg.scenes.max_size < cfg.scenes.min_size)
        bad.push_back("scenes.min_size/max_size");
      if (!(cfg.scenes.drop_rate >= 0.0 && cfg.scenes.drop_rate <= 1.0)) bad.push_back("scenes.drop_rate");
      if (!(cfg.scenes.spurious_peak_rate >= 0.0 && cfg.scenes.spurious_peak_rate <= 1.0))
        bad.push_back("scenes.spurious_peak_rate");
      if (cfg.scenes.shapes.empty()) bad.push_back("scenes.shapes");
    }
  }
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    detail::check_keys(f, "flags", {"pam", "iag", "refine", "clustering"}, bad);
    if (f.is_object()) {
      get(f, "pam", "flags.pam", cfg.flags.pam);
      get(f, "iag", "flags.iag", cfg.flags.iag);
      get(f, "refine", "flags.refine", cfg.flags.refine);
      get(f, "clustering", "flags.clustering", cfg.flags.clustering);
    }
  }
  get(j, "iterations", "iterations", cfg.iterations);
  get(j, "lr", "lr", cfg.lr);
  get(j, "seed", "seed", cfg.seed);
  get(j, "eval_interval", "eval_interval", cfg.eval_interval);
  get(j, "dump_labels", "dump_labels", cfg.dump_labels);
  get(j, "plot_tsv", "plot_tsv", cfg.plot_tsv);
  get(j, "threads", "threads", cfg.threads);
  get(j, "cue_threshold", "cue_threshold", cfg.cue_threshold);
  get(j, "pam_bias", "pam_bias", cfg.pam_bias);
  if (j.contains("output_dir")) {
    std::string dir;
    get(j, "output_dir", "output_dir", dir);
    if (dir.empty()) bad.push_back("output_dir");
    cfg.output_dir = dir;
  }
  if (cfg.iterations < 0) bad.push_back("iterations");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) bad.push_back("lr");
  if (cfg.eval_interval < 1) bad.push_back("eval_interval");
  if (cfg.threads < 1) bad.push_back("threads");
  if (!(cfg.cue_threshold > 0.0 && cfg.cue_threshold <= 1.0)) bad.push_back("cue_threshold");

  if (j.contains("refine")) {
    const auto& r = j.at("refine");
    detail::check_keys(r, "refine",
                       {"magnitude_threshold", "area_target", "area_epsilon", "lambda_center", "lambda_offset",
                        "lambda_sem", "delta_c", "nms_kernel", "sigma"},
                       bad);
    if (r.is_object()) {
      get(r, "magnitude_threshold", "refine.magnitude_threshold", cfg.refine.magnitude_threshold);
      get(r, "area_target", "refine.area_target", cfg.refine.area_target);
      get(r, "area_epsilon", "refine.area_epsilon", cfg.refine.area_epsilon);
      get(r, "lambda_center", "refine.lambda_center", cfg.refine.lambda_center);
      get(r, "lambda_offset", "refine.lambda_offset", cfg.refine.lambda_offset);
      get(r, "lambda_sem", "refine.lambda_sem", cfg.refine.lambda_sem);
      get(r, "delta_c", "refine.delta_c", cfg.refine.delta_c);
      get(r, "nms_kernel", "refine.nms_kernel", cfg.refine.nms_kernel);
      get(r, "sigma", "refine.sigma", cfg.refine.sigma);
      try {
        cfg.refine.validate();
      } catch (const ValidationError&) {
        bad.push_back("refine");
      }
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model",
                       {"smoothing_radius", "rate_center", "rate_offset", "rate_sem", "rate_shared_center",
                        "rate_shared_offset", "init_center_logit", "center_feature_sigmas", "shared_heads"},
                       bad);
    if (m.is_object()) {
      get(m, "smoothing_radius", "model.smoothing_radius", cfg.model.smoothing_radius);
      get(m, "rate_center", "model.rate_center", cfg.model.rate_center);
      get(m, "rate_offset", "model.rate_offset", cfg.model.rate_offset);
      get(m, "rate_sem", "model.rate_sem", cfg.model.rate_sem);
      get(m, "rate_shared_center", "model.rate_shared_center", cfg.model.rate_shared_center);
      get(m, "rate_shared_offset", "model.rate_shared_offset", cfg.model.rate_shared_offset);
      get(m, "init_center_logit", "model.init_center_logit", cfg.model.init_center_logit);
      get(m, "center_feature_sigmas", "model.center_feature_sigmas", cfg.model.center_feature_sigmas);
      get(m, "shared_heads", "model.shared_heads", cfg.model.shared_heads);
      if (cfg.model.smoothing_radius < 0) bad.push_back("model.smoothing_radius");
      for (double sg : cfg.model.center_feature_sigmas)
        if (!(sg > 0.0)) bad.push_back("model.center_feature_sigmas");
    }
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    detail::check_keys(t, "transfer", {"connectivity", "min_area"}, bad);
    if (t.is_object()) {
      int conn = 8;
      get(t, "connectivity", "transfer.connectivity", conn);
      long long min_area = static_cast<long long>(cfg.transfer.min_area);
      get(t, "min_area", "transfer.min_area", min_area);
      if (min_area < 0) bad.push_back("transfer.min_area");
      else cfg.transfer.min_area = static_cast<std::size_t>(min_area);
      try {
        cfg.transfer.connectivity = connectivity_from_int(conn);
      } catch (const ValidationError&) {
        bad.push_back("transfer.connectivity");
      }
    }
  }

  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    std::string msg = "invalid experiment config keys:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg, bad);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = json::read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(std::string("malformed config: ") + e.what(), {"<root>"});
  }
  return config_from_json(j);
}

// Output --------------------------------------------------------------------

inline std::string format_number(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "iteration,tp,map25,map50,map70,map75,l_center,l_offset,l_sem,total\r\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.true_positives);
    for (double v : {r.map25, r.map50, r.map70, r.map75, r.l_center, r.l_offset, r.l_sem, r.total})
      out += "," + format_number(v);
    out += "\r\n";
  }
  return out;
}

inline std::string metrics_tsv(const std::vector<MetricsRow>& rows) {
  std::string out = "iteration\ttp\tmap50\ttotal\n";
  for (const auto& r : rows)
    out += std::to_string(r.iteration) + "\t" + std::to_string(r.true_positives) + "\t" + format_number(r.map50) +
           "\t" + format_number(r.total) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Simulates and writes metrics.csv, optional metrics.tsv, and per-scene
/// label dumps (pseudo, last refined, final decoded) under output_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  auto res = simulate(cfg);
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create '" + cfg.output_dir.string() + "': " + ec.message());
  write_text(cfg.output_dir / "metrics.csv", metrics_csv(res.rows));
  if (cfg.plot_tsv) write_text(cfg.output_dir / "metrics.tsv", metrics_tsv(res.rows));
  if (cfg.dump_labels) {
    const auto labels_dir = cfg.output_dir / "labels";
    fs::create_directories(labels_dir, ec);
    if (ec) throw IoError("cannot create '" + labels_dir.string() + "': " + ec.message());
    for (std::size_t i = 0; i < res.scenes.size(); ++i) {
      const std::string stem = "scene" + std::to_string(i);
      const auto& tr = res.traces[i];
      json::write_file(labels_dir / (stem + "_truth.json"), json::to_json(res.scenes[i].scene.truth));
      json::write_file(labels_dir / (stem + "_pseudo.json"), json::to_json(res.scenes[i].transfer.labels));
      if (tr.last_refined) json::write_file(labels_dir / (stem + "_refined.json"), json::to_json(*tr.last_refined));
      for (std::size_t k = 1; k < tr.checkpoints.size(); ++k)
        json::write_file(labels_dir / (stem + "_iter" + std::to_string(tr.checkpoints[k]) + ".json"),
                         json::to_json(tr.decoded[k]));
    }
  }
  return res;
}

}  // namespace wsis
