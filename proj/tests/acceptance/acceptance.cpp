// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run with no arguments for all criteria, or pass criterion numbers.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "wsis/experiment.hpp"

using namespace wsis;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

int hardware_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// 1 ---------------------------------------------------------------------------

Outcome grouping_oracle() {
  const auto t0 = Clock::now();
  std::mt19937 rng(101);
  std::uniform_real_distribution<double> off(-8.0, 8.0);
  const ImageGrid g(64, 64);
  std::size_t mismatches = 0;
  for (int scene = 0; scene < 500; ++scene) {
    const int k = 1 + static_cast<int>(rng() % 8);
    std::vector<CenterPoint> centers;
    std::vector<oracle::Center> oc;
    for (int i = 0; i < k; ++i) {
      const int cls = 1 + static_cast<int>(rng() % 3);
      const int y = static_cast<int>(rng() % 64), x = static_cast<int>(rng() % 64);
      centers.push_back({cls, y, x, 1.0});
      oc.push_back({cls, static_cast<double>(y), static_cast<double>(x)});
    }
    OffsetMap o(g);
    Plane<int> fg(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Every fourth scene uses integer offsets to provoke exact ties.
      o.dy()[i] = scene % 4 == 0 ? std::round(off(rng)) : off(rng);
      o.dx()[i] = scene % 4 == 0 ? std::round(off(rng)) : off(rng);
      fg[i] = static_cast<int>(rng() % 4);
    }
    const auto got = group_instances(centers, o, fg);
    const auto want = oracle::argmin_grouping(64, 64, oc, o.dy().vector(), o.dx().vector(), fg.vector());
    for (std::size_t i = 0; i < want.size(); ++i) mismatches += got.ids[i] != want[i];
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          "500 scenes, " + std::to_string(mismatches) + " mismatched pixels, " + fmt(secs) + " s"};
}

// 2 ---------------------------------------------------------------------------

Outcome ccl_oracle() {
  const auto t0 = Clock::now();
  std::mt19937 rng(202);
  const ImageGrid g(64, 64);
  std::size_t bad = 0;
  for (int m = 0; m < 500; ++m) {
    Plane<int> mask(g);
    const unsigned density = 20 + static_cast<unsigned>(m % 7) * 10;
    for (auto& v : mask.values()) v = rng() % 100 < density;
    for (bool eight : {false, true}) {
      const auto got = ccl(mask, eight ? Connectivity::Eight : Connectivity::Four);
      bad += got.ids.vector() != oracle::flood_fill_labels(64, 64, mask.vector(), eight);
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10.0,
          "500 masks x 2 connectivities, " + std::to_string(bad) + " differing, " + fmt(secs) + " s"};
}

// 3 ---------------------------------------------------------------------------

Plane<double> random_plane(std::mt19937& rng, const ImageGrid& g, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane<double> p(g);
  for (auto& v : p.values()) v = u(rng);
  return p;
}

PixelSet random_subset(std::mt19937& rng, std::size_t n, unsigned percent) {
  PixelSet out;
  for (std::size_t i = 0; i < n; ++i)
    if (rng() % 100 < percent) out.push_back(static_cast<std::int32_t>(i));
  return out;
}

struct GradStats {
  std::size_t checked = 0;
  double worst = 0.0;
  void add(double analytic, double numeric) {
    worst = std::max(worst, relative_error(analytic, numeric, 1e-6));
    ++checked;
  }
};

GradStats pam_gradients() {
  std::mt19937 rng(303);
  std::normal_distribution<double> n(0.0, 0.3);
  GradStats s;
  for (int t = 0; t < 2; ++t) {
    const int k = 14;
    std::vector<Plane<double>> ch;
    for (int c = 0; c < k; ++c) ch.push_back(random_plane(rng, ImageGrid(8, 8), 0.0, 1.0));
    std::vector<double> w(static_cast<std::size_t>(k * k)), b(static_cast<std::size_t>(k));
    for (auto& v : w) v = n(rng);
    for (auto& v : b) v = n(rng);
    const auto rep = pam_backward_check(ActivationStack(ch), PamParams(k, w, b), {}, 1e-5);
    for (std::size_t i = 0; i < rep.analytic.size(); ++i) s.add(rep.analytic[i], rep.numeric[i]);
  }
  return s;
}

GradStats center_gradients() {
  std::mt19937 rng(304);
  const ImageGrid g(16, 16);
  GradStats s;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Plane<double>> o, p, r;
    for (int c = 0; c < 2; ++c) {
      o.push_back(random_plane(rng, g, 0.1, 0.9));
      p.push_back(random_plane(rng, g, 0.0, 1.0));
      r.push_back(random_plane(rng, g, 0.0, 1.0));
    }
    const auto pp = random_subset(rng, g.size(), 40), pr = random_subset(rng, g.size(), 40);
    const auto w = random_plane(rng, g, 0.0, 1.0);
    const CenterMap pm(p), rm(r);
    const auto an = loss_center(CenterMap(o), pm, pp, rm, pr, w);
    for (int k = 0; k < 60; ++k) {
      const auto c = rng() % 2;
      const auto i = rng() % g.size();
      auto f = [&](double v) {
        auto oo = o;
        oo[c][i] = v;
        return loss_center(CenterMap(oo), pm, pp, rm, pr, w).value;
      };
      const double h = 1e-3;
      s.add(an.grad[c][i], (f(o[c][i] + h) - f(o[c][i] - h)) / (2 * h));
    }
  }
  return s;
}

GradStats offset_gradients() {
  std::mt19937 rng(305);
  const ImageGrid g(16, 16);
  GradStats s;
  for (int trial = 0; trial < 4; ++trial) {
    OffsetMap o(random_plane(rng, g, -5, 5), random_plane(rng, g, -5, 5));
    const OffsetMap p(random_plane(rng, g, -5, 5), random_plane(rng, g, -5, 5));
    const OffsetMap r(random_plane(rng, g, -5, 5), random_plane(rng, g, -5, 5));
    const auto pp = random_subset(rng, g.size(), 40), pr = random_subset(rng, g.size(), 40);
    const auto w = random_plane(rng, g, 0.0, 1.0);
    const auto an = loss_offset(o, p, pp, r, pr, w);
    for (int k = 0; k < 60; ++k) {
      const bool dy = rng() % 2;
      const auto i = rng() % g.size();
      // Piecewise linear: exact for any step that does not cross a kink.
      const double h = 1e-4;
      const double x0 = dy ? o.dy()[i] : o.dx()[i];
      if (std::abs(x0 - (dy ? p.dy()[i] : p.dx()[i])) < 10 * h || std::abs(x0 - (dy ? r.dy()[i] : r.dx()[i])) < 10 * h)
        continue;
      auto f = [&](double v) {
        auto oo = o;
        (dy ? oo.dy() : oo.dx())[i] = v;
        return loss_offset(oo, p, pp, r, pr, w).value;
      };
      s.add(dy ? an.grad_dy[i] : an.grad_dx[i], (f(x0 + h) - f(x0 - h)) / (2 * h));
    }
  }
  return s;
}

GradStats sem_gradients() {
  std::mt19937 rng(306);
  const ImageGrid g(12, 12);
  GradStats s;
  for (int trial = 0; trial < 4; ++trial) {
    Plane<int> lab(g);
    for (auto& v : lab.values()) v = static_cast<int>(rng() % 3);
    const SemanticMap sem(lab, 2);
    PlaneStack logits{random_plane(rng, g, -3, 3), random_plane(rng, g, -3, 3), random_plane(rng, g, -3, 3)};
    const auto prob = softmax(logits);
    const auto an_p = loss_sem(prob, sem);
    const auto an_z = loss_sem_logits(logits, sem);
    for (int k = 0; k < 30; ++k) {
      const auto c = rng() % 3;
      const auto i = rng() % g.size();
      const double hp = 1e-4 * prob[c][i], hz = 1e-4;
      auto fp = [&](double v) {
        auto pp = prob;
        pp[c][i] = v;
        return loss_sem(pp, sem).value;
      };
      auto fz = [&](double v) {
        auto zz = logits;
        zz[c][i] = v;
        return loss_sem_logits(zz, sem).value;
      };
      s.add(an_p.grad[c][i], (fp(prob[c][i] + hp) - fp(prob[c][i] - hp)) / (2 * hp));
      s.add(an_z.grad[c][i], (fz(logits[c][i] + hz) - fz(logits[c][i] - hz)) / (2 * hz));
    }
  }
  return s;
}

Outcome gradient_checks() {
  struct Row {
    const char* name;
    GradStats stats;
    double tol;
  };
  const Row rows[] = {{"pam", pam_gradients(), 1e-4},
                      {"center", center_gradients(), 1e-6},
                      {"offset", offset_gradients(), 1e-5},
                      {"sem", sem_gradients(), 1e-6}};
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.stats.checked >= 200 && r.stats.worst < r.tol;
    detail += std::string(detail.empty() ? "" : ", ") + r.name + " " + std::to_string(r.stats.checked) + " coords max rel " +
              fmt(r.stats.worst, 2);
  }
  return {ok, detail};
}

// 4 ---------------------------------------------------------------------------

Outcome clustering_constant() {
  const ImageGrid g(48, 48);
  std::mt19937 rng(404);
  bool ok = oracle::lattice_points_inside(2.5) == 21;
  double worst = 0.0;
  std::size_t area_min = 1000, area_max = 0;
  for (int t = 0; t < 20; ++t) {
    const double cy = 6 + static_cast<int>(rng() % 36), cx = 6 + static_cast<int>(rng() % 36);
    OffsetMap field(g);
    Plane<int> small(g, 0);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        field.dy()(y, x) = cy - y;
        field.dx()(y, x) = cx - x;
        small(y, x) = std::hypot(cy - y, cx - x) < 2.5;
      }
    const auto comps = ccl(small, Connectivity::Eight).components;
    ok = ok && comps.size() == 1;
    if (!comps.empty()) {
      area_min = std::min(area_min, comps[0].area());
      area_max = std::max(area_max, comps[0].area());
    }
    const auto centers = center_clustering(field);
    ok = ok && centers.size() == 1;
    if (centers.size() == 1) worst = std::max(worst, std::hypot(centers[0].y - cy, centers[0].x - cx));
    else worst = std::numeric_limits<double>::infinity();
  }
  ok = ok && area_min == 21 && area_max == 21 && worst <= 0.5;
  return {ok, "20 fields, component area " + std::to_string(area_min) + ".." + std::to_string(area_max) +
                  " px, max center error " + fmt(worst) + " px"};
}

// 5 ---------------------------------------------------------------------------

Outcome transfer_rule() {
  const TransferConfig tcfg;
  std::size_t components = 0, one_cue = 0, rejected = 0, violations = 0, exact = 0, inexact = 0, noise = 0;
  for (int s = 0; s < 100; ++s) {
    SceneSuiteConfig cfg;
    cfg.drop_rate = 0.3;
    // Half the scenes keep instances apart, half let them touch and overlap.
    const bool separated = s < 50;
    if (!separated) {
      cfg.min_gap = -1.0;
      cfg.max_instances = 8;
    }
    const auto scene = generate_scene(random_scene_spec(cfg, 5000 + static_cast<std::uint64_t>(s)));
    const auto& g = scene.semantic.grid();
    const auto result = transfer_knowledge(scene.semantic, scene.point_cues, tcfg);

    std::map<std::vector<std::int32_t>, int> adopted;
    for (const auto& inst : result.labels.instances()) adopted[inst.mask] = inst.class_id;

    for (int c = 1; c <= scene.semantic.num_classes(); ++c) {
      std::vector<int> fg(g.size(), 0);
      for (std::size_t i = 0; i < g.size(); ++i) fg[i] = scene.semantic.labels()[i] == c;
      const auto ids = oracle::flood_fill_labels(g.height, g.width, fg, true);
      const int n = *std::max_element(ids.begin(), ids.end());
      std::vector<int> cues(static_cast<std::size_t>(n) + 1, 0);
      for (const auto& cue : scene.point_cues)
        if (cue.class_id == c) ++cues[static_cast<std::size_t>(ids[static_cast<std::size_t>(g.index(cue.y, cue.x))])];
      for (int id = 1; id <= n; ++id) {
        PixelSet comp;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (ids[i] == id) comp.push_back(static_cast<std::int32_t>(i));
        const bool taken = adopted.count(comp) && adopted[comp] == c;
        // Specks under the noise floor never reach cue counting.
        if (comp.size() < tcfg.min_area) {
          ++noise;
          violations += taken;
          continue;
        }
        ++components;
        if (cues[static_cast<std::size_t>(id)] == 1) {
          ++one_cue;
          violations += !taken;
        } else {
          ++rejected;
          violations += taken;
        }
        if (!taken) continue;
        // Exactness: a component covering a single planted instance.
        bool matches_truth = false;
        for (const auto& t : scene.truth.instances()) matches_truth = matches_truth || (t.class_id == c && t.mask == comp);
        if (matches_truth) ++exact;
        else if (separated) ++inexact;
      }
    }
  }
  const bool ok = violations == 0 && inexact == 0 && rejected > 0 && one_cue > 0;
  return {ok, std::to_string(components) + " components: " + std::to_string(one_cue) + " single-cue, " +
                  std::to_string(rejected) + " zero/multi-cue, " + std::to_string(noise) +
                  " under the area floor, " + std::to_string(violations) + " rule violations, " +
                  std::to_string(exact) + " exact masks, " + std::to_string(inexact) + " inexact in separated scenes"};
}

// 6 ---------------------------------------------------------------------------

Outcome guidance_invariant() {
  ExperimentConfig cfg;
  cfg.scenes.drop_rate = 0.5;
  const auto rcfg = effective_refine(cfg);
  std::size_t scenes = 0, checks = 0, outside_pixels = 0, leaks = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    cfg.seed = 600 + s;
    const auto ps = prepare_scene(cfg, 0);
    auto state = init_state(ps.features, cfg.model, s);
    for (int it = 0; it <= 400; ++it) {
      if (it % 50 == 0) {
        const auto res = evaluate_losses(forward(state, ps.features, cfg.model), ps.supervision, rcfg, {true, true});
        std::vector<bool> inside(ps.features.grid.size(), false);
        for (auto i : ps.supervision.targets.guidance) inside[static_cast<std::size_t>(i)] = true;
        if (res.refined)
          for (auto i : res.refined->labels.guided_region()) inside[static_cast<std::size_t>(i)] = true;
        for (std::size_t i = 0; i < inside.size(); ++i) {
          if (inside[i]) continue;
          ++outside_pixels;
          for (const auto& ch : res.losses.grad_center) leaks += ch[i] != 0.0;
          leaks += res.losses.grad_dy[i] != 0.0;
          leaks += res.losses.grad_dx[i] != 0.0;
        }
        ++checks;
      }
      train_step(state, ps.features, ps.supervision, rcfg, {true, true}, cfg.lr, cfg.model);
    }
    ++scenes;
  }
  return {leaks == 0 && outside_pixels > 0,
          std::to_string(scenes) + " scenes, " + std::to_string(checks) + " checkpoints, " +
              std::to_string(outside_pixels) + " unguided pixel visits, " + std::to_string(leaks) + " nonzero gradients"};
}

// 7 and 8 ---------------------------------------------------------------------

struct AblationRun {
  double final_map50 = 0.0;
  std::size_t pseudo_tp = 0, final_tp = 0;
  bool monotone = true;
};

struct Ablation {
  std::vector<AblationRun> full, no_cluster, no_refine, no_iag;
  double seconds = 0.0;
};

const Ablation& ablation() {
  static const Ablation result = [] {
    const auto t0 = Clock::now();
    const AblationFlags flags[] = {
        {true, true, true, true}, {true, true, true, false}, {true, true, false, false}, {true, false, false, false}};
    constexpr int kSeeds = 20;
    std::vector<AblationRun> runs(4 * kSeeds);
    parallel_for(runs.size(), hardware_threads(), [&](std::size_t job) {
      const auto& f = flags[job / kSeeds];
      nlohmann::json j = {{"scenes", {{"count", 1}, {"height", 48}, {"width", 48}, {"drop_rate", 0.5}}},
                          {"flags", {{"pam", f.pam}, {"iag", f.iag}, {"refine", f.refine}, {"clustering", f.clustering}}},
                          {"iterations", 2000},
                          {"lr", 0.5},
                          {"seed", job % kSeeds},
                          {"output_dir", "unused"}};
      const auto res = simulate(config_from_json(j));
      auto& r = runs[job];
      r.final_map50 = res.rows.back().map50;
      r.pseudo_tp = res.rows.front().true_positives;
      r.final_tp = res.rows.back().true_positives;
      for (std::size_t k = 1; k < res.rows.size(); ++k)
        r.monotone = r.monotone && res.rows[k].true_positives >= res.rows[k - 1].true_positives;
    });
    Ablation a;
    auto slice = [&](int i) {
      return std::vector<AblationRun>(runs.begin() + i * kSeeds, runs.begin() + (i + 1) * kSeeds);
    };
    a.full = slice(0);
    a.no_cluster = slice(1);
    a.no_refine = slice(2);
    a.no_iag = slice(3);
    a.seconds = seconds_since(t0);
    return a;
  }();
  return result;
}

double mean_map(const std::vector<AblationRun>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.final_map50;
  return s / static_cast<double>(runs.size());
}

Outcome ablation_direction() {
  const auto& a = ablation();
  const double full = mean_map(a.full), ncl = mean_map(a.no_cluster), nref = mean_map(a.no_refine),
               niag = mean_map(a.no_iag);
  const bool ok = full > ncl && ncl > nref && nref > niag && nref - niag >= 0.10 && a.seconds < 300.0;
  return {ok, "mAP@0.5 full " + fmt(full) + " > no-cluster " + fmt(ncl) + " > no-refine " + fmt(nref) +
                  " > no-IAG " + fmt(niag) + ", IAG gap " + fmt(nref - niag) + ", " + fmt(a.seconds) + " s"};
}

Outcome tp_growth() {
  const auto& runs = ablation().full;
  int monotone = 0, grew = 0;
  for (const auto& r : runs) {
    monotone += r.monotone;
    grew += r.final_tp > r.pseudo_tp;
  }
  const int n = static_cast<int>(runs.size());
  return {monotone >= 18 && grew == n, "non-decreasing TP in " + std::to_string(monotone) + "/" + std::to_string(n) +
                                           " runs, final TP above pseudo-label TP in " + std::to_string(grew) + "/" +
                                           std::to_string(n)};
}

// 9 ---------------------------------------------------------------------------

InstanceLabelSet from_partition(const ImageGrid& g, const oracle::Partition& p, const std::vector<int>& classes,
                                const std::vector<double>& scores) {
  std::vector<Instance> inst;
  for (int k = 1; k <= p.parts; ++k) {
    PixelSet mask;
    for (std::size_t i = 0; i < p.label.size(); ++i)
      if (p.label[i] == k) mask.push_back(static_cast<std::int32_t>(i));
    const auto kk = static_cast<std::size_t>(k - 1);
    inst.push_back({classes[kk], mask, centroid(mask, g), scores[kk]});
  }
  return InstanceLabelSet(g, inst);
}

std::vector<oracle::Mask> dense(const InstanceLabelSet& s) {
  std::vector<oracle::Mask> out;
  for (const auto& inst : s.instances()) {
    std::vector<int> px(s.grid().size(), 0);
    for (auto i : inst.mask) px[static_cast<std::size_t>(i)] = 1;
    out.push_back({inst.class_id, px, inst.score});
  }
  return out;
}

/// Every class labelling of `parts` instances over `num_classes` classes.
std::vector<std::vector<int>> class_assignments(int parts, int num_classes) {
  std::vector<std::vector<int>> out{{}};
  for (int k = 0; k < parts; ++k) {
    std::vector<std::vector<int>> next;
    for (const auto& a : out)
      for (int c = 1; c <= num_classes; ++c) {
        next.push_back(a);
        next.back().push_back(c);
      }
    out = std::move(next);
  }
  return out;
}

/// Every strict ranking of `parts` scores, plus the all-tied case.
std::vector<std::vector<double>> score_orders(int parts) {
  std::vector<double> s(static_cast<std::size_t>(parts));
  std::iota(s.begin(), s.end(), 1.0);
  std::vector<std::vector<double>> out;
  do {
    out.push_back(s);
    for (auto& v : out.back()) v /= 10.0;
  } while (std::next_permutation(s.begin(), s.end()));
  if (parts > 1) out.emplace_back(static_cast<std::size_t>(parts), 0.5);
  return out;
}

Outcome map_oracle() {
  const auto t0 = Clock::now();
  std::size_t cases = 0, mismatches = 0;
  // Pixel rows of length 5 (one class) and 4 (two classes): every split into
  // at most 5 predictions and 4 truths, every class labelling and ranking.
  for (auto [width, num_classes] : {std::pair{5, 1}, std::pair{4, 2}}) {
    const ImageGrid g(1, width);
    const auto preds = oracle::partitions(width, 5);
    const auto truths = oracle::partitions(width, 4);
    for (const auto& tp : truths)
      for (const auto& tcls : class_assignments(tp.parts, num_classes)) {
        const auto truth = from_partition(g, tp, tcls, std::vector<double>(tcls.size(), 1.0));
        const auto dt = dense(truth);
        for (const auto& pp : preds)
          for (const auto& pcls : class_assignments(pp.parts, num_classes))
            for (const auto& sc : score_orders(pp.parts)) {
              const auto pred = from_partition(g, pp, pcls, sc);
              const auto dp = dense(pred);
              const auto ev = evaluate(pred, truth);
              for (const auto& t : ev.per_threshold) {
                const auto want = oracle::mask_map(dp, dt, t.iou_threshold);
                mismatches += std::abs(t.map - want.map) > 1e-12 || t.true_positives != want.tp;
              }
              ++cases;
            }
      }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0, std::to_string(cases) + " configurations x 4 IoU thresholds, " +
                                              std::to_string(mismatches) + " mismatches, " + fmt(secs) + " s"};
}

// 10 --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome cli_determinism() {
  test::TempDir dir;
  std::vector<std::string> csvs;
  for (int run = 0; run < 3; ++run) {
    const auto cwd = dir / ("run" + std::to_string(run));
    fs::create_directories(cwd);
    const std::string cmd = "cd '" + cwd.string() + "' && '" + WSIS_FORGE_PATH + "' run --config '" +
                            WSIS_DEMO_CONFIG + "' >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      return {false, "run " + std::to_string(run) + " exited with status " + std::to_string(status)};
    csvs.push_back(slurp(cwd / "wsis_demo_out" / "metrics.csv"));
  }
  const bool ok = !csvs[0].empty() && csvs[0] == csvs[1] && csvs[1] == csvs[2];
  return {ok, "3 runs of the demo config, " + std::to_string(csvs[0].size()) + "-byte CSVs " +
                  (ok ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"grouping matches per-pixel argmin", grouping_oracle},
      {"connected components match flood fill", ccl_oracle},
      {"analytic gradients match central differences", gradient_checks},
      {"center clustering area constant", clustering_constant},
      {"one-cue transfer rule", transfer_rule},
      {"guidance zeroes unguided gradients", guidance_invariant},
      {"ablation ordering", ablation_direction},
      {"refinement true-positive growth", tp_growth},
      {"mAP matches exhaustive oracle", map_oracle},
      {"CLI run determinism", cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " (" << o.detail
              << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
