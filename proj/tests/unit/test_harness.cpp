#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "wsis/experiment.hpp"

using namespace wsis;

namespace {

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

double l2(const TrainState& a, const TrainState& b) {
  double s = 0.0;
  auto acc = [&](const Plane<double>& x, const Plane<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  };
  for (std::size_t c = 0; c < a.center_params.size(); ++c) acc(a.center_params[c], b.center_params[c]);
  for (std::size_t c = 0; c < a.sem_params.size(); ++c) acc(a.sem_params[c], b.sem_params[c]);
  acc(a.dy_params, b.dy_params);
  acc(a.dx_params, b.dx_params);
  for (std::size_t k = 0; k < a.center_weights.size(); ++k)
    s += (a.center_weights[k] - b.center_weights[k]) * (a.center_weights[k] - b.center_weights[k]);
  s += (a.offset_weight - b.offset_weight) * (a.offset_weight - b.offset_weight);
  return std::sqrt(s);
}

bool same_params(const TrainState& a, const TrainState& b) {
  auto eq = [](const PlaneStack& x, const PlaneStack& y) { return x == y; };
  return eq(a.center_params, b.center_params) && eq(a.sem_params, b.sem_params) && a.dy_params == b.dy_params &&
         a.dx_params == b.dx_params && a.center_weights == b.center_weights && a.offset_weight == b.offset_weight;
}

struct Fixture {
  Scene scene;
  PseudoSupervision sup;
  SceneFeatures feat;
};

Fixture one_scene(std::uint64_t seed, double drop = 0.0, int max_instances = 6) {
  SceneSuiteConfig cfg;
  cfg.drop_rate = drop;
  cfg.max_instances = max_instances;
  cfg.min_instances = std::min(cfg.min_instances, max_instances);
  auto scene = generate_scene(random_scene_spec(cfg, seed));
  auto tr = transfer_knowledge(scene.semantic, scene.point_cues);
  PseudoSupervision sup{labels_to_targets(tr.labels, scene.semantic.num_classes(), 3.0), scene.semantic};
  auto feat = compute_features(scene.semantic, ModelConfig{});
  return {std::move(scene), std::move(sup), std::move(feat)};
}

nlohmann::json small_config(const std::string& out) {
  auto j = nlohmann::json::parse(R"({
    "scenes": {"count": 2, "height": 32, "width": 32, "min_size": 4, "max_size": 5, "drop_rate": 0.5},
    "flags": {"pam": true, "iag": true, "refine": true, "clustering": true},
    "iterations": 30, "lr": 0.5, "seed": 7, "eval_interval": 10
  })");
  j["output_dir"] = out;
  return j;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Scene, SameSeedSameScene) {
  SceneSuiteConfig cfg;
  cfg.drop_rate = 0.3;
  cfg.shapes = {Shape::Disc, Shape::Rectangle, Shape::Blob};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = generate_scene(random_scene_spec(cfg, seed));
    const auto b = generate_scene(random_scene_spec(cfg, seed));
    EXPECT_EQ(a.truth, b.truth);
    EXPECT_EQ(a.semantic.labels(), b.semantic.labels());
    EXPECT_EQ(a.activations.channels(), b.activations.channels());
    EXPECT_EQ(a.point_cues, b.point_cues);
    EXPECT_EQ(a.dropped, b.dropped);
  }
}

TEST(Scene, SemanticIsUnionOfInstanceMasks) {
  const auto f = one_scene(3);
  const auto& g = f.scene.semantic.grid();
  Plane<int> expect(g, 0);
  for (const auto& inst : f.scene.truth.instances())
    for (auto i : inst.mask) expect[static_cast<std::size_t>(i)] = inst.class_id;
  EXPECT_EQ(f.scene.semantic.labels(), expect);
}

TEST(Scene, DropRateControlsCues) {
  SceneSuiteConfig cfg;
  cfg.drop_rate = 0.0;
  const auto all = generate_scene(random_scene_spec(cfg, 5));
  EXPECT_EQ(all.point_cues.size(), all.truth.size());
  EXPECT_TRUE(all.dropped.empty());
  cfg.drop_rate = 1.0;
  const auto none = generate_scene(random_scene_spec(cfg, 5));
  EXPECT_TRUE(none.point_cues.empty());
  EXPECT_TRUE(transfer_knowledge(none.semantic, none.point_cues).labels.empty());
}

TEST(Scene, SpecValidation) {
  SceneSpec spec;
  spec.drop_rate = 1.5;
  EXPECT_THROW(generate_scene(spec), ValidationError);
  spec.drop_rate = 0.0;
  spec.instances.push_back({1, Shape::Disc, {2.0, 2.0}, 5.0, 1.0});
  EXPECT_THROW(generate_scene(spec), ValidationError);
  spec.instances.front() = {3, Shape::Disc, {20.0, 20.0}, 5.0, 1.0};
  EXPECT_THROW(generate_scene(spec), ValidationError);
}

TEST(Features, DisplacementPointsAtComponentCentroid) {
  const ImageGrid g(10, 10);
  Plane<int> lab(g, 0);
  for (int y = 2; y <= 4; ++y)
    for (int x = 2; x <= 6; ++x) lab(y, x) = 1;
  const auto f = compute_features(SemanticMap(lab, 1), ModelConfig{});
  EXPECT_DOUBLE_EQ(f.disp_y(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(f.disp_x(2, 2), 2.0);
  EXPECT_DOUBLE_EQ(f.disp_x(3, 4), 0.0);
  EXPECT_DOUBLE_EQ(f.disp_y(8, 8), 0.0);
  ASSERT_EQ(f.center.size(), 1u);
  EXPECT_EQ(f.center[0].size(), ModelConfig{}.center_feature_sigmas.size());
}

TEST(TrainStep, ZeroRateLeavesStateUnchanged) {
  const auto f = one_scene(1);
  const ModelConfig mcfg;
  auto s = init_state(f.feat, mcfg, 1);
  const auto before = s;
  const auto res = train_step(s, f.feat, f.sup, RefineConfig{.sigma = 3.0}, {}, 0.0, mcfg);
  EXPECT_TRUE(same_params(s, before));
  EXPECT_EQ(s.iteration, 1);
  EXPECT_GT(res.losses.total, 0.0);
}

TEST(TrainStep, PerfectInitializationIsFixedPoint) {
  const auto f = one_scene(2);
  const ModelConfig mcfg;
  auto s = init_state(f.feat, mcfg, 2);
  auto logit = [](double t) {
    t = std::clamp(t, 1e-15, 1.0 - 1e-15);
    return std::log(t / (1.0 - t));
  };
  for (int c = 0; c < f.feat.num_classes; ++c)
    for (std::size_t i = 0; i < f.feat.grid.size(); ++i)
      s.center_params[static_cast<std::size_t>(c)][i] = logit(f.sup.targets.center.channel(c + 1)[i]);
  s.dy_params = f.sup.targets.offset.dy();
  s.dx_params = f.sup.targets.offset.dx();
  for (std::size_t i = 0; i < f.feat.grid.size(); ++i)
    for (std::size_t c = 0; c < s.sem_params.size(); ++c)
      s.sem_params[c][i] = static_cast<int>(c) == f.sup.semantic.labels()[i] ? 40.0 : 0.0;
  const auto before = s;
  const auto res = train_step(s, f.feat, f.sup, RefineConfig{.sigma = 3.0}, {true, false}, 0.5, mcfg);
  EXPECT_LT(res.losses.total, 1e-8);
  EXPECT_LT(l2(s, before), 1e-8);
}

TEST(TrainStep, SmallStepDescends) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto f = one_scene(seed, 0.0, 1);
    ASSERT_EQ(f.scene.truth.size(), 1u);
    ModelConfig mcfg;
    const RefineConfig rcfg{.sigma = 3.0};
    for (bool iag : {true, false}) {
      auto s = init_state(f.feat, mcfg, seed);
      const auto l0 = train_step(s, f.feat, f.sup, rcfg, {iag, false}, 1e-3, mcfg).losses.total;
      const auto l1 = evaluate_losses(forward(s, f.feat, mcfg), f.sup, rcfg, {iag, false}).losses.total;
      EXPECT_LT(l1, l0) << "seed " << seed << " iag " << iag;
    }
  }
}

TEST(TrainStep, GuidanceZeroesGradientsOutsideSupervisedRegion) {
  ModelConfig mcfg;
  const RefineConfig rcfg{.sigma = 3.0};
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const auto f = one_scene(seed, 0.5);
    auto s = init_state(f.feat, mcfg, seed);
    for (int it = 0; it < 300; ++it) train_step(s, f.feat, f.sup, rcfg, {true, true}, 0.5, mcfg);
    const auto res = evaluate_losses(forward(s, f.feat, mcfg), f.sup, rcfg, {true, true});
    ASSERT_TRUE(res.refined);
    PixelSet keep = f.sup.targets.guidance;
    const auto& r = res.refined->labels.guided_region();
    keep.insert(keep.end(), r.begin(), r.end());
    normalize(keep);
    std::vector<bool> inside(f.feat.grid.size(), false);
    for (auto i : keep) inside[static_cast<std::size_t>(i)] = true;
    std::size_t outside = 0;
    for (std::size_t i = 0; i < inside.size(); ++i) {
      if (inside[i]) continue;
      ++outside;
      for (const auto& ch : res.losses.grad_center) ASSERT_EQ(ch[i], 0.0);
      ASSERT_EQ(res.losses.grad_dy[i], 0.0);
      ASSERT_EQ(res.losses.grad_dx[i], 0.0);
    }
    EXPECT_GT(outside, 0u);
  }
}

TEST(TrainStep, WithoutGuidanceBackgroundIsSupervised) {
  const auto f = one_scene(30);
  ModelConfig mcfg;
  auto s = init_state(f.feat, mcfg, 30);
  for (auto& p : s.dy_params.values()) p = 1.0;
  const auto res = evaluate_losses(forward(s, f.feat, mcfg), f.sup, RefineConfig{.sigma = 3.0}, {false, false});
  const auto bg = f.scene.semantic.region(0);
  std::size_t nonzero = 0;
  for (auto i : bg) nonzero += res.losses.grad_dy[static_cast<std::size_t>(i)] != 0.0;
  EXPECT_EQ(nonzero, bg.size());
}

TEST(TrainStep, NonFiniteLossIsDivergence) {
  const auto f = one_scene(4);
  ModelConfig mcfg;
  auto s = init_state(f.feat, mcfg, 4);
  s.dy_params[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_step(s, f.feat, f.sup, RefineConfig{.sigma = 3.0}, {false, false}, 0.5, mcfg), Error);
}

TEST(Evaluate, IdenticalSetsScoreOne) {
  const auto f = one_scene(6);
  const auto ev = evaluate(f.scene.truth, f.scene.truth);
  for (const auto& t : ev.per_threshold) {
    EXPECT_DOUBLE_EQ(t.map, 1.0);
    EXPECT_EQ(t.true_positives, f.scene.truth.size());
  }
}

TEST(Evaluate, EmptyPredictionScoresZero) {
  const auto f = one_scene(6);
  const auto ev = evaluate(InstanceLabelSet(f.scene.truth.grid(), {}), f.scene.truth);
  EXPECT_EQ(ev.at(0.5).map, 0.0);
  EXPECT_EQ(ev.at(0.5).true_positives, 0u);
  EXPECT_EQ(evaluate(f.scene.truth, InstanceLabelSet(f.scene.truth.grid(), {})).at(0.5).map, 0.0);
}

TEST(Evaluate, ThreePredictionsTwoTruths) {
  // Row of 8 pixels: truths [0,4) and [4,8); predictions [0,4), [4,6), [6,8).
  const ImageGrid g(1, 8);
  const oracle::Partition truth{{1, 1, 1, 1, 2, 2, 2, 2}, 2};
  const oracle::Partition pred{{1, 1, 1, 1, 2, 2, 3, 3}, 3};
  const auto t = from_partition(g, truth, {1, 1}, {1.0, 1.0});
  const auto p = from_partition(g, pred, {1, 1, 1}, {0.5, 0.9, 0.7});
  const auto ev = evaluate(p, t, {0.5});
  // Ranked: [4,6) hits at IoU 0.5, [6,8) misses, [0,4) hits.
  EXPECT_DOUBLE_EQ(ev.at(0.5).map, 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
  EXPECT_DOUBLE_EQ(ev.at(0.5).map, oracle::mask_map(dense(p), dense(t), 0.5).map);
}

TEST(Evaluate, TiesKeepInstanceOrder) {
  const ImageGrid g(1, 4);
  const auto t = from_partition(g, {{1, 1, 1, 1}, 1}, {1}, {1.0});
  const auto p = from_partition(g, {{1, 1, 2, 2}, 2}, {1, 1}, {0.5, 0.5});
  const auto ev = evaluate(p, t, {0.5});
  EXPECT_EQ(ev.at(0.5).true_positives, 1u);
  EXPECT_DOUBLE_EQ(ev.at(0.5).map, oracle::mask_map(dense(p), dense(t), 0.5).map);
}

TEST(Evaluate, MatchesOracleOnEnumeratedTwoClassSets) {
  const ImageGrid g(1, 4);
  const auto parts = oracle::partitions(4, 4);
  std::size_t cases = 0;
  for (const auto& tp : parts) {
    for (int tmask = 0; tmask < (1 << tp.parts); ++tmask) {
      std::vector<int> tcls;
      for (int k = 0; k < tp.parts; ++k) tcls.push_back(1 + ((tmask >> k) & 1));
      const auto truth = from_partition(g, tp, tcls, std::vector<double>(static_cast<std::size_t>(tp.parts), 1.0));
      const auto dt = dense(truth);
      for (const auto& pp : parts) {
        if (pp.parts > 2) continue;
        for (int pmask = 0; pmask < (1 << pp.parts); ++pmask) {
          std::vector<int> pcls;
          for (int k = 0; k < pp.parts; ++k) pcls.push_back(1 + ((pmask >> k) & 1));
          std::vector<double> sc(static_cast<std::size_t>(pp.parts));
          std::iota(sc.begin(), sc.end(), 1.0);
          do {
            std::vector<double> scaled;
            for (double v : sc) scaled.push_back(v / 10.0);
            const auto pred = from_partition(g, pp, pcls, scaled);
            const auto ev = evaluate(pred, truth);
            for (const auto& t : ev.per_threshold) {
              const auto want = oracle::mask_map(dense(pred), dt, t.iou_threshold);
              ASSERT_NEAR(t.map, want.map, 1e-12);
              ASSERT_EQ(t.true_positives, want.tp);
            }
            ++cases;
          } while (std::next_permutation(sc.begin(), sc.end()));
        }
      }
    }
  }
  EXPECT_GT(cases, 1000u);
}

TEST(Config, ParsesMinimalConfig) {
  const auto cfg = config_from_json(small_config("out"));
  EXPECT_EQ(cfg.num_scenes, 2);
  EXPECT_EQ(cfg.scenes.grid, ImageGrid(32, 32));
  EXPECT_DOUBLE_EQ(cfg.scenes.drop_rate, 0.5);
  EXPECT_EQ(cfg.iterations, 30);
  EXPECT_EQ(cfg.output_dir, std::filesystem::path("out"));
}

TEST(Config, ReportsEveryOffendingKey) {
  auto j = small_config("out");
  j["bogus"] = 1;
  j["scenes"]["wat"] = 2;
  j["lr"] = "fast";
  j["flags"]["iag"] = 3;
  j.erase("seed");
  try {
    config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.keys(), (std::vector<std::string>{"bogus", "flags.iag", "lr", "scenes.wat", "seed (missing)"}));
  }
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, RangeChecks) {
  for (auto [key, val] : std::vector<std::pair<std::string, nlohmann::json>>{
           {"iterations", -1}, {"eval_interval", 0}, {"threads", 0}, {"lr", -0.1}}) {
    auto j = small_config("out");
    j[key] = val;
    EXPECT_THROW(config_from_json(j), ConfigError) << key;
  }
  auto j = small_config("out");
  j["scenes"]["drop_rate"] = 2.0;
  EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Experiment, ZeroIterationsGivesHeaderAndInitialRow) {
  auto cfg = config_from_json(small_config("out"));
  cfg.iterations = 0;
  const auto res = simulate(cfg);
  ASSERT_EQ(res.rows.size(), 1u);
  const auto csv = metrics_csv(res.rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("iteration,tp,map25,map50,map70,map75,l_center,l_offset,l_sem,total\r\n0,", 0), 0u);
}

TEST(Experiment, DeterministicAcrossRunsAndThreadCounts) {
  auto cfg = config_from_json(small_config("out"));
  const auto a = metrics_csv(simulate(cfg).rows);
  const auto b = metrics_csv(simulate(cfg).rows);
  cfg.threads = 3;
  const auto c = metrics_csv(simulate(cfg).rows);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Experiment, RowsRespectMetricBounds) {
  const auto cfg = config_from_json(small_config("out"));
  const auto res = simulate(cfg);
  std::size_t truth = 0;
  for (const auto& s : res.scenes) truth += s.scene.truth.size();
  EXPECT_EQ(res.rows.size(), 4u);
  for (const auto& r : res.rows) {
    EXPECT_LE(r.true_positives, truth);
    for (double m : {r.map25, r.map50, r.map70, r.map75}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
  }
}

TEST(Experiment, WritesArtifacts) {
  test::TempDir dir;
  auto cfg = config_from_json(small_config((dir / "run").string()));
  cfg.plot_tsv = true;
  const auto res = run_experiment(cfg);
  EXPECT_EQ(slurp(dir / "run" / "metrics.csv"), metrics_csv(res.rows));
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "metrics.tsv"));
  const auto pseudo = json::labels_from_json(json::read_file(dir / "run" / "labels" / "scene0_pseudo.json"));
  EXPECT_EQ(pseudo, res.scenes[0].transfer.labels);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "labels" / "scene1_iter30.json"));
}

TEST(Experiment, GuidedTrainingConvergesOnSeparatedDiscs) {
  auto cfg = config_from_json(small_config("out"));
  cfg.scenes.grid = ImageGrid(48, 48);
  cfg.scenes.min_size = 5.0;
  cfg.scenes.max_size = 8.0;
  cfg.scenes.drop_rate = 0.0;
  cfg.num_scenes = 3;
  cfg.iterations = 2000;
  cfg.eval_interval = 2000;
  cfg.threads = 3;
  const auto res = simulate(cfg);
  EXPECT_DOUBLE_EQ(res.rows.back().map50, 1.0);
}

TEST(Experiment, FiftySceneSuiteKeepsTruePositives) {
  auto cfg = config_from_json(small_config("out"));
  cfg.scenes = SceneSuiteConfig{};
  cfg.scenes.drop_rate = 0.5;
  cfg.num_scenes = 50;
  cfg.iterations = 300;
  cfg.eval_interval = 100;
  const auto res = simulate(cfg);
  EXPECT_GE(res.rows.back().true_positives, res.rows.front().true_positives);
}
