#pragma once

// Synthetic scenes: planted instances, the semantic map they induce, a
// class activation stack with optional spurious secondary peaks, and the
// withheld-cue (missing instance) pattern.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "wsis/core.hpp"
#include "wsis/pam.hpp"

namespace wsis {

/// Portable draws from a 64-bit Mersenne twister.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }
  std::uint64_t next() { return eng_(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1))]);
  }

 private:
  std::mt19937_64 eng_;
};

enum class Shape { Disc, Rectangle, Blob };

struct PlantedInstance {
  int class_id = 1;
  Shape shape = Shape::Disc;
  Point center;
  /// Disc/blob radius, or rectangle half-height.
  double size = 5.0;
  /// Rectangle half-width over half-height; blob lobe phase in radians.
  double aux = 1.0;
};

/// Radius of a circle enclosing the planted shape.
inline double reach(const PlantedInstance& p) {
  switch (p.shape) {
    case Shape::Rectangle:
      return p.size * std::max(1.0, p.aux) * std::numbers::sqrt2;
    case Shape::Blob:
      return p.size * 1.2;
    case Shape::Disc:
      break;
  }
  return p.size;
}

struct SceneSpec {
  ImageGrid grid{48, 48};
  int num_classes = 2;
  std::vector<PlantedInstance> instances;
  double drop_rate = 0.0;
  /// Probability that a cued instance also shows a weaker off-center peak.
  double spurious_peak_rate = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(drop_rate >= 0.0 && drop_rate <= 1.0)) throw ValidationError("drop_rate must lie in [0, 1]");
    if (num_classes < 1) throw ValidationError("scene needs at least one class");
    for (const auto& p : instances) {
      if (p.class_id < 1 || p.class_id > num_classes) throw ValidationError("planted class out of range");
      if (!(p.size > 0.0)) throw ValidationError("planted size must be positive");
      const double r = reach(p);
      if (p.center.y - r < 0 || p.center.x - r < 0 || p.center.y + r > grid.height - 1 ||
          p.center.x + r > grid.width - 1)
        throw ValidationError("planted instance does not fit inside the grid");
    }
  }
};

struct Scene {
  InstanceLabelSet truth;
  SemanticMap semantic;
  ActivationStack activations;
  /// Index into truth.instances() of every instance whose cue is withheld.
  std::vector<std::size_t> dropped;
  /// One exact point per cued instance (point-supervision mode).
  PeakCueSet point_cues;
};

inline bool covers(const PlantedInstance& p, int y, int x) {
  const double dy = y - p.center.y;
  const double dx = x - p.center.x;
  switch (p.shape) {
    case Shape::Disc:
      return dy * dy + dx * dx <= p.size * p.size;
    case Shape::Rectangle:
      return std::abs(dy) <= p.size && std::abs(dx) <= p.size * p.aux;
    case Shape::Blob: {
      const double r = std::hypot(dy, dx);
      const double theta = std::atan2(dy, dx);
      return r <= p.size * (1.0 + 0.2 * std::sin(3.0 * theta + p.aux));
    }
  }
  return false;
}

/// Mask pixel closest to `p` (first in raster order on ties).
inline Pixel nearest_member(const PixelSet& mask, const ImageGrid& g, const Point& p) {
  Pixel best{};
  double best_d = -1.0;
  for (auto idx : mask) {
    const double d = (g.row(idx) - p.y) * (g.row(idx) - p.y) + (g.col(idx) - p.x) * (g.col(idx) - p.x);
    if (best_d < 0.0 || d < best_d) {
      best_d = d;
      best = {g.row(idx), g.col(idx)};
    }
  }
  return best;
}

/// Deterministic for a given spec. Later instances paint over earlier ones,
/// so truth masks stay disjoint even when planted shapes overlap.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const auto& g = spec.grid;
  Rng rng(spec.seed);

  std::vector<int> owner(g.size(), -1);
  for (std::size_t n = 0; n < spec.instances.size(); ++n)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x)
        if (covers(spec.instances[n], y, x)) owner[static_cast<std::size_t>(g.index(y, x))] = static_cast<int>(n);

  std::vector<PixelSet> masks(spec.instances.size());
  for (std::size_t i = 0; i < owner.size(); ++i)
    if (owner[i] >= 0) masks[static_cast<std::size_t>(owner[i])].push_back(static_cast<std::int32_t>(i));

  std::vector<Instance> inst;
  std::vector<std::size_t> planted_index;
  Plane<int> labels(g, 0);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].empty()) continue;
    const int c = spec.instances[n].class_id;
    for (auto idx : masks[n]) labels[idx] = c;
    inst.push_back({c, masks[n], centroid(masks[n], g), 1.0});
    planted_index.push_back(n);
  }

  Scene scene;
  scene.truth = InstanceLabelSet(g, inst);
  scene.semantic = SemanticMap(std::move(labels), spec.num_classes);

  std::vector<std::size_t> order(inst.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_drop = static_cast<std::size_t>(std::floor(spec.drop_rate * static_cast<double>(inst.size()) + 0.5));
  std::vector<bool> dropped(inst.size(), false);
  for (std::size_t i = 0; i < n_drop; ++i) dropped[order[i]] = true;
  for (std::size_t i = 0; i < inst.size(); ++i)
    if (dropped[i]) scene.dropped.push_back(i);

  // Activations: a dominant peak per cued instance, sometimes a weaker
  // off-center peak far enough away to form its own local maximum, and a
  // faint noise floor.
  std::vector<Plane<double>> act(static_cast<std::size_t>(spec.num_classes), Plane<double>(g, 0.0));
  for (auto& ch : act)
    for (auto& v : ch.values()) v = 0.02 * rng.uniform();
  auto splat = [&](Plane<double>& ch, double cy, double cx, double amp, double sigma) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const double v = amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) * inv);
        ch(y, x) = std::max(ch(y, x), v);
      }
  };
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto& planted = spec.instances[planted_index[i]];
    const double amp = rng.uniform(0.85, 1.0);
    const bool spurious = rng.uniform() < spec.spurious_peak_rate;
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (dropped[i]) continue;
    auto& ch = act[static_cast<std::size_t>(inst[i].class_id - 1)];
    const auto ctr = inst[i].center;
    splat(ch, ctr.y, ctr.x, amp, std::max(1.0, 0.4 * planted.size));
    scene.point_cues.push_back({inst[i].class_id, nearest_member(inst[i].mask, g, ctr).y,
                                nearest_member(inst[i].mask, g, ctr).x, 1.0});
    if (spurious) {
      // Pick the farthest mask pixel along the drawn direction.
      const double uy = std::sin(angle), ux = std::cos(angle);
      double best = -1.0;
      Pixel at{};
      for (auto idx : inst[i].mask) {
        const double t = (g.row(idx) - ctr.y) * uy + (g.col(idx) - ctr.x) * ux;
        if (t > best) {
          best = t;
          at = {g.row(idx), g.col(idx)};
        }
      }
      if (std::max(std::abs(at.y - ctr.y), std::abs(at.x - ctr.x)) > 3.5)
        splat(ch, at.y, at.x, amp * rng.uniform(0.55, 0.65), 1.0);
    }
  }
  scene.activations = ActivationStack(std::move(act));
  sort_cues(scene.point_cues);
  return scene;
}

/// Layout parameters for randomly drawn scenes.
struct SceneSuiteConfig {
  ImageGrid grid{48, 48};
  int num_classes = 2;
  int min_instances = 3;
  int max_instances = 6;
  double min_size = 5.0;
  double max_size = 8.0;
  std::vector<Shape> shapes{Shape::Disc};
  /// Minimum gap between planted shapes; negative allows overlap.
  double min_gap = 2.0;
  double drop_rate = 0.0;
  double spurious_peak_rate = 0.5;
};

/// Rejection-samples a non-overlapping layout; gives up on an instance after
/// 200 failed placements.
inline SceneSpec random_scene_spec(const SceneSuiteConfig& cfg, std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  SceneSpec spec;
  spec.grid = cfg.grid;
  spec.num_classes = cfg.num_classes;
  spec.drop_rate = cfg.drop_rate;
  spec.spurious_peak_rate = cfg.spurious_peak_rate;
  spec.seed = seed;
  const int n = rng.uniform_int(cfg.min_instances, cfg.max_instances);
  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      PlantedInstance p;
      p.class_id = rng.uniform_int(1, cfg.num_classes);
      p.shape = cfg.shapes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg.shapes.size()) - 1))];
      p.size = rng.uniform(cfg.min_size, cfg.max_size);
      p.aux = p.shape == Shape::Rectangle ? rng.uniform(0.6, 1.4) : rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double rp = reach(p);
      const double lo = rp + 1.0;
      if (cfg.grid.height - 1 - rp - 1.0 <= lo || cfg.grid.width - 1 - rp - 1.0 <= lo) break;
      p.center = {rng.uniform(lo, cfg.grid.height - 1 - rp - 1.0), rng.uniform(lo, cfg.grid.width - 1 - rp - 1.0)};
      bool ok = true;
      if (cfg.min_gap >= 0.0) {
        for (const auto& q : spec.instances) {
          if (std::hypot(p.center.y - q.center.y, p.center.x - q.center.x) < rp + reach(q) + cfg.min_gap) {
            ok = false;
            break;
          }
        }
      }
      if (ok) {
        spec.instances.push_back(p);
        break;
      }
    }
  }
  return spec;
}

}  // namespace wsis
