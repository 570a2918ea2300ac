#pragma once

// Center/offset instance representation: encoding labelled instances into
// class-wise Gaussian center maps and offset fields, and decoding network
// outputs back into instances by center extraction and nearest-center
// grouping.

#include <cmath>
#include <vector>

#include "wsis/core.hpp"
#include "wsis/filters.hpp"

namespace wsis {

inline constexpr double kDefaultCenterSigma = 8.0;
inline constexpr double kDefaultCenterThreshold = 0.1;
inline constexpr int kDefaultNmsKernel = 7;

struct CenterPoint {
  int class_id = 1;
  int y = 0;
  int x = 0;
  double score = 0.0;

  friend bool operator==(const CenterPoint&, const CenterPoint&) = default;
};

/// Class-wise unnormalized Gaussian heatmaps, combined by per-pixel max.
inline CenterMap encode_center_map(const InstanceLabelSet& labels, int num_classes,
                                   double sigma = kDefaultCenterSigma) {
  if (!(sigma > 0.0)) throw ValidationError("center sigma must be positive");
  CenterMap out(labels.grid(), num_classes);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& inst : labels.instances()) {
    if (inst.class_id > num_classes)
      throw ValidationError("instance class " + std::to_string(inst.class_id) +
                            " exceeds num_classes " + std::to_string(num_classes));
    auto& ch = out.channel(inst.class_id);
    for (int y = 0; y < ch.height(); ++y) {
      const double ddy = y - inst.center.y;
      for (int x = 0; x < ch.width(); ++x) {
        const double ddx = x - inst.center.x;
        const double v = std::exp(-(ddy * ddy + ddx * ddx) * inv);
        if (v > ch(y, x)) ch(y, x) = v;
      }
    }
  }
  return out;
}

/// Offsets toward each instance's center inside its mask, zero elsewhere.
/// The guided (supervised) region is `labels.guided_region()`.
inline OffsetMap encode_offset_map(const InstanceLabelSet& labels) {
  OffsetMap out(labels.grid());
  const auto& g = labels.grid();
  for (const auto& inst : labels.instances()) {
    for (auto idx : inst.mask) {
      out.dy()[idx] = inst.center.y - g.row(idx);
      out.dx()[idx] = inst.center.x - g.col(idx);
    }
  }
  return out;
}

/// Local maxima of one plane: value equals the clipped window max, exceeds
/// `threshold`, and no lexicographically smaller pixel in the window ties it.
/// Results are in raster order.
inline std::vector<Pixel> window_peaks(const Plane<double>& plane, double threshold, int nms_kernel) {
  if (nms_kernel < 1 || nms_kernel % 2 == 0) throw ValidationError("nms kernel must be odd and >= 1");
  const int r = nms_kernel / 2;
  const auto wmax = window_max(plane, r);
  std::vector<Pixel> peaks;
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) {
      const double v = plane(y, x);
      if (!(v > threshold) || v != wmax(y, x)) continue;
      bool earlier_tie = false;
      for (int yy = std::max(0, y - r); yy <= y && !earlier_tie; ++yy) {
        const int x_end = yy < y ? std::min(plane.width() - 1, x + r) : x - 1;
        for (int xx = std::max(0, x - r); xx <= x_end; ++xx) {
          if (plane(yy, xx) == v) {
            earlier_tie = true;
            break;
          }
        }
      }
      if (!earlier_tie) peaks.push_back({y, x});
    }
  }
  return peaks;
}

inline std::vector<CenterPoint> extract_centers(const CenterMap& center_map,
                                                double score_threshold = kDefaultCenterThreshold,
                                                int nms_kernel = kDefaultNmsKernel) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw ValidationError("center score threshold must lie in [0, 1]");
  std::vector<CenterPoint> out;
  for (int c = 1; c <= center_map.num_classes(); ++c) {
    const auto& ch = center_map.channel(c);
    for (const auto& p : window_peaks(ch, score_threshold, nms_kernel))
      out.push_back({c, p.y, p.x, ch(p.y, p.x)});
  }
  return out;
}

struct GroupingResult {
  /// 1-based index into the center list; 0 for background or unassigned.
  Plane<int> ids;
  /// Foreground pixels whose class had no center.
  std::size_t unassigned = 0;
};

/// Nearest same-class center to (pixel + offset); ties go to the earlier
/// center in input order.
inline GroupingResult group_instances(const std::vector<CenterPoint>& centers,
                                      const OffsetMap& offsets, const Plane<int>& foreground) {
  require_same_grid(offsets.grid(), foreground.grid(), "group_instances");
  int max_class = 0;
  for (int v : foreground.values()) max_class = std::max(max_class, v);
  for (const auto& c : centers) max_class = std::max(max_class, c.class_id);

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(max_class) + 1);
  for (std::size_t k = 0; k < centers.size(); ++k)
    by_class[static_cast<std::size_t>(centers[k].class_id)].push_back(static_cast<int>(k));

  GroupingResult res{Plane<int>(foreground.grid(), 0), 0};
  const auto& g = foreground.grid();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int cls = foreground[i];
    if (cls <= 0) continue;
    const auto& cand = by_class[static_cast<std::size_t>(cls)];
    if (cand.empty()) {
      ++res.unassigned;
      continue;
    }
    const double py = g.row(static_cast<std::int32_t>(i)) + offsets.dy()[i];
    const double px = g.col(static_cast<std::int32_t>(i)) + offsets.dx()[i];
    int best = -1;
    double best_d = 0.0;
    for (int k : cand) {
      const double ey = centers[static_cast<std::size_t>(k)].y - py;
      const double ex = centers[static_cast<std::size_t>(k)].x - px;
      const double d = ey * ey + ex * ex;
      if (best < 0 || d < best_d) {
        best = k;
        best_d = d;
      }
    }
    res.ids[i] = best + 1;
  }
  return res;
}

struct DecodeConfig {
  double center_threshold = kDefaultCenterThreshold;
  int nms_kernel = kDefaultNmsKernel;
};

/// Instances built from grouped pixels, with the center that generated each.
struct DecodedInstances {
  InstanceLabelSet labels;
  /// Parallel to labels.instances().
  std::vector<CenterPoint> seeds;
};

/// Groups the foreground onto `centers`. Empty groups are dropped; each
/// instance center is its mask centroid and its score the seed's value.
inline DecodedInstances group_centers(const std::vector<CenterPoint>& centers, const OffsetMap& offsets,
                                      const Plane<int>& foreground) {
  const auto grouping = group_instances(centers, offsets, foreground);
  const auto& g = foreground.grid();
  std::vector<PixelSet> masks(centers.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (grouping.ids[i] > 0)
      masks[static_cast<std::size_t>(grouping.ids[i] - 1)].push_back(static_cast<std::int32_t>(i));
  DecodedInstances out;
  std::vector<Instance> inst;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    if (masks[k].empty()) continue;
    const auto ctr = centroid(masks[k], g);
    inst.push_back({centers[k].class_id, std::move(masks[k]), ctr, std::clamp(centers[k].score, 0.0, 1.0)});
    out.seeds.push_back(centers[k]);
  }
  out.labels = InstanceLabelSet(g, std::move(inst));
  return out;
}

inline InstanceLabelSet decode_instances(const CenterMap& center_map, const OffsetMap& offsets,
                                         const SemanticMap& semantic, const DecodeConfig& cfg = {}) {
  require_same_grid(center_map.grid(), offsets.grid(), "decode_instances");
  require_same_grid(center_map.grid(), semantic.grid(), "decode_instances");
  const auto centers = extract_centers(center_map, cfg.center_threshold, cfg.nms_kernel);
  return group_centers(centers, offsets, semantic.labels()).labels;
}

}  // namespace wsis
