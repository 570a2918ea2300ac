#pragma once

// Online self-refinement: center clustering from offset magnitudes, refined
// label construction, confidence weight mask and the guided losses with
// analytic gradients.

#include <algorithm>
#include <cmath>
#include <vector>

#include "wsis/ccl.hpp"
#include "wsis/core.hpp"
#include "wsis/instance_repr.hpp"

namespace wsis {

using PlaneStack = std::vector<Plane<double>>;

enum class OffsetNorm { L1, Euclidean };

struct RefineConfig {
  double magnitude_threshold = 2.5;
  double area_target = 21.0;
  double area_epsilon = 3.0;
  double lambda_center = 200.0;
  double lambda_offset = 0.01;
  double lambda_sem = 20.0;
  double delta_c = 0.1;
  int nms_kernel = kDefaultNmsKernel;
  double sigma = kDefaultCenterSigma;
  bool use_clustering = true;
  OffsetNorm offset_norm = OffsetNorm::L1;
  double prob_clamp = 1e-12;

  void validate() const {
    if (!(magnitude_threshold > 0.0) || !(area_target > 0.0) || !(area_epsilon > 0.0) ||
        !(delta_c > 0.0) || !(sigma > 0.0))
      throw ValidationError("refine thresholds must be positive");
    if (!(area_epsilon < area_target)) throw ValidationError("area epsilon must be below the area target");
    if (nms_kernel < 1 || nms_kernel % 2 == 0) throw ValidationError("nms kernel must be odd");
  }
};

/// Centroids of the small-magnitude components whose area lies within
/// [area_target - eps, area_target + eps].
inline std::vector<Point> center_clustering(const OffsetMap& offsets, const RefineConfig& cfg = {}) {
  const auto& g = offsets.grid();
  Plane<std::uint8_t> small(g, 0);
  for (std::size_t i = 0; i < g.size(); ++i)
    small[i] = std::hypot(offsets.dy()[i], offsets.dx()[i]) < cfg.magnitude_threshold ? 1 : 0;
  const auto comps = ccl(small, Connectivity::Eight);
  std::vector<Point> out;
  for (const auto& c : comps.components) {
    const auto a = static_cast<double>(c.area());
    if (a >= cfg.area_target - cfg.area_epsilon && a <= cfg.area_target + cfg.area_epsilon)
      out.push_back(centroid(c.pixels, g));
  }
  return out;
}

struct RefinedLabels : DecodedInstances {
  std::size_t extracted = 0;
  std::size_t clustered = 0;
};

/// Extracted centers plus (optionally) offset-clustered centers, grouped over
/// the semantic foreground. A clustered center takes the semantic class at
/// its pixel and is suppressed when an extracted center of that class lies
/// within the nms window.
inline RefinedLabels build_refined_labels(const CenterMap& center_out, const OffsetMap& offset_out,
                                          const SemanticMap& semantic_out, const RefineConfig& cfg = {}) {
  require_same_grid(center_out.grid(), offset_out.grid(), "build_refined_labels");
  require_same_grid(center_out.grid(), semantic_out.grid(), "build_refined_labels");
  auto centers = extract_centers(center_out, cfg.delta_c, cfg.nms_kernel);
  const std::size_t n_extracted = centers.size();
  std::size_t n_clustered = 0;
  if (cfg.use_clustering) {
    const int r = cfg.nms_kernel / 2;
    const auto& g = center_out.grid();
    for (const auto& p : center_clustering(offset_out, cfg)) {
      const int y = static_cast<int>(std::lround(p.y));
      const int x = static_cast<int>(std::lround(p.x));
      if (!g.contains(y, x)) continue;
      const int cls = semantic_out(y, x);
      if (cls <= 0 || cls > center_out.num_classes()) continue;
      bool covered = false;
      for (std::size_t k = 0; k < n_extracted && !covered; ++k)
        covered = centers[k].class_id == cls && std::abs(centers[k].y - y) <= r && std::abs(centers[k].x - x) <= r;
      if (covered) continue;
      centers.push_back({cls, y, x, center_out.channel(cls)(y, x)});
      ++n_clustered;
    }
  }
  RefinedLabels out{group_centers(centers, offset_out, semantic_out.labels())};
  out.extracted = n_extracted;
  out.clustered = n_clustered;
  return out;
}

/// W(i, j) = center confidence of the refined instance covering (i, j).
inline Plane<double> weight_mask(const RefinedLabels& refined, const CenterMap& center_out) {
  Plane<double> w(refined.labels.grid(), 0.0);
  const auto& inst = refined.labels.instances();
  for (std::size_t n = 0; n < inst.size(); ++n) {
    const auto& s = refined.seeds[n];
    const double v = center_out.channel(s.class_id)(s.y, s.x);
    for (auto idx : inst[n].mask) w[idx] = v;
  }
  return w;
}

struct CenterLoss {
  double value = 0.0;
  PlaneStack grad;
};

namespace detail {

inline PlaneStack zero_stack(const ImageGrid& g, int channels) {
  return PlaneStack(static_cast<std::size_t>(channels), Plane<double>(g, 0.0));
}

}  // namespace detail

/// Squared error averaged over the pseudo support plus the W-weighted
/// squared error averaged over the refined support. Empty supports
/// contribute zero.
inline CenterLoss loss_center(const CenterMap& out, const CenterMap& pseudo, const PixelSet& p_pseudo,
                              const CenterMap& refined, const PixelSet& p_refined, const Plane<double>& w) {
  require_same_grid(out.grid(), pseudo.grid(), "loss_center");
  require_same_grid(out.grid(), refined.grid(), "loss_center");
  require_same_grid(out.grid(), w.grid(), "loss_center");
  if (out.num_classes() != pseudo.num_classes() || out.num_classes() != refined.num_classes())
    throw ShapeError("loss_center: channel count mismatch");
  CenterLoss res{0.0, detail::zero_stack(out.grid(), out.num_classes())};
  auto accumulate = [&](const CenterMap& tgt, const PixelSet& support, const Plane<double>* weight) {
    if (support.empty()) return;
    const double inv = 1.0 / static_cast<double>(support.size());
    double sum = 0.0;
    for (int c = 1; c <= out.num_classes(); ++c) {
      const auto& o = out.channel(c);
      const auto& t = tgt.channel(c);
      auto& gr = res.grad[static_cast<std::size_t>(c - 1)];
      for (auto idx : support) {
        const double wt = weight ? (*weight)[idx] : 1.0;
        const double r = o[idx] - t[idx];
        sum += wt * r * r;
        gr[idx] += 2.0 * wt * r * inv;
      }
    }
    res.value += sum * inv;
  };
  accumulate(pseudo, p_pseudo, nullptr);
  accumulate(refined, p_refined, &w);
  return res;
}

struct OffsetLoss {
  double value = 0.0;
  Plane<double> grad_dy;
  Plane<double> grad_dx;
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Absolute error averaged over each support. L1 sums |d dy| + |d dx|;
/// the Euclidean variant uses the vector norm. Subgradient 0 at zero.
inline OffsetLoss loss_offset(const OffsetMap& out, const OffsetMap& pseudo, const PixelSet& p_pseudo,
                              const OffsetMap& refined, const PixelSet& p_refined, const Plane<double>& w,
                              OffsetNorm norm = OffsetNorm::L1) {
  require_same_grid(out.grid(), pseudo.grid(), "loss_offset");
  require_same_grid(out.grid(), refined.grid(), "loss_offset");
  require_same_grid(out.grid(), w.grid(), "loss_offset");
  OffsetLoss res{0.0, Plane<double>(out.grid(), 0.0), Plane<double>(out.grid(), 0.0)};
  auto accumulate = [&](const OffsetMap& tgt, const PixelSet& support, const Plane<double>* weight) {
    if (support.empty()) return;
    const double inv = 1.0 / static_cast<double>(support.size());
    double sum = 0.0;
    for (auto idx : support) {
      const double wt = weight ? (*weight)[idx] : 1.0;
      const double ry = out.dy()[idx] - tgt.dy()[idx];
      const double rx = out.dx()[idx] - tgt.dx()[idx];
      if (norm == OffsetNorm::L1) {
        sum += wt * (std::abs(ry) + std::abs(rx));
        res.grad_dy[idx] += wt * sign0(ry) * inv;
        res.grad_dx[idx] += wt * sign0(rx) * inv;
      } else {
        const double n = std::hypot(ry, rx);
        sum += wt * n;
        if (n > 0.0) {
          res.grad_dy[idx] += wt * ry / n * inv;
          res.grad_dx[idx] += wt * rx / n * inv;
        }
      }
    }
    res.value += sum * inv;
  };
  accumulate(pseudo, p_pseudo, nullptr);
  accumulate(refined, p_refined, &w);
  return res;
}

struct SemLoss {
  double value = 0.0;
  /// Gradient with respect to the probabilities (or logits, see
  /// loss_sem_logits).
  PlaneStack grad;
  std::size_t clamped = 0;
};

/// Channel 0 is background, channel c is class c.
inline PixelSet semantic_support(const SemanticMap& pseudo_sem) {
  PixelSet p;
  const auto& ign = pseudo_sem.ignored();
  auto it = ign.begin();
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(pseudo_sem.grid().size()); ++i) {
    while (it != ign.end() && *it < i) ++it;
    if (it != ign.end() && *it == i) continue;
    p.push_back(i);
  }
  return p;
}

/// Mean negative log probability of the pseudo class over non-ignored pixels.
inline SemLoss loss_sem(const PlaneStack& prob, const SemanticMap& pseudo_sem, double clamp = 1e-12) {
  if (prob.size() != static_cast<std::size_t>(pseudo_sem.num_classes()) + 1)
    throw ShapeError("loss_sem: expected " + std::to_string(pseudo_sem.num_classes() + 1) + " probability planes");
  for (const auto& p : prob) require_same_grid(p.grid(), pseudo_sem.grid(), "loss_sem");
  SemLoss res{0.0, detail::zero_stack(pseudo_sem.grid(), static_cast<int>(prob.size())), 0};
  const auto support = semantic_support(pseudo_sem);
  if (support.empty()) return res;
  const double inv = 1.0 / static_cast<double>(support.size());
  double sum = 0.0;
  for (auto idx : support) {
    const auto y = static_cast<std::size_t>(pseudo_sem.labels()[idx]);
    double s = prob[y][idx];
    if (s < clamp) {
      s = clamp;
      ++res.clamped;
      // flat below the clamp
    } else {
      res.grad[y][idx] = -inv / s;
    }
    sum -= std::log(s);
  }
  res.value = sum * inv;
  return res;
}

/// Per-pixel softmax over the channel axis.
inline PlaneStack softmax(const PlaneStack& logits) {
  PlaneStack out = logits;
  const std::size_t n = logits.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits[0][i];
    for (const auto& l : logits) m = std::max(m, l[i]);
    double z = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
      out[c][i] = std::exp(logits[c][i] - m);
      z += out[c][i];
    }
    for (auto& o : out) o[i] /= z;
  }
  return out;
}

/// loss_sem composed with softmax; gradient with respect to the logits.
inline SemLoss loss_sem_logits(const PlaneStack& logits, const SemanticMap& pseudo_sem, double clamp = 1e-12) {
  const auto prob = softmax(logits);
  auto res = loss_sem(prob, pseudo_sem, clamp);
  for (auto& g : res.grad) g.fill(0.0);
  const auto support = semantic_support(pseudo_sem);
  if (support.empty()) return res;
  const double inv = 1.0 / static_cast<double>(support.size());
  for (auto idx : support) {
    const auto y = static_cast<std::size_t>(pseudo_sem.labels()[idx]);
    for (std::size_t c = 0; c < prob.size(); ++c)
      res.grad[c][idx] = (prob[c][idx] - (c == y ? 1.0 : 0.0)) * inv;
  }
  return res;
}

struct LossReport {
  double l_center = 0.0;
  double l_offset = 0.0;
  double l_sem = 0.0;
  double total = 0.0;
  PlaneStack grad_center;
  Plane<double> grad_dy;
  Plane<double> grad_dx;
  PlaneStack grad_sem;
};

/// Weighted sum of the three terms; gradients scaled by the same weights.
inline LossReport total_loss(const CenterLoss& center, const OffsetLoss& offset, const SemLoss& sem,
                             const RefineConfig& cfg = {}) {
  LossReport r;
  r.l_center = center.value;
  r.l_offset = offset.value;
  r.l_sem = sem.value;
  r.total = cfg.lambda_center * center.value + cfg.lambda_offset * offset.value + cfg.lambda_sem * sem.value;
  auto scaled = [](Plane<double> p, double s) {
    for (auto& v : p.values()) v *= s;
    return p;
  };
  for (const auto& g : center.grad) r.grad_center.push_back(scaled(g, cfg.lambda_center));
  r.grad_dy = scaled(offset.grad_dy, cfg.lambda_offset);
  r.grad_dx = scaled(offset.grad_dx, cfg.lambda_offset);
  for (const auto& g : sem.grad) r.grad_sem.push_back(scaled(g, cfg.lambda_sem));
  return r;
}

}  // namespace wsis
