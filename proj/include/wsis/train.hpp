#pragma once

// Direct-parameterization stand-in for the instance segmentation network.
//
// Each head is a free per-pixel parameter plane plus a small
// translation-shared linear read-out of fixed features of the input
// foreground. The free planes can memorize any target (including "this
// missing instance is background"); the shared read-out is what carries
// evidence from labelled instances to unlabelled ones.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "wsis/ccl.hpp"
#include "wsis/core.hpp"
#include "wsis/filters.hpp"
#include "wsis/instance_repr.hpp"
#include "wsis/pam.hpp"
#include "wsis/refine.hpp"
#include "wsis/scene.hpp"
#include "wsis/transfer.hpp"

namespace wsis {

struct ModelConfig {
  /// Box radius of the free-parameter gradient smoothing; 0 disables. The
  /// box is applied twice (a tent kernel), which keeps the smoothed step a
  /// descent direction; a single box has negative frequency lobes.
  int smoothing_radius = 2;
  /// Step multipliers relative to the base learning rate. Free-parameter
  /// steps are additionally scaled by the pixel count, since every loss is
  /// a per-pixel mean.
  double rate_center = 0.002;
  double rate_offset = 1.0;
  double rate_sem = 0.05;
  double rate_shared_center = 0.009;
  double rate_shared_offset = 3.0;
  double init_center_logit = -4.0;
  /// Blur widths of the center read-out features; its weights are kept
  /// nonnegative.
  std::vector<double> center_feature_sigmas{2.0, 3.0};
  bool shared_heads = true;
};

/// Fixed read-out features of one scene's input foreground.
struct SceneFeatures {
  ImageGrid grid;
  int num_classes = 1;
  /// [class - 1][sigma index]: blurred class foreground.
  std::vector<PlaneStack> center;
  /// Displacement to the centroid of the pixel's 8-connected same-class
  /// input component (zero on background).
  Plane<double> disp_y;
  Plane<double> disp_x;
};

inline SceneFeatures compute_features(const SemanticMap& input, const ModelConfig& cfg) {
  SceneFeatures f;
  f.grid = input.grid();
  f.num_classes = input.num_classes();
  const auto& g = f.grid;
  f.disp_y = Plane<double>(g, 0.0);
  f.disp_x = Plane<double>(g, 0.0);
  for (int c = 1; c <= f.num_classes; ++c) {
    Plane<double> fg(g, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) fg[i] = input.labels()[i] == c ? 1.0 : 0.0;
    PlaneStack blurred;
    for (double sigma : cfg.center_feature_sigmas) blurred.push_back(gaussian_filter(fg, sigma));
    f.center.push_back(std::move(blurred));
    for (const auto& comp : ccl(fg, Connectivity::Eight).components) {
      const auto ctr = centroid(comp.pixels, g);
      for (auto idx : comp.pixels) {
        f.disp_y[idx] = ctr.y - g.row(idx);
        f.disp_x[idx] = ctr.x - g.col(idx);
      }
    }
  }
  return f;
}

struct TrainState {
  PlaneStack center_params;  // pre-sigmoid, one per class
  Plane<double> dy_params;
  Plane<double> dx_params;
  PlaneStack sem_params;  // logits, background first
  std::vector<double> center_weights;
  double offset_weight = 0.0;
  int iteration = 0;
  Rng rng{0};
};

inline TrainState init_state(const SceneFeatures& f, const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.rng = Rng(seed);
  for (int c = 0; c < f.num_classes; ++c) {
    Plane<double> p(f.grid, cfg.init_center_logit);
    for (auto& v : p.values()) v += 0.01 * (s.rng.uniform() - 0.5);
    s.center_params.push_back(std::move(p));
  }
  s.dy_params = Plane<double>(f.grid, 0.0);
  s.dx_params = Plane<double>(f.grid, 0.0);
  s.sem_params.assign(static_cast<std::size_t>(f.num_classes) + 1, Plane<double>(f.grid, 0.0));
  s.center_weights.assign(cfg.center_feature_sigmas.size(), 0.0);
  return s;
}

struct Outputs {
  CenterMap center;
  OffsetMap offset;
  PlaneStack sem_prob;
  SemanticMap sem_label;
};

inline Outputs forward(const TrainState& s, const SceneFeatures& f, const ModelConfig& cfg) {
  const auto& g = f.grid;
  PlaneStack centers;
  for (int c = 0; c < f.num_classes; ++c) {
    Plane<double> out(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double z = s.center_params[static_cast<std::size_t>(c)][i];
      if (cfg.shared_heads)
        for (std::size_t k = 0; k < s.center_weights.size(); ++k)
          z += s.center_weights[k] * f.center[static_cast<std::size_t>(c)][k][i];
      out[i] = sigmoid(z);
    }
    centers.push_back(std::move(out));
  }
  Plane<double> dy = s.dy_params, dx = s.dx_params;
  if (cfg.shared_heads)
    for (std::size_t i = 0; i < g.size(); ++i) {
      dy[i] += s.offset_weight * f.disp_y[i];
      dx[i] += s.offset_weight * f.disp_x[i];
    }
  auto prob = softmax(s.sem_params);
  Plane<int> label(g, 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    int best = 0;
    for (std::size_t c = 1; c < prob.size(); ++c)
      if (prob[c][i] > prob[static_cast<std::size_t>(best)][i]) best = static_cast<int>(c);
    label[i] = best;
  }
  return {CenterMap(std::move(centers)), OffsetMap(std::move(dy), std::move(dx)), std::move(prob),
          SemanticMap(std::move(label), f.num_classes)};
}

/// Training targets fixed for the whole run.
struct PseudoSupervision {
  PseudoTargets targets;
  SemanticMap semantic;  // semantic pseudo label (the WSSS map)
};

struct TrainFlags {
  bool instance_aware_guidance = true;
  bool refine = true;
};

struct StepResult {
  LossReport losses;
  std::optional<RefinedLabels> refined;
};

inline Plane<double> smooth_gradient(const Plane<double>& g, int radius) {
  return box_filter(box_filter(g, radius), radius);
}

inline PixelSet whole_grid(const ImageGrid& g) {
  PixelSet p(g.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<std::int32_t>(i);
  return p;
}

/// Losses and gradients (with respect to the head outputs) for one step.
inline StepResult evaluate_losses(const Outputs& out, const PseudoSupervision& sup, const RefineConfig& cfg,
                                  const TrainFlags& flags) {
  const auto& g = out.center.grid();
  const int nc = out.center.num_classes();
  StepResult res;
  PixelSet p_pseudo = flags.instance_aware_guidance ? sup.targets.guidance : whole_grid(g);

  CenterMap refined_center(g, nc);
  OffsetMap refined_offset(g);
  PixelSet p_refined;
  Plane<double> w(g, 0.0);
  if (flags.refine) {
    res.refined = build_refined_labels(out.center, out.offset, out.sem_label, cfg);
    refined_center = encode_center_map(res.refined->labels, nc, cfg.sigma);
    refined_offset = encode_offset_map(res.refined->labels);
    w = weight_mask(*res.refined, out.center);
    p_refined = flags.instance_aware_guidance ? res.refined->labels.guided_region() : whole_grid(g);
  }
  const auto lc = loss_center(out.center, sup.targets.center, p_pseudo, refined_center, p_refined, w);
  const auto lo = loss_offset(out.offset, sup.targets.offset, p_pseudo, refined_offset, p_refined, w, cfg.offset_norm);
  const auto ls = loss_sem(out.sem_prob, sup.semantic, cfg.prob_clamp);
  res.losses = total_loss(lc, lo, ls, cfg);
  return res;
}

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// One plain gradient-descent step. Returns the losses at the pre-update
/// parameters.
inline StepResult train_step(TrainState& s, const SceneFeatures& f, const PseudoSupervision& sup,
                             const RefineConfig& cfg, const TrainFlags& flags, double lr, const ModelConfig& mcfg) {
  const auto out = forward(s, f, mcfg);
  auto res = evaluate_losses(out, sup, cfg, flags);
  const auto& L = res.losses;
  if (!std::isfinite(L.total))
    throw DivergenceError("non-finite loss at iteration " + std::to_string(s.iteration));
  const auto& g = f.grid;
  const double n = static_cast<double>(g.size());

  // Chain through the sigmoid center head.
  for (int c = 0; c < f.num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    Plane<double> dz(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = out.center.channel(c + 1)[i];
      dz[i] = L.grad_center[cc][i] * v * (1.0 - v);
    }
    if (mcfg.shared_heads)
      for (std::size_t k = 0; k < s.center_weights.size(); ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += dz[i] * f.center[cc][k][i];
        s.center_weights[k] = std::max(0.0, s.center_weights[k] - lr * mcfg.rate_shared_center * acc);
      }
    const auto sm = smooth_gradient(dz, mcfg.smoothing_radius);
    for (std::size_t i = 0; i < g.size(); ++i) s.center_params[cc][i] -= lr * mcfg.rate_center * n * sm[i];
  }

  if (mcfg.shared_heads) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += L.grad_dy[i] * f.disp_y[i] + L.grad_dx[i] * f.disp_x[i];
    s.offset_weight -= lr * mcfg.rate_shared_offset * acc;
  }
  const auto sdy = smooth_gradient(L.grad_dy, mcfg.smoothing_radius);
  const auto sdx = smooth_gradient(L.grad_dx, mcfg.smoothing_radius);
  for (std::size_t i = 0; i < g.size(); ++i) {
    s.dy_params[i] -= lr * mcfg.rate_offset * n * sdy[i];
    s.dx_params[i] -= lr * mcfg.rate_offset * n * sdx[i];
  }

  // Softmax cross-entropy: logits gradient is sum_c' dL/dp_c' * dp_c'/dz_c.
  const auto& prob = out.sem_prob;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < prob.size(); ++c) dot += L.grad_sem[c][i] * prob[c][i];
    for (std::size_t c = 0; c < prob.size(); ++c) {
      const double dz = prob[c][i] * (L.grad_sem[c][i] - dot);
      s.sem_params[c][i] -= lr * mcfg.rate_sem * n * dz;
    }
  }
  ++s.iteration;
  return res;
}

}  // namespace wsis
