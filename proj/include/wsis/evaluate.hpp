#pragma once

// Mask AP: greedy matching in descending confidence, all-point interpolated
// precision/recall area per class, mean over classes present in the truth.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "wsis/core.hpp"

namespace wsis {

inline const std::vector<double> kDefaultIouThresholds{0.25, 0.5, 0.7, 0.75};

inline double mask_iou(const PixelSet& a, const PixelSet& b) {
  const auto inter = intersection_size(a, b);
  const auto uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Area under the monotone precision envelope of a ranked TP/FP list.
inline double average_precision(const std::vector<bool>& is_tp, std::size_t num_truth) {
  if (num_truth == 0) return 0.0;
  const std::size_t n = is_tp.size();
  std::vector<double> rec(n + 2, 0.0), prec(n + 2, 0.0);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ++tp;
    rec[i + 1] = static_cast<double>(tp) / static_cast<double>(num_truth);
    prec[i + 1] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  rec[n + 1] = 1.0;
  prec[n + 1] = 0.0;
  for (std::size_t i = n + 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 0; i + 1 < n + 2; ++i) ap += (rec[i + 1] - rec[i]) * prec[i + 1];
  // The sentinel step from the last recall to 1 carries precision 0.
  return ap;
}

struct ThresholdResult {
  double iou_threshold = 0.5;
  double map = 0.0;
  std::map<int, double> ap_per_class;
  std::size_t true_positives = 0;
};

struct EvalResult {
  std::vector<ThresholdResult> per_threshold;
  std::size_t truth_count = 0;
  std::size_t prediction_count = 0;

  [[nodiscard]] const ThresholdResult& at(double iou) const {
    for (const auto& t : per_threshold)
      if (t.iou_threshold == iou) return t;
    throw ValidationError("IoU threshold not evaluated");
  }
};

/// A prediction and its truth for one image.
struct ImagePair {
  const InstanceLabelSet* predicted = nullptr;
  const InstanceLabelSet* truth = nullptr;
};

/// Predictions are ranked by score across images (ties: image order, then
/// instance order). Each one matches the unmatched same-class truth of
/// highest IoU when that IoU reaches the threshold.
inline EvalResult evaluate(const std::vector<ImagePair>& images,
                           const std::vector<double>& iou_thresholds = kDefaultIouThresholds) {
  EvalResult res;
  std::set<int> classes;
  std::map<int, std::size_t> truth_per_class;
  for (const auto& im : images) {
    require_same_grid(im.predicted->grid(), im.truth->grid(), "evaluate");
    for (const auto& t : im.truth->instances()) {
      classes.insert(t.class_id);
      ++truth_per_class[t.class_id];
    }
    res.truth_count += im.truth->size();
    res.prediction_count += im.predicted->size();
  }

  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
  };
  std::map<int, std::vector<Ranked>> ranked;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& preds = images[i].predicted->instances();
    for (std::size_t k = 0; k < preds.size(); ++k) ranked[preds[k].class_id].push_back({preds[k].score, i, k});
  }
  for (auto& [c, list] : ranked)
    std::stable_sort(list.begin(), list.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  for (double thr : iou_thresholds) {
    ThresholdResult tr;
    tr.iou_threshold = thr;
    for (auto& [c, list] : ranked) {
      std::vector<std::vector<bool>> used(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].truth->size(), false);
      std::vector<bool> is_tp;
      for (const auto& r : list) {
        const auto& pred = images[r.image].predicted->instances()[r.index];
        const auto& truths = images[r.image].truth->instances();
        double best = -1.0;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < truths.size(); ++k) {
          if (truths[k].class_id != c || used[r.image][k]) continue;
          const double iou = mask_iou(pred.mask, truths[k].mask);
          if (iou > best) {
            best = iou;
            best_k = k;
          }
        }
        const bool hit = best >= thr;
        if (hit) used[r.image][best_k] = true;
        is_tp.push_back(hit);
      }
      if (classes.count(c)) {
        tr.ap_per_class[c] = average_precision(is_tp, truth_per_class[c]);
        tr.true_positives += static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
      }
    }
    for (int c : classes) tr.ap_per_class.try_emplace(c, 0.0);
    if (!classes.empty()) {
      double sum = 0.0;
      for (const auto& [c, ap] : tr.ap_per_class) sum += ap;
      tr.map = sum / static_cast<double>(classes.size());
    }
    res.per_threshold.push_back(std::move(tr));
  }
  return res;
}

inline EvalResult evaluate(const InstanceLabelSet& predicted, const InstanceLabelSet& truth,
                           const std::vector<double>& iou_thresholds = kDefaultIouThresholds) {
  return evaluate(std::vector<ImagePair>{{&predicted, &truth}}, iou_thresholds);
}

}  // namespace wsis
