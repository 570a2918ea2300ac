#pragma once

// Semantic knowledge transfer: a connected component of a class region in
// the semantic map becomes a pseudo instance iff it holds exactly one cue of
// that class.

#include <map>
#include <vector>

#include "wsis/ccl.hpp"
#include "wsis/core.hpp"
#include "wsis/instance_repr.hpp"
#include "wsis/pam.hpp"

namespace wsis {

struct TransferConfig {
  Connectivity connectivity = Connectivity::Eight;
  /// Components smaller than this are dropped before cue counting.
  std::size_t min_area = 16;
};

struct ClassTransferCounts {
  std::size_t components = 0;
  std::size_t adopted = 0;
  std::size_t no_cue = 0;
  std::size_t multi_cue = 0;
  std::size_t too_small = 0;

  friend bool operator==(const ClassTransferCounts&, const ClassTransferCounts&) = default;
};

struct TransferDiagnostics {
  std::map<int, ClassTransferCounts> per_class;
  /// Cues whose pixel does not carry the cue's class in the semantic map.
  std::size_t stray_cues = 0;
  /// Pixels of every rejected component (any reason).
  PixelSet rejected_pixels;

  [[nodiscard]] ClassTransferCounts totals() const {
    ClassTransferCounts t;
    for (const auto& [c, n] : per_class) {
      t.components += n.components;
      t.adopted += n.adopted;
      t.no_cue += n.no_cue;
      t.multi_cue += n.multi_cue;
      t.too_small += n.too_small;
    }
    return t;
  }
};

struct TransferResult {
  InstanceLabelSet labels;
  TransferDiagnostics diagnostics;
};

/// Throws ValidationError for cues outside the grid or with a class id
/// outside [1, num_classes].
inline void validate_cues(const PeakCueSet& cues, const ImageGrid& grid, int num_classes) {
  for (const auto& c : cues) {
    if (!grid.contains(c.y, c.x))
      throw ValidationError("cue (" + std::to_string(c.y) + ", " + std::to_string(c.x) +
                            ") lies outside the " + to_string(grid) + " grid");
    if (c.class_id < 1 || c.class_id > num_classes)
      throw ValidationError("cue class " + std::to_string(c.class_id) + " outside [1, " +
                            std::to_string(num_classes) + "]");
  }
}

inline TransferResult transfer_knowledge(const SemanticMap& wsss, const PeakCueSet& cues,
                                         const TransferConfig& cfg = {}) {
  const auto& grid = wsss.grid();
  validate_cues(cues, grid, wsss.num_classes());

  TransferResult res;
  std::vector<Instance> adopted;
  for (int c = 1; c <= wsss.num_classes(); ++c) {
    Plane<std::uint8_t> region(grid, 0);
    bool any = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (wsss.labels()[i] == c) {
        region[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    const auto comps = ccl(region, cfg.connectivity);
    auto& counts = res.diagnostics.per_class[c];
    counts.components = comps.components.size();

    std::vector<int> cue_count(comps.components.size(), 0);
    for (const auto& cue : cues) {
      if (cue.class_id != c) continue;
      const int id = comps.ids(cue.y, cue.x);
      if (id == 0) {
        ++res.diagnostics.stray_cues;
        continue;
      }
      ++cue_count[static_cast<std::size_t>(id - 1)];
    }
    for (std::size_t k = 0; k < comps.components.size(); ++k) {
      const auto& comp = comps.components[k];
      bool keep = false;
      if (comp.area() < cfg.min_area) ++counts.too_small;
      else if (cue_count[k] == 0) ++counts.no_cue;
      else if (cue_count[k] >= 2) ++counts.multi_cue;
      else keep = true;

      if (keep) {
        ++counts.adopted;
        adopted.push_back({c, comp.pixels, centroid(comp.pixels, grid), 1.0});
      } else {
        auto& rej = res.diagnostics.rejected_pixels;
        rej.insert(rej.end(), comp.pixels.begin(), comp.pixels.end());
      }
    }
  }
  normalize(res.diagnostics.rejected_pixels);
  res.labels = InstanceLabelSet(grid, std::move(adopted));
  return res;
}

/// Pseudo center/offset targets and the guided pixel set.
struct PseudoTargets {
  CenterMap center;
  OffsetMap offset;
  PixelSet guidance;
};

inline PseudoTargets labels_to_targets(const InstanceLabelSet& labels, int num_classes,
                                       double sigma = kDefaultCenterSigma) {
  return {encode_center_map(labels, num_classes, sigma), encode_offset_map(labels), labels.guided_region()};
}

}  // namespace wsis
