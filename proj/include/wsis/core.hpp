#pragma once

// Shared data types for the weakly-supervised instance label pipeline.
//
// Coordinates are (row = y, col = x) with the origin at the top-left pixel.
// Pixel sets are stored as sorted flat row-major indices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wsis {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad NPY header, unsupported PNG colour type).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Rank or extent disagreement between arrays.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a type invariant (NaN payload, label out of range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

struct ImageGrid {
  int height = 0;
  int width = 0;

  ImageGrid() = default;
  ImageGrid(int h, int w) : height(h), width(w) {
    if (h < 1 || w < 1)
      throw ValidationError("image grid must be at least 1x1, got " +
                            std::to_string(h) + "x" + std::to_string(w));
  }

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  [[nodiscard]] bool contains(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }
  [[nodiscard]] std::int32_t index(int y, int x) const { return y * width + x; }
  [[nodiscard]] int row(std::int32_t idx) const { return idx / width; }
  [[nodiscard]] int col(std::int32_t idx) const { return idx % width; }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

inline std::string to_string(const ImageGrid& g) {
  return std::to_string(g.height) + "x" + std::to_string(g.width);
}

inline void require_same_grid(const ImageGrid& a, const ImageGrid& b,
                              const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": grid mismatch " + to_string(a) +
                     " vs " + to_string(b));
}

/// Sub-pixel location.
struct Point {
  double y = 0.0;
  double x = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Integer pixel location.
struct Pixel {
  int y = 0;
  int x = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Sorted, duplicate-free flat pixel indices.
using PixelSet = std::vector<std::int32_t>;

inline void normalize(PixelSet& s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
}

inline PixelSet set_union(const PixelSet& a, const PixelSet& b) {
  PixelSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::size_t intersection_size(const PixelSet& a, const PixelSet& b) {
  std::size_t n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

/// Dense row-major H x W plane.
template <class T>
class Plane {
 public:
  Plane() = default;
  explicit Plane(ImageGrid grid, T fill = T{})
      : grid_(grid), data_(grid.size(), fill) {}
  Plane(ImageGrid grid, std::vector<T> data) : grid_(grid), data_(std::move(data)) {
    if (data_.size() != grid_.size())
      throw ShapeError("plane payload size " + std::to_string(data_.size()) +
                       " does not match grid " + to_string(grid_));
  }

  [[nodiscard]] const ImageGrid& grid() const { return grid_; }
  [[nodiscard]] int height() const { return grid_.height; }
  [[nodiscard]] int width() const { return grid_.width; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  T& operator()(int y, int x) { return data_[grid_.index(y, x)]; }
  const T& operator()(int y, int x) const { return data_[grid_.index(y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] const std::vector<T>& vector() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  ImageGrid grid_;
  std::vector<T> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

/// Per-pixel class labels (0 = background, 1..C = classes). Pixels carrying
/// the ignore label at load time are stored as background and listed in
/// `ignored()`.
class SemanticMap {
 public:
  static constexpr int kIgnoreLabel = 255;

  SemanticMap() = default;
  SemanticMap(Plane<int> labels, int num_classes, PixelSet ignored = {})
      : labels_(std::move(labels)), num_classes_(num_classes), ignored_(std::move(ignored)) {
    if (num_classes_ < 1) throw ValidationError("semantic map needs num_classes >= 1");
    for (int v : labels_.values())
      if (v < 0 || v > num_classes_)
        throw ValidationError("semantic label " + std::to_string(v) +
                              " outside [0, " + std::to_string(num_classes_) + "]");
    normalize(ignored_);
    for (auto idx : ignored_) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= labels_.size())
        throw ValidationError("ignore index out of range");
      if (labels_[idx] != 0)
        throw ValidationError("ignored pixel must carry background label");
    }
  }

  [[nodiscard]] const ImageGrid& grid() const { return labels_.grid(); }
  [[nodiscard]] const Plane<int>& labels() const { return labels_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] const PixelSet& ignored() const { return ignored_; }
  [[nodiscard]] int operator()(int y, int x) const { return labels_(y, x); }
  [[nodiscard]] bool is_ignored(std::int32_t idx) const {
    return std::binary_search(ignored_.begin(), ignored_.end(), idx);
  }

  /// Pixels labelled with `class_id`.
  [[nodiscard]] PixelSet region(int class_id) const {
    PixelSet out;
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == class_id) out.push_back(static_cast<std::int32_t>(i));
    return out;
  }

  friend bool operator==(const SemanticMap&, const SemanticMap&) = default;

 private:
  Plane<int> labels_;
  int num_classes_ = 1;
  PixelSet ignored_;
};

/// Class-wise center heatmaps. Channel `c - 1` holds class `c`.
class CenterMap {
 public:
  CenterMap() = default;
  CenterMap(ImageGrid grid, int num_classes)
      : grid_(grid), channels_(static_cast<std::size_t>(num_classes), Plane<double>(grid)) {
    if (num_classes < 1) throw ValidationError("center map needs at least one class");
  }
  explicit CenterMap(std::vector<Plane<double>> channels) : channels_(std::move(channels)) {
    if (channels_.empty()) throw ValidationError("center map needs at least one class");
    grid_ = channels_.front().grid();
    for (const auto& ch : channels_) {
      require_same_grid(grid_, ch.grid(), "center map");
      for (double v : ch.values())
        if (!(v >= 0.0 && v <= 1.0))
          throw ValidationError("center map value outside [0, 1]");
    }
  }

  [[nodiscard]] const ImageGrid& grid() const { return grid_; }
  [[nodiscard]] int num_classes() const { return static_cast<int>(channels_.size()); }
  [[nodiscard]] const Plane<double>& channel(int class_id) const {
    return channels_.at(static_cast<std::size_t>(class_id - 1));
  }
  Plane<double>& channel(int class_id) { return channels_.at(static_cast<std::size_t>(class_id - 1)); }
  [[nodiscard]] const std::vector<Plane<double>>& channels() const { return channels_; }

  friend bool operator==(const CenterMap&, const CenterMap&) = default;

 private:
  ImageGrid grid_;
  std::vector<Plane<double>> channels_;
};

/// Per-pixel 2D vectors pointing from the pixel toward its instance center.
class OffsetMap {
 public:
  OffsetMap() = default;
  explicit OffsetMap(ImageGrid grid) : dy_(grid), dx_(grid) {}
  OffsetMap(Plane<double> dy, Plane<double> dx) : dy_(std::move(dy)), dx_(std::move(dx)) {
    require_same_grid(dy_.grid(), dx_.grid(), "offset map");
    if (!all_finite(dy_.values()) || !all_finite(dx_.values()))
      throw ValidationError("offset map contains non-finite values");
  }

  [[nodiscard]] const ImageGrid& grid() const { return dy_.grid(); }
  [[nodiscard]] const Plane<double>& dy() const { return dy_; }
  [[nodiscard]] const Plane<double>& dx() const { return dx_; }
  Plane<double>& dy() { return dy_; }
  Plane<double>& dx() { return dx_; }

  friend bool operator==(const OffsetMap&, const OffsetMap&) = default;

 private:
  Plane<double> dy_;
  Plane<double> dx_;
};

struct Instance {
  int class_id = 1;
  PixelSet mask;
  Point center;
  double score = 1.0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Mean pixel position of a non-empty mask.
inline Point centroid(const PixelSet& mask, const ImageGrid& grid) {
  double sy = 0.0;
  double sx = 0.0;
  for (auto idx : mask) {
    sy += grid.row(idx);
    sx += grid.col(idx);
  }
  const auto n = static_cast<double>(mask.size());
  return {sy / n, sx / n};
}

/// Labelled instances plus the guided region (union of their masks).
class InstanceLabelSet {
 public:
  InstanceLabelSet() = default;
  InstanceLabelSet(ImageGrid grid, std::vector<Instance> instances)
      : grid_(grid), instances_(std::move(instances)) {
    std::vector<std::int32_t> owner(grid_.size(), -1);
    for (std::size_t n = 0; n < instances_.size(); ++n) {
      auto& inst = instances_[n];
      normalize(inst.mask);
      if (inst.mask.empty()) throw ValidationError("instance mask must be non-empty");
      if (inst.class_id < 1) throw ValidationError("instance class id must be >= 1");
      if (!(inst.score >= 0.0 && inst.score <= 1.0))
        throw ValidationError("instance score outside [0, 1]");
      int y0 = grid_.height, y1 = -1, x0 = grid_.width, x1 = -1;
      for (auto idx : inst.mask) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= grid_.size())
          throw ValidationError("instance mask pixel outside grid");
        if (owner[idx] >= 0)
          throw ValidationError("instance masks " + std::to_string(owner[idx]) + " and " +
                                std::to_string(n) + " overlap");
        owner[idx] = static_cast<std::int32_t>(n);
        y0 = std::min(y0, grid_.row(idx));
        y1 = std::max(y1, grid_.row(idx));
        x0 = std::min(x0, grid_.col(idx));
        x1 = std::max(x1, grid_.col(idx));
      }
      if (inst.center.y < y0 || inst.center.y > y1 || inst.center.x < x0 || inst.center.x > x1)
        throw ValidationError("instance center outside its mask bounding box");
    }
    for (std::size_t i = 0; i < owner.size(); ++i)
      if (owner[i] >= 0) guided_.push_back(static_cast<std::int32_t>(i));
  }

  [[nodiscard]] const ImageGrid& grid() const { return grid_; }
  [[nodiscard]] const std::vector<Instance>& instances() const { return instances_; }
  [[nodiscard]] const PixelSet& guided_region() const { return guided_; }
  [[nodiscard]] std::size_t size() const { return instances_.size(); }
  [[nodiscard]] bool empty() const { return instances_.empty(); }

  /// Per-pixel instance index + 1 (0 where unlabelled).
  [[nodiscard]] Plane<int> id_map() const {
    Plane<int> ids(grid_, 0);
    for (std::size_t n = 0; n < instances_.size(); ++n)
      for (auto idx : instances_[n].mask) ids[idx] = static_cast<int>(n) + 1;
    return ids;
  }

  friend bool operator==(const InstanceLabelSet&, const InstanceLabelSet&) = default;

 private:
  ImageGrid grid_;
  std::vector<Instance> instances_;
  PixelSet guided_;
};

/// K nonnegative activation planes.
class ActivationStack {
 public:
  ActivationStack() = default;
  explicit ActivationStack(std::vector<Plane<double>> channels) : channels_(std::move(channels)) {
    if (channels_.empty()) throw ValidationError("activation stack needs at least one channel");
    grid_ = channels_.front().grid();
    for (const auto& ch : channels_) {
      require_same_grid(grid_, ch.grid(), "activation stack");
      for (double v : ch.values())
        if (!(v >= 0.0) || !std::isfinite(v))
          throw ValidationError("activation values must be finite and nonnegative");
    }
  }

  [[nodiscard]] const ImageGrid& grid() const { return grid_; }
  [[nodiscard]] int num_channels() const { return static_cast<int>(channels_.size()); }
  [[nodiscard]] const Plane<double>& channel(int k) const {
    return channels_.at(static_cast<std::size_t>(k));
  }
  [[nodiscard]] const std::vector<Plane<double>>& channels() const { return channels_; }

  friend bool operator==(const ActivationStack&, const ActivationStack&) = default;

 private:
  ImageGrid grid_;
  std::vector<Plane<double>> channels_;
};

}  // namespace wsis
