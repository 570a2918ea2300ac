#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "wsis/core.hpp"

namespace wsis {

enum class Connectivity { Four = 4, Eight = 8 };

inline Connectivity connectivity_from_int(int n) {
  if (n == 4) return Connectivity::Four;
  if (n == 8) return Connectivity::Eight;
  throw ValidationError("connectivity must be 4 or 8, got " + std::to_string(n));
}

struct Component {
  int class_id = 0;
  PixelSet pixels;
  [[nodiscard]] std::size_t area() const { return pixels.size(); }
};

struct ComponentSet {
  /// Per-pixel component id, 1-based, 0 for pixels outside the mask.
  Plane<int> ids;
  std::vector<Component> components;
};

namespace detail {

class DisjointSets {
 public:
  int make() {
    parent_.push_back(static_cast<int>(parent_.size()));
    return parent_.back();
  }
  int find(int a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  void join(int a, int b) {
    a = find(a);
    b = find(b);
    // keep the smaller provisional label as root
    if (a < b) parent_[b] = a;
    else if (b < a) parent_[a] = b;
  }

 private:
  std::vector<int> parent_;
};

}  // namespace detail

/// Two-pass union-find labelling of the nonzero pixels of `mask`. Component
/// ids follow the raster order of each component's first pixel.
template <class T>
ComponentSet ccl(const Plane<T>& mask, Connectivity conn = Connectivity::Eight) {
  const int h = mask.height();
  const int w = mask.width();
  Plane<int> prov(mask.grid(), -1);
  detail::DisjointSets ds;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      int label = -1;
      auto take = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const int l = prov(yy, xx);
        if (l < 0) return;
        if (label < 0) label = l;
        else ds.join(label, l);
      };
      take(y, x - 1);
      take(y - 1, x);
      if (conn == Connectivity::Eight) {
        take(y - 1, x - 1);
        take(y - 1, x + 1);
      }
      prov(y, x) = label >= 0 ? label : ds.make();
    }
  }

  ComponentSet out{Plane<int>(mask.grid(), 0), {}};
  std::vector<int> final_id;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = prov(y, x);
      if (l < 0) continue;
      const int root = ds.find(l);
      if (static_cast<std::size_t>(root) >= final_id.size()) final_id.resize(static_cast<std::size_t>(root) + 1, 0);
      if (final_id[static_cast<std::size_t>(root)] == 0) {
        out.components.emplace_back();
        final_id[static_cast<std::size_t>(root)] = static_cast<int>(out.components.size());
      }
      const int id = final_id[static_cast<std::size_t>(root)];
      out.ids(y, x) = id;
      out.components[static_cast<std::size_t>(id - 1)].pixels.push_back(mask.grid().index(y, x));
    }
  }
  return out;
}

}  // namespace wsis
