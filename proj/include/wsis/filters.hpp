#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "wsis/core.hpp"

namespace wsis {

/// Max over the (2r+1)x(2r+1) window clipped to the image (max-pool with
/// -inf padding, stride 1). Separable monotone-deque pass, O(HW).
inline Plane<double> window_max(const Plane<double>& in, int radius) {
  const int h = in.height();
  const int w = in.width();
  Plane<double> tmp(in.grid());
  Plane<double> out(in.grid());
  std::deque<int> q;
  for (int y = 0; y < h; ++y) {
    q.clear();
    int next = 0;
    for (int x = 0; x < w; ++x) {
      const int hi = std::min(w - 1, x + radius);
      for (; next <= hi; ++next) {
        while (!q.empty() && in(y, q.back()) <= in(y, next)) q.pop_back();
        q.push_back(next);
      }
      while (q.front() < x - radius) q.pop_front();
      tmp(y, x) = in(y, q.front());
    }
  }
  for (int x = 0; x < w; ++x) {
    q.clear();
    int next = 0;
    for (int y = 0; y < h; ++y) {
      const int hi = std::min(h - 1, y + radius);
      for (; next <= hi; ++next) {
        while (!q.empty() && tmp(q.back(), x) <= tmp(next, x)) q.pop_back();
        q.push_back(next);
      }
      while (q.front() < y - radius) q.pop_front();
      out(y, x) = tmp(q.front(), x);
    }
  }
  return out;
}

/// Sum over the (2r+1)x(2r+1) window clipped to the image, via an integral
/// image.
template <class T>
Plane<double> box_sum(const Plane<T>& in, int radius) {
  const int h = in.height();
  const int w = in.width();
  std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  auto at = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      row += static_cast<double>(in(y, x));
      at(y + 1, x + 1) = at(y, x + 1) + row;
    }
  }
  Plane<double> out(in.grid());
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - radius);
    const int y1 = std::min(h, y + radius + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - radius);
      const int x1 = std::min(w, x + radius + 1);
      out(y, x) = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
    }
  }
  return out;
}

/// Box mean with a fixed (2r+1)^2 denominator (zero padding outside the
/// image), so the filter is its own adjoint.
inline Plane<double> box_filter(const Plane<double>& in, int radius) {
  if (radius <= 0) return in;
  auto out = box_sum(in, radius);
  const double norm = 1.0 / ((2.0 * radius + 1.0) * (2.0 * radius + 1.0));
  for (auto& v : out.values()) v *= norm;
  return out;
}

/// Separable Gaussian blur, kernel truncated at 3 sigma, zero padding,
/// unnormalized at the border.
inline Plane<double> gaussian_filter(const Plane<double>& in, double sigma) {
  if (!(sigma > 0.0)) return in;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int d = -r; d <= r; ++d) total += k[static_cast<std::size_t>(d + r)] = std::exp(-d * d / (2.0 * sigma * sigma));
  for (auto& v : k) v /= total;
  const auto& g = in.grid();
  Plane<double> tmp(g, 0.0), out(g, 0.0);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double acc = 0.0;
      for (int d = std::max(-r, -x); d <= std::min(r, g.width - 1 - x); ++d)
        acc += k[static_cast<std::size_t>(d + r)] * in(y, x + d);
      tmp(y, x) = acc;
    }
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double acc = 0.0;
      for (int d = std::max(-r, -y); d <= std::min(r, g.height - 1 - y); ++d)
        acc += k[static_cast<std::size_t>(d + r)] * tmp(y + d, x);
      out(y, x) = acc;
    }
  return out;
}

}  // namespace wsis
