#pragma once

// Peak attention: per-channel boundary tau = max(X) * sigmoid(W * mean(X) + b);
// activations below tau are zeroed. Instance cues are the local maxima of the
// normalized result.

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>
#include <vector>

#include "wsis/core.hpp"
#include "wsis/instance_repr.hpp"

namespace wsis {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Controller parameters of the fully connected layer f(.; theta).
class PamParams {
 public:
  PamParams() = default;
  PamParams(int channels, std::vector<double> weights, std::vector<double> bias)
      : k_(channels), weights_(std::move(weights)), bias_(std::move(bias)) {
    if (k_ < 1) throw ValidationError("PAM needs at least one channel");
    if (weights_.size() != static_cast<std::size_t>(k_) * k_)
      throw ShapeError("PAM weights must be K x K (K = " + std::to_string(k_) + ")");
    if (bias_.size() != static_cast<std::size_t>(k_)) throw ShapeError("PAM bias must have K entries");
    if (!all_finite(weights_) || !all_finite(bias_)) throw ValidationError("PAM parameters must be finite");
  }

  /// Zero weights with constant bias: every channel gets G = sigmoid(bias).
  static PamParams constant(int channels, double bias) {
    return {channels, std::vector<double>(static_cast<std::size_t>(channels) * channels, 0.0),
            std::vector<double>(static_cast<std::size_t>(channels), bias)};
  }

  [[nodiscard]] int channels() const { return k_; }
  [[nodiscard]] double weight(int row, int col) const { return weights_[static_cast<std::size_t>(row) * k_ + col]; }
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }
  [[nodiscard]] const std::vector<double>& bias() const { return bias_; }
  std::vector<double>& weights() { return weights_; }
  std::vector<double>& bias() { return bias_; }

  friend bool operator==(const PamParams&, const PamParams&) = default;

 private:
  int k_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Intermediate quantities of one forward pass, per channel.
struct PamTrace {
  std::vector<double> selector;    // spatial max
  std::vector<double> pooled;      // spatial mean
  std::vector<double> control;     // sigmoid(f(pooled))
  std::vector<double> boundary;    // selector * control
};

inline PamTrace pam_trace(const ActivationStack& x, const PamParams& params) {
  if (x.num_channels() != params.channels())
    throw ShapeError("PAM parameters expect " + std::to_string(params.channels()) +
                     " channels, stack has " + std::to_string(x.num_channels()));
  const int k = x.num_channels();
  PamTrace t;
  for (const auto& ch : x.channels()) {
    const auto v = ch.values();
    t.selector.push_back(*std::max_element(v.begin(), v.end()));
    double sum = 0.0;
    for (double a : v) sum += a;
    t.pooled.push_back(sum / static_cast<double>(v.size()));
  }
  for (int r = 0; r < k; ++r) {
    double z = params.bias()[static_cast<std::size_t>(r)];
    for (int c = 0; c < k; ++c) z += params.weight(r, c) * t.pooled[static_cast<std::size_t>(c)];
    t.control.push_back(sigmoid(z));
    t.boundary.push_back(t.selector[static_cast<std::size_t>(r)] * t.control.back());
  }
  return t;
}

inline ActivationStack pam_forward(const ActivationStack& x, const PamParams& params) {
  const auto t = pam_trace(x, params);
  std::vector<Plane<double>> out;
  for (int k = 0; k < x.num_channels(); ++k) {
    auto ch = x.channel(k);
    const double tau = t.boundary[static_cast<std::size_t>(k)];
    for (auto& v : ch.values())
      if (v < tau) v = 0.0;
    out.push_back(std::move(ch));
  }
  return ActivationStack(std::move(out));
}

/// Gate used when differentiating the transform with respect to the
/// controller. The hard gate has zero derivative almost everywhere; the
/// relaxed gate replaces [X >= tau] by sigmoid((X - tau) / temperature).
struct GateModel {
  bool relaxed = true;
  double temperature = 0.05;
};

struct PamGradient {
  std::vector<double> d_weights;  // K x K row-major
  std::vector<double> d_bias;
  double loss = 0.0;
};

/// Sum of squared gated activations and its analytic gradient with respect
/// to the controller parameters.
inline PamGradient pam_sum_of_squares_gradient(const ActivationStack& x, const PamParams& params,
                                               const GateModel& gate = {}) {
  const auto t = pam_trace(x, params);
  const int k = x.num_channels();
  PamGradient g;
  g.d_weights.assign(static_cast<std::size_t>(k) * k, 0.0);
  g.d_bias.assign(static_cast<std::size_t>(k), 0.0);
  for (int ch = 0; ch < k; ++ch) {
    const double tau = t.boundary[static_cast<std::size_t>(ch)];
    double d_tau = 0.0;
    for (double v : x.channel(ch).values()) {
      if (gate.relaxed) {
        const double s = sigmoid((v - tau) / gate.temperature);
        const double out = v * s;
        g.loss += out * out;
        // d(out^2)/dtau = 2 out * v * s(1-s) * (-1/T)
        d_tau += -2.0 * out * v * s * (1.0 - s) / gate.temperature;
      } else if (v >= tau) {
        g.loss += v * v;
      }
    }
    const double G = t.control[static_cast<std::size_t>(ch)];
    const double d_z = d_tau * t.selector[static_cast<std::size_t>(ch)] * G * (1.0 - G);
    g.d_bias[static_cast<std::size_t>(ch)] = d_z;
    for (int c = 0; c < k; ++c)
      g.d_weights[static_cast<std::size_t>(ch) * k + c] = d_z * t.pooled[static_cast<std::size_t>(c)];
  }
  return g;
}

struct GradientReport {
  std::vector<double> analytic;  // weights then bias
  std::vector<double> numeric;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

/// Relative error with an absolute floor so that two tiny values compare as
/// equal.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares the analytic controller gradient against central differences of
/// `loss(pam params)` with step h.
inline GradientReport pam_backward_check(const ActivationStack& x, const PamParams& params,
                                         const GateModel& gate = {}, double h = 1e-5) {
  const auto analytic = pam_sum_of_squares_gradient(x, params, gate);
  GradientReport rep;
  rep.analytic = analytic.d_weights;
  rep.analytic.insert(rep.analytic.end(), analytic.d_bias.begin(), analytic.d_bias.end());

  auto eval = [&](const PamParams& p) { return pam_sum_of_squares_gradient(x, p, gate).loss; };
  const std::size_t nw = params.weights().size();
  for (std::size_t i = 0; i < rep.analytic.size(); ++i) {
    PamParams plus = params;
    PamParams minus = params;
    double& vp = i < nw ? plus.weights()[i] : plus.bias()[i - nw];
    double& vm = i < nw ? minus.weights()[i] : minus.bias()[i - nw];
    vp += h;
    vm -= h;
    const double num = (eval(plus) - eval(minus)) / (2.0 * h);
    rep.numeric.push_back(num);
    rep.max_absolute_error = std::max(rep.max_absolute_error, std::abs(num - rep.analytic[i]));
    rep.max_relative_error = std::max(rep.max_relative_error, relative_error(rep.analytic[i], num));
  }
  return rep;
}

struct PeakCue {
  int class_id = 1;
  int y = 0;
  int x = 0;
  double score = 1.0;

  friend bool operator==(const PeakCue&, const PeakCue&) = default;
};

using PeakCueSet = std::vector<PeakCue>;

inline constexpr double kDefaultCueThreshold = 0.5;

inline void sort_cues(PeakCueSet& cues) {
  std::sort(cues.begin(), cues.end(), [](const PeakCue& a, const PeakCue& b) {
    return std::tuple(a.class_id, -a.score, a.y, a.x) < std::tuple(b.class_id, -b.score, b.y, b.x);
  });
}

/// Channel k carries class k + 1. Each channel is divided by its max; local
/// maxima above `delta_p` become cues. Constant channels yield none.
inline PeakCueSet extract_instance_cues(const ActivationStack& activations,
                                        double delta_p = kDefaultCueThreshold,
                                        int nms_kernel = kDefaultNmsKernel) {
  PeakCueSet cues;
  for (int k = 0; k < activations.num_channels(); ++k) {
    const auto& ch = activations.channel(k);
    const auto [lo, hi] = std::minmax_element(ch.values().begin(), ch.values().end());
    if (*hi <= 0.0 || *hi == *lo) continue;
    Plane<double> norm = ch;
    for (auto& v : norm.values()) v /= *hi;
    for (const auto& p : window_peaks(norm, delta_p, nms_kernel))
      cues.push_back({k + 1, p.y, p.x, norm(p.y, p.x)});
  }
  sort_cues(cues);
  return cues;
}

}  // namespace wsis
