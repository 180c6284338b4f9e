#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"

namespace semdepth {

/// Discretization of the metric depth range into num_bins bins of bin_length
/// meters each. The range ceiling is num_bins * bin_length.
struct DepthBinning {
  int num_bins = 0;
  double bin_length = 0.0;

  double ceiling() const { return num_bins * bin_length; }
  void validate() const {
    if (num_bins < 2) throw std::invalid_argument("DepthBinning: num_bins must be >= 2");
    if (!(bin_length > 0.0)) throw std::invalid_argument("DepthBinning: bin_length must be > 0");
  }
};

struct JointLossConfig {
  double lambda = 1.0;  // weight on the semantic term

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("JointLossConfig: lambda must be >= 0");
  }
};

struct SemanticLossResult {
  double loss_sum = 0.0;   // accumulated over counted pixels; this drives training
  double loss_mean = 0.0;  // per-pixel mean, for reporting
  int counted_pixels = 0;
  Grid grad;  // d(loss_sum)/d(logits); zero at ignored pixels
};

/// Per-pixel multinomial logistic loss over the semantic logits, accumulated
/// over pixels whose ground-truth label is not the ignore sentinel. The
/// gradient at a counted pixel is softmax(logits) minus the one-hot truth.
inline SemanticLossResult semantic_loss(const Grid& seg_logits, const LabelMap& truth) {
  if (seg_logits.height != truth.height || seg_logits.width != truth.width) {
    throw std::invalid_argument("semantic_loss: logits and truth shapes differ");
  }
  require_finite(seg_logits, "semantic_loss");
  const int c_count = seg_logits.channels;
  SemanticLossResult r;
  r.grad = Grid(seg_logits.height, seg_logits.width, c_count);
  for (int y = 0; y < truth.height; ++y) {
    for (int x = 0; x < truth.width; ++x) {
      std::uint8_t label = truth.at(y, x);
      if (label == kIgnoreLabel) continue;
      if (label >= c_count) {
        throw std::invalid_argument("semantic_loss: label " + std::to_string(label) +
                                    " out of range at pixel (y=" + std::to_string(y) +
                                    ", x=" + std::to_string(x) + ")");
      }
      double m = seg_logits.at(y, x, 0);
      for (int c = 1; c < c_count; ++c) m = std::max(m, seg_logits.at(y, x, c));
      double sum = 0.0;
      for (int c = 0; c < c_count; ++c) sum += std::exp(seg_logits.at(y, x, c) - m);
      double log_z = m + std::log(sum);
      r.loss_sum += log_z - seg_logits.at(y, x, label);
      for (int c = 0; c < c_count; ++c) {
        r.grad.at(y, x, c) = std::exp(seg_logits.at(y, x, c) - m) / sum;
      }
      r.grad.at(y, x, label) -= 1.0;
      ++r.counted_pixels;
    }
  }
  r.loss_mean = r.counted_pixels > 0 ? r.loss_sum / r.counted_pixels : 0.0;
  return r;
}

/// Negative log-likelihood evaluated directly on probabilities (the refined
/// marginals after inference, instead of raw logits). Returns the gradient
/// with respect to the probabilities.
struct ProbNllResult {
  double loss_sum = 0.0;
  int counted_pixels = 0;
  Grid grad;
};

inline ProbNllResult nll_on_probs(const Grid& probs, const LabelMap& truth) {
  if (probs.height != truth.height || probs.width != truth.width) {
    throw std::invalid_argument("nll_on_probs: probs and truth shapes differ");
  }
  constexpr double kFloor = 1e-12;
  ProbNllResult r;
  r.grad = Grid(probs.height, probs.width, probs.channels);
  for (int y = 0; y < truth.height; ++y) {
    for (int x = 0; x < truth.width; ++x) {
      std::uint8_t label = truth.at(y, x);
      if (label == kIgnoreLabel) continue;
      if (label >= probs.channels) {
        throw std::invalid_argument("nll_on_probs: label out of range");
      }
      double p = std::max(probs.at(y, x, label), kFloor);
      r.loss_sum += -std::log(p);
      r.grad.at(y, x, label) = -1.0 / p;
      ++r.counted_pixels;
    }
  }
  return r;
}

/// Decodes per-bin probabilities into continuous depth as the expectation of
/// the bin centers b * bin_length, b = 1..num_bins. Rows must already be
/// normalized to within 1e-5.
inline DepthMap depth_expectation(const Grid& depth_probs, const DepthBinning& binning) {
  binning.validate();
  if (depth_probs.channels != binning.num_bins) {
    throw std::invalid_argument("depth_expectation: channel count " +
                                std::to_string(depth_probs.channels) + " != num_bins " +
                                std::to_string(binning.num_bins));
  }
  DepthMap out(depth_probs.height, depth_probs.width, 0.0, true);
  const double l = binning.bin_length;
  for (int y = 0; y < depth_probs.height; ++y) {
    for (int x = 0; x < depth_probs.width; ++x) {
      double sum = 0.0;
      double d = 0.0;
      for (int b = 0; b < binning.num_bins; ++b) {
        double p = depth_probs.at(y, x, b);
        sum += p;
        d += static_cast<double>(b + 1) * l * p;
      }
      if (std::abs(sum - 1.0) > 1e-5) {
        throw std::invalid_argument("depth_expectation: probabilities at pixel (y=" +
                                    std::to_string(y) + ", x=" + std::to_string(x) +
                                    ") sum to " + std::to_string(sum));
      }
      out.at(y, x) = std::clamp(d, l, binning.ceiling());
    }
  }
  return out;
}

struct ScaleInvariantResult {
  double loss = 0.0;
  std::vector<double> grad_log_d;  // per pixel, d(loss)/d(log d); zero where not counted
  int counted_pixels = 0;
};

/// Scale-invariant depth loss: the mean over all ordered pixel pairs of the
/// squared difference between predicted and true log-depth gaps,
///   (1/n^2) sum_{i,j} ((log d_i - log d_j) - (log d*_i - log d*_j))^2,
/// computed in O(n) as 2 * ((1/n) sum g^2 - ((1/n) sum g)^2) with
/// g = log d - log d*. Multiplying every prediction by a constant leaves the
/// value unchanged.
inline ScaleInvariantResult scale_invariant_loss(const DepthMap& d, const DepthMap& d_star) {
  if (d.height != d_star.height || d.width != d_star.width) {
    throw std::invalid_argument("scale_invariant_loss: shape mismatch");
  }
  const int n_pixels = d.pixels();
  std::vector<double> g(n_pixels, 0.0);
  std::vector<std::uint8_t> counted(n_pixels, 0);
  int n = 0;
  double sum_g = 0.0, sum_g2 = 0.0;
  for (int i = 0; i < n_pixels; ++i) {
    if (!d.valid[i] || !d_star.valid[i]) continue;
    if (!(d.depth[i] > 0.0)) {
      throw std::invalid_argument("scale_invariant_loss: non-positive predicted depth at pixel " +
                                  std::to_string(i));
    }
    if (!(d_star.depth[i] > 0.0)) {
      throw std::invalid_argument("scale_invariant_loss: non-positive true depth at pixel " +
                                  std::to_string(i));
    }
    g[i] = std::log(d.depth[i]) - std::log(d_star.depth[i]);
    counted[i] = 1;
    sum_g += g[i];
    sum_g2 += g[i] * g[i];
    ++n;
  }
  if (n < 2) {
    throw std::invalid_argument("scale_invariant_loss: needs at least 2 jointly valid pixels, got " +
                                std::to_string(n));
  }
  ScaleInvariantResult r;
  r.counted_pixels = n;
  const double mean_g = sum_g / n;
  r.loss = 2.0 * (sum_g2 / n - mean_g * mean_g);
  r.grad_log_d.assign(n_pixels, 0.0);
  for (int i = 0; i < n_pixels; ++i) {
    if (counted[i]) r.grad_log_d[i] = (4.0 / n) * (g[i] - mean_g);
  }
  return r;
}

struct DepthLossResult {
  double loss = 0.0;
  Grid grad_logits;  // gradient on the per-bin depth logits
  DepthMap decoded;  // depth decoded from the logits, for logging
};

/// Scale-invariant loss evaluated on depth decoded from per-bin logits, with
/// the analytic gradient chained through the bin softmax and the expectation.
/// Pixels with invalid ground truth contribute nothing.
inline DepthLossResult depth_loss_backward(const Grid& depth_logits, const DepthMap& d_star,
                                           const DepthBinning& binning) {
  binning.validate();
  if (depth_logits.height != d_star.height || depth_logits.width != d_star.width) {
    throw std::invalid_argument("depth_loss_backward: shape mismatch");
  }
  Grid probs = softmax_channels(depth_logits);
  DepthMap d = depth_expectation(probs, binning);
  // The prediction is valid everywhere; only ground-truth validity gates pairs.
  ScaleInvariantResult si = scale_invariant_loss(d, d_star);

  DepthLossResult r;
  r.loss = si.loss;
  r.decoded = d;
  r.grad_logits = Grid(depth_logits.height, depth_logits.width, depth_logits.channels);
  const double l = binning.bin_length;
  for (int y = 0; y < depth_logits.height; ++y) {
    for (int x = 0; x < depth_logits.width; ++x) {
      int i = y * depth_logits.width + x;
      double g_log = si.grad_log_d[i];
      if (g_log == 0.0) continue;
      double dd = g_log / d.depth[i];  // d(loss)/d(depth_i)
      // Through the expectation: d(depth)/d(p_b) = (b+1) * l, then the softmax
      // Jacobian p .* (v - sum(p .* v)).
      double inner = 0.0;
      for (int b = 0; b < binning.num_bins; ++b) {
        inner += probs.at(y, x, b) * static_cast<double>(b + 1) * l;
      }
      for (int b = 0; b < binning.num_bins; ++b) {
        double v = dd * static_cast<double>(b + 1) * l;
        r.grad_logits.at(y, x, b) = probs.at(y, x, b) * (v - dd * inner);
      }
    }
  }
  return r;
}

/// Weighted sum of the two task losses: lambda * semantic + depth.
inline double joint_loss(double l_sem, double l_depth, const JointLossConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(l_sem) || !std::isfinite(l_depth)) {
    throw std::invalid_argument("joint_loss: non-finite input loss");
  }
  return cfg.lambda * l_sem + l_depth;
}

}  // namespace semdepth
