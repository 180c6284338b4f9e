#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semdepth {

/// Class id marking pixels excluded from losses and metrics.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Dense H x W x C map, row-major with channels innermost. Carries images,
/// logits, probability maps and feature maps. All public operations keep the
/// payload finite.
struct Grid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(int h, int w, int c, double fill = 0.0) : height(h), width(w), channels(c) {
    if (h < 1 || w < 1 || c < 1) {
      throw std::invalid_argument("Grid: dimensions must be positive, got " + std::to_string(h) +
                                  "x" + std::to_string(w) + "x" + std::to_string(c));
    }
    data.assign(static_cast<std::size_t>(h) * w * c, fill);
  }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  const double& at(int y, int x, int c) const { return data[index(y, x, c)]; }

  int pixels() const { return height * width; }
  bool same_shape(const Grid& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool same_plane(const Grid& o) const { return height == o.height && width == o.width; }
};

/// Per-pixel semantic ground truth. Values are class ids below the class
/// count, or kIgnoreLabel.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w) {
    if (h < 1 || w < 1) throw std::invalid_argument("LabelMap: dimensions must be positive");
    labels.assign(static_cast<std::size_t>(h) * w, fill);
  }

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  int pixels() const { return height * width; }
};

/// Per-pixel metric depth in meters with a validity mask. Invalid pixels mark
/// missing sensor readings and are skipped by every consumer.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int h, int w, double fill = 0.0, bool fill_valid = false) : height(h), width(w) {
    if (h < 1 || w < 1) throw std::invalid_argument("DepthMap: dimensions must be positive");
    depth.assign(static_cast<std::size_t>(h) * w, fill);
    valid.assign(static_cast<std::size_t>(h) * w, fill_valid ? 1 : 0);
  }

  double& at(int y, int x) { return depth[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
  int pixels() const { return height * width; }
};

inline void require_finite(const Grid& g, const char* op) {
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      for (int c = 0; c < g.channels; ++c) {
        if (!std::isfinite(g.at(y, x, c))) {
          throw std::runtime_error(std::string(op) + ": non-finite value at pixel (y=" +
                                   std::to_string(y) + ", x=" + std::to_string(x) +
                                   ", c=" + std::to_string(c) + ")");
        }
      }
    }
  }
}

/// Per-pixel softmax over the channel axis, with max-subtraction so that
/// arbitrarily large logits do not overflow. Output channels sum to 1.
inline Grid softmax_channels(const Grid& g) {
  if (g.channels < 1) throw std::invalid_argument("softmax_channels: needs at least one channel");
  require_finite(g, "softmax_channels");
  Grid out(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      double m = g.at(y, x, 0);
      for (int c = 1; c < g.channels; ++c) m = std::max(m, g.at(y, x, c));
      double sum = 0.0;
      for (int c = 0; c < g.channels; ++c) {
        double e = std::exp(g.at(y, x, c) - m);
        out.at(y, x, c) = e;
        sum += e;
      }
      for (int c = 0; c < g.channels; ++c) out.at(y, x, c) /= sum;
    }
  }
  return out;
}

namespace detail {

/// Source coordinate for output index `oi` under the half-pixel-center
/// convention, before clamping. The alignment is frozen by golden fixtures;
/// the first and last half pixel replicate the border sample.
inline double resize_coord(int oi, int in_n, int out_n) {
  return (oi + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
}

struct LinearTap {
  int lo;
  int hi;
  double frac;  // weight of hi; lo gets 1 - frac
};

inline LinearTap linear_tap(int oi, int in_n, int out_n) {
  double s = resize_coord(oi, in_n, out_n);
  double f = std::floor(s);
  int lo = static_cast<int>(f);
  double frac = s - f;
  int hi = lo + 1;
  lo = std::clamp(lo, 0, in_n - 1);
  hi = std::clamp(hi, 0, in_n - 1);
  return {lo, hi, frac};
}

}  // namespace detail

/// Nearest source index for output index `oi`, same alignment convention as
/// bilinear_resize. Used for label and depth resampling.
inline int nearest_src_index(int oi, int in_n, int out_n) {
  double s = detail::resize_coord(oi, in_n, out_n);
  int i = static_cast<int>(std::lround(s));
  return std::clamp(i, 0, in_n - 1);
}

/// Bilinear resampling with half-pixel centers. Channel count is preserved;
/// constant inputs map to constant outputs and equal dimensions reproduce the
/// input exactly.
inline Grid bilinear_resize(const Grid& g, int out_h, int out_w) {
  if (g.height < 1 || g.width < 1 || g.channels < 1) {
    throw std::invalid_argument("bilinear_resize: zero-size input");
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize: output dimensions must be positive");
  }
  Grid out(out_h, out_w, g.channels);
  std::vector<detail::LinearTap> xt(out_w);
  for (int x = 0; x < out_w; ++x) xt[x] = detail::linear_tap(x, g.width, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto yt = detail::linear_tap(y, g.height, out_h);
    for (int x = 0; x < out_w; ++x) {
      const auto& t = xt[x];
      for (int c = 0; c < g.channels; ++c) {
        double top = (1.0 - t.frac) * g.at(yt.lo, t.lo, c) + t.frac * g.at(yt.lo, t.hi, c);
        double bot = (1.0 - t.frac) * g.at(yt.hi, t.lo, c) + t.frac * g.at(yt.hi, t.hi, c);
        out.at(y, x, c) = (1.0 - yt.frac) * top + yt.frac * bot;
      }
    }
  }
  return out;
}

/// Adjoint of bilinear_resize: scatters an output-shaped gradient back onto a
/// grid of the source shape with the same tap weights.
inline Grid bilinear_resize_backward(const Grid& grad_out, int in_h, int in_w) {
  if (grad_out.height < 1 || grad_out.width < 1) {
    throw std::invalid_argument("bilinear_resize_backward: zero-size gradient");
  }
  Grid grad_in(in_h, in_w, grad_out.channels);
  std::vector<detail::LinearTap> xt(grad_out.width);
  for (int x = 0; x < grad_out.width; ++x) xt[x] = detail::linear_tap(x, in_w, grad_out.width);
  for (int y = 0; y < grad_out.height; ++y) {
    const auto yt = detail::linear_tap(y, in_h, grad_out.height);
    for (int x = 0; x < grad_out.width; ++x) {
      const auto& t = xt[x];
      for (int c = 0; c < grad_out.channels; ++c) {
        double g = grad_out.at(y, x, c);
        grad_in.at(yt.lo, t.lo, c) += (1.0 - yt.frac) * (1.0 - t.frac) * g;
        grad_in.at(yt.lo, t.hi, c) += (1.0 - yt.frac) * t.frac * g;
        grad_in.at(yt.hi, t.lo, c) += yt.frac * (1.0 - t.frac) * g;
        grad_in.at(yt.hi, t.hi, c) += yt.frac * t.frac * g;
      }
    }
  }
  return grad_in;
}

/// Stacks grids along the channel axis. All inputs must share H x W.
inline Grid channel_concat(std::span<const Grid> gs) {
  if (gs.empty()) throw std::invalid_argument("channel_concat: empty input list");
  int total = 0;
  for (const Grid& g : gs) {
    if (!g.same_plane(gs.front())) {
      throw std::invalid_argument("channel_concat: spatial shape mismatch");
    }
    total += g.channels;
  }
  Grid out(gs.front().height, gs.front().width, total);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int base = 0;
      for (const Grid& g : gs) {
        for (int c = 0; c < g.channels; ++c) out.at(y, x, base + c) = g.at(y, x, c);
        base += g.channels;
      }
    }
  }
  return out;
}

/// Elementwise sum of equally shaped grids.
inline Grid channel_sum(std::span<const Grid> gs) {
  if (gs.empty()) throw std::invalid_argument("channel_sum: empty input list");
  Grid out = gs.front();
  for (std::size_t i = 1; i < gs.size(); ++i) {
    if (!gs[i].same_shape(out)) throw std::invalid_argument("channel_sum: shape mismatch");
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += gs[i].data[k];
  }
  return out;
}

inline Grid channel_concat(std::initializer_list<Grid> gs) {
  return channel_concat(std::span<const Grid>(gs.begin(), gs.size()));
}
inline Grid channel_sum(std::initializer_list<Grid> gs) {
  return channel_sum(std::span<const Grid>(gs.begin(), gs.size()));
}

}  // namespace semdepth
