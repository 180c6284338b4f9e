#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"

namespace semdepth {

/// Per-pixel feature row for the pairwise kernels: position (pixels), color
/// (0..255) and estimated depth (meters, from the depth head — never ground
/// truth at inference time).
struct CrfFeature {
  double y = 0, x = 0;
  double r = 0, g = 0, b = 0;
  double depth = 0;
};

struct CrfFeatures {
  int height = 0;
  int width = 0;
  std::vector<CrfFeature> rows;  // height*width entries, row-major

  const CrfFeature& at(int y, int x) const {
    return rows[static_cast<std::size_t>(y) * width + x];
  }

  static CrfFeatures from_image_depth(const Grid& image, const DepthMap& depth) {
    if (image.channels != 3) {
      throw std::invalid_argument("CrfFeatures: image must have 3 channels");
    }
    if (image.height != depth.height || image.width != depth.width) {
      throw std::invalid_argument("CrfFeatures: image/depth dims mismatch");
    }
    require_finite(image, "CrfFeatures");
    CrfFeatures f;
    f.height = image.height;
    f.width = image.width;
    f.rows.resize(static_cast<std::size_t>(image.height) * image.width);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        CrfFeature& r = f.rows[static_cast<std::size_t>(y) * image.width + x];
        r.y = y;
        r.x = x;
        r.r = image.at(y, x, 0);
        r.g = image.at(y, x, 1);
        r.b = image.at(y, x, 2);
        r.depth = depth.at(y, x);
        if (!std::isfinite(r.depth)) {
          throw std::invalid_argument("CrfFeatures: non-finite depth at pixel (" +
                                      std::to_string(y) + "," + std::to_string(x) + ")");
        }
      }
    }
    return f;
  }
};

/// Pairwise model parameters: label compatibility mu and three per-class-pair
/// weight matrices, one per Gaussian kernel (appearance, depth, smoothness),
/// plus the five bandwidths.
struct CrfParams {
  int num_classes = 0;
  std::vector<double> mu;  // C x C, row-major [l*C + l']
  std::vector<double> w1, w2, w3;
  double theta_alpha = 160.0;  // appearance: spatial
  double theta_beta = 3.0;     // appearance: color
  double theta_gamma = 50.0;   // depth: spatial
  double theta_zeta = 0.2;     // depth: depth gap
  double theta_tau = 3.0;      // smoothness: spatial

  void validate() const {
    if (num_classes < 1) throw std::invalid_argument("CrfParams: num_classes must be >= 1");
    const std::size_t n = static_cast<std::size_t>(num_classes) * num_classes;
    if (mu.size() != n || w1.size() != n || w2.size() != n || w3.size() != n) {
      throw std::invalid_argument("CrfParams: matrices must be num_classes^2");
    }
    for (const auto* m : {&mu, &w1, &w2, &w3}) {
      for (double v : *m) {
        if (!std::isfinite(v)) throw std::invalid_argument("CrfParams: non-finite matrix entry");
      }
    }
    for (double t : {theta_alpha, theta_beta, theta_gamma, theta_zeta, theta_tau}) {
      if (!(t > 0.0) || !std::isfinite(t)) {
        throw std::invalid_argument("CrfParams: bandwidths must be positive and finite");
      }
    }
  }
};

/// Default starting point: Potts compatibility, constant kernel weights
/// 7/4/3 and the cross-validated bandwidths.
inline CrfParams default_crf_params(int num_classes) {
  CrfParams p;
  p.num_classes = num_classes;
  const std::size_t n = static_cast<std::size_t>(num_classes) * num_classes;
  p.mu.assign(n, 1.0);
  for (int c = 0; c < num_classes; ++c) p.mu[static_cast<std::size_t>(c) * num_classes + c] = 0.0;
  p.w1.assign(n, 7.0);
  p.w2.assign(n, 4.0);
  p.w3.assign(n, 3.0);
  return p;
}

namespace detail {

/// The three Gaussian kernel values for a feature pair (before class
/// weighting). Negative exponents: affinity decays with feature distance.
inline std::array<double, 3> kernel_gaussians(const CrfFeature& a, const CrfFeature& b,
                                              const CrfParams& p) {
  const double dp2 = (a.y - b.y) * (a.y - b.y) + (a.x - b.x) * (a.x - b.x);
  const double di2 = (a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) +
                     (a.b - b.b) * (a.b - b.b);
  const double dd2 = (a.depth - b.depth) * (a.depth - b.depth);
  return {
      std::exp(-dp2 / (2.0 * p.theta_alpha * p.theta_alpha) -
               di2 / (2.0 * p.theta_beta * p.theta_beta)),
      std::exp(-dp2 / (2.0 * p.theta_gamma * p.theta_gamma) -
               dd2 / (2.0 * p.theta_zeta * p.theta_zeta)),
      std::exp(-dp2 / (2.0 * p.theta_tau * p.theta_tau)),
  };
}

/// Spatial radius beyond which a Gaussian with the given width contributes
/// less than 1e-9, used by the truncated-window path.
inline int truncation_radius(double theta_spatial) {
  // exp(-r^2 / (2 theta^2)) < 1e-9  <=>  r > theta * sqrt(2 ln 1e9)
  const double kFalloff = 6.4378980788680416;  // sqrt(2 * ln(1e9))
  return static_cast<int>(std::ceil(theta_spatial * kFalloff));
}

}  // namespace detail

inline std::vector<double> kernel_eval(const CrfFeature& f_i, const CrfFeature& f_j,
                                       const CrfParams& params) {
  params.validate();
  const auto g = detail::kernel_gaussians(f_i, f_j, params);
  const int c = params.num_classes;
  std::vector<double> k(static_cast<std::size_t>(c) * c);
  for (std::size_t idx = 0; idx < k.size(); ++idx) {
    k[idx] = params.w1[idx] * g[0] + params.w2[idx] * g[1] + params.w3[idx] * g[2];
  }
  return k;
}

struct MeanFieldState {
  Grid q;  // H x W x C marginals
  int iteration = 0;
};

struct MeanFieldOptions {
  /// Truncate each kernel's spatial support at its 1e-9 falloff radius
  /// instead of visiting every pixel pair.
  bool windowed = false;
};

namespace detail {

/// S_m[i, l'] = sum_{j != i} g_m(i, j) * Q[j, l'] for the three kernels.
inline std::array<Grid, 3> kernel_filter_q(const Grid& q, const CrfFeatures& f,
                                           const CrfParams& p, const MeanFieldOptions& opt) {
  const int h = q.height, w = q.width, c = q.channels;
  std::array<Grid, 3> s = {Grid(h, w, c), Grid(h, w, c), Grid(h, w, c)};
  const int n = h * w;
  if (!opt.windowed) {
    // Exact pass over unordered pairs; kernels are symmetric, so each pair
    // contributes in both directions.
    for (int i = 0; i < n; ++i) {
      const CrfFeature& fi = f.rows[i];
      const double* qi = &q.data[static_cast<std::size_t>(i) * c];
      for (int j = i + 1; j < n; ++j) {
        const auto g = kernel_gaussians(fi, f.rows[j], p);
        const double* qj = &q.data[static_cast<std::size_t>(j) * c];
        for (int m = 0; m < 3; ++m) {
          double* si = &s[m].data[static_cast<std::size_t>(i) * c];
          double* sj = &s[m].data[static_cast<std::size_t>(j) * c];
          for (int l = 0; l < c; ++l) {
            si[l] += g[m] * qj[l];
            sj[l] += g[m] * qi[l];
          }
        }
      }
    }
    return s;
  }
  const std::array<double, 3> spatial = {p.theta_alpha, p.theta_gamma, p.theta_tau};
  for (int m = 0; m < 3; ++m) {
    const int r = truncation_radius(spatial[m]);
    for (int yi = 0; yi < h; ++yi) {
      for (int xi = 0; xi < w; ++xi) {
        const int i = yi * w + xi;
        const CrfFeature& fi = f.rows[i];
        double* si = &s[m].data[static_cast<std::size_t>(i) * c];
        const int y0 = std::max(0, yi - r), y1 = std::min(h - 1, yi + r);
        const int x0 = std::max(0, xi - r), x1 = std::min(w - 1, xi + r);
        for (int yj = y0; yj <= y1; ++yj) {
          for (int xj = x0; xj <= x1; ++xj) {
            const int j = yj * w + xj;
            if (j == i) continue;
            const double g = kernel_gaussians(fi, f.rows[j], p)[m];
            const double* qj = &q.data[static_cast<std::size_t>(j) * c];
            for (int l = 0; l < c; ++l) si[l] += g * qj[l];
          }
        }
      }
    }
  }
  return s;
}

inline void check_q_normalized(const Grid& q, const char* op) {
  for (int y = 0; y < q.height; ++y) {
    for (int x = 0; x < q.width; ++x) {
      double sum = 0.0;
      for (int c = 0; c < q.channels; ++c) {
        double v = q.at(y, x, c);
        if (!(v >= 0.0)) {
          throw std::invalid_argument(std::string(op) + ": negative marginal at pixel (" +
                                      std::to_string(y) + "," + std::to_string(x) + ")");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument(std::string(op) + ": marginals at pixel (" +
                                    std::to_string(y) + "," + std::to_string(x) +
                                    ") sum to " + std::to_string(sum) + ", expected 1");
      }
    }
  }
}

/// message m_i(l) = sum_{l'} mu(l,l') sum_m w_m[l,l'] S_m[i,l']
inline Grid mix_messages(const std::array<Grid, 3>& s, const CrfParams& p) {
  const int h = s[0].height, w = s[0].width, c = s[0].channels;
  Grid msg(h, w, c);
  for (int i = 0; i < h * w; ++i) {
    const double* s1 = &s[0].data[static_cast<std::size_t>(i) * c];
    const double* s2 = &s[1].data[static_cast<std::size_t>(i) * c];
    const double* s3 = &s[2].data[static_cast<std::size_t>(i) * c];
    double* mi = &msg.data[static_cast<std::size_t>(i) * c];
    for (int l = 0; l < c; ++l) {
      double acc = 0.0;
      const std::size_t row = static_cast<std::size_t>(l) * c;
      for (int lp = 0; lp < c; ++lp) {
        acc += p.mu[row + lp] * (p.w1[row + lp] * s1[lp] + p.w2[row + lp] * s2[lp] +
                                 p.w3[row + lp] * s3[lp]);
      }
      mi[l] = acc;
    }
  }
  return msg;
}

inline void check_crf_inputs(const Grid& unaries, const CrfFeatures& features,
                             const CrfParams& params) {
  params.validate();
  if (unaries.channels != params.num_classes) {
    throw std::invalid_argument("crf: unary channels != num_classes");
  }
  if (unaries.height != features.height || unaries.width != features.width) {
    throw std::invalid_argument("crf: unary/feature dims mismatch");
  }
  require_finite(unaries, "crf");
}

}  // namespace detail

/// One mean-field update: Gaussian-filter the incoming marginals per kernel,
/// mix with the class-pair weights and compatibility, then renormalize
/// against the unaries. Unaries are semantic logits (negated unary
/// potentials), so the update is Q <- softmax(unary - message).
inline MeanFieldState mean_field_step(const MeanFieldState& state, const Grid& unaries,
                                      const CrfFeatures& features, const CrfParams& params,
                                      const MeanFieldOptions& options = {}) {
  detail::check_crf_inputs(unaries, features, params);
  if (!state.q.same_shape(unaries)) {
    throw std::invalid_argument("mean_field_step: Q/unary shape mismatch");
  }
  detail::check_q_normalized(state.q, "mean_field_step");
  std::array<Grid, 3> s = detail::kernel_filter_q(state.q, features, params, options);
  Grid msg = detail::mix_messages(s, params);
  Grid h(unaries.height, unaries.width, unaries.channels);
  for (std::size_t k = 0; k < h.data.size(); ++k) h.data[k] = unaries.data[k] - msg.data[k];
  MeanFieldState next;
  next.q = softmax_channels(h);
  next.iteration = state.iteration + 1;
  return next;
}

struct CrfResult {
  Grid q;
  LabelMap labels;
};

/// Per-iteration tensors kept for the reverse sweep.
struct CrfTrace {
  bool cached = false;
  Grid unaries;
  std::vector<Grid> q_iters;                    // Q_0 .. Q_T
  std::vector<std::array<Grid, 3>> kernel_sums;  // S_m of iteration t (from Q_t)
  MeanFieldOptions options;
};

inline LabelMap argmax_labels(const Grid& q) {
  LabelMap labels(q.height, q.width);
  for (int y = 0; y < q.height; ++y) {
    for (int x = 0; x < q.width; ++x) {
      int best = 0;
      double bv = q.at(y, x, 0);
      for (int c = 1; c < q.channels; ++c) {
        if (q.at(y, x, c) > bv) {
          bv = q.at(y, x, c);
          best = c;
        }
      }
      labels.at(y, x) = static_cast<std::uint8_t>(best);
    }
  }
  return labels;
}

/// Full mean-field inference: Q_0 = softmax(unaries), `iters` updates, then a
/// per-pixel argmax. Pass a trace to enable crf_backward.
inline CrfResult crf_inference(const Grid& unaries, const CrfFeatures& features,
                               const CrfParams& params, int iters,
                               const MeanFieldOptions& options = {}, CrfTrace* trace = nullptr) {
  if (iters < 1) throw std::invalid_argument("crf_inference: iters must be >= 1");
  detail::check_crf_inputs(unaries, features, params);
  if (trace) {
    *trace = CrfTrace{};
    trace->unaries = unaries;
    trace->options = options;
  }
  MeanFieldState state;
  state.q = softmax_channels(unaries);
  state.iteration = 0;
  if (trace) trace->q_iters.push_back(state.q);
  for (int t = 0; t < iters; ++t) {
    // Inline the step so the kernel sums can be cached for backward.
    std::array<Grid, 3> s = detail::kernel_filter_q(state.q, features, params, options);
    Grid msg = detail::mix_messages(s, params);
    Grid h(unaries.height, unaries.width, unaries.channels);
    for (std::size_t k = 0; k < h.data.size(); ++k) h.data[k] = unaries.data[k] - msg.data[k];
    state.q = softmax_channels(h);
    state.iteration = t + 1;
    if (trace) {
      trace->kernel_sums.push_back(std::move(s));
      trace->q_iters.push_back(state.q);
    }
  }
  if (trace) trace->cached = true;
  CrfResult out;
  out.labels = argmax_labels(state.q);
  out.q = std::move(state.q);
  return out;
}

struct CrfGrads {
  Grid grad_unaries;
  std::vector<double> grad_mu, grad_w1, grad_w2, grad_w3;
};

namespace detail {

/// dL/dh for q = softmax(h): dh = q * (dq - <dq, q>) per pixel.
inline Grid softmax_backward(const Grid& q, const Grid& dq) {
  Grid dh(q.height, q.width, q.channels);
  const int c = q.channels;
  for (int i = 0; i < q.height * q.width; ++i) {
    const double* qi = &q.data[static_cast<std::size_t>(i) * c];
    const double* di = &dq.data[static_cast<std::size_t>(i) * c];
    double dot = 0.0;
    for (int l = 0; l < c; ++l) dot += qi[l] * di[l];
    double* oi = &dh.data[static_cast<std::size_t>(i) * c];
    for (int l = 0; l < c; ++l) oi[l] = qi[l] * (di[l] - dot);
  }
  return dh;
}

}  // namespace detail

/// Reverse sweep through the unrolled mean-field iterations. Produces
/// gradients for the unaries and the CRF matrices; the pairwise features
/// (including estimated depth) are treated as constants, so no gradient flows
/// to the depth head through this path.
inline CrfGrads crf_backward(const Grid& grad_q, const CrfFeatures& features,
                             const CrfParams& params, const CrfTrace& trace) {
  if (!trace.cached) {
    throw std::invalid_argument("crf_backward: forward trace not cached; run crf_inference with "
                                "a trace");
  }
  if (!grad_q.same_shape(trace.q_iters.back())) {
    throw std::invalid_argument("crf_backward: upstream gradient shape mismatch");
  }
  const int c = params.num_classes;
  const int h = grad_q.height, w = grad_q.width;
  const int n = h * w;
  const std::size_t cc = static_cast<std::size_t>(c) * c;
  CrfGrads out;
  out.grad_unaries = Grid(h, w, c);
  out.grad_mu.assign(cc, 0.0);
  out.grad_w1.assign(cc, 0.0);
  out.grad_w2.assign(cc, 0.0);
  out.grad_w3.assign(cc, 0.0);

  Grid dq = grad_q;
  const int iters = static_cast<int>(trace.kernel_sums.size());
  for (int t = iters - 1; t >= 0; --t) {
    const Grid& q_out = trace.q_iters[t + 1];
    const Grid& q_in = trace.q_iters[t];
    const auto& s = trace.kernel_sums[t];
    Grid dh = detail::softmax_backward(q_out, dq);
    // h = unaries - message
    for (std::size_t k = 0; k < dh.data.size(); ++k) out.grad_unaries.data[k] += dh.data[k];
    // Message mixing: accumulate matrix grads and dS.
    std::array<Grid, 3> ds = {Grid(h, w, c), Grid(h, w, c), Grid(h, w, c)};
    for (int i = 0; i < n; ++i) {
      const double* s1 = &s[0].data[static_cast<std::size_t>(i) * c];
      const double* s2 = &s[1].data[static_cast<std::size_t>(i) * c];
      const double* s3 = &s[2].data[static_cast<std::size_t>(i) * c];
      double* d1 = &ds[0].data[static_cast<std::size_t>(i) * c];
      double* d2 = &ds[1].data[static_cast<std::size_t>(i) * c];
      double* d3 = &ds[2].data[static_cast<std::size_t>(i) * c];
      const double* dhi = &dh.data[static_cast<std::size_t>(i) * c];
      for (int l = 0; l < c; ++l) {
        const double dm = -dhi[l];  // dL/dm_i(l)
        if (dm == 0.0) continue;
        const std::size_t row = static_cast<std::size_t>(l) * c;
        for (int lp = 0; lp < c; ++lp) {
          const double mu = params.mu[row + lp];
          out.grad_mu[row + lp] += dm * (params.w1[row + lp] * s1[lp] +
                                         params.w2[row + lp] * s2[lp] +
                                         params.w3[row + lp] * s3[lp]);
          out.grad_w1[row + lp] += dm * mu * s1[lp];
          out.grad_w2[row + lp] += dm * mu * s2[lp];
          out.grad_w3[row + lp] += dm * mu * s3[lp];
          d1[lp] += dm * mu * params.w1[row + lp];
          d2[lp] += dm * mu * params.w2[row + lp];
          d3[lp] += dm * mu * params.w3[row + lp];
        }
      }
    }
    // S_m = G_m (*) Q_in with symmetric kernels: dQ_in = G_m (*) dS_m.
    Grid dq_in(h, w, c);
    for (int i = 0; i < n; ++i) {
      const CrfFeature& fi = features.rows[i];
      for (int j = i + 1; j < n; ++j) {
        const auto g = detail::kernel_gaussians(fi, features.rows[j], params);
        for (int m = 0; m < 3; ++m) {
          const double* di = &ds[m].data[static_cast<std::size_t>(i) * c];
          const double* dj = &ds[m].data[static_cast<std::size_t>(j) * c];
          double* qi = &dq_in.data[static_cast<std::size_t>(i) * c];
          double* qj = &dq_in.data[static_cast<std::size_t>(j) * c];
          for (int l = 0; l < c; ++l) {
            qi[l] += g[m] * dj[l];
            qj[l] += g[m] * di[l];
          }
        }
      }
    }
    dq = std::move(dq_in);
  }
  // Q_0 = softmax(unaries).
  Grid dh0 = detail::softmax_backward(trace.q_iters[0], dq);
  for (std::size_t k = 0; k < dh0.data.size(); ++k) out.grad_unaries.data[k] += dh0.data[k];
  return out;
}

/// Exact marginals by exhaustive enumeration over all C^N labelings:
/// p(x) proportional to exp(sum_i z_i(x_i) - sum_{i<j} mu(x_i,x_j) k(f_i,f_j)).
/// Diagnostic oracle for tiny instances only.
inline Grid exact_marginals(const Grid& unaries, const CrfFeatures& features,
                            const CrfParams& params) {
  detail::check_crf_inputs(unaries, features, params);
  const int n = unaries.height * unaries.width;
  const int c = params.num_classes;
  double combos = std::pow(static_cast<double>(c), n);
  if (combos > 4.0e6) {
    throw std::invalid_argument("exact_marginals: instance too large to enumerate");
  }
  // Pairwise energy tables per unordered pair.
  struct PairTable {
    int i, j;
    std::vector<double> e;  // C x C
  };
  std::vector<PairTable> pairs;
  pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      PairTable t;
      t.i = i;
      t.j = j;
      t.e.resize(static_cast<std::size_t>(c) * c);
      const auto g = detail::kernel_gaussians(features.rows[i], features.rows[j], params);
      for (std::size_t idx = 0; idx < t.e.size(); ++idx) {
        t.e[idx] = params.mu[idx] * (params.w1[idx] * g[0] + params.w2[idx] * g[1] +
                                     params.w3[idx] * g[2]);
      }
      pairs.push_back(std::move(t));
    }
  }
  const long total = static_cast<long>(combos);
  std::vector<int> x(n, 0);
  std::vector<double> logw(total);
  double max_lw = -std::numeric_limits<double>::infinity();
  for (long a = 0; a < total; ++a) {
    long rem = a;
    for (int i = 0; i < n; ++i) {
      x[i] = static_cast<int>(rem % c);
      rem /= c;
    }
    double lw = 0.0;
    for (int i = 0; i < n; ++i) lw += unaries.data[static_cast<std::size_t>(i) * c + x[i]];
    for (const PairTable& t : pairs) lw -= t.e[static_cast<std::size_t>(x[t.i]) * c + x[t.j]];
    logw[a] = lw;
    max_lw = std::max(max_lw, lw);
  }
  double z = 0.0;
  for (double lw : logw) z += std::exp(lw - max_lw);
  Grid marg(unaries.height, unaries.width, c);
  for (long a = 0; a < total; ++a) {
    const double p = std::exp(logw[a] - max_lw) / z;
    long rem = a;
    for (int i = 0; i < n; ++i) {
      marg.data[static_cast<std::size_t>(i) * c + static_cast<int>(rem % c)] += p;
      rem /= c;
    }
  }
  return marg;
}

// ---------------------------------------------------------------------------
// Weight export / import
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void append_matrix_block(std::string& out, const std::string& name,
                                const std::vector<double>& m,
                                const std::vector<std::string>& class_names) {
  const int c = static_cast<int>(class_names.size());
  out += "matrix," + name + "\n";
  out += "class";
  for (const std::string& cn : class_names) out += "," + cn;
  out += "\n";
  for (int l = 0; l < c; ++l) {
    out += class_names[l];
    for (int lp = 0; lp < c; ++lp) {
      out += "," + format_double(m[static_cast<std::size_t>(l) * c + lp]);
    }
    out += "\n";
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

/// CSV with four labeled blocks (mu, w1, w2, w3), class names as headers.
inline std::string export_crf_weights(const CrfParams& params,
                                      const std::vector<std::string>& class_names) {
  params.validate();
  if (static_cast<int>(class_names.size()) != params.num_classes) {
    throw std::invalid_argument("export_crf_weights: expected " +
                                std::to_string(params.num_classes) + " class names, got " +
                                std::to_string(class_names.size()));
  }
  std::string out;
  detail::append_matrix_block(out, "mu", params.mu, class_names);
  detail::append_matrix_block(out, "w1", params.w1, class_names);
  detail::append_matrix_block(out, "w2", params.w2, class_names);
  detail::append_matrix_block(out, "w3", params.w3, class_names);
  return out;
}

struct CrfWeightTable {
  std::vector<std::string> class_names;
  std::vector<double> mu, w1, w2, w3;
};

/// Parses the export format back. Matrices arrive in file order; all four
/// blocks are required.
inline CrfWeightTable import_crf_weights(const std::string& text) {
  CrfWeightTable table;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::vector<double>*> slots = {
      {"mu", &table.mu}, {"w1", &table.w1}, {"w2", &table.w2}, {"w3", &table.w3}};
  std::vector<double>* current = nullptr;
  int expected_rows = 0, seen_rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells[0] == "matrix") {
      if (cells.size() != 2 || !slots.count(cells[1])) {
        throw std::invalid_argument("import_crf_weights: bad matrix header '" + line + "'");
      }
      if (current && seen_rows != expected_rows) {
        throw std::invalid_argument("import_crf_weights: truncated matrix block");
      }
      current = slots[cells[1]];
      seen_rows = 0;
      // Class-name header follows.
      if (!std::getline(in, line)) {
        throw std::invalid_argument("import_crf_weights: missing class header");
      }
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto header = detail::split_csv_line(line);
      if (header.empty() || header[0] != "class" || header.size() < 2) {
        throw std::invalid_argument("import_crf_weights: bad class header '" + line + "'");
      }
      std::vector<std::string> names(header.begin() + 1, header.end());
      if (table.class_names.empty()) {
        table.class_names = names;
      } else if (table.class_names != names) {
        throw std::invalid_argument("import_crf_weights: inconsistent class names across blocks");
      }
      expected_rows = static_cast<int>(names.size());
      current->clear();
      current->reserve(static_cast<std::size_t>(expected_rows) * expected_rows);
      continue;
    }
    if (!current) throw std::invalid_argument("import_crf_weights: data before matrix header");
    if (static_cast<int>(cells.size()) != expected_rows + 1) {
      throw std::invalid_argument("import_crf_weights: bad row width in '" + line + "'");
    }
    if (seen_rows >= expected_rows) {
      throw std::invalid_argument("import_crf_weights: too many rows in matrix block");
    }
    if (cells[0] != table.class_names[seen_rows]) {
      throw std::invalid_argument("import_crf_weights: row label '" + cells[0] +
                                  "' does not match class order");
    }
    for (int i = 1; i < static_cast<int>(cells.size()); ++i) {
      std::size_t pos = 0;
      double v = std::stod(cells[i], &pos);
      if (pos != cells[i].size()) {
        throw std::invalid_argument("import_crf_weights: bad number '" + cells[i] + "'");
      }
      current->push_back(v);
    }
    ++seen_rows;
  }
  if (current && seen_rows != expected_rows) {
    throw std::invalid_argument("import_crf_weights: truncated matrix block");
  }
  const std::size_t cc = table.class_names.size() * table.class_names.size();
  if (table.class_names.empty() || table.mu.size() != cc || table.w1.size() != cc ||
      table.w2.size() != cc || table.w3.size() != cc) {
    throw std::invalid_argument("import_crf_weights: missing matrix block");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Parameter file: a key=value text file carrying the five bandwidths plus the
// paths of four matrix CSVs (one block each, export format above).
// ---------------------------------------------------------------------------

inline std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  names.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Single matrix block in the export format.
inline void parse_single_matrix(const std::string& text, const std::string& expected_name,
                                std::vector<std::string>& class_names_out,
                                std::vector<double>& values_out) {
  std::string block = "matrix," + expected_name + "\n";
  if (text.rfind(block, 0) != 0) {
    throw std::runtime_error("matrix CSV does not start with 'matrix," + expected_name + "'");
  }
  // Reuse the multi-block importer by padding the remaining three blocks.
  CrfWeightTable table;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header consumed above
  if (!std::getline(in, line)) throw std::runtime_error("matrix CSV missing class header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "class" || header.size() < 2) {
    throw std::runtime_error("matrix CSV has a bad class header '" + line + "'");
  }
  std::vector<std::string> names(header.begin() + 1, header.end());
  const int c = static_cast<int>(names.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(c) * c);
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != c + 1 || row >= c || cells[0] != names[row]) {
      throw std::runtime_error("matrix CSV has a bad row '" + line + "'");
    }
    for (int i = 1; i <= c; ++i) {
      std::size_t pos = 0;
      values.push_back(std::stod(cells[i], &pos));
      if (pos != cells[i].size()) {
        throw std::runtime_error("matrix CSV has a bad number '" + cells[i] + "'");
      }
    }
    ++row;
  }
  if (row != c) throw std::runtime_error("matrix CSV is truncated");
  class_names_out = std::move(names);
  values_out = std::move(values);
}

}  // namespace detail

/// Writes `path` (key=value text) plus four sibling CSVs named
/// `<path>.{mu,w1,w2,w3}.csv`, referenced from the text file by basename.
inline void save_crf_params(const std::string& path, const CrfParams& params,
                            const std::vector<std::string>& class_names_in = {}) {
  params.validate();
  std::vector<std::string> class_names =
      class_names_in.empty() ? default_class_names(params.num_classes) : class_names_in;
  if (static_cast<int>(class_names.size()) != params.num_classes) {
    throw std::invalid_argument("save_crf_params: class name count mismatch");
  }
  namespace fs = std::filesystem;
  const std::string base = fs::path(path).filename().string();
  std::string text = "format=crf-params-v1\n";
  text += "num_classes=" + std::to_string(params.num_classes) + "\n";
  text += "theta_alpha=" + detail::format_double(params.theta_alpha) + "\n";
  text += "theta_beta=" + detail::format_double(params.theta_beta) + "\n";
  text += "theta_gamma=" + detail::format_double(params.theta_gamma) + "\n";
  text += "theta_zeta=" + detail::format_double(params.theta_zeta) + "\n";
  text += "theta_tau=" + detail::format_double(params.theta_tau) + "\n";
  const std::vector<std::pair<std::string, const std::vector<double>*>> mats = {
      {"mu", &params.mu}, {"w1", &params.w1}, {"w2", &params.w2}, {"w3", &params.w3}};
  for (const auto& [name, values] : mats) {
    const std::string csv_name = base + "." + name + ".csv";
    text += name + "=" + csv_name + "\n";
    std::string block;
    detail::append_matrix_block(block, name, *values, class_names);
    detail::write_text_file((fs::path(path).parent_path() / csv_name).string(), block);
  }
  detail::write_text_file(path, text);
}

inline CrfParams load_crf_params(const std::string& path) {
  namespace fs = std::filesystem;
  std::istringstream in(detail::read_text_file(path));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("bad line '" + line + "' in '" + path + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const auto& [key, value] : kv) {
    static const std::vector<std::string> known = {
        "format", "num_classes", "theta_alpha", "theta_beta", "theta_gamma",
        "theta_zeta", "theta_tau", "mu", "w1", "w2", "w3"};
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown key '" + key + "' in '" + path + "'");
    }
  }
  auto require_key = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("missing key '" + key + "' in '" + path + "'");
    return it->second;
  };
  if (require_key("format") != "crf-params-v1") {
    throw std::invalid_argument("'" + path + "' has unsupported format '" + kv["format"] + "'");
  }
  CrfParams params;
  params.num_classes = std::stoi(require_key("num_classes"));
  params.theta_alpha = std::stod(require_key("theta_alpha"));
  params.theta_beta = std::stod(require_key("theta_beta"));
  params.theta_gamma = std::stod(require_key("theta_gamma"));
  params.theta_zeta = std::stod(require_key("theta_zeta"));
  params.theta_tau = std::stod(require_key("theta_tau"));
  const fs::path dir = fs::path(path).parent_path();
  const std::vector<std::pair<std::string, std::vector<double>*>> mats = {
      {"mu", &params.mu}, {"w1", &params.w1}, {"w2", &params.w2}, {"w3", &params.w3}};
  std::vector<std::string> names;
  for (const auto& [name, values] : mats) {
    const std::string csv_path = (dir / require_key(name)).string();
    std::vector<std::string> block_names;
    detail::parse_single_matrix(detail::read_text_file(csv_path), name, block_names, *values);
    if (names.empty()) {
      names = block_names;
    } else if (names != block_names) {
      throw std::invalid_argument("inconsistent class names across matrix CSVs of '" + path + "'");
    }
  }
  if (static_cast<int>(names.size()) != params.num_classes) {
    throw std::invalid_argument("matrix size does not match num_classes in '" + path + "'");
  }
  params.validate();
  return params;
}

}  // namespace semdepth
