#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/crf.hpp"
#include "semdepth/grid.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/net.hpp"
#include "semdepth/rng.hpp"

namespace semdepth {

struct GradCheckReport {
  std::string suite;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::string worst;  // which parameter produced the worst error
  int checked = 0;

  bool passed() const { return max_rel_err < tolerance; }
};

namespace detail {

struct GradAccum {
  double max_rel_err = 0.0;
  std::string worst;
  int checked = 0;

  void update(double analytic, double numeric, const std::string& what) {
    const double err = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++checked;
    if (err > max_rel_err) {
      max_rel_err = err;
      worst = what;
    }
  }
};

/// Central finite difference through a mutable slot.
inline double central_diff(double* slot, const std::function<double()>& eval, double h) {
  const double saved = *slot;
  *slot = saved + h;
  const double hi = eval();
  *slot = saved - h;
  const double lo = eval();
  *slot = saved;
  return (hi - lo) / (2.0 * h);
}

/// Tiny three-branch network with every layer kind: plain, dilated and 1x1
/// convs, a stride-2 pool feeding a tap, an upsample layer, and concat
/// aggregation with learned merges.
inline NetworkConfig gradcheck_network_config() {
  NetworkConfig cfg;
  cfg.num_classes = 3;
  cfg.num_bins = 4;
  cfg.input_height = cfg.input_width = 9;
  cfg.aggregation = Aggregation::kConcat;
  BranchSpec b1;
  b1.input = "rgb";
  b1.layers = {conv_spec(4, 3, 1, 1), conv_spec(4, 3, 1, 2, 2)};
  BranchSpec b2;
  b2.input = "rgb";
  b2.layers = {conv_spec(4, 3, 1, 1), pool_spec(3, 2, 1, "p2"), conv_spec(6, 3, 1, 1)};
  b2.upsample_factor = 2;
  BranchSpec b3;
  b3.input = "p2";
  b3.layers = {conv_spec(5, 3, 1, 1), upsample_spec(2), conv_spec(5, 1)};
  b3.upsample_factor = 2;
  cfg.branches = {b1, b2, b3};
  cfg.finalize();
  return cfg;
}

struct NetFixture {
  NetworkConfig cfg;
  NetworkParams params;
  Grid img;
  LabelMap labels;
  DepthMap d_star;
  DepthBinning binning{4, 0.5};
  double lambda = 0.5;
};

inline NetFixture make_net_fixture(std::uint64_t seed) {
  NetFixture f;
  f.cfg = gradcheck_network_config();
  f.params = init_network_params(f.cfg, mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  f.img = Grid(9, 9, 3);
  for (double& v : f.img.data) v = rng.uniform(0.0, 255.0);
  f.labels = LabelMap(9, 9);
  for (auto& l : f.labels.labels) {
    l = static_cast<std::uint8_t>(rng.uniform_int(0, f.cfg.num_classes - 1));
  }
  f.labels.at(4, 4) = kIgnoreLabel;
  f.d_star = DepthMap(9, 9, 0.0, true);
  for (double& v : f.d_star.depth) v = rng.uniform(0.3, 1.8);
  f.d_star.valid[3] = 0;
  f.d_star.valid[40] = 0;
  return f;
}

inline double net_fixture_loss(const NetFixture& f) {
  NetOutputs out = forward(f.img, f.cfg, f.params, nullptr);
  SemanticLossResult sem = semantic_loss(out.seg_logits, f.labels);
  DepthLossResult dep = depth_loss_backward(out.depth_logits, f.d_star, f.binning);
  return f.lambda * sem.loss_sum + dep.loss;
}

}  // namespace detail

/// Analytic vs central-finite-difference gradients through the full network
/// and joint loss, for every weight and bias of every layer kind.
inline GradCheckReport gradcheck_net(std::uint64_t seed, bool corrupt = false) {
  detail::NetFixture f = detail::make_net_fixture(seed);
  ForwardTrace trace;
  NetOutputs out = forward(f.img, f.cfg, f.params, &trace);
  SemanticLossResult sem = semantic_loss(out.seg_logits, f.labels);
  DepthLossResult dep = depth_loss_backward(out.depth_logits, f.d_star, f.binning);
  Grid grad_seg = sem.grad;
  for (double& v : grad_seg.data) v *= f.lambda;
  ParamGrads grads = backward(grad_seg, dep.grad_logits, f.cfg, f.params, trace);
  if (corrupt) grads[0].weight[0] += 0.5;

  detail::GradAccum acc;
  // The fixture loss is a sum over ~80 pixels (magnitude ~50), so the
  // cancellation noise of a central difference is about eps*|f|/h. A step
  // of 1e-4 keeps that noise near 5e-11, well under the 1e-4 relative
  // gate even for gradient entries of a few 1e-6.
  const double h = 1e-4;
  auto eval = [&]() { return detail::net_fixture_loss(f); };
  for (std::size_t li = 0; li < f.params.layers.size(); ++li) {
    LayerParams& lp = f.params.layers[li];
    for (std::size_t i = 0; i < lp.weight.size(); ++i) {
      const double num = detail::central_diff(&lp.weight[i], eval, h);
      acc.update(grads[li].weight[i], num,
                 "layer" + std::to_string(li) + ".weight[" + std::to_string(i) + "]");
    }
    for (std::size_t i = 0; i < lp.bias.size(); ++i) {
      const double num = detail::central_diff(&lp.bias[i], eval, h);
      acc.update(grads[li].bias[i], num,
                 "layer" + std::to_string(li) + ".bias[" + std::to_string(i) + "]");
    }
  }
  return {"net", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// Per-pixel multinomial loss gradient on raw logits.
inline GradCheckReport gradcheck_semantic_loss(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 11));
  Grid logits(5, 4, 3);
  for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
  LabelMap truth(5, 4);
  for (auto& l : truth.labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  truth.at(2, 2) = kIgnoreLabel;
  SemanticLossResult res = semantic_loss(logits, truth);
  if (corrupt) res.grad.data[0] += 0.5;
  detail::GradAccum acc;
  auto eval = [&]() { return semantic_loss(logits, truth).loss_sum; };
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double num = detail::central_diff(&logits.data[i], eval, 1e-6);
    acc.update(res.grad.data[i], num, "logit[" + std::to_string(i) + "]");
  }
  return {"semantic-loss", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// Negative log-likelihood on probabilities (the refinement-stage loss).
inline GradCheckReport gradcheck_prob_nll(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 12));
  Grid logits(4, 3, 3);
  for (double& v : logits.data) v = rng.uniform(-1.5, 1.5);
  Grid probs = softmax_channels(logits);
  LabelMap truth(4, 3);
  for (auto& l : truth.labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  truth.at(1, 1) = kIgnoreLabel;
  ProbNllResult res = nll_on_probs(probs, truth);
  if (corrupt) res.grad.data[0] += 0.5;
  detail::GradAccum acc;
  auto eval = [&]() { return nll_on_probs(probs, truth).loss_sum; };
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    const double num = detail::central_diff(&probs.data[i], eval, 1e-7);
    acc.update(res.grad.data[i], num, "prob[" + std::to_string(i) + "]");
  }
  return {"prob-nll", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// Pairwise scale-invariant depth loss; the analytic gradient is taken with
/// respect to log depth, so the finite difference perturbs multiplicatively.
inline GradCheckReport gradcheck_scale_invariant(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 13));
  DepthMap d(4, 4, 0.0, true), d_star(4, 4, 0.0, true);
  for (double& v : d.depth) v = rng.uniform(0.5, 5.0);
  for (double& v : d_star.depth) v = rng.uniform(0.5, 5.0);
  d.valid[5] = 0;
  d_star.valid[10] = 0;
  ScaleInvariantResult res = scale_invariant_loss(d, d_star);
  if (corrupt) res.grad_log_d[0] += 0.5;
  detail::GradAccum acc;
  const double h = 1e-6;
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    const double saved = d.depth[i];
    d.depth[i] = saved * std::exp(h);
    const double hi = scale_invariant_loss(d, d_star).loss;
    d.depth[i] = saved * std::exp(-h);
    const double lo = scale_invariant_loss(d, d_star).loss;
    d.depth[i] = saved;
    acc.update(res.grad_log_d[i], (hi - lo) / (2.0 * h), "log_d[" + std::to_string(i) + "]");
  }
  return {"scale-invariant", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// Scale-invariant loss chained through bin softmax and expectation decoding.
inline GradCheckReport gradcheck_depth_loss(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 14));
  const DepthBinning binning{6, 0.4};
  Grid logits(4, 3, 6);
  for (double& v : logits.data) v = rng.uniform(-1.0, 1.0);
  DepthMap d_star(4, 3, 0.0, true);
  for (double& v : d_star.depth) v = rng.uniform(0.4, 2.2);
  d_star.valid[2] = 0;
  DepthLossResult res = depth_loss_backward(logits, d_star, binning);
  if (corrupt) res.grad_logits.data[0] += 0.5;
  detail::GradAccum acc;
  auto eval = [&]() { return depth_loss_backward(logits, d_star, binning).loss; };
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double num = detail::central_diff(&logits.data[i], eval, 1e-6);
    acc.update(res.grad_logits.data[i], num, "depth_logit[" + std::to_string(i) + "]");
  }
  return {"depth-loss", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// The weighted two-term combination itself.
inline GradCheckReport gradcheck_joint_loss(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 15));
  JointLossConfig cfg;
  cfg.lambda = rng.uniform(0.1, 2.0);
  double l_sem = rng.uniform(0.5, 3.0);
  double l_depth = rng.uniform(0.5, 3.0);
  double g_sem = cfg.lambda;  // analytic
  double g_depth = 1.0;
  if (corrupt) g_sem += 0.5;
  detail::GradAccum acc;
  auto eval = [&]() { return joint_loss(l_sem, l_depth, cfg); };
  acc.update(g_sem, detail::central_diff(&l_sem, eval, 1e-6), "l_sem");
  acc.update(g_depth, detail::central_diff(&l_depth, eval, 1e-6), "l_depth");
  return {"joint-loss", acc.max_rel_err, 1e-4, acc.worst, acc.checked};
}

/// CRF parameter and unary gradients through 2 unrolled mean-field iterations
/// on a 3x3 two-class instance, against a random linear functional of Q.
inline GradCheckReport gradcheck_crf(std::uint64_t seed, bool corrupt = false) {
  Rng rng(mix_seed(seed, 21));
  const int c = 2;
  Grid unaries(3, 3, c);
  for (double& v : unaries.data) v = rng.uniform(-1.5, 1.5);
  Grid image(3, 3, 3);
  for (double& v : image.data) v = rng.uniform(0.0, 255.0);
  DepthMap depth(3, 3, 0.0, true);
  for (double& v : depth.depth) v = rng.uniform(1.0, 4.0);
  CrfFeatures feats = CrfFeatures::from_image_depth(image, depth);
  CrfParams params = default_crf_params(c);
  // Move off the symmetric starting point so matrix gradients are generic.
  for (double& v : params.mu) v += rng.uniform(-0.2, 0.2);
  for (double& v : params.w1) v += rng.uniform(-0.5, 0.5);
  for (double& v : params.w2) v += rng.uniform(-0.5, 0.5);
  for (double& v : params.w3) v += rng.uniform(-0.5, 0.5);
  // Mild bandwidths so neighboring pixels interact measurably.
  params.theta_alpha = 2.0;
  params.theta_beta = 80.0;
  params.theta_gamma = 2.5;
  params.theta_zeta = 1.5;
  params.theta_tau = 1.5;
  Grid r(3, 3, c);
  for (double& v : r.data) v = rng.uniform(-1.0, 1.0);
  const int iters = 2;
  auto eval = [&]() {
    CrfResult res = crf_inference(unaries, feats, params, iters);
    double loss = 0.0;
    for (std::size_t i = 0; i < res.q.data.size(); ++i) loss += r.data[i] * res.q.data[i];
    return loss;
  };
  CrfTrace trace;
  crf_inference(unaries, feats, params, iters, {}, &trace);
  CrfGrads grads = crf_backward(r, feats, params, trace);
  if (corrupt) grads.grad_unaries.data[0] += 0.5;
  detail::GradAccum acc;
  const double h = 1e-6;
  for (std::size_t i = 0; i < unaries.data.size(); ++i) {
    const double num = detail::central_diff(&unaries.data[i], eval, h);
    acc.update(grads.grad_unaries.data[i], num, "unary[" + std::to_string(i) + "]");
  }
  const std::vector<std::pair<std::string, std::pair<std::vector<double>*,
                                                     std::vector<double>*>>> mats = {
      {"mu", {&params.mu, &grads.grad_mu}},
      {"w1", {&params.w1, &grads.grad_w1}},
      {"w2", {&params.w2, &grads.grad_w2}},
      {"w3", {&params.w3, &grads.grad_w3}},
  };
  for (const auto& [name, ptrs] : mats) {
    for (std::size_t i = 0; i < ptrs.first->size(); ++i) {
      const double num = detail::central_diff(&(*ptrs.first)[i], eval, h);
      acc.update((*ptrs.second)[i], num, name + "[" + std::to_string(i) + "]");
    }
  }
  return {"crf", acc.max_rel_err, 1e-3, acc.worst, acc.checked};
}

/// module: "net" | "losses" | "crf" | "all".
inline std::vector<GradCheckReport> run_gradcheck(const std::string& module, std::uint64_t seed,
                                                  bool corrupt = false) {
  std::vector<GradCheckReport> reports;
  const bool all = module == "all";
  if (all || module == "losses") {
    reports.push_back(gradcheck_semantic_loss(seed, corrupt));
    reports.push_back(gradcheck_prob_nll(seed, false));
    reports.push_back(gradcheck_scale_invariant(seed, false));
    reports.push_back(gradcheck_depth_loss(seed, false));
    reports.push_back(gradcheck_joint_loss(seed, false));
  } else if (module == "net") {
    reports.push_back(gradcheck_net(seed, corrupt));
  } else if (module == "crf") {
    reports.push_back(gradcheck_crf(seed, corrupt));
  } else if (!all) {
    throw std::invalid_argument("run_gradcheck: unknown module '" + module +
                                "' (expected net | losses | crf | all)");
  }
  if (all) {
    reports.push_back(gradcheck_net(seed, false));
    reports.push_back(gradcheck_crf(seed, false));
  }
  return reports;
}

inline std::string format_gradcheck_reports(const std::vector<GradCheckReport>& reports) {
  std::string out = "suite                max_rel_err   tolerance   status\n";
  for (const GradCheckReport& r : reports) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %-13.3e %-11.1e %s\n", r.suite.c_str(),
                  r.max_rel_err, r.tolerance, r.passed() ? "PASS" : "FAIL");
    out += buf;
    if (!r.passed()) {
      out += "  worst: " + r.worst + "\n";
    }
  }
  return out;
}

inline bool gradcheck_all_passed(const std::vector<GradCheckReport>& reports) {
  for (const GradCheckReport& r : reports) {
    if (!r.passed()) return false;
  }
  return true;
}

}  // namespace semdepth
