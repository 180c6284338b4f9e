// Grid primitives, RNG, losses, and metrics against hand-computed and
// independently implemented oracles.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <numeric>

#include <semdepth/grid.hpp>
#include <semdepth/losses.hpp>
#include <semdepth/metrics.hpp>
#include <semdepth/rng.hpp>

using namespace semdepth;

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

TEST(Grid, IndexingIsRowMajorChannelsLast) {
  Grid g(2, 3, 4);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = static_cast<double>(i);
  EXPECT_EQ(g.at(0, 0, 0), 0.0);
  EXPECT_EQ(g.at(0, 0, 3), 3.0);
  EXPECT_EQ(g.at(0, 1, 0), 4.0);
  EXPECT_EQ(g.at(1, 0, 0), 12.0);
  EXPECT_EQ(g.at(1, 2, 3), 23.0);
}

TEST(Grid, SoftmaxRowsSumToOneAndOrderPreserved) {
  Grid g(1, 2, 3);
  g.data = {1.0, 2.0, 0.5, -3.0, -2.0, -4.0};
  Grid p = softmax_channels(g);
  for (int x = 0; x < 2; ++x) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += p.at(0, x, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_GT(p.at(0, 0, 1), p.at(0, 0, 0));
  EXPECT_GT(p.at(0, 0, 0), p.at(0, 0, 2));
}

TEST(Grid, SoftmaxMatchesHandComputedTwoClass) {
  Grid g(1, 1, 2);
  g.data = {1.0, 0.0};
  Grid p = softmax_channels(g);
  // 1 / (1 + e^-1)
  EXPECT_NEAR(p.at(0, 0, 0), 0.7310585786300049, 1e-15);
  EXPECT_NEAR(p.at(0, 0, 1), 0.2689414213699951, 1e-15);
}

TEST(Grid, BilinearResizeUpsamplesRampWithHalfPixelCenters) {
  Grid g(1, 2, 1);
  g.data = {0.0, 1.0};
  Grid out = bilinear_resize(g, 1, 4);
  ASSERT_EQ(out.width, 4);
  EXPECT_NEAR(out.at(0, 0, 0), 0.0, 1e-12);
  EXPECT_NEAR(out.at(0, 1, 0), 0.25, 1e-12);
  EXPECT_NEAR(out.at(0, 2, 0), 0.75, 1e-12);
  EXPECT_NEAR(out.at(0, 3, 0), 1.0, 1e-12);
}

TEST(Grid, BilinearResizeIdentityWhenSameSize) {
  Rng rng(1);
  Grid g(3, 5, 2);
  for (double& v : g.data) v = rng.uniform();
  Grid out = bilinear_resize(g, 3, 5);
  for (std::size_t i = 0; i < g.data.size(); ++i) EXPECT_DOUBLE_EQ(out.data[i], g.data[i]);
}

TEST(Grid, BilinearResizeBackwardMatchesFiniteDifference) {
  Rng rng(2);
  Grid g(2, 3, 1);
  for (double& v : g.data) v = rng.uniform();
  Grid up = bilinear_resize(g, 3, 5);
  Grid grad_out(3, 5, 1);
  for (double& v : grad_out.data) v = rng.uniform(-1.0, 1.0);
  Grid grad_in = bilinear_resize_backward(grad_out, 2, 3);
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    Grid gp = g, gm = g;
    gp.data[i] += h;
    gm.data[i] -= h;
    Grid up_p = bilinear_resize(gp, 3, 5);
    Grid up_m = bilinear_resize(gm, 3, 5);
    double lp = 0.0, lm = 0.0;
    for (std::size_t k = 0; k < up_p.data.size(); ++k) {
      lp += grad_out.data[k] * up_p.data[k];
      lm += grad_out.data[k] * up_m.data[k];
    }
    EXPECT_NEAR(grad_in.data[i], (lp - lm) / (2.0 * h), 1e-7);
  }
}

TEST(Grid, ChannelConcatAndSum) {
  Grid a(1, 1, 2), b(1, 1, 1);
  a.data = {1.0, 2.0};
  b.data = {5.0};
  Grid cat = channel_concat({a, b});
  ASSERT_EQ(cat.channels, 3);
  EXPECT_EQ(cat.data[0], 1.0);
  EXPECT_EQ(cat.data[1], 2.0);
  EXPECT_EQ(cat.data[2], 5.0);
  Grid c(1, 1, 2);
  c.data = {10.0, 20.0};
  Grid sum = channel_sum({a, c});
  EXPECT_EQ(sum.data[0], 11.0);
  EXPECT_EQ(sum.data[1], 22.0);
}

TEST(Grid, RequireFiniteThrowsOnNan) {
  Grid g(1, 1, 1);
  g.data = {std::nan("")};
  EXPECT_THROW(require_finite(g, "test"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// rng
// ---------------------------------------------------------------------------

// Independent splitmix64 oracle (the well-known finalizer constants).
static std::uint64_t splitmix64_oracle(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TEST(Rng, MixSeedMatchesSplitmixOracle) {
  // mix_seed(seed, stream) == splitmix64 finalizer of seed + GOLDEN*(stream+1)
  EXPECT_EQ(mix_seed(0, 0), splitmix64_oracle(0));
  EXPECT_EQ(mix_seed(12345, 0), splitmix64_oracle(12345));
  const std::uint64_t gamma = 0x9E3779B97F4A7C15ULL;
  EXPECT_EQ(mix_seed(12345, 3), splitmix64_oracle(12345 + gamma * 3));
}

TEST(Rng, StreamsDecorrelate) {
  EXPECT_NE(mix_seed(7, 0), mix_seed(7, 1));
  EXPECT_NE(mix_seed(7, 0), mix_seed(8, 0));
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, UniformIntCoversInclusiveRange) {
  Rng rng(4);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 1000; ++i) {
    int v = rng.uniform_int(2, 5);
    EXPECT_GE(v, 2);
    EXPECT_LE(v, 5);
    saw_lo |= v == 2;
    saw_hi |= v == 5;
  }
  EXPECT_TRUE(saw_lo);
  EXPECT_TRUE(saw_hi);
}

TEST(Rng, NormalHasRoughlyStandardMoments) {
  Rng rng(5);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sum2 += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sum2 / n, 1.0, 0.05);
}

TEST(Rng, PermutationIsValidAndSeedStable) {
  Rng a(6), b(6), c(7);
  auto pa = a.permutation(50);
  auto pb = b.permutation(50);
  auto pc = c.permutation(50);
  EXPECT_EQ(pa, pb);
  EXPECT_NE(pa, pc);
  std::vector<int> seen(50, 0);
  for (int v : pa) {
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 50);
    ++seen[v];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

TEST(SemanticLoss, SinglePixelTwoClassOracle) {
  Grid logits(1, 1, 2);
  logits.data = {1.0, 0.0};
  LabelMap truth(1, 1);
  truth.at(0, 0) = 0;
  SemanticLossResult r = semantic_loss(logits, truth);
  // -log(e^1 / (e^1 + e^0)) = log(1 + e^-1)
  EXPECT_NEAR(r.loss_sum, 0.31326168751822286, 1e-15);
  EXPECT_EQ(r.counted_pixels, 1);
  EXPECT_NEAR(r.grad.at(0, 0, 0), 0.7310585786300049 - 1.0, 1e-15);
  EXPECT_NEAR(r.grad.at(0, 0, 1), 0.2689414213699951, 1e-15);
}

TEST(SemanticLoss, SumsOverPixelsAndSkipsIgnore) {
  Grid logits(1, 3, 2);
  logits.data = {1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
  LabelMap truth(1, 3);
  truth.at(0, 0) = 0;
  truth.at(0, 1) = 0;
  truth.at(0, 2) = kIgnoreLabel;
  SemanticLossResult r = semantic_loss(logits, truth);
  EXPECT_NEAR(r.loss_sum, 2.0 * 0.31326168751822286, 1e-14);
  EXPECT_EQ(r.counted_pixels, 2);
  EXPECT_NEAR(r.loss_mean, 0.31326168751822286, 1e-15);
  // Ignored pixel contributes zero gradient.
  EXPECT_EQ(r.grad.at(0, 2, 0), 0.0);
  EXPECT_EQ(r.grad.at(0, 2, 1), 0.0);
}

TEST(SemanticLoss, InvariantUnderPerPixelLogitShift) {
  Rng rng(11);
  Grid logits(2, 2, 3);
  for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
  LabelMap truth(2, 2);
  for (auto& l : truth.labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  double base = semantic_loss(logits, truth).loss_sum;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      double shift = rng.uniform(-1.0, 1.0);
      for (int c = 0; c < 3; ++c) logits.at(y, x, c) += shift;
    }
  }
  EXPECT_NEAR(semantic_loss(logits, truth).loss_sum, base, 1e-10);
}

TEST(SemanticLoss, OutOfRangeLabelThrows) {
  Grid logits(1, 1, 2);
  logits.data = {0.0, 0.0};
  LabelMap truth(1, 1);
  truth.at(0, 0) = 2;
  EXPECT_THROW(semantic_loss(logits, truth), std::invalid_argument);
}

TEST(ProbNll, GradientIsNegativeReciprocalAtTruth) {
  Grid probs(1, 1, 3);
  probs.data = {0.2, 0.5, 0.3};
  LabelMap truth(1, 1);
  truth.at(0, 0) = 1;
  ProbNllResult r = nll_on_probs(probs, truth);
  EXPECT_NEAR(r.loss_sum, -std::log(0.5), 1e-15);
  EXPECT_NEAR(r.grad.at(0, 0, 1), -2.0, 1e-12);
  EXPECT_EQ(r.grad.at(0, 0, 0), 0.0);
  EXPECT_EQ(r.grad.at(0, 0, 2), 0.0);
}

TEST(DepthExpectation, UniformBinsDecodeToMidpoint) {
  const DepthBinning binning{50, 0.14};
  Grid probs(1, 1, 50);
  for (double& v : probs.data) v = 1.0 / 50.0;
  DepthMap d = depth_expectation(probs, binning);
  // sum (b+1) * l * p = l * (N+1)/2 = 0.14 * 25.5
  EXPECT_NEAR(d.at(0, 0), 3.57, 1e-12);
  EXPECT_TRUE(d.is_valid(0, 0));
}

TEST(DepthExpectation, OneHotDecodesToBinCenterExactly) {
  const DepthBinning binning{8, 0.25};
  for (int k = 0; k < 8; ++k) {
    Grid probs(1, 1, 8);
    probs.data.assign(8, 0.0);
    probs.data[static_cast<std::size_t>(k)] = 1.0;
    DepthMap d = depth_expectation(probs, binning);
    EXPECT_DOUBLE_EQ(d.at(0, 0), (k + 1) * 0.25);
  }
}

TEST(DepthExpectation, DecodedValuesStayInsideBinRange) {
  Rng rng(12);
  const DepthBinning binning{6, 0.5};
  Grid logits(4, 4, 6);
  for (double& v : logits.data) v = rng.uniform(-8.0, 8.0);
  DepthMap d = depth_expectation(softmax_channels(logits), binning);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_GE(d.at(y, x), 0.5);
      EXPECT_LE(d.at(y, x), 3.0);
    }
  }
}

TEST(DepthExpectation, RejectsUnnormalizedRows) {
  const DepthBinning binning{4, 1.0};
  Grid probs(1, 1, 4);
  probs.data = {0.5, 0.5, 0.5, 0.5};
  EXPECT_THROW(depth_expectation(probs, binning), std::invalid_argument);
}

TEST(ScaleInvariantLoss, TwoPixelOracle) {
  DepthMap d(1, 2, 0.0, true), d_star(1, 2, 0.0, true);
  d.depth = {1.0, 2.0};
  d_star.depth = {1.0, 1.0};
  ScaleInvariantResult r = scale_invariant_loss(d, d_star);
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(r.loss, ln2 * ln2 / 2.0, 1e-15);
  EXPECT_EQ(r.counted_pixels, 2);
  EXPECT_NEAR(r.grad_log_d[0], -ln2, 1e-14);
  EXPECT_NEAR(r.grad_log_d[1], ln2, 1e-14);
}

TEST(ScaleInvariantLoss, InvariantUnderGlobalScale) {
  Rng rng(13);
  DepthMap d(3, 3, 0.0, true), d_star(3, 3, 0.0, true);
  for (double& v : d.depth) v = rng.uniform(0.5, 4.0);
  for (double& v : d_star.depth) v = rng.uniform(0.5, 4.0);
  const double base = scale_invariant_loss(d, d_star).loss;
  for (double alpha : {0.5, 2.0, 10.0}) {
    DepthMap scaled = d;
    for (double& v : scaled.depth) v *= alpha;
    EXPECT_NEAR(scale_invariant_loss(scaled, d_star).loss, base, 1e-9);
  }
}

TEST(ScaleInvariantLoss, LinearFormMatchesPairSumUpToN64) {
  Rng rng(14);
  for (int n : {2, 3, 7, 16, 64}) {
    DepthMap d(n, 1, 0.0, true), d_star(n, 1, 0.0, true);
    for (double& v : d.depth) v = rng.uniform(0.5, 6.0);
    for (double& v : d_star.depth) v = rng.uniform(0.5, 6.0);
    const double fast = scale_invariant_loss(d, d_star).loss;
    // Ordered-pair oracle: (1/n^2) sum_{i,j} (g_i - g_j)^2 over ordered pairs.
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::log(d.depth[i]) - std::log(d_star.depth[i]);
    double brute = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double diff = g[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(j)];
        brute += diff * diff;
      }
    }
    brute /= static_cast<double>(n) * n;
    EXPECT_NEAR(fast, brute, 1e-10 * std::max(1.0, std::abs(brute)));
  }
}

TEST(ScaleInvariantLoss, UsesOnlyJointlyValidPixels) {
  DepthMap d(1, 3, 0.0, true), d_star(1, 3, 0.0, true);
  d.depth = {1.0, 2.0, 100.0};
  d_star.depth = {1.0, 1.0, 1.0};
  d.valid[2] = 0;  // outlier ignored
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(scale_invariant_loss(d, d_star).loss, ln2 * ln2 / 2.0, 1e-15);
}

TEST(ScaleInvariantLoss, ErrorsOnNonPositiveAndTooFewPixels) {
  DepthMap d(1, 2, 1.0, true), d_star(1, 2, 1.0, true);
  d.depth[0] = -1.0;
  EXPECT_THROW(scale_invariant_loss(d, d_star), std::invalid_argument);
  DepthMap one(1, 1, 1.0, true);
  EXPECT_THROW(scale_invariant_loss(one, one), std::invalid_argument);
}

TEST(DepthLoss, UniformLogitsDecodeToMidpointEverywhere) {
  const DepthBinning binning{10, 0.7};
  Grid logits(2, 2, 10);  // all zeros -> uniform softmax
  DepthMap d_star(2, 2, 2.0, true);
  DepthLossResult r = depth_loss_backward(logits, d_star, binning);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) EXPECT_NEAR(r.decoded.at(y, x), 0.7 * 5.5, 1e-12);
  }
  // Constant decoded depth vs constant truth: ratio constant -> loss 0.
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(JointLoss, WeightedSumOracle) {
  JointLossConfig cfg;
  cfg.lambda = 1e-6;
  EXPECT_NEAR(joint_loss(2.0, 3.0, cfg), 1e-6 * 2.0 + 3.0, 1e-18);
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

TEST(DepthMetrics, TwoPixelOracle) {
  DepthMap d(1, 2, 0.0, true), d_star(1, 2, 0.0, true);
  d.depth = {1.0, 2.0};
  d_star.depth = {1.0, 4.0};
  DepthReport r = eval_depth(d, d_star);
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(r.delta1, 0.5, 1e-15);
  EXPECT_NEAR(r.delta2, 0.5, 1e-15);
  EXPECT_NEAR(r.delta3, 0.5, 1e-15);
  EXPECT_NEAR(r.abs_rel, 0.25, 1e-15);
  EXPECT_NEAR(r.sqr_rel, 0.5, 1e-15);
  EXPECT_NEAR(r.rmse_lin, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.rmse_log, ln2 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(r.rmse_silog, ln2 / 2.0, 1e-15);
  EXPECT_EQ(r.counted_pixels, 2);
}

TEST(DepthMetrics, PerfectPredictionIsAllPerfect) {
  DepthMap d(2, 2, 3.0, true);
  DepthReport r = eval_depth(d, d);
  EXPECT_DOUBLE_EQ(r.delta1, 1.0);
  EXPECT_DOUBLE_EQ(r.abs_rel, 0.0);
  EXPECT_DOUBLE_EQ(r.rmse_lin, 0.0);
  EXPECT_DOUBLE_EQ(r.rmse_silog, 0.0);
}

TEST(DepthMetrics, SilogIsScaleInvariant) {
  Rng rng(15);
  DepthMap d(4, 4, 0.0, true), d_star(4, 4, 0.0, true);
  for (double& v : d.depth) v = rng.uniform(0.5, 5.0);
  for (double& v : d_star.depth) v = rng.uniform(0.5, 5.0);
  const double base = eval_depth(d, d_star).rmse_silog;
  for (double alpha : {0.5, 2.0, 10.0}) {
    DepthMap scaled = d;
    for (double& v : scaled.depth) v *= alpha;
    EXPECT_NEAR(eval_depth(scaled, d_star).rmse_silog, base, 1e-9);
  }
}

TEST(DepthMetrics, InvalidPixelsExcludedAndErrors) {
  DepthMap d(1, 2, 1.0, true), d_star(1, 2, 1.0, true);
  d.depth[1] = 100.0;
  d_star.valid[1] = 0;
  DepthReport r = eval_depth(d, d_star);
  EXPECT_EQ(r.counted_pixels, 1);
  EXPECT_DOUBLE_EQ(r.abs_rel, 0.0);

  DepthMap none(1, 1, 1.0, false);
  EXPECT_THROW(eval_depth(none, none), std::invalid_argument);
  DepthMap neg(1, 1, -1.0, true), pos(1, 1, 1.0, true);
  EXPECT_THROW(eval_depth(neg, pos), std::invalid_argument);
}

TEST(SegMetrics, HalfRightOracleWithUnionConvention) {
  LabelMap pred(1, 4, 0), truth(1, 4, 0);
  truth.at(0, 2) = 1;
  truth.at(0, 3) = 1;
  SegReport r = eval_seg(pred, truth, 2);
  EXPECT_NEAR(r.per_class_iou[0], 0.5, 1e-15);
  EXPECT_NEAR(r.per_class_iou[1], 0.0, 1e-15);
  EXPECT_NEAR(r.mean_iou, 0.25, 1e-15);
  EXPECT_NEAR(r.mean_accuracy, 0.5, 1e-15);
  EXPECT_NEAR(r.pixel_accuracy, 0.5, 1e-15);
  EXPECT_EQ(r.counted_pixels, 4);
}

TEST(SegMetrics, ClassAbsentEverywhereExcludedFromMeanIoU) {
  LabelMap pred(1, 2, 0), truth(1, 2, 0);
  SegReport r = eval_seg(pred, truth, 3);
  // Only class 0 appears anywhere; classes 1,2 are excluded from the mean.
  EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 1.0);
}

TEST(SegMetrics, FalsePositiveClassCountsInUnion) {
  // Truth never contains class 1, but pred claims it: union convention keeps
  // class 1 in the mean with IoU 0.
  LabelMap pred(1, 2, 0), truth(1, 2, 0);
  pred.at(0, 1) = 1;
  SegReport r = eval_seg(pred, truth, 2);
  EXPECT_NEAR(r.per_class_iou[0], 0.5, 1e-15);
  EXPECT_NEAR(r.per_class_iou[1], 0.0, 1e-15);
  EXPECT_NEAR(r.mean_iou, 0.25, 1e-15);
  // Mean accuracy averages over truth-present classes only (class 0).
  EXPECT_NEAR(r.mean_accuracy, 0.5, 1e-15);
}

TEST(SegMetrics, IgnoreExcludedEverywhere) {
  LabelMap pred(1, 3, 0), truth(1, 3, 0);
  truth.at(0, 2) = kIgnoreLabel;
  pred.at(0, 2) = 1;  // would be wrong if counted
  SegReport r = eval_seg(pred, truth, 2);
  EXPECT_EQ(r.counted_pixels, 2);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 1.0);
}

TEST(SegMetrics, ErrorPaths) {
  LabelMap pred(1, 1, 0), truth(1, 1, 0);
  truth.at(0, 0) = 5;
  EXPECT_THROW(eval_seg(pred, truth, 2), std::invalid_argument);
  LabelMap all_ignore(1, 1, kIgnoreLabel);
  LabelMap p(1, 1, 0);
  EXPECT_THROW(eval_seg(p, all_ignore, 2), std::invalid_argument);
  LabelMap other(2, 1, 0);
  EXPECT_THROW(eval_seg(pred, other, 2), std::invalid_argument);
}

TEST(Reports, DepthRowLabelsAreFrozen) {
  DepthMap d(1, 2, 1.0, true);
  DepthReport r = eval_depth(d, d);
  const std::string csv = depth_report_csv(r);
  EXPECT_NE(csv.find("threshold delta < 1.25,"), std::string::npos);
  EXPECT_NE(csv.find("threshold delta < 1.25^2,"), std::string::npos);
  EXPECT_NE(csv.find("threshold delta < 1.25^3,"), std::string::npos);
  EXPECT_NE(csv.find("abs relative distance,"), std::string::npos);
  EXPECT_NE(csv.find("sqr relative distance,"), std::string::npos);
  EXPECT_NE(csv.find("RMSE (linear),"), std::string::npos);
  EXPECT_NE(csv.find("RMSE (log),"), std::string::npos);
  EXPECT_NE(csv.find("RMSE (log. scale invariant),"), std::string::npos);
}

TEST(Reports, SegRowLabelsAreFrozen) {
  LabelMap m(1, 2, 0);
  m.at(0, 1) = 1;
  SegReport r = eval_seg(m, m, 2);
  const std::string csv = seg_report_csv(r);
  EXPECT_NE(csv.find("Mean IoU,"), std::string::npos);
  EXPECT_NE(csv.find("Mean Accuracy,"), std::string::npos);
  EXPECT_NE(csv.find("Pixel Accuracy,"), std::string::npos);
}

TEST(Reports, MetricsFormattedWithSixDecimals) {
  DepthMap d(1, 2, 2.0, true);
  const std::string csv = depth_report_csv(eval_depth(d, d));
  EXPECT_NE(csv.find("1.000000"), std::string::npos);
  EXPECT_NE(csv.find("0.000000"), std::string::npos);
}
