// Network building blocks (conv / pool / upsample), the multi-branch DAG,
// parameter initialization, and analytic gradients vs finite differences.

#include <gtest/gtest.h>

#include <cmath>

#include <semdepth/gradcheck.hpp>
#include <semdepth/net.hpp>
#include <semdepth/rng.hpp>

using namespace semdepth;

namespace {

LayerSpec raw_conv(int out, int kh, int kw, int stride, int pad, int dil) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.out_channels = out;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.padding = pad;
  s.dilation = dil;
  return s;
}

LayerParams make_params(const LayerSpec& spec, int in_channels, std::vector<double> w,
                        std::vector<double> b) {
  LayerParams p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  EXPECT_EQ(p.weight.size(),
            static_cast<std::size_t>(spec.kernel_h) * spec.kernel_w * in_channels *
                spec.out_channels);
  EXPECT_EQ(p.bias.size(), static_cast<std::size_t>(spec.out_channels));
  return p;
}

}  // namespace

TEST(Conv, RampCrossCorrelationOracle) {
  // [1 2 3 4 5] against kernel [-1 0 1], valid: out[x] = in[x+2] - in[x] = 2.
  Grid in(1, 5, 1);
  in.data = {1, 2, 3, 4, 5};
  LayerSpec spec = raw_conv(1, 1, 3, 1, 0, 1);
  LayerParams p = make_params(spec, 1, {-1.0, 0.0, 1.0}, {0.0});
  Grid out = conv_forward(in, spec, p);
  ASSERT_EQ(out.width, 3);
  ASSERT_EQ(out.height, 1);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 2.0);
}

TEST(Conv, DilationSkipsTaps) {
  // Kernel [1 1 1] at dilation 2 on [1 2 3 4 5]: out = in[0]+in[2]+in[4] = 9.
  Grid in(1, 5, 1);
  in.data = {1, 2, 3, 4, 5};
  LayerSpec spec = raw_conv(1, 1, 3, 1, 0, 2);
  LayerParams p = make_params(spec, 1, {1.0, 1.0, 1.0}, {0.0});
  Grid out = conv_forward(in, spec, p);
  ASSERT_EQ(out.width, 1);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 9.0);
}

TEST(Conv, PaddingContributesZerosAndBiasAdds) {
  // Padding is symmetric in both dims, so a 1x3 kernel on a 1x2 input with
  // padding 1 yields a 3x2 output whose middle row sees the real pixels.
  Grid in(1, 2, 1);
  in.data = {3.0, 4.0};
  LayerSpec spec = raw_conv(1, 1, 3, 1, 1, 1);
  LayerParams p = make_params(spec, 1, {1.0, 1.0, 1.0}, {10.0});
  Grid out = conv_forward(in, spec, p);
  ASSERT_EQ(out.height, 3);
  ASSERT_EQ(out.width, 2);
  EXPECT_DOUBLE_EQ(out.at(1, 0, 0), 10.0 + 0.0 + 3.0 + 4.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 10.0 + 3.0 + 4.0 + 0.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 10.0);  // all-padding row: bias only
}

TEST(Conv, StrideTwoOutputArithmetic) {
  Grid in(5, 5, 1);
  for (std::size_t i = 0; i < in.data.size(); ++i) in.data[i] = static_cast<double>(i);
  LayerSpec spec = raw_conv(2, 3, 3, 2, 1, 1);
  // (5 + 2*1 - 3)/2 + 1 = 3
  LayerParams p;
  p.weight.assign(3 * 3 * 1 * 2, 0.0);
  p.bias = {0.0, 0.0};
  Grid out = conv_forward(in, spec, p);
  EXPECT_EQ(out.height, 3);
  EXPECT_EQ(out.width, 3);
  EXPECT_EQ(out.channels, 2);
}

TEST(Conv, MultiChannelHandOracle) {
  // 1x1 kernel, 2 in channels, 1 out channel: plain dot product per pixel.
  Grid in(1, 1, 2);
  in.data = {2.0, 5.0};
  LayerSpec spec = raw_conv(1, 1, 1, 1, 0, 1);
  LayerParams p = make_params(spec, 2, {3.0, -1.0}, {0.5});
  Grid out = conv_forward(in, spec, p);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 3.0 * 2.0 - 1.0 * 5.0 + 0.5);
}

TEST(Pool, ThreeByThreeStrideTwoOracle) {
  // 4x4 ramp 1..16, pool k=3 s=2 p=1: windows centered on a 2x2 output.
  Grid in(4, 4, 1);
  for (std::size_t i = 0; i < in.data.size(); ++i) in.data[i] = static_cast<double>(i + 1);
  LayerSpec spec = pool_spec(3, 2, 1);
  Grid out = pool_forward(in, spec);
  ASSERT_EQ(out.height, 2);
  ASSERT_EQ(out.width, 2);
  // Window rows/cols: {-1..1} -> max of in[0..1][0..1] = 6; {-1..1}x{1..3} -> 8
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 6.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 8.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0, 0), 14.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 16.0);
}

TEST(Pool, BackwardRoutesToFirstMaxOnTies) {
  // All inputs tie; the gradient must flow to exactly one tap (the first in
  // scan order), never be split or duplicated.
  Grid in(3, 3, 1);
  in.data.assign(9, 1.0);
  LayerSpec spec = pool_spec(3, 1, 0);
  Grid out = pool_forward(in, spec);
  ASSERT_EQ(out.height, 1);
  ASSERT_EQ(out.width, 1);
  Grid grad_out(1, 1, 1);
  grad_out.data = {1.0};
  Grid grad_in = pool_backward(in, spec, grad_out);
  EXPECT_DOUBLE_EQ(grad_in.data[0], 1.0);
  for (int i = 1; i < 9; ++i) EXPECT_DOUBLE_EQ(grad_in.data[i], 0.0);
}

TEST(Upsample, LayerDoublesSpatialDimsInsideNetwork) {
  // Single branch: 1x1 conv then x2 upsample; the upsample layer is plain
  // bilinear resize, so head maps come from a 2Hx2W trunk feature.
  NetworkConfig cfg;
  cfg.num_classes = 2;
  cfg.num_bins = 2;
  cfg.input_height = cfg.input_width = 2;
  BranchSpec b;
  b.input = "rgb";
  b.layers = {conv_spec(1, 1), upsample_spec(2)};
  b.upsample_factor = 2;
  cfg.branches = {b};
  cfg.finalize();
  NetworkParams params = init_network_params(cfg, 3);
  params.layers[0].weight = {1.0, 0.0, 0.0};  // pick red channel
  params.layers[0].bias = {0.0};
  // seg head passes the feature through on class 0.
  params.layers[1].weight = {1.0, 0.0};
  params.layers[1].bias = {0.0, 0.0};
  Grid img(2, 2, 3);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      img.at(y, x, 0) = 127.5 * (1.0 + (y == 0 && x == 0 ? 1.0 : 0.0));
      img.at(y, x, 1) = 0.0;
      img.at(y, x, 2) = 0.0;
    }
  }
  // Trunk feature = normalized red = 1 at (0,0), 0 elsewhere; upsample to 4x4
  // then the head map resizes back to 2x2 — equivalent to resize(resize(f)).
  Grid feature(2, 2, 1);
  feature.data = {1.0, 0.0, 0.0, 0.0};
  Grid expected = bilinear_resize(bilinear_resize(feature, 4, 4), 2, 2);
  NetOutputs out = forward(img, cfg, params);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      EXPECT_NEAR(out.seg_logits.at(y, x, 0), expected.at(y, x, 0), 1e-12);
    }
  }
}

TEST(LayerSpec, ValidationRejectsBadShapes) {
  EXPECT_THROW(raw_conv(1, 2, 2, 1, 0, 1).validate(), std::invalid_argument);  // even kernel
  EXPECT_THROW(upsample_spec(3).validate(), std::invalid_argument);            // factor not 2/4/8
  LayerSpec bad_pool = pool_spec(2, 2, 2);  // padding >= kernel
  EXPECT_THROW(bad_pool.validate(), std::invalid_argument);
}

TEST(NetworkConfig, DeskConfigShapesAndTaps) {
  NetworkConfig cfg = desk_network_config(4, 10, 33);
  EXPECT_EQ(cfg.num_classes, 4);
  EXPECT_EQ(cfg.num_bins, 10);
  EXPECT_EQ(cfg.branches.size(), 2u);
  NetworkParams params = init_network_params(cfg, 42);
  Rng rng(7);
  Grid img(33, 33, 3);
  for (double& v : img.data) v = rng.uniform(0.0, 255.0);
  NetOutputs out = forward(img, cfg, params);
  EXPECT_EQ(out.seg_logits.height, 33);
  EXPECT_EQ(out.seg_logits.width, 33);
  EXPECT_EQ(out.seg_logits.channels, 4);
  EXPECT_EQ(out.depth_logits.channels, 10);
}

TEST(NetworkConfig, UnknownTapReferenceThrows) {
  NetworkConfig cfg = desk_network_config(4, 10, 33);
  cfg.branches[1].input = "nonexistent";
  EXPECT_THROW(cfg.finalize(), std::invalid_argument);
}

TEST(NetworkConfig, DuplicateTapNameThrows) {
  NetworkConfig cfg = desk_network_config(4, 10, 33);
  cfg.branches[0].layers.push_back(pool_spec(3, 2, 1, "pool2"));  // name already used in b2
  EXPECT_THROW(cfg.finalize(), std::invalid_argument);
}

TEST(Forward, SingleBranchHandComputedPixel) {
  // One 1x1 input, 1x1 conv trunk, default 1x1 heads; everything traceable by
  // hand through the (v - 127.5)/127.5 input normalization.
  NetworkConfig cfg;
  cfg.num_classes = 2;
  cfg.num_bins = 2;
  cfg.input_height = cfg.input_width = 1;
  BranchSpec b;
  b.input = "rgb";
  b.layers = {conv_spec(1, 1)};
  cfg.branches = {b};
  cfg.finalize();
  NetworkParams params = init_network_params(cfg, 0);
  // trunk: y = 1*r + 2*g + 3*b + 0.25
  params.layers[0].weight = {1.0, 2.0, 3.0};
  params.layers[0].bias = {0.25};
  // seg head: two outputs 2y+1, -y
  params.layers[1].weight = {2.0, -1.0};
  params.layers[1].bias = {1.0, 0.0};
  // depth head: outputs y, 3y
  params.layers[2].weight = {1.0, 3.0};
  params.layers[2].bias = {0.0, 0.0};
  Grid img(1, 1, 3);
  img.data = {127.5, 255.0, 0.0};  // normalized -> (0, 1, -1)
  NetOutputs out = forward(img, cfg, params);
  const double y = 0.0 * 1.0 + 1.0 * 2.0 + (-1.0) * 3.0 + 0.25;  // -0.75
  EXPECT_DOUBLE_EQ(out.seg_logits.at(0, 0, 0), 2.0 * y + 1.0);
  EXPECT_DOUBLE_EQ(out.seg_logits.at(0, 0, 1), -y);
  EXPECT_DOUBLE_EQ(out.depth_logits.at(0, 0, 0), y);
  EXPECT_DOUBLE_EQ(out.depth_logits.at(0, 0, 1), 3.0 * y);
}

TEST(Forward, SumAggregationAddsHeadMaps) {
  // Two identical single-conv branches with identical params: summed head
  // maps must be exactly twice one branch's output.
  NetworkConfig one;
  one.num_classes = 2;
  one.num_bins = 2;
  one.input_height = one.input_width = 3;
  BranchSpec b;
  b.input = "rgb";
  b.layers = {conv_spec(2, 3, 1, 1)};
  one.branches = {b};
  one.finalize();
  NetworkConfig two = one;
  two.branches = {b, b};
  two.finalize();
  NetworkParams p1 = init_network_params(one, 9);
  NetworkParams p2 = init_network_params(two, 1);
  // Copy branch-1 params into branch 2 (same layer structure).
  const std::size_t per_branch = p1.layers.size();
  for (std::size_t i = 0; i < per_branch; ++i) {
    p2.layers[i] = p1.layers[i];
    p2.layers[per_branch + i] = p1.layers[i];
  }
  Rng rng(5);
  Grid img(3, 3, 3);
  for (double& v : img.data) v = rng.uniform(0.0, 255.0);
  NetOutputs o1 = forward(img, one, p1);
  NetOutputs o2 = forward(img, two, p2);
  for (std::size_t i = 0; i < o1.seg_logits.data.size(); ++i) {
    EXPECT_NEAR(o2.seg_logits.data[i], 2.0 * o1.seg_logits.data[i], 1e-12);
  }
}

TEST(Init, SeedStableScaledAndZeroBias) {
  NetworkConfig cfg = desk_network_config(4, 10, 33);
  NetworkParams a = init_network_params(cfg, 11);
  NetworkParams b = init_network_params(cfg, 11);
  NetworkParams c = init_network_params(cfg, 12);
  ASSERT_EQ(a.layers.size(), b.layers.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].weight, b.layers[i].weight);
    if (a.layers[i].weight != c.layers[i].weight) any_diff = true;
    for (double bias : a.layers[i].bias) EXPECT_EQ(bias, 0.0);
  }
  EXPECT_TRUE(any_diff);
  // First trunk conv: fan_in = 3*3*3 = 27, |w| <= 1/sqrt(27).
  const double bound = 1.0 / std::sqrt(27.0) + 1e-12;
  for (double w : a.layers[0].weight) EXPECT_LE(std::abs(w), bound);
}

TEST(Backward, FullNetworkMatchesFiniteDifferences) {
  GradCheckReport r = gradcheck_net(7);
  EXPECT_LT(r.max_rel_err, 1e-4) << "worst: " << r.worst;
  EXPECT_GT(r.checked, 500);
}

TEST(Backward, LossSuitesMatchFiniteDifferences) {
  for (const GradCheckReport& r : run_gradcheck("losses", 7)) {
    EXPECT_TRUE(r.passed()) << r.suite << " worst: " << r.worst
                            << " err=" << r.max_rel_err;
  }
}

TEST(GradCheck, CorruptionIsDetected) {
  GradCheckReport r = gradcheck_net(7, true);
  EXPECT_FALSE(r.passed());
}

TEST(FullPreset, TopologyFinalizesWithRecordedShape) {
  NetworkConfig cfg = full_network_config();
  EXPECT_EQ(cfg.num_classes, 40);
  EXPECT_EQ(cfg.num_bins, 50);
  EXPECT_EQ(cfg.input_height, 513);
  EXPECT_EQ(cfg.branches.size(), 5u);
  // Later branches consume earlier pooled taps.
  EXPECT_EQ(cfg.branches[0].input, "rgb");
  EXPECT_EQ(cfg.branches[2].input, "pool2");
  EXPECT_EQ(cfg.branches[3].input, "pool3");
  EXPECT_EQ(cfg.branches[4].input, "pool4");
  // Upsample factors are part of the recorded topology.
  EXPECT_EQ(cfg.branches[1].upsample_factor, 2);
  EXPECT_EQ(cfg.branches[2].upsample_factor, 4);
  EXPECT_EQ(cfg.branches[3].upsample_factor, 4);
  EXPECT_EQ(cfg.branches[4].upsample_factor, 8);
  // The deepest branch keeps stride 8: its pool is stride 1 and its convs
  // are dilated instead.
  const BranchSpec& b5 = cfg.branches[4];
  for (const LayerSpec& l : b5.layers) {
    if (l.kind == LayerKind::kPool) EXPECT_EQ(l.stride, 1);
    if (l.kind == LayerKind::kConv && l.kernel_h == 3) EXPECT_EQ(l.dilation, 2);
  }
  NetworkParams params = init_network_params(cfg, 1);
  EXPECT_NO_THROW(validate_params(cfg, params));
}
