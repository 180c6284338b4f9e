#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"
#include "semdepth/rng.hpp"

namespace semdepth {

enum class LayerKind { kConv, kPool, kUpsample };

/// One layer of a branch. Pools that feed a later branch carry a tap name
/// ("pool2", "pool3", ...) which later branches reference as their input.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int out_channels = 0;  // conv only
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int upsample_factor = 0;  // upsample only
  std::string name;

  void validate() const {
    switch (kind) {
      case LayerKind::kConv:
        if (out_channels < 1) throw std::invalid_argument("LayerSpec: conv needs out_channels >= 1");
        if (kernel_h < 1 || kernel_w < 1 || kernel_h % 2 == 0 || kernel_w % 2 == 0) {
          throw std::invalid_argument("LayerSpec: conv kernel dims must be odd and positive");
        }
        if (dilation < 1) throw std::invalid_argument("LayerSpec: dilation must be >= 1");
        if (stride < 1) throw std::invalid_argument("LayerSpec: stride must be >= 1");
        if (padding < 0) throw std::invalid_argument("LayerSpec: padding must be >= 0");
        break;
      case LayerKind::kPool:
        if (kernel_h < 1 || kernel_w < 1) {
          throw std::invalid_argument("LayerSpec: pool kernel dims must be positive");
        }
        if (stride < 1) throw std::invalid_argument("LayerSpec: stride must be >= 1");
        if (dilation != 1) throw std::invalid_argument("LayerSpec: pool dilation must be 1");
        if (padding < 0 || padding >= kernel_h || padding >= kernel_w) {
          throw std::invalid_argument("LayerSpec: pool padding must be < kernel");
        }
        break;
      case LayerKind::kUpsample:
        if (upsample_factor != 2 && upsample_factor != 4 && upsample_factor != 8) {
          throw std::invalid_argument("LayerSpec: upsample_factor must be 2, 4 or 8");
        }
        break;
    }
  }
};

inline LayerSpec conv_spec(int out_channels, int kernel, int stride = 1, int padding = 0,
                           int dilation = 1) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.out_channels = out_channels;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  s.dilation = dilation;
  return s;
}

inline LayerSpec pool_spec(int kernel, int stride, int padding, std::string name = "") {
  LayerSpec s;
  s.kind = LayerKind::kPool;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  s.name = std::move(name);
  return s;
}

inline LayerSpec upsample_spec(int factor) {
  LayerSpec s;
  s.kind = LayerKind::kUpsample;
  s.upsample_factor = factor;
  return s;
}

/// One scale path: a trunk of layers over the branch input, then a 1x1 seg
/// head and a 1x1 depth head over the final trunk features. Head maps are
/// brought back to full resolution before aggregation; upsample_factor is the
/// nominal scale gap recorded for the branch.
struct BranchSpec {
  std::string input;  // "rgb" or the tap name of an earlier branch's pool
  std::vector<LayerSpec> layers;
  LayerSpec seg_head;
  LayerSpec depth_head;
  int upsample_factor = 1;
};

enum class Aggregation { kSum, kConcat };

struct NetworkConfig {
  std::vector<BranchSpec> branches;
  int num_classes = 0;
  int num_bins = 0;
  int input_height = 0;
  int input_width = 0;
  Aggregation aggregation = Aggregation::kSum;

  /// Fills default 1x1 heads on every branch and checks the topology.
  void finalize() {
    if (num_classes < 1 || num_bins < 1) {
      throw std::invalid_argument("NetworkConfig: num_classes and num_bins must be >= 1");
    }
    if (input_height < 1 || input_width < 1) {
      throw std::invalid_argument("NetworkConfig: input size must be positive");
    }
    if (branches.empty()) throw std::invalid_argument("NetworkConfig: needs at least one branch");
    std::map<std::string, int> taps;  // name -> producing branch
    int bi = 0;
    for (BranchSpec& b : branches) {
      if (b.input != "rgb") {
        auto it = taps.find(b.input);
        if (it == taps.end()) {
          throw std::invalid_argument("NetworkConfig: branch " + std::to_string(bi) +
                                      " input '" + b.input + "' is not produced earlier");
        }
      }
      for (LayerSpec& l : b.layers) {
        l.validate();
        if (!l.name.empty()) {
          if (taps.count(l.name)) {
            throw std::invalid_argument("NetworkConfig: duplicate tap name '" + l.name + "'");
          }
          taps[l.name] = bi;
        }
      }
      if (b.seg_head.out_channels == 0) b.seg_head = conv_spec(num_classes, 1);
      if (b.depth_head.out_channels == 0) b.depth_head = conv_spec(num_bins, 1);
      b.seg_head.validate();
      b.depth_head.validate();
      if (b.seg_head.kind != LayerKind::kConv || b.seg_head.kernel_h != 1 ||
          b.seg_head.kernel_w != 1 || b.seg_head.out_channels != num_classes) {
        throw std::invalid_argument("NetworkConfig: seg head must be a 1x1 conv to num_classes");
      }
      if (b.depth_head.kind != LayerKind::kConv || b.depth_head.kernel_h != 1 ||
          b.depth_head.kernel_w != 1 || b.depth_head.out_channels != num_bins) {
        throw std::invalid_argument("NetworkConfig: depth head must be a 1x1 conv to num_bins");
      }
      if (b.upsample_factor < 1) {
        throw std::invalid_argument("NetworkConfig: branch upsample factor must be >= 1");
      }
      ++bi;
    }
  }
};

struct LayerParams {
  std::vector<double> weight;  // [kh][kw][cin][cout], row-major
  std::vector<double> bias;    // [cout]
};

struct NetworkParams {
  std::vector<LayerParams> layers;  // one entry per conv layer, in plan order
  std::uint64_t seed = 0;
};

namespace detail {

struct PlannedLayer {
  enum class Role { kTrunk, kSegHead, kDepthHead, kSegMerge, kDepthMerge };
  Role role = Role::kTrunk;
  int branch = -1;
  LayerSpec spec;
  int in_channels = 0;
  int param_index = -1;  // index into NetworkParams::layers; -1 for pool/upsample
  std::string debug_name;
};

struct NetworkPlan {
  std::vector<PlannedLayer> layers;
  int num_param_layers = 0;
};

/// Walks the branch topology in order and resolves per-layer input channel
/// counts, parameter slots and the concat-mode merge layers.
inline NetworkPlan build_plan(const NetworkConfig& cfg) {
  NetworkPlan plan;
  std::map<std::string, int> tap_channels;
  int param_index = 0;
  for (std::size_t bi = 0; bi < cfg.branches.size(); ++bi) {
    const BranchSpec& b = cfg.branches[bi];
    int ch = 0;
    if (b.input == "rgb") {
      ch = 3;
    } else {
      auto it = tap_channels.find(b.input);
      if (it == tap_channels.end()) {
        throw std::invalid_argument("build_plan: unresolved branch input '" + b.input + "'");
      }
      ch = it->second;
    }
    int li = 0;
    for (const LayerSpec& l : b.layers) {
      PlannedLayer p;
      p.role = PlannedLayer::Role::kTrunk;
      p.branch = static_cast<int>(bi);
      p.spec = l;
      p.in_channels = ch;
      p.debug_name = "b" + std::to_string(bi) + ".layer" + std::to_string(li);
      if (l.kind == LayerKind::kConv) {
        p.param_index = param_index++;
        ch = l.out_channels;
      }
      if (!l.name.empty()) tap_channels[l.name] = ch;
      plan.layers.push_back(std::move(p));
      ++li;
    }
    PlannedLayer seg;
    seg.role = PlannedLayer::Role::kSegHead;
    seg.branch = static_cast<int>(bi);
    seg.spec = b.seg_head;
    seg.in_channels = ch;
    seg.param_index = param_index++;
    seg.debug_name = "b" + std::to_string(bi) + ".seg_head";
    plan.layers.push_back(std::move(seg));
    PlannedLayer dep;
    dep.role = PlannedLayer::Role::kDepthHead;
    dep.branch = static_cast<int>(bi);
    dep.spec = b.depth_head;
    dep.in_channels = ch;
    dep.param_index = param_index++;
    dep.debug_name = "b" + std::to_string(bi) + ".depth_head";
    plan.layers.push_back(std::move(dep));
  }
  if (cfg.aggregation == Aggregation::kConcat) {
    int nb = static_cast<int>(cfg.branches.size());
    PlannedLayer sm;
    sm.role = PlannedLayer::Role::kSegMerge;
    sm.spec = conv_spec(cfg.num_classes, 1);
    sm.in_channels = nb * cfg.num_classes;
    sm.param_index = param_index++;
    sm.debug_name = "seg_merge";
    plan.layers.push_back(std::move(sm));
    PlannedLayer dm;
    dm.role = PlannedLayer::Role::kDepthMerge;
    dm.spec = conv_spec(cfg.num_bins, 1);
    dm.in_channels = nb * cfg.num_bins;
    dm.param_index = param_index++;
    dm.debug_name = "depth_merge";
    plan.layers.push_back(std::move(dm));
  }
  plan.num_param_layers = param_index;
  return plan;
}

inline int conv_out_dim(int in, int kernel, int stride, int padding, int dilation) {
  int span = dilation * (kernel - 1) + 1;
  int num = in + 2 * padding - span;
  if (num < 0) return 0;
  return num / stride + 1;
}

}  // namespace detail

/// 2D cross-correlation with stride, zero padding and dilation.
inline Grid conv_forward(const Grid& input, const LayerSpec& spec, const LayerParams& params) {
  spec.validate();
  if (spec.kind != LayerKind::kConv) throw std::invalid_argument("conv_forward: not a conv spec");
  const int cin = input.channels;
  const int cout = spec.out_channels;
  const std::size_t expected = static_cast<std::size_t>(spec.kernel_h) * spec.kernel_w * cin * cout;
  if (params.weight.size() != expected || params.bias.size() != static_cast<std::size_t>(cout)) {
    throw std::invalid_argument("conv_forward: parameter shape does not match spec/input");
  }
  const int out_h = detail::conv_out_dim(input.height, spec.kernel_h, spec.stride, spec.padding,
                                         spec.dilation);
  const int out_w = detail::conv_out_dim(input.width, spec.kernel_w, spec.stride, spec.padding,
                                         spec.dilation);
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv_forward: output would be empty for input " +
                                std::to_string(input.height) + "x" + std::to_string(input.width));
  }
  Grid out(out_h, out_w, cout);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      double* orow = &out.at(oy, ox, 0);
      for (int co = 0; co < cout; ++co) orow[co] = params.bias[co];
      for (int ky = 0; ky < spec.kernel_h; ++ky) {
        int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
        if (iy < 0 || iy >= input.height) continue;
        for (int kx = 0; kx < spec.kernel_w; ++kx) {
          int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
          if (ix < 0 || ix >= input.width) continue;
          const double* irow = &input.at(iy, ix, 0);
          const double* wbase = &params.weight[(static_cast<std::size_t>(ky) * spec.kernel_w + kx) *
                                               cin * cout];
          for (int ci = 0; ci < cin; ++ci) {
            double v = irow[ci];
            const double* wrow = wbase + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) orow[co] += v * wrow[co];
          }
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  LayerParams param_grads;
  Grid grad_input;
};

inline ConvGrads conv_backward(const Grid& input, const LayerSpec& spec, const LayerParams& params,
                               const Grid& grad_out) {
  const int cin = input.channels;
  const int cout = spec.out_channels;
  ConvGrads g;
  g.param_grads.weight.assign(params.weight.size(), 0.0);
  g.param_grads.bias.assign(params.bias.size(), 0.0);
  g.grad_input = Grid(input.height, input.width, cin);
  for (int oy = 0; oy < grad_out.height; ++oy) {
    for (int ox = 0; ox < grad_out.width; ++ox) {
      const double* grow = &grad_out.at(oy, ox, 0);
      for (int co = 0; co < cout; ++co) g.param_grads.bias[co] += grow[co];
      for (int ky = 0; ky < spec.kernel_h; ++ky) {
        int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
        if (iy < 0 || iy >= input.height) continue;
        for (int kx = 0; kx < spec.kernel_w; ++kx) {
          int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
          if (ix < 0 || ix >= input.width) continue;
          const double* irow = &input.at(iy, ix, 0);
          double* girow = &g.grad_input.at(iy, ix, 0);
          std::size_t wbase = (static_cast<std::size_t>(ky) * spec.kernel_w + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double v = irow[ci];
            const double* wrow = &params.weight[wbase + static_cast<std::size_t>(ci) * cout];
            double* dwrow = &g.param_grads.weight[wbase + static_cast<std::size_t>(ci) * cout];
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) {
              dwrow[co] += v * grow[co];
              acc += wrow[co] * grow[co];
            }
            girow[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

/// Max pooling. Out-of-bounds taps introduced by padding are skipped, and the
/// first maximum in scan order wins ties so the backward routing is
/// deterministic.
inline Grid pool_forward(const Grid& input, const LayerSpec& spec) {
  spec.validate();
  if (spec.kind != LayerKind::kPool) throw std::invalid_argument("pool_forward: not a pool spec");
  const int out_h = detail::conv_out_dim(input.height, spec.kernel_h, spec.stride, spec.padding, 1);
  const int out_w = detail::conv_out_dim(input.width, spec.kernel_w, spec.stride, spec.padding, 1);
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("pool_forward: output would be empty");
  Grid out(out_h, out_w, input.channels);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      for (int c = 0; c < input.channels; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        for (int ky = 0; ky < spec.kernel_h; ++ky) {
          int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= input.height) continue;
          for (int kx = 0; kx < spec.kernel_w; ++kx) {
            int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= input.width) continue;
            best = std::max(best, input.at(iy, ix, c));
          }
        }
        out.at(oy, ox, c) = best;
      }
    }
  }
  return out;
}

inline Grid pool_backward(const Grid& input, const LayerSpec& spec, const Grid& grad_out) {
  Grid grad_in(input.height, input.width, input.channels);
  for (int oy = 0; oy < grad_out.height; ++oy) {
    for (int ox = 0; ox < grad_out.width; ++ox) {
      for (int c = 0; c < input.channels; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int by = -1, bx = -1;
        for (int ky = 0; ky < spec.kernel_h; ++ky) {
          int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= input.height) continue;
          for (int kx = 0; kx < spec.kernel_w; ++kx) {
            int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= input.width) continue;
            if (input.at(iy, ix, c) > best) {
              best = input.at(iy, ix, c);
              by = iy;
              bx = ix;
            }
          }
        }
        grad_in.at(by, bx, c) += grad_out.at(oy, ox, c);
      }
    }
  }
  return grad_in;
}

/// Deterministic parameter init: zero-mean uniform scaled by 1/sqrt(fan_in),
/// zero biases, one derived stream per layer.
inline NetworkParams init_network_params(const NetworkConfig& cfg, std::uint64_t seed) {
  detail::NetworkPlan plan = detail::build_plan(cfg);
  NetworkParams params;
  params.seed = seed;
  params.layers.resize(plan.num_param_layers);
  for (const auto& p : plan.layers) {
    if (p.param_index < 0) continue;
    const LayerSpec& s = p.spec;
    int fan_in = s.kernel_h * s.kernel_w * p.in_channels;
    double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(p.param_index)));
    LayerParams& lp = params.layers[p.param_index];
    lp.weight.resize(static_cast<std::size_t>(fan_in) * s.out_channels);
    for (double& w : lp.weight) w = rng.uniform(-a, a);
    lp.bias.assign(s.out_channels, 0.0);
  }
  return params;
}

inline void validate_params(const NetworkConfig& cfg, const NetworkParams& params) {
  detail::NetworkPlan plan = detail::build_plan(cfg);
  if (static_cast<int>(params.layers.size()) != plan.num_param_layers) {
    throw std::invalid_argument("validate_params: expected " +
                                std::to_string(plan.num_param_layers) + " parameter layers, got " +
                                std::to_string(params.layers.size()));
  }
  for (const auto& p : plan.layers) {
    if (p.param_index < 0) continue;
    const LayerParams& lp = params.layers[p.param_index];
    std::size_t wexp = static_cast<std::size_t>(p.spec.kernel_h) * p.spec.kernel_w * p.in_channels *
                       p.spec.out_channels;
    if (lp.weight.size() != wexp || lp.bias.size() != static_cast<std::size_t>(p.spec.out_channels)) {
      throw std::invalid_argument("validate_params: shape mismatch at " + p.debug_name);
    }
    for (double w : lp.weight) {
      if (!std::isfinite(w)) throw std::invalid_argument("validate_params: non-finite weight");
    }
    for (double b : lp.bias) {
      if (!std::isfinite(b)) throw std::invalid_argument("validate_params: non-finite bias");
    }
  }
}

struct NetOutputs {
  Grid seg_logits;    // H x W x num_classes
  Grid depth_logits;  // H x W x num_bins
};

/// Activations recorded during a cached forward pass, consumed by backward.
struct ForwardTrace {
  bool cached = false;
  std::vector<Grid> layer_inputs;  // input of each planned layer
  std::vector<Grid> head_maps_seg;
  std::vector<Grid> head_maps_depth;  // per branch, before resizing
  Grid seg_logits, depth_logits;
};

namespace detail {

inline Grid normalize_image(const Grid& img) {
  if (img.channels != 3) {
    throw std::invalid_argument("forward: expected a 3-channel image, got " +
                                std::to_string(img.channels) + " channels");
  }
  Grid out = img;
  for (double& v : out.data) v = (v - 127.5) / 127.5;
  return out;
}

}  // namespace detail

/// Runs the multi-branch trunk and both heads. Head maps of every branch are
/// brought to the input resolution and aggregated (sum by default, concat
/// followed by a learned 1x1 merge otherwise). Fully convolutional: any input
/// size that survives the pooling arithmetic is accepted.
inline NetOutputs forward(const Grid& img, const NetworkConfig& cfg, const NetworkParams& params,
                          ForwardTrace* trace = nullptr) {
  detail::NetworkPlan plan = detail::build_plan(cfg);
  validate_params(cfg, params);
  require_finite(img, "forward");
  if (trace) {
    *trace = ForwardTrace{};
    trace->layer_inputs.resize(plan.layers.size());
    trace->head_maps_seg.resize(cfg.branches.size());
    trace->head_maps_depth.resize(cfg.branches.size());
  }
  Grid norm = detail::normalize_image(img);
  std::map<std::string, Grid> taps;
  std::vector<Grid> resized_seg, resized_depth;
  Grid current;
  int current_branch = -1;
  std::size_t pi = 0;
  for (; pi < plan.layers.size(); ++pi) {
    const auto& p = plan.layers[pi];
    using Role = detail::PlannedLayer::Role;
    if (p.role == Role::kSegMerge || p.role == Role::kDepthMerge) break;
    if (p.branch != current_branch && p.role == Role::kTrunk) {
      current_branch = p.branch;
      const std::string& in = cfg.branches[p.branch].input;
      current = (in == "rgb") ? norm : taps.at(in);
    }
    if (p.role == Role::kTrunk) {
      if (trace) trace->layer_inputs[pi] = current;
      switch (p.spec.kind) {
        case LayerKind::kConv:
          current = conv_forward(current, p.spec, params.layers[p.param_index]);
          break;
        case LayerKind::kPool:
          current = pool_forward(current, p.spec);
          break;
        case LayerKind::kUpsample:
          current = bilinear_resize(current, current.height * p.spec.upsample_factor,
                                    current.width * p.spec.upsample_factor);
          break;
      }
      if (!p.spec.name.empty()) taps[p.spec.name] = current;
    } else {
      // Branch start with no trunk layers: resolve the input here.
      if (p.branch != current_branch) {
        current_branch = p.branch;
        const std::string& in = cfg.branches[p.branch].input;
        current = (in == "rgb") ? norm : taps.at(in);
      }
      if (trace) trace->layer_inputs[pi] = current;
      Grid head = conv_forward(current, p.spec, params.layers[p.param_index]);
      Grid resized = (head.height == img.height && head.width == img.width)
                         ? head
                         : bilinear_resize(head, img.height, img.width);
      if (p.role == Role::kSegHead) {
        if (trace) trace->head_maps_seg[p.branch] = head;
        resized_seg.push_back(std::move(resized));
      } else {
        if (trace) trace->head_maps_depth[p.branch] = head;
        resized_depth.push_back(std::move(resized));
      }
    }
  }
  NetOutputs out;
  if (cfg.aggregation == Aggregation::kSum) {
    out.seg_logits = channel_sum(std::span<const Grid>(resized_seg));
    out.depth_logits = channel_sum(std::span<const Grid>(resized_depth));
  } else {
    Grid seg_cat = channel_concat(std::span<const Grid>(resized_seg));
    Grid depth_cat = channel_concat(std::span<const Grid>(resized_depth));
    // The two merge layers close the plan, seg first.
    const auto& sm = plan.layers[pi];
    const auto& dm = plan.layers[pi + 1];
    if (trace) {
      trace->layer_inputs[pi] = seg_cat;
      trace->layer_inputs[pi + 1] = depth_cat;
    }
    out.seg_logits = conv_forward(seg_cat, sm.spec, params.layers[sm.param_index]);
    out.depth_logits = conv_forward(depth_cat, dm.spec, params.layers[dm.param_index]);
  }
  if (trace) {
    trace->seg_logits = out.seg_logits;
    trace->depth_logits = out.depth_logits;
    trace->cached = true;
  }
  return out;
}

using ParamGrads = std::vector<LayerParams>;

inline ParamGrads zero_param_grads(const NetworkParams& params) {
  ParamGrads grads(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    grads[i].weight.assign(params.layers[i].weight.size(), 0.0);
    grads[i].bias.assign(params.layers[i].bias.size(), 0.0);
  }
  return grads;
}

/// Reverse pass over the branch DAG. Gradients flowing into a pool tap from
/// later branches are accumulated before the producing layer is reached.
/// Requires a trace recorded by forward().
inline ParamGrads backward(const Grid& grad_seg, const Grid& grad_depth, const NetworkConfig& cfg,
                           const NetworkParams& params, const ForwardTrace& trace) {
  if (!trace.cached) {
    throw std::invalid_argument("backward: forward trace not cached; run forward with a trace");
  }
  detail::NetworkPlan plan = detail::build_plan(cfg);
  if (!grad_seg.same_shape(trace.seg_logits) || !grad_depth.same_shape(trace.depth_logits)) {
    throw std::invalid_argument("backward: output gradient shape mismatch");
  }
  ParamGrads grads = zero_param_grads(params);

  using Role = detail::PlannedLayer::Role;
  // Per-branch gradients on the resized head maps.
  const int nb = static_cast<int>(cfg.branches.size());
  std::vector<Grid> g_resized_seg(nb), g_resized_depth(nb);
  if (cfg.aggregation == Aggregation::kSum) {
    for (int b = 0; b < nb; ++b) {
      g_resized_seg[b] = grad_seg;
      g_resized_depth[b] = grad_depth;
    }
  } else {
    std::size_t sm_idx = plan.layers.size() - 2;
    std::size_t dm_idx = plan.layers.size() - 1;
    const auto& sm = plan.layers[sm_idx];
    const auto& dm = plan.layers[dm_idx];
    ConvGrads sg = conv_backward(trace.layer_inputs[sm_idx], sm.spec, params.layers[sm.param_index],
                                 grad_seg);
    ConvGrads dg = conv_backward(trace.layer_inputs[dm_idx], dm.spec, params.layers[dm.param_index],
                                 grad_depth);
    grads[sm.param_index] = std::move(sg.param_grads);
    grads[dm.param_index] = std::move(dg.param_grads);
    for (int b = 0; b < nb; ++b) {
      g_resized_seg[b] = Grid(grad_seg.height, grad_seg.width, cfg.num_classes);
      g_resized_depth[b] = Grid(grad_depth.height, grad_depth.width, cfg.num_bins);
      for (int y = 0; y < grad_seg.height; ++y) {
        for (int x = 0; x < grad_seg.width; ++x) {
          for (int c = 0; c < cfg.num_classes; ++c) {
            g_resized_seg[b].at(y, x, c) = sg.grad_input.at(y, x, b * cfg.num_classes + c);
          }
          for (int c = 0; c < cfg.num_bins; ++c) {
            g_resized_depth[b].at(y, x, c) = dg.grad_input.at(y, x, b * cfg.num_bins + c);
          }
        }
      }
    }
  }

  // Planned-layer index ranges per branch.
  std::vector<std::vector<std::size_t>> branch_layers(nb);
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    if (plan.layers[i].branch >= 0) branch_layers[plan.layers[i].branch].push_back(i);
  }

  std::map<std::string, Grid> tap_grads;
  for (int b = nb - 1; b >= 0; --b) {
    const auto& idxs = branch_layers[b];
    // Head gradients land on the final trunk features.
    Grid g_feature;
    for (std::size_t i : idxs) {
      const auto& p = plan.layers[i];
      if (p.role != Role::kSegHead && p.role != Role::kDepthHead) continue;
      const Grid& head_map = (p.role == Role::kSegHead) ? trace.head_maps_seg[b]
                                                        : trace.head_maps_depth[b];
      const Grid& g_resized = (p.role == Role::kSegHead) ? g_resized_seg[b] : g_resized_depth[b];
      Grid g_head = (head_map.height == g_resized.height && head_map.width == g_resized.width)
                        ? g_resized
                        : bilinear_resize_backward(g_resized, head_map.height, head_map.width);
      ConvGrads cg = conv_backward(trace.layer_inputs[i], p.spec, params.layers[p.param_index],
                                   g_head);
      grads[p.param_index] = std::move(cg.param_grads);
      if (g_feature.data.empty()) {
        g_feature = std::move(cg.grad_input);
      } else {
        for (std::size_t k = 0; k < g_feature.data.size(); ++k) {
          g_feature.data[k] += cg.grad_input.data[k];
        }
      }
    }
    // Walk the trunk in reverse. At each step `g` is the gradient on the
    // output of layer idxs[k]; named taps pick up contributions from later
    // branches here.
    Grid g = std::move(g_feature);
    for (int k = static_cast<int>(idxs.size()) - 1; k >= 0; --k) {
      const auto& p = plan.layers[idxs[k]];
      if (p.role != Role::kTrunk) continue;
      if (!p.spec.name.empty()) {
        auto it = tap_grads.find(p.spec.name);
        if (it != tap_grads.end()) {
          for (std::size_t j = 0; j < g.data.size(); ++j) g.data[j] += it->second.data[j];
        }
      }
      const Grid& input = trace.layer_inputs[idxs[k]];
      switch (p.spec.kind) {
        case LayerKind::kConv: {
          ConvGrads cg = conv_backward(input, p.spec, params.layers[p.param_index], g);
          for (std::size_t j = 0; j < grads[p.param_index].weight.size(); ++j) {
            grads[p.param_index].weight[j] += cg.param_grads.weight[j];
          }
          for (std::size_t j = 0; j < grads[p.param_index].bias.size(); ++j) {
            grads[p.param_index].bias[j] += cg.param_grads.bias[j];
          }
          g = std::move(cg.grad_input);
          break;
        }
        case LayerKind::kPool:
          g = pool_backward(input, p.spec, g);
          break;
        case LayerKind::kUpsample:
          g = bilinear_resize_backward(g, input.height, input.width);
          break;
      }
    }
    const std::string& in = cfg.branches[b].input;
    if (in != "rgb") {
      auto it = tap_grads.find(in);
      if (it == tap_grads.end()) {
        tap_grads[in] = std::move(g);
      } else {
        for (std::size_t j = 0; j < g.data.size(); ++j) it->second.data[j] += g.data[j];
      }
    }
  }
  return grads;
}

/// Two branches, 8/16 channels, sized so that training runs comfortably on a
/// single core.
inline NetworkConfig desk_network_config(int num_classes = 4, int num_bins = 10,
                                         int input_size = 33) {
  NetworkConfig cfg;
  cfg.num_classes = num_classes;
  cfg.num_bins = num_bins;
  cfg.input_height = cfg.input_width = input_size;
  BranchSpec b1;
  b1.input = "rgb";
  b1.layers = {conv_spec(8, 3, 1, 1), conv_spec(8, 3, 1, 1)};
  b1.upsample_factor = 1;
  BranchSpec b2;
  b2.input = "rgb";
  b2.layers = {conv_spec(8, 3, 1, 1), pool_spec(3, 2, 1, "pool2"), conv_spec(16, 3, 1, 1)};
  b2.upsample_factor = 2;
  cfg.branches = {b1, b2};
  cfg.finalize();
  return cfg;
}

/// The five-branch reference topology: 40 classes, 50 depth bins, 513x513
/// input, branch-5 convs dilated to keep the output stride at 8. Branch
/// upsample factors are part of the recorded topology (branch 4 carries x4
/// even though its pools suggest x8).
inline NetworkConfig full_network_config() {
  NetworkConfig cfg;
  cfg.num_classes = 40;
  cfg.num_bins = 50;
  cfg.input_height = cfg.input_width = 513;
  BranchSpec b1;
  b1.input = "rgb";
  b1.layers = {conv_spec(64, 3, 1, 1), conv_spec(64, 3, 1, 1)};
  b1.upsample_factor = 1;
  BranchSpec b2;
  b2.input = "rgb";
  b2.layers = {conv_spec(64, 3, 1, 1), conv_spec(64, 3, 1, 1), pool_spec(3, 2, 1, "pool2"),
               conv_spec(128, 3, 1, 1)};
  b2.upsample_factor = 2;
  BranchSpec b3;
  b3.input = "pool2";
  b3.layers = {conv_spec(128, 3, 1, 1), conv_spec(128, 3, 1, 1), pool_spec(3, 2, 1, "pool3"),
               conv_spec(128, 3, 1, 1), conv_spec(128, 3, 1, 1)};
  b3.upsample_factor = 4;
  BranchSpec b4;
  b4.input = "pool3";
  b4.layers = {conv_spec(256, 3, 1, 1), conv_spec(256, 3, 1, 1), pool_spec(3, 2, 1, "pool4"),
               conv_spec(128, 3, 1, 1), conv_spec(128, 3, 1, 1)};
  b4.upsample_factor = 4;
  BranchSpec b5;
  b5.input = "pool4";
  // Stride-1 pool plus dilation keeps this branch at output stride 8.
  b5.layers = {conv_spec(512, 3, 1, 2, 2), conv_spec(512, 3, 1, 2, 2), pool_spec(3, 1, 1, "pool5"),
               conv_spec(1024, 3, 1, 2, 2), conv_spec(1024, 1)};
  b5.upsample_factor = 8;
  cfg.branches = {b1, b2, b3, b4, b5};
  cfg.finalize();
  return cfg;
}

}  // namespace semdepth
