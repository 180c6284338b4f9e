#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/png_io.hpp"
#include "semdepth/rng.hpp"

namespace semdepth {

struct Sample {
  std::string id;
  Grid image;  // H x W x 3, values 0..255
  LabelMap labels;
  DepthMap depth;  // meters

  void validate() const {
    if (image.channels != 3) throw std::invalid_argument("Sample: image must have 3 channels");
    if (image.height != labels.height || image.width != labels.width ||
        image.height != depth.height || image.width != depth.width) {
      throw std::invalid_argument("Sample '" + id + "': image/labels/depth dims mismatch");
    }
  }
};

namespace detail {

inline std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double r = 0, g = 0, b = 0;
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  auto to8 = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
  return {to8(r), to8(g), to8(b)};
}

}  // namespace detail

/// Fixed label palette: a golden-angle hue walk so any two small class ids
/// get clearly distinct colors. Entry 255 (the IGNORE sentinel) is black.
inline const Palette& default_palette() {
  static const Palette palette = [] {
    Palette p;
    for (int i = 0; i < 255; ++i) {
      const double hue = std::fmod(0.125 + i * 0.61803398874989485, 1.0);
      const double sat = 0.55 + 0.40 * std::fmod(i * 0.37, 1.0);
      const double val = 0.65 + 0.30 * std::fmod(i * 0.23, 1.0);
      p.colors[i] = detail::hsv_to_rgb(hue, sat, val);
    }
    p.colors[255] = {0, 0, 0};
    return p;
  }();
  return palette;
}

/// Clips valid ground-truth depths into the binning range and rounds each to
/// the nearest multiple of the bin length. Missing (invalid) pixels stay
/// untouched. Idempotent. Training-set preprocessing only: evaluation depths
/// must never pass through here.
inline DepthMap preprocess_depth(const DepthMap& d, const DepthBinning& binning) {
  binning.validate();
  DepthMap out = d;
  const double l = binning.bin_length;
  const double hi = binning.ceiling();
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x)) continue;
      double v = std::clamp(d.at(y, x), l, hi);
      out.at(y, x) = std::round(v / l) * l;
    }
  }
  return out;
}

/// Horizontal mirror of all planes; an involution.
inline Sample mirror_sample(const Sample& s) {
  s.validate();
  Sample out;
  out.id = s.id + "_mirror";
  out.image = Grid(s.image.height, s.image.width, 3);
  out.labels = LabelMap(s.labels.height, s.labels.width);
  out.depth = DepthMap(s.depth.height, s.depth.width);
  const int w = s.image.width;
  for (int y = 0; y < s.image.height; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
      out.labels.at(y, x) = s.labels.at(y, w - 1 - x);
      out.depth.at(y, x) = s.depth.at(y, w - 1 - x);
      out.depth.valid[static_cast<std::size_t>(y) * w + x] =
          s.depth.valid[static_cast<std::size_t>(y) * w + (w - 1 - x)];
    }
  }
  return out;
}

/// Crops a window and resamples it to (out_h, out_w): image bilinearly,
/// labels/depth/mask nearest-neighbor. Depth values are divided by the
/// vertical upscale factor out_h/crop_h — zooming in moves the camera closer,
/// so a region rendered twice as large sits at half the distance.
inline Sample crop_resample(const Sample& s, int y0, int x0, int crop_h, int crop_w, int out_h,
                            int out_w) {
  s.validate();
  if (crop_h < 1 || crop_w < 1 || y0 < 0 || x0 < 0 || y0 + crop_h > s.image.height ||
      x0 + crop_w > s.image.width) {
    throw std::invalid_argument("crop_resample: crop window out of bounds");
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("crop_resample: output dims must be positive");
  }
  Grid crop(crop_h, crop_w, 3);
  for (int y = 0; y < crop_h; ++y) {
    for (int x = 0; x < crop_w; ++x) {
      for (int c = 0; c < 3; ++c) crop.at(y, x, c) = s.image.at(y0 + y, x0 + x, c);
    }
  }
  Sample out;
  out.id = s.id + "_crop";
  out.image = bilinear_resize(crop, out_h, out_w);
  out.labels = LabelMap(out_h, out_w);
  out.depth = DepthMap(out_h, out_w);
  const double depth_scale = static_cast<double>(out_h) / crop_h;
  for (int y = 0; y < out_h; ++y) {
    const int sy = y0 + nearest_src_index(y, crop_h, out_h);
    for (int x = 0; x < out_w; ++x) {
      const int sx = x0 + nearest_src_index(x, crop_w, out_w);
      out.labels.at(y, x) = s.labels.at(sy, sx);
      out.depth.at(y, x) = s.depth.at(sy, sx) / depth_scale;
      out.depth.valid[static_cast<std::size_t>(y) * out_w + x] =
          s.depth.valid[static_cast<std::size_t>(sy) * s.depth.width + sx];
    }
  }
  return out;
}

/// Offline augmentation: the sample itself, its mirror, and four random crops
/// scaled back to the source size (with depth rescaled accordingly).
inline std::vector<Sample> augment(const Sample& s, std::uint64_t seed) {
  s.validate();
  std::vector<Sample> out;
  out.reserve(6);
  out.push_back(s);
  out.back().id = s.id + "_orig";
  out.push_back(mirror_sample(s));
  const int h = s.image.height, w = s.image.width;
  for (int k = 0; k < 4; ++k) {
    Rng rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(k)));
    const double f = rng.uniform(0.5, 0.9);
    const int ch = std::max(2, static_cast<int>(std::lround(h * f)));
    const int cw = std::max(2, static_cast<int>(std::lround(w * f)));
    const int y0 = rng.uniform_int(0, h - ch);
    const int x0 = rng.uniform_int(0, w - cw);
    Sample c = crop_resample(s, y0, x0, ch, cw, h, w);
    c.id = s.id + "_crop" + std::to_string(k);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic block-world generator
// ---------------------------------------------------------------------------

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 33;
  int width = 33;
  int num_rectangles = 3;
  int num_classes = 4;  // class 0 is the background plane
  double depth_min = 1.0;
  double depth_max = 6.0;
  double noise_sigma = 5.0;
  double ignore_fraction = 0.0;         // labels flipped to IGNORE
  double invalid_depth_fraction = 0.0;  // simulated sensor holes

  void validate() const {
    if (height < 4 || width < 4) throw std::invalid_argument("SceneSpec: image too small");
    if (num_rectangles < 0) throw std::invalid_argument("SceneSpec: negative rectangle count");
    if (num_classes < 1 || num_classes > 254) {
      throw std::invalid_argument("SceneSpec: num_classes must be in [1, 254]");
    }
    if (!(depth_min > 0.0) || !(depth_max > depth_min)) {
      throw std::invalid_argument("SceneSpec: need 0 < depth_min < depth_max");
    }
    if (noise_sigma < 0.0) throw std::invalid_argument("SceneSpec: negative noise");
    if (ignore_fraction < 0.0 || ignore_fraction >= 1.0 || invalid_depth_fraction < 0.0 ||
        invalid_depth_fraction >= 1.0) {
      throw std::invalid_argument("SceneSpec: fractions must be in [0, 1)");
    }
  }
};

struct SceneRect {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open pixel bounds
  int cls = 0;
  double depth = 0;
};

struct Scene {
  Sample sample;
  std::vector<SceneRect> rects;  // in paint order (far to near)
  int background_class = 0;
  double background_depth = 0;
};

/// Paints colored rectangles at distinct depths over a background plane,
/// far to near, and emits exact labels and depth. Label boundaries therefore
/// coincide with depth discontinuities.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 7));
  Scene scene;
  scene.background_class = 0;
  scene.background_depth = spec.depth_max;
  const int n = spec.num_rectangles;
  // Distinct, evenly spaced depth levels strictly inside (depth_min, depth_max),
  // nearest rectangles first in depth, painted in far-to-near order.
  for (int k = 0; k < n; ++k) {
    SceneRect r;
    const double t = static_cast<double>(n - k) / (n + 1);  // far first
    r.depth = spec.depth_min + t * (spec.depth_max - spec.depth_min);
    r.cls = (spec.num_classes == 1) ? 0 : 1 + (k % (spec.num_classes - 1));
    const int rh = 2 + rng.uniform_int(0, std::max(1, spec.height / 2 - 2));
    const int rw = 2 + rng.uniform_int(0, std::max(1, spec.width / 2 - 2));
    r.y0 = rng.uniform_int(0, spec.height - rh);
    r.x0 = rng.uniform_int(0, spec.width - rw);
    r.y1 = r.y0 + rh;
    r.x1 = r.x0 + rw;
    scene.rects.push_back(r);
  }
  Sample& s = scene.sample;
  s.id = "scene";
  s.image = Grid(spec.height, spec.width, 3);
  s.labels = LabelMap(spec.height, spec.width,
                      static_cast<std::uint8_t>(scene.background_class));
  s.depth = DepthMap(spec.height, spec.width, scene.background_depth, true);
  for (const SceneRect& r : scene.rects) {
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        s.labels.at(y, x) = static_cast<std::uint8_t>(r.cls);
        s.depth.at(y, x) = r.depth;
      }
    }
  }
  const Palette& palette = default_palette();
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const auto& color = palette.colors[s.labels.at(y, x)];
      for (int c = 0; c < 3; ++c) {
        double v = color[c] + spec.noise_sigma * rng.normal();
        // Integral pixel values: a generated scene and its PNG round trip
        // are identical, so training from disk matches training in memory.
        s.image.at(y, x, c) = std::round(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  if (spec.ignore_fraction > 0.0) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (rng.uniform() < spec.ignore_fraction) s.labels.at(y, x) = kIgnoreLabel;
      }
    }
  }
  if (spec.invalid_depth_fraction > 0.0) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (rng.uniform() < spec.invalid_depth_fraction) {
          s.depth.valid[static_cast<std::size_t>(y) * spec.width + x] = 0;
        }
      }
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Dataset directory format
//   images/<id>.png  8-bit RGB
//   labels/<id>.png  8-bit indexed, 255 = IGNORE
//   depths/<id>.png  16-bit grayscale, millimeters, 0 = invalid
//   manifest.csv     header "id,split", one row per sample
// ---------------------------------------------------------------------------

inline Gray16 depth_to_millimeters(const DepthMap& d) {
  Gray16 g;
  g.height = d.height;
  g.width = d.width;
  g.values.resize(static_cast<std::size_t>(d.height) * d.width, 0);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x)) continue;
      const double mm = d.at(y, x) * 1000.0;
      if (!(mm >= 0.5 && mm <= 65535.0)) {
        throw std::invalid_argument("depth_to_millimeters: depth " +
                                    std::to_string(d.at(y, x)) + " m at pixel (" +
                                    std::to_string(y) + "," + std::to_string(x) +
                                    ") does not fit the 16-bit millimeter encoding");
      }
      g.values[static_cast<std::size_t>(y) * d.width + x] =
          static_cast<std::uint16_t>(std::lround(mm));
    }
  }
  return g;
}

inline DepthMap millimeters_to_depth(const Gray16& g) {
  DepthMap d(g.height, g.width);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    if (g.values[i] == 0) continue;
    d.depth[i] = g.values[i] / 1000.0;
    d.valid[i] = 1;
  }
  return d;
}

inline void save_sample(const std::string& dir, const Sample& s) {
  s.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  fs::create_directories(fs::path(dir) / "depths");
  write_png_rgb8((fs::path(dir) / "images" / (s.id + ".png")).string(), s.image);
  write_png_labels((fs::path(dir) / "labels" / (s.id + ".png")).string(), s.labels,
                   default_palette());
  write_png_gray16((fs::path(dir) / "depths" / (s.id + ".png")).string(),
                   depth_to_millimeters(s.depth));
}

/// Loads one sample triple. A missing depth file yields an all-invalid depth
/// plane; missing image or labels is an error.
inline Sample load_sample(const std::string& dir, const std::string& id) {
  namespace fs = std::filesystem;
  Sample s;
  s.id = id;
  const std::string img_path = (fs::path(dir) / "images" / (id + ".png")).string();
  const std::string lab_path = (fs::path(dir) / "labels" / (id + ".png")).string();
  const std::string dep_path = (fs::path(dir) / "depths" / (id + ".png")).string();
  s.image = read_png_rgb8(img_path);
  s.labels = read_png_labels(lab_path);
  if (fs::exists(dep_path)) {
    s.depth = millimeters_to_depth(read_png_gray16(dep_path));
  } else {
    s.depth = DepthMap(s.image.height, s.image.width);
  }
  s.validate();
  return s;
}

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" or "test"
};

inline void save_manifest(const std::string& dir, std::vector<ManifestEntry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  const std::string path = (std::filesystem::path(dir) / "manifest.csv").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "id,split\n";
  for (const auto& e : entries) out << e.id << "," << e.split << "\n";
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::vector<ManifestEntry> load_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.csv").string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty manifest '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,split") throw std::invalid_argument("bad manifest header in '" + path + "'");
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument("bad manifest row '" + line + "' in '" + path + "'");
    }
    ManifestEntry e;
    e.id = line.substr(0, comma);
    e.split = line.substr(comma + 1);
    if (e.split != "train" && e.split != "test") {
      throw std::invalid_argument("bad split '" + e.split + "' in '" + path + "'");
    }
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  return entries;
}

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Loads every manifest row, lexicographic by id within each split.
inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  for (const ManifestEntry& e : load_manifest(dir)) {
    (e.split == "train" ? ds.train : ds.test).push_back(load_sample(dir, e.id));
  }
  return ds;
}

}  // namespace semdepth
