#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"

namespace semdepth {

/// Threshold fractions, relative errors and the three RMSE flavors used by
/// the depth evaluation table.
struct DepthReport {
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double abs_rel = 0, sqr_rel = 0;
  double rmse_lin = 0, rmse_log = 0, rmse_silog = 0;
  long counted_pixels = 0;
};

/// Depth error metrics over jointly valid pixels. delta_k is the fraction of
/// pixels with max(d/d*, d*/d) < 1.25^k; rmse_silog is the log RMSE after
/// subtracting the mean log difference (invariant to global depth scaling).
inline DepthReport eval_depth(const DepthMap& d, const DepthMap& d_star) {
  if (d.height != d_star.height || d.width != d_star.width) {
    throw std::invalid_argument("eval_depth: shape mismatch");
  }
  DepthReport r;
  double sum_abs_rel = 0, sum_sqr_rel = 0, sum_sq = 0, sum_logsq = 0;
  double sum_g = 0, sum_g2 = 0;
  long n1 = 0, n2 = 0, n3 = 0;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x) || !d_star.is_valid(y, x)) continue;
      const double di = d.at(y, x);
      const double ti = d_star.at(y, x);
      if (!(di > 0.0) || !(ti > 0.0)) {
        throw std::invalid_argument("eval_depth: non-positive depth at pixel (" +
                                    std::to_string(y) + "," + std::to_string(x) + ")");
      }
      ++r.counted_pixels;
      const double ratio = std::max(di / ti, ti / di);
      if (ratio < 1.25) ++n1;
      if (ratio < 1.25 * 1.25) ++n2;
      if (ratio < 1.25 * 1.25 * 1.25) ++n3;
      const double diff = di - ti;
      sum_abs_rel += std::abs(diff) / ti;
      sum_sqr_rel += diff * diff / ti;
      sum_sq += diff * diff;
      const double g = std::log(di) - std::log(ti);
      sum_logsq += g * g;
      sum_g += g;
      sum_g2 += g * g;
    }
  }
  if (r.counted_pixels == 0) {
    throw std::invalid_argument("eval_depth: no jointly valid pixels");
  }
  const double t = static_cast<double>(r.counted_pixels);
  r.delta1 = n1 / t;
  r.delta2 = n2 / t;
  r.delta3 = n3 / t;
  r.abs_rel = sum_abs_rel / t;
  r.sqr_rel = sum_sqr_rel / t;
  r.rmse_lin = std::sqrt(sum_sq / t);
  r.rmse_log = std::sqrt(sum_logsq / t);
  const double mean_g = sum_g / t;
  // Var(g) computed in centered form to avoid negative rounding residue.
  double var = sum_g2 / t - mean_g * mean_g;
  r.rmse_silog = std::sqrt(std::max(0.0, var));
  return r;
}

struct SegReport {
  std::vector<double> per_class_iou;  // size C; 0 for classes absent everywhere
  double mean_iou = 0;
  double mean_accuracy = 0;
  double pixel_accuracy = 0;
  long counted_pixels = 0;
};

/// Confusion-matrix segmentation metrics. IGNORE ground-truth pixels are
/// excluded everywhere. Mean IoU averages over classes present in ground
/// truth or prediction; mean accuracy averages per-class recall over classes
/// present in ground truth.
inline SegReport eval_seg(const LabelMap& pred, const LabelMap& truth, int num_classes) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw std::invalid_argument("eval_seg: shape mismatch");
  }
  if (num_classes < 1) throw std::invalid_argument("eval_seg: num_classes must be >= 1");
  std::vector<long> conf(static_cast<std::size_t>(num_classes) * num_classes, 0);
  long counted = 0;
  for (int y = 0; y < truth.height; ++y) {
    for (int x = 0; x < truth.width; ++x) {
      const int t = truth.at(y, x);
      if (t == kIgnoreLabel) continue;
      const int p = pred.at(y, x);
      if (t >= num_classes) {
        throw std::invalid_argument("eval_seg: truth label " + std::to_string(t) +
                                    " >= num_classes at pixel (" + std::to_string(y) + "," +
                                    std::to_string(x) + ")");
      }
      if (p >= num_classes) {
        throw std::invalid_argument("eval_seg: predicted label " + std::to_string(p) +
                                    " >= num_classes at pixel (" + std::to_string(y) + "," +
                                    std::to_string(x) + ")");
      }
      ++conf[static_cast<std::size_t>(t) * num_classes + p];
      ++counted;
    }
  }
  if (counted == 0) throw std::invalid_argument("eval_seg: no labeled pixels");
  SegReport r;
  r.counted_pixels = counted;
  r.per_class_iou.assign(num_classes, 0.0);
  long diag_total = 0;
  double iou_sum = 0, acc_sum = 0;
  int iou_classes = 0, acc_classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    long tp = conf[static_cast<std::size_t>(c) * num_classes + c];
    long truth_c = 0, pred_c = 0;
    for (int k = 0; k < num_classes; ++k) {
      truth_c += conf[static_cast<std::size_t>(c) * num_classes + k];
      pred_c += conf[static_cast<std::size_t>(k) * num_classes + c];
    }
    diag_total += tp;
    const long uni = truth_c + pred_c - tp;
    if (uni > 0) {
      r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += r.per_class_iou[c];
      ++iou_classes;
    }
    if (truth_c > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(truth_c);
      ++acc_classes;
    }
  }
  r.mean_iou = iou_sum / iou_classes;
  r.mean_accuracy = acc_sum / acc_classes;
  r.pixel_accuracy = static_cast<double>(diag_total) / static_cast<double>(counted);
  return r;
}

// ---------------------------------------------------------------------------
// Report emitters (fixed row labels, frozen by the golden fixtures)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

inline const std::vector<std::pair<std::string, double DepthReport::*>>& depth_report_rows() {
  static const std::vector<std::pair<std::string, double DepthReport::*>> rows = {
      {"threshold delta < 1.25", &DepthReport::delta1},
      {"threshold delta < 1.25^2", &DepthReport::delta2},
      {"threshold delta < 1.25^3", &DepthReport::delta3},
      {"abs relative distance", &DepthReport::abs_rel},
      {"sqr relative distance", &DepthReport::sqr_rel},
      {"RMSE (linear)", &DepthReport::rmse_lin},
      {"RMSE (log)", &DepthReport::rmse_log},
      {"RMSE (log. scale invariant)", &DepthReport::rmse_silog},
  };
  return rows;
}

inline std::string depth_report_csv(const DepthReport& r) {
  std::string out = "metric,value\n";
  for (const auto& [label, field] : depth_report_rows()) {
    out += label + "," + detail::format_metric(r.*field) + "\n";
  }
  return out;
}

inline std::string depth_report_text(const DepthReport& r) {
  std::string out;
  for (const auto& [label, field] : depth_report_rows()) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%-28s %s\n", label.c_str(),
                  detail::format_metric(r.*field).c_str());
    out += buf;
  }
  return out;
}

inline std::string seg_report_csv(const SegReport& r) {
  std::string out = "metric,value\n";
  out += "Mean IoU," + detail::format_metric(r.mean_iou) + "\n";
  out += "Mean Accuracy," + detail::format_metric(r.mean_accuracy) + "\n";
  out += "Pixel Accuracy," + detail::format_metric(r.pixel_accuracy) + "\n";
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    out += "IoU[" + std::to_string(c) + "]," + detail::format_metric(r.per_class_iou[c]) + "\n";
  }
  return out;
}

inline std::string seg_report_text(const SegReport& r) {
  std::string out;
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%-28s %s\n", "Mean IoU",
                detail::format_metric(r.mean_iou).c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-28s %s\n", "Mean Accuracy",
                detail::format_metric(r.mean_accuracy).c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-28s %s\n", "Pixel Accuracy",
                detail::format_metric(r.pixel_accuracy).c_str());
  out += buf;
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    std::string label = "IoU[" + std::to_string(c) + "]";
    std::snprintf(buf, sizeof(buf), "%-28s %s\n", label.c_str(),
                  detail::format_metric(r.per_class_iou[c]).c_str());
    out += buf;
  }
  return out;
}

}  // namespace semdepth
