#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>

#include "semdepth/losses.hpp"
#include "semdepth/net.hpp"
#include "semdepth/trainer.hpp"

namespace semdepth {

/// Versioned run configuration. Parsing is strict: unknown keys are errors so
/// a typo cannot silently fall back to a default hyperparameter.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string dataset_dir;
  std::string checkpoint_dir;
  std::string report_dir;

  std::string network_preset = "desk";  // "desk" | "full"
  int num_classes = 4;                  // desk-preset overrides
  int num_bins = 10;
  int input_size = 33;

  DepthBinning binning{10, 0.7};

  std::string crf_source = "default";  // "default" | "file"
  std::string crf_path;

  TrainSchedule schedule = desk_schedule();

  NetworkConfig network() const {
    if (network_preset == "desk") return desk_network_config(num_classes, num_bins, input_size);
    if (network_preset == "full") return full_network_config();
    throw std::invalid_argument("RunConfig: unknown network preset '" + network_preset + "'");
  }

  void validate(bool check_paths = false) const {
    network();  // throws on bad preset/topology
    binning.validate();
    schedule.validate();
    const NetworkConfig net = network();
    if (binning.num_bins != net.num_bins) {
      throw std::invalid_argument("RunConfig: binning num_bins (" +
                                  std::to_string(binning.num_bins) +
                                  ") != network num_bins (" + std::to_string(net.num_bins) + ")");
    }
    if (crf_source != "default" && crf_source != "file") {
      throw std::invalid_argument("RunConfig: crf source must be 'default' or 'file'");
    }
    if (crf_source == "file" && crf_path.empty()) {
      throw std::invalid_argument("RunConfig: crf source 'file' needs a path");
    }
    if (check_paths) {
      if (dataset_dir.empty() || !std::filesystem::is_directory(dataset_dir)) {
        throw std::invalid_argument("RunConfig: dataset dir '" + dataset_dir +
                                    "' does not exist");
      }
      if (crf_source == "file" && !std::filesystem::is_regular_file(crf_path)) {
        throw std::invalid_argument("RunConfig: crf parameter file '" + crf_path +
                                    "' does not exist");
      }
    }
  }
};

namespace detail {

using Json = nlohmann::json;

inline void reject_unknown_keys(const Json& obj, const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!known.count(item.key())) {
      throw std::invalid_argument("config: unknown key '" + item.key() + "' in " + where);
    }
  }
}

inline StageKind parse_stage_kind(const std::string& s) {
  if (s == "sem") return StageKind::kSemantic;
  if (s == "sem_depth") return StageKind::kSemanticDepth;
  if (s == "sem_depth_crf") return StageKind::kFull;
  throw std::invalid_argument("config: unknown stage kind '" + s +
                              "' (expected sem | sem_depth | sem_depth_crf)");
}

inline std::string stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::kSemantic: return "sem";
    case StageKind::kSemanticDepth: return "sem_depth";
    case StageKind::kFull: return "sem_depth_crf";
  }
  throw std::logic_error("stage_kind_name: bad enum");
}

inline StageSpec parse_stage(const Json& j) {
  reject_unknown_keys(j, {"kind", "iterations", "lr_net", "lr_crf", "momentum", "weight_decay",
                          "lambda", "crf_iterations"},
                      "schedule stage");
  StageSpec s;
  s.losses_active = parse_stage_kind(j.at("kind").get<std::string>());
  s.iterations = j.at("iterations").get<int>();
  s.lr_net = j.at("lr_net").get<double>();
  if (j.contains("lr_crf")) s.lr_crf = j.at("lr_crf").get<double>();
  if (j.contains("momentum")) s.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) s.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
  if (j.contains("crf_iterations")) s.crf_iterations = j.at("crf_iterations").get<int>();
  s.validate();
  return s;
}

inline Json stage_to_json(const StageSpec& s) {
  Json j;
  j["kind"] = stage_kind_name(s.losses_active);
  j["iterations"] = s.iterations;
  j["lr_net"] = s.lr_net;
  j["lr_crf"] = s.lr_crf;
  j["momentum"] = s.momentum;
  j["weight_decay"] = s.weight_decay;
  j["lambda"] = s.lambda;
  j["crf_iterations"] = s.crf_iterations;
  return j;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  detail::reject_unknown_keys(j, {"format", "seed", "dataset_dir", "checkpoint_dir",
                                  "report_dir", "network", "binning", "crf", "schedule"},
                              "top level");
  const std::string format = j.at("format").get<std::string>();
  if (format != "run-config-v1") {
    throw std::invalid_argument("config: unsupported format '" + format + "'");
  }
  RunConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("dataset_dir")) cfg.dataset_dir = j.at("dataset_dir").get<std::string>();
  if (j.contains("checkpoint_dir")) cfg.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  if (j.contains("report_dir")) cfg.report_dir = j.at("report_dir").get<std::string>();

  const detail::Json& net = j.at("network");
  detail::reject_unknown_keys(net, {"preset", "num_classes", "num_bins", "input_size"},
                              "network");
  cfg.network_preset = net.at("preset").get<std::string>();
  if (cfg.network_preset == "full") {
    if (net.contains("num_classes") || net.contains("num_bins") || net.contains("input_size")) {
      throw std::invalid_argument("config: the full network preset is fixed; it takes no "
                                  "num_classes/num_bins/input_size overrides");
    }
    cfg.num_classes = 40;
    cfg.num_bins = 50;
    cfg.input_size = 513;
  } else {
    if (net.contains("num_classes")) cfg.num_classes = net.at("num_classes").get<int>();
    if (net.contains("num_bins")) cfg.num_bins = net.at("num_bins").get<int>();
    if (net.contains("input_size")) cfg.input_size = net.at("input_size").get<int>();
  }

  const detail::Json& bin = j.at("binning");
  detail::reject_unknown_keys(bin, {"num_bins", "bin_length"}, "binning");
  cfg.binning.num_bins = bin.at("num_bins").get<int>();
  cfg.binning.bin_length = bin.at("bin_length").get<double>();

  if (j.contains("crf")) {
    const detail::Json& crf = j.at("crf");
    detail::reject_unknown_keys(crf, {"source", "path"}, "crf");
    cfg.crf_source = crf.at("source").get<std::string>();
    if (crf.contains("path")) cfg.crf_path = crf.at("path").get<std::string>();
  }

  const detail::Json& sched = j.at("schedule");
  detail::reject_unknown_keys(sched, {"preset", "stages"}, "schedule");
  if (sched.contains("preset") == sched.contains("stages")) {
    throw std::invalid_argument("config: schedule needs exactly one of 'preset' or 'stages'");
  }
  if (sched.contains("preset")) {
    const std::string preset = sched.at("preset").get<std::string>();
    if (preset == "desk") {
      cfg.schedule = desk_schedule();
    } else if (preset == "full") {
      cfg.schedule = full_schedule();
    } else {
      throw std::invalid_argument("config: unknown schedule preset '" + preset + "'");
    }
  } else {
    cfg.schedule.stages.clear();
    for (const auto& stage : sched.at("stages")) {
      cfg.schedule.stages.push_back(detail::parse_stage(stage));
    }
  }
  cfg.validate();
  return cfg;
}

inline std::string serialize_run_config(const RunConfig& cfg) {
  cfg.validate();
  detail::Json j;
  j["format"] = "run-config-v1";
  j["seed"] = cfg.seed;
  j["dataset_dir"] = cfg.dataset_dir;
  j["checkpoint_dir"] = cfg.checkpoint_dir;
  j["report_dir"] = cfg.report_dir;
  j["network"]["preset"] = cfg.network_preset;
  if (cfg.network_preset != "full") {
    j["network"]["num_classes"] = cfg.num_classes;
    j["network"]["num_bins"] = cfg.num_bins;
    j["network"]["input_size"] = cfg.input_size;
  }
  j["binning"]["num_bins"] = cfg.binning.num_bins;
  j["binning"]["bin_length"] = cfg.binning.bin_length;
  j["crf"]["source"] = cfg.crf_source;
  j["crf"]["path"] = cfg.crf_path;
  for (const StageSpec& s : cfg.schedule.stages) {
    j["schedule"]["stages"].push_back(detail::stage_to_json(s));
  }
  return j.dump(2) + "\n";
}

}  // namespace semdepth
