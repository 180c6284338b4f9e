// Command-line entry point: dataset synthesis, staged training, inference
// with optional CRF refinement, metric reports, and gradient checks.
//
// Exit codes: 0 = success, 1 = usage/validation error, 2 = runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <semdepth/semdepth.hpp>

namespace fs = std::filesystem;

namespace {

using semdepth::detail::Json;

struct SynthSpec {
  std::uint64_t seed = 7;
  int num_scenes = 10;
  int height = 33;
  int width = 33;
  int num_rectangles = 3;
  int num_classes = 4;
  double depth_min = 1.0;
  double depth_max = 6.0;
  double noise_sigma = 5.0;
  double ignore_fraction = 0.0;
  double invalid_depth_fraction = 0.0;
  double train_fraction = 0.8;
  bool augment = false;
};

SynthSpec parse_synth_spec(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("synth spec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("synth spec: top level must be an object");
  semdepth::detail::reject_unknown_keys(
      j,
      {"format", "seed", "num_scenes", "height", "width", "num_rectangles", "num_classes",
       "depth_min", "depth_max", "noise_sigma", "ignore_fraction", "invalid_depth_fraction",
       "train_fraction", "augment"},
      "synth spec");
  if (j.at("format").get<std::string>() != "synth-spec-v1") {
    throw std::invalid_argument("synth spec: unsupported format '" +
                                j.at("format").get<std::string>() + "'");
  }
  SynthSpec s;
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("num_scenes")) s.num_scenes = j.at("num_scenes").get<int>();
  if (j.contains("height")) s.height = j.at("height").get<int>();
  if (j.contains("width")) s.width = j.at("width").get<int>();
  if (j.contains("num_rectangles")) s.num_rectangles = j.at("num_rectangles").get<int>();
  if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<int>();
  if (j.contains("depth_min")) s.depth_min = j.at("depth_min").get<double>();
  if (j.contains("depth_max")) s.depth_max = j.at("depth_max").get<double>();
  if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("ignore_fraction")) s.ignore_fraction = j.at("ignore_fraction").get<double>();
  if (j.contains("invalid_depth_fraction")) {
    s.invalid_depth_fraction = j.at("invalid_depth_fraction").get<double>();
  }
  if (j.contains("train_fraction")) s.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("augment")) s.augment = j.at("augment").get<bool>();
  if (s.num_scenes < 1) throw std::invalid_argument("synth spec: num_scenes must be >= 1");
  if (s.train_fraction < 0.0 || s.train_fraction > 1.0) {
    throw std::invalid_argument("synth spec: train_fraction must be in [0, 1]");
  }
  return s;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const SynthSpec spec = parse_synth_spec(semdepth::detail::read_text_file(spec_path));
  fs::create_directories(out_dir);
  std::vector<semdepth::ManifestEntry> manifest;
  const int n_train = static_cast<int>(std::llround(spec.train_fraction * spec.num_scenes));
  for (int i = 0; i < spec.num_scenes; ++i) {
    semdepth::SceneSpec scene;
    scene.seed = semdepth::mix_seed(spec.seed, static_cast<std::uint64_t>(i));
    scene.height = spec.height;
    scene.width = spec.width;
    scene.num_rectangles = spec.num_rectangles;
    scene.num_classes = spec.num_classes;
    scene.depth_min = spec.depth_min;
    scene.depth_max = spec.depth_max;
    scene.noise_sigma = spec.noise_sigma;
    scene.ignore_fraction = spec.ignore_fraction;
    scene.invalid_depth_fraction = spec.invalid_depth_fraction;
    semdepth::Sample sample = semdepth::generate_scene(scene).sample;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene%04d", i);
    sample.id = buf;
    const bool is_train = i < n_train;
    if (is_train && spec.augment) {
      const auto variants =
          semdepth::augment(sample, semdepth::mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(i)));
      for (const semdepth::Sample& v : variants) {
        semdepth::save_sample(out_dir, v);
        manifest.push_back({v.id, "train"});
      }
    } else {
      semdepth::save_sample(out_dir, sample);
      manifest.push_back({sample.id, is_train ? "train" : "test"});
    }
  }
  semdepth::save_manifest(out_dir, manifest);
  std::cout << "wrote " << manifest.size() << " samples to " << out_dir << "\n";
  return 0;
}

semdepth::RunConfig load_run_config(const std::string& path) {
  semdepth::RunConfig cfg = semdepth::parse_run_config(semdepth::detail::read_text_file(path));
  cfg.validate(false);
  return cfg;
}

semdepth::TrainState make_state_for(const semdepth::RunConfig& cfg) {
  semdepth::TrainState st =
      semdepth::make_train_state(cfg.network(), cfg.binning, cfg.seed);
  if (cfg.crf_source == "file") {
    const auto loaded = semdepth::load_crf_params(cfg.crf_path);
    if (loaded.num_classes != st.crf.num_classes) {
      throw std::invalid_argument("crf parameter file has " +
                                  std::to_string(loaded.num_classes) + " classes, network has " +
                                  std::to_string(st.crf.num_classes));
    }
    st.crf = loaded;
  }
  return st;
}

int cmd_train(const std::string& config_path, bool resume) {
  semdepth::RunConfig cfg = load_run_config(config_path);
  cfg.validate(true);
  if (cfg.checkpoint_dir.empty()) {
    throw std::invalid_argument("train: config must set checkpoint_dir");
  }
  fs::create_directories(cfg.checkpoint_dir);
  if (!cfg.report_dir.empty()) fs::create_directories(cfg.report_dir);
  const semdepth::Dataset dataset = semdepth::load_dataset(cfg.dataset_dir);
  if (dataset.train.empty()) throw std::runtime_error("train: dataset has no training samples");
  const std::string prefix = (fs::path(cfg.checkpoint_dir) / "run").string();

  semdepth::TrainState st = make_state_for(cfg);
  if (resume) {
    for (int s = static_cast<int>(cfg.schedule.stages.size()); s >= 1; --s) {
      const std::string cand = prefix + "-stage" + std::to_string(s);
      if (fs::exists(cand + ".ckpt")) {
        st = semdepth::load_train_state(cand, cfg.network(), cfg.binning, cfg.seed);
        std::cout << "resuming from " << cand << " (iteration " << st.iteration << ")\n";
        break;
      }
    }
  }
  std::string loss_csv = semdepth::loss_csv_header();
  if (resume && !cfg.report_dir.empty()) {
    // Keep the logged history up to the resume point; stages that re-run
    // append their rows after it instead of duplicating or erasing them.
    const fs::path prev = fs::path(cfg.report_dir) / "loss.csv";
    if (fs::exists(prev)) {
      std::istringstream in(semdepth::detail::read_text_file(prev.string()));
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (header) {
          header = false;
          continue;
        }
        if (line.empty()) continue;
        if (std::strtol(line.c_str(), nullptr, 10) <= st.iteration) loss_csv += line + "\n";
      }
    }
  }
  semdepth::run_schedule(st, dataset.train, cfg.schedule, prefix, &loss_csv);
  if (!cfg.report_dir.empty()) {
    semdepth::detail::write_text_file((fs::path(cfg.report_dir) / "loss.csv").string(),
                                      loss_csv);
  }
  std::cout << "training finished at iteration " << st.iteration << "; checkpoints under "
            << cfg.checkpoint_dir << "\n";
  return 0;
}

struct InferJob {
  std::string id;
  std::string image_path;
};

int cmd_infer(const std::string& config_path, const std::string& checkpoint_prefix,
              const std::string& input, const std::string& out_dir, bool no_crf,
              int crf_iters) {
  if (crf_iters < 1) throw std::invalid_argument("infer: --crf-iters must be >= 1");
  semdepth::RunConfig cfg = load_run_config(config_path);
  const semdepth::NetworkConfig net_cfg = cfg.network();
  semdepth::TrainState st =
      semdepth::load_train_state(checkpoint_prefix, net_cfg, cfg.binning, cfg.seed);

  std::vector<InferJob> jobs;
  if (fs::is_directory(input)) {
    for (const semdepth::ManifestEntry& e : semdepth::load_manifest(input)) {
      jobs.push_back({e.id, (fs::path(input) / "images" / (e.id + ".png")).string()});
    }
  } else if (fs::is_regular_file(input)) {
    jobs.push_back({fs::path(input).stem().string(), input});
  } else {
    throw std::invalid_argument("infer: input '" + input +
                                "' is neither a dataset directory nor an image file");
  }
  fs::create_directories(fs::path(out_dir) / "labels");
  fs::create_directories(fs::path(out_dir) / "depths");
  fs::create_directories(fs::path(out_dir) / "q");

  for (const InferJob& job : jobs) {
    const semdepth::Grid image = semdepth::read_png_rgb8(job.image_path);
    const semdepth::NetOutputs out = semdepth::forward(image, net_cfg, st.params);
    const semdepth::Grid depth_probs = semdepth::softmax_channels(out.depth_logits);
    const semdepth::DepthMap decoded = semdepth::depth_expectation(depth_probs, st.binning);

    semdepth::Grid q = semdepth::softmax_channels(out.seg_logits);
    semdepth::LabelMap labels = semdepth::argmax_labels(q);
    if (!no_crf) {
      const semdepth::CrfFeatures feats =
          semdepth::CrfFeatures::from_image_depth(image, decoded);
      semdepth::CrfResult res =
          semdepth::crf_inference(out.seg_logits, feats, st.crf, crf_iters);
      q = std::move(res.q);
      labels = std::move(res.labels);
    }

    semdepth::write_png_labels((fs::path(out_dir) / "labels" / (job.id + ".png")).string(),
                               labels, semdepth::default_palette());
    semdepth::write_png_gray16((fs::path(out_dir) / "depths" / (job.id + ".png")).string(),
                               semdepth::depth_to_millimeters(decoded));
    semdepth::ArrayStore store;
    store.add_doubles("q", {static_cast<std::uint32_t>(q.height),
                            static_cast<std::uint32_t>(q.width),
                            static_cast<std::uint32_t>(q.channels)},
                      q.data);
    semdepth::save_array_store((fs::path(out_dir) / "q" / (job.id + ".sdcp")).string(), store);
  }
  std::cout << "inferred " << jobs.size() << " image(s) into " << out_dir << "\n";
  return 0;
}

std::vector<std::string> eval_ids(const std::string& truth_dir, const std::string& split) {
  std::vector<std::string> ids;
  for (const semdepth::ManifestEntry& e : semdepth::load_manifest(truth_dir)) {
    if (split == "all" || e.split == split) ids.push_back(e.id);
  }
  if (ids.empty()) {
    throw std::invalid_argument("eval: no manifest entries for split '" + split + "' in " +
                                truth_dir);
  }
  return ids;
}

int cmd_eval(const std::string& pred_dir, const std::string& truth_dir, const std::string& task,
             const std::string& split, int num_classes, const std::string& out_path) {
  const std::vector<std::string> ids = eval_ids(truth_dir, split);
  std::string csv;
  std::string text;
  if (task == "seg") {
    if (num_classes < 1) throw std::invalid_argument("eval: --classes is required for seg");
    // Flatten every image into one tall single-column map; the confusion
    // matrix does not care about pixel geometry.
    std::vector<std::uint8_t> pred_all, truth_all;
    for (const std::string& id : ids) {
      const semdepth::LabelMap pred =
          semdepth::read_png_labels((fs::path(pred_dir) / "labels" / (id + ".png")).string());
      const semdepth::LabelMap truth =
          semdepth::read_png_labels((fs::path(truth_dir) / "labels" / (id + ".png")).string());
      if (pred.height != truth.height || pred.width != truth.width) {
        throw std::runtime_error("eval: size mismatch for id '" + id + "'");
      }
      pred_all.insert(pred_all.end(), pred.labels.begin(), pred.labels.end());
      truth_all.insert(truth_all.end(), truth.labels.begin(), truth.labels.end());
    }
    semdepth::LabelMap pred_map(static_cast<int>(pred_all.size()), 1);
    semdepth::LabelMap truth_map(static_cast<int>(truth_all.size()), 1);
    pred_map.labels = pred_all;
    truth_map.labels = truth_all;
    const semdepth::SegReport report = semdepth::eval_seg(pred_map, truth_map, num_classes);
    csv = semdepth::seg_report_csv(report);
    text = semdepth::seg_report_text(report);
  } else if (task == "depth") {
    std::vector<double> pred_d, truth_d;
    std::vector<std::uint8_t> pred_v, truth_v;
    for (const std::string& id : ids) {
      const semdepth::DepthMap pred = semdepth::millimeters_to_depth(semdepth::read_png_gray16(
          (fs::path(pred_dir) / "depths" / (id + ".png")).string()));
      const semdepth::DepthMap truth = semdepth::millimeters_to_depth(semdepth::read_png_gray16(
          (fs::path(truth_dir) / "depths" / (id + ".png")).string()));
      if (pred.height != truth.height || pred.width != truth.width) {
        throw std::runtime_error("eval: size mismatch for id '" + id + "'");
      }
      pred_d.insert(pred_d.end(), pred.depth.begin(), pred.depth.end());
      truth_d.insert(truth_d.end(), truth.depth.begin(), truth.depth.end());
      pred_v.insert(pred_v.end(), pred.valid.begin(), pred.valid.end());
      truth_v.insert(truth_v.end(), truth.valid.begin(), truth.valid.end());
    }
    semdepth::DepthMap pred_map(static_cast<int>(pred_d.size()), 1);
    semdepth::DepthMap truth_map(static_cast<int>(truth_d.size()), 1);
    pred_map.depth = pred_d;
    pred_map.valid = pred_v;
    truth_map.depth = truth_d;
    truth_map.valid = truth_v;
    const semdepth::DepthReport report = semdepth::eval_depth(pred_map, truth_map);
    csv = semdepth::depth_report_csv(report);
    text = semdepth::depth_report_text(report);
  } else {
    throw std::invalid_argument("eval: --task must be 'depth' or 'seg'");
  }
  std::cout << text;
  if (!out_path.empty()) {
    if (fs::path(out_path).has_parent_path()) {
      fs::create_directories(fs::path(out_path).parent_path());
    }
    semdepth::detail::write_text_file(out_path, csv);
  }
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed, bool corrupt) {
  const std::vector<semdepth::GradCheckReport> reports =
      semdepth::run_gradcheck(module, seed, corrupt);
  std::cout << semdepth::format_gradcheck_reports(reports);
  return semdepth::gradcheck_all_passed(reports) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint semantic segmentation and depth estimation pipeline"};
  app.require_subcommand(1);
  int rc = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "synth spec JSON file")->required();
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->callback([&]() { rc = cmd_synth(synth_spec, synth_out); });

  auto* train = app.add_subcommand("train", "run the staged training schedule");
  std::string train_config;
  bool train_resume = false;
  train->add_option("--config", train_config, "run config JSON file")->required();
  train->add_flag("--resume", train_resume, "continue from the newest stage checkpoint");
  train->callback([&]() { rc = cmd_train(train_config, train_resume); });

  auto* infer = app.add_subcommand("infer", "run the network (and CRF) over images");
  std::string infer_config, infer_ckpt, infer_input, infer_out;
  bool infer_no_crf = false;
  int infer_crf_iters = 5;
  infer->add_option("--config", infer_config, "run config JSON file")->required();
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint prefix (without .ckpt)")->required();
  infer->add_option("--input", infer_input, "dataset directory or single image PNG")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_flag("--no-crf", infer_no_crf, "skip CRF refinement (unary argmax)");
  infer->add_option("--crf-iters", infer_crf_iters, "mean-field iterations (default 5)");
  infer->callback([&]() {
    rc = cmd_infer(infer_config, infer_ckpt, infer_input, infer_out, infer_no_crf,
                   infer_crf_iters);
  });

  auto* eval = app.add_subcommand("eval", "compare predictions against ground truth");
  std::string eval_pred, eval_truth, eval_task, eval_split = "all", eval_out;
  int eval_classes = 0;
  eval->add_option("--pred", eval_pred, "prediction directory (infer output)")->required();
  eval->add_option("--truth", eval_truth, "ground-truth dataset directory")->required();
  eval->add_option("--task", eval_task, "depth | seg")->required();
  eval->add_option("--split", eval_split, "train | test | all (default all)");
  eval->add_option("--classes", eval_classes, "number of classes (seg task)");
  eval->add_option("--out", eval_out, "report CSV path");
  eval->callback(
      [&]() { rc = cmd_eval(eval_pred, eval_truth, eval_task, eval_split, eval_classes, eval_out); });

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_module = "all";
  std::uint64_t gc_seed = 42;
  bool gc_corrupt = false;
  gradcheck->add_option("--module", gc_module, "net | losses | crf | all (default all)");
  gradcheck->add_option("--seed", gc_seed, "fixture seed (default 42)");
  gradcheck->add_flag("--corrupt", gc_corrupt,
                      "deliberately corrupt one analytic gradient (self-test)");
  gradcheck->callback([&]() { rc = cmd_gradcheck(gc_module, gc_seed, gc_corrupt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
