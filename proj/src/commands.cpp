#include "certainnet/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <set>
#include <vector>

#include "certainnet/config.hpp"
#include "certainnet/decode.hpp"
#include "certainnet/errors.hpp"
#include "certainnet/log.hpp"
#include "certainnet/metrics.hpp"
#include "certainnet/model.hpp"
#include "certainnet/synthdata.hpp"
#include "certainnet/training.hpp"
#include "json.hpp"

namespace certainnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

// Wall-clock bookkeeping for the run manifest; timestamps live here and
// nowhere else, so every other artifact is byte-reproducible.
class ManifestWriter {
 public:
  ManifestWriter(std::string command, std::string out_dir)
      : command_(std::move(command)),
        out_dir_(std::move(out_dir)),
        t0_(std::chrono::steady_clock::now()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    started_at_ = buf;
  }

  void add_input(const std::string& p) { inputs_.push_back(p); }
  void add_output(const std::string& p) { outputs_.push_back(p); }
  void set_config(json cfg) { config_ = std::move(cfg); }
  void set_seed(uint64_t s) { seed_ = s; }

  void write() {
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0_)
                          .count();
    json j{{"command", command_},   {"version", kVersion},
           {"config", config_},     {"inputs", inputs_},
           {"outputs", outputs_},   {"started_at", started_at_},
           {"wall_ms", ms}};
    if (seed_) j["seed"] = *seed_;
    write_text_file(join(out_dir_, "manifest.json"), j.dump(2) + "\n");
  }

 private:
  std::string command_, out_dir_, started_at_;
  json config_ = json::object();
  std::vector<std::string> inputs_, outputs_;
  std::optional<uint64_t> seed_;
  std::chrono::steady_clock::time_point t0_;
};

json shift_to_json(const ShiftConfig& s) {
  return json{{"noise_sigma", s.noise_sigma},
              {"intensity_shift", s.intensity_shift},
              {"size_factor", s.size_factor},
              {"unseen_rate", s.unseen_rate}};
}

json scene_config_to_json(const SceneConfig& c, int count) {
  json shapes = json::array();
  for (Shape s : c.class_shapes) shapes.push_back(shape_name(s));
  return json{{"width", c.width},
              {"height", c.height},
              {"scenes", count},
              {"objects_min", c.objects_min},
              {"objects_max", c.objects_max},
              {"size_min", c.size_min},
              {"size_max", c.size_max},
              {"aspect_min", c.aspect_min},
              {"aspect_max", c.aspect_max},
              {"intensity_min", c.intensity_min},
              {"intensity_max", c.intensity_max},
              {"background", c.background},
              {"background_noise", c.background_noise},
              {"class_weights", c.class_weights},
              {"class_shapes", shapes},
              {"seed", c.seed}};
}

json train_config_to_json(const TrainConfig& c) {
  json sched = json::array();
  for (const auto& [e, v] : c.gamma_schedule) sched.push_back(json::array({e, v}));
  return json{{"epochs", c.epochs},
              {"freeze_epochs", c.freeze_epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"lr_decay_epochs", c.lr_decay_epochs},
              {"lr_decay_factor", c.lr_decay_factor},
              {"lambda", c.lambda},
              {"gamma_schedule", sched},
              {"sigma0", c.sigma0},
              {"sigma_min", c.sigma_min},
              {"sigma_decay", c.sigma_decay},
              {"reg_weight", c.reg_weight},
              {"dims_weight", c.dims_weight},
              {"pos_weight", c.pos_weight},
              {"hyperspace_dim", c.model.hyperspace_dim},
              {"channels", c.model.channels},
              {"conv_strides", c.model.strides},
              {"flags", c.flags.describe()}};
}

std::string format_csv_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

int parse_ablation(const std::string& name) {
  if (name.size() == 2 && name[0] == 'A' && name[1] >= '0' && name[1] <= '6')
    return name[1] - '0';
  throw UsageError("invalid ablation '" + name + "', expected A0..A6");
}

void cmd_synth(const std::string& config_path, const std::string& out_dir,
               std::optional<uint64_t> seed_override) {
  const KeyValues kv = KeyValues::parse_file(config_path);
  SceneConfig cfg = SceneConfig::from_keyvalues(kv);
  if (seed_override) cfg.seed = *seed_override;
  const int count = kv.get_int_or("scenes", 500);
  if (count < 0) throw DataError(config_path + ": scenes must be >= 0");
  const std::optional<ShiftConfig> shift = ShiftConfig::from_keyvalues(kv);

  ensure_dir(out_dir);
  ManifestWriter mw("synth", out_dir);
  mw.add_input(config_path);
  mw.set_seed(cfg.seed);

  log::info("generating " + std::to_string(count) + " scenes into " + out_dir +
            (shift ? " (with domain shift)" : ""));
  const Dataset data =
      generate_dataset(cfg, count, shift ? &*shift : nullptr, cfg.seed + 1);
  save_dataset(data, out_dir);

  json cj = scene_config_to_json(cfg, count);
  cj["shift"] = shift ? shift_to_json(*shift) : json(nullptr);
  mw.set_config(std::move(cj));
  mw.add_output(join(out_dir, "manifest.txt"));
  mw.add_output(join(out_dir, "annotations.jsonl"));
  mw.add_output(join(out_dir, "grids"));
  mw.write();
}

void cmd_train(const std::string& dataset_dir, const std::string& config_path,
               const std::string& out_dir, const TrainOptions& opts) {
  const KeyValues kv = KeyValues::parse_file(config_path);
  TrainConfig cfg = TrainConfig::from_keyvalues(kv);
  if (opts.ablation) cfg.flags = TrainFlags::ablation(*opts.ablation);

  const Dataset data = load_dataset(dataset_dir);

  ensure_dir(out_dir);
  ManifestWriter mw("train", out_dir);
  mw.add_input(dataset_dir);
  mw.add_input(config_path);
  mw.set_seed(opts.seed);

  const TrainResult result = train(data, cfg, opts.seed);

  const std::string ckpt = join(out_dir, "checkpoint.bin");
  save_checkpoint(result.model, ckpt);
  const std::string trace = join(out_dir, "trace.csv");
  write_text_file(trace, trace_to_csv(result.trace));

  json cj = train_config_to_json(cfg);
  if (opts.ablation) cj["ablation"] = "A" + std::to_string(*opts.ablation);
  mw.set_config(std::move(cj));
  mw.add_output(ckpt);
  mw.add_output(trace);
  mw.write();
}

void cmd_infer(const std::optional<std::string>& checkpoint_path,
               const std::optional<std::string>& dataset_dir,
               const std::optional<std::string>& dump_path,
               const std::string& out_dir, const InferOptions& opts) {
  if (static_cast<bool>(dataset_dir) == static_cast<bool>(dump_path))
    throw UsageError("infer needs exactly one input: a dataset directory or a heatmap dump");
  if (dataset_dir && !checkpoint_path)
    throw UsageError("infer on a dataset requires a checkpoint");

  DecodeConfig dc;
  if (opts.config_path) {
    const KeyValues kv = KeyValues::parse_file(*opts.config_path);
    kv.require_known({"peak_threshold", "eta", "boundary_scale", "min_overlap",
                      "min_window_radius"});
    dc.peak_threshold = kv.get_double_or("peak_threshold", dc.peak_threshold);
    dc.eta = kv.get_double_or("eta", dc.eta);
    dc.boundary_scale = kv.get_double_or("boundary_scale", dc.boundary_scale);
    dc.min_overlap = kv.get_double_or("min_overlap", dc.min_overlap);
    dc.min_window_radius = kv.get_int_or("min_window_radius", dc.min_window_radius);
  }
  if (opts.peak_threshold) dc.peak_threshold = *opts.peak_threshold;
  if (opts.eta) dc.eta = *opts.eta;
  if (opts.boundary_scale) dc.boundary_scale = *opts.boundary_scale;
  try {
    dc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  ensure_dir(out_dir);
  ManifestWriter mw("infer", out_dir);
  if (checkpoint_path) mw.add_input(*checkpoint_path);

  std::vector<Detection> all;
  std::string latency = "image_id,ms\n";
  auto time_ms = [](auto t0) {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };
  std::vector<HeatmapDump> dumps;
  std::string mode;

  if (dataset_dir) {
    mode = "model";
    mw.add_input(*dataset_dir);
    const Model model = load_checkpoint(*checkpoint_path);
    const Dataset data = load_dataset(*dataset_dir);
    if (model.classes() != data.classes)
      throw DataError("checkpoint expects " + std::to_string(model.classes()) +
                      " classes but dataset " + *dataset_dir + " has " +
                      std::to_string(data.classes));
    for (const Scene& scene : data.scenes) {
      const auto t0 = std::chrono::steady_clock::now();
      const ScalarGrid image = scene.image.cast<double>();
      const HeadOutputs outputs = forward(model, image);
      std::vector<Detection> dets = decode(outputs, dc);
      for (auto& d : dets) d.image_id = scene.id;
      const double ms = time_ms(t0);
      latency += std::to_string(scene.id) + "," + format_csv_value(ms) + "\n";
      all.insert(all.end(), dets.begin(), dets.end());
      if (opts.export_heatmaps) dumps.push_back(dump_from_outputs(scene.id, outputs));
    }
  } else {
    mode = "posthoc";
    mw.add_input(*dump_path);
    const std::vector<HeatmapDump> loaded = read_heatmap_dump_jsonl(*dump_path);
    for (const HeatmapDump& d : loaded) {
      const auto t0 = std::chrono::steady_clock::now();
      const HeadOutputs outputs = outputs_from_dump(d);
      std::vector<Detection> dets = decode(outputs, dc);
      for (auto& det : dets) det.image_id = d.image_id;
      const double ms = time_ms(t0);
      latency += std::to_string(d.image_id) + "," + format_csv_value(ms) + "\n";
      all.insert(all.end(), dets.begin(), dets.end());
    }
  }

  const std::string det_path = join(out_dir, "detections.jsonl");
  write_detections_jsonl(det_path, all);
  const std::string lat_path = join(out_dir, "latency.csv");
  write_text_file(lat_path, latency);
  mw.add_output(det_path);
  mw.add_output(lat_path);
  if (opts.export_heatmaps && dataset_dir) {
    const std::string dump_out = join(out_dir, "heatmaps.jsonl");
    write_heatmap_dump_jsonl(dump_out, dumps);
    mw.add_output(dump_out);
  }

  mw.set_config(json{{"mode", mode},
                     {"peak_threshold", dc.peak_threshold},
                     {"eta", dc.eta},
                     {"boundary_scale", dc.boundary_scale},
                     {"min_overlap", dc.min_overlap},
                     {"min_window_radius", dc.min_window_radius},
                     {"export_heatmaps", opts.export_heatmaps}});
  mw.write();
  log::info("wrote " + std::to_string(all.size()) + " detections to " + det_path);
}

void cmd_eval(const std::string& detections_path, const std::string& dataset_dir,
              const std::string& out_dir, const EvalOptions& opts) {
  EvalConfig ec;
  if (opts.config_path) {
    const KeyValues kv = KeyValues::parse_file(*opts.config_path);
    kv.require_known({"iou_threshold", "ece_bins", "boundary_scale", "ap_interp"});
    ec.iou_threshold = kv.get_double_or("iou_threshold", ec.iou_threshold);
    ec.ece_bins = kv.get_int_or("ece_bins", ec.ece_bins);
    ec.boundary_scale = kv.get_double_or("boundary_scale", ec.boundary_scale);
    const std::string interp = kv.get_string_or("ap_interp", "all_point");
    if (interp == "all_point")
      ec.ap_interp = ApInterp::AllPoint;
    else if (interp == "eleven_point")
      ec.ap_interp = ApInterp::ElevenPoint;
    else
      throw DataError(kv.origin() + ": ap_interp must be all_point or eleven_point");
  }
  if (opts.iou_threshold) ec.iou_threshold = *opts.iou_threshold;
  if (opts.bins) ec.ece_bins = *opts.bins;
  if (opts.boundary_scale) ec.boundary_scale = *opts.boundary_scale;
  if (opts.eleven_point) ec.ap_interp = ApInterp::ElevenPoint;
  try {
    ec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const std::vector<Detection> dets = read_detections_jsonl(detections_path);
  const Dataset data = load_dataset(dataset_dir);

  std::set<int> known_ids;
  std::vector<GroundTruthBox> gts;
  for (const Scene& scene : data.scenes) {
    known_ids.insert(scene.id);
    for (const SceneObject& obj : scene.objects)
      gts.push_back(GroundTruthBox{scene.id, obj.class_id, obj.box});
  }
  std::set<int> missing;
  for (const Detection& d : dets)
    if (!known_ids.count(d.image_id)) missing.insert(d.image_id);
  if (!missing.empty()) {
    std::string ids;
    for (int id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw DataError(detections_path + ": detections reference image ids absent from " +
                    dataset_dir + ": " + ids);
  }

  ensure_dir(out_dir);
  ManifestWriter mw("eval", out_dir);
  mw.add_input(detections_path);
  mw.add_input(dataset_dir);

  const EvalReport report = evaluate(dets, gts, ec);
  std::string text = report_to_text(report);

  if (opts.shifted_path) {
    mw.add_input(*opts.shifted_path);
    const std::vector<Detection> shifted = read_detections_jsonl(*opts.shifted_path);
    if (shifted.empty() || !report.mean_u_obj) {
      log::warn("shifted comparison skipped: need detections on both sides");
    } else {
      double sum = 0.0;
      for (const Detection& d : shifted) sum += d.u_obj;
      const double shifted_mean = sum / shifted.size();
      text += "shifted_mean_u_obj = " + format_csv_value(shifted_mean) + "\n";
      text += "u_obj_delta = " + format_csv_value(shifted_mean - *report.mean_u_obj) +
              "\n";
    }
  }

  const std::string report_path = join(out_dir, "report.txt");
  write_text_file(report_path, text);

  std::string pr = "recall,precision\n";
  for (const auto& p : report.pr_curve)
    pr += format_csv_value(p.recall) + "," + format_csv_value(p.precision) + "\n";
  const std::string pr_path = join(out_dir, "pr_curve.csv");
  write_text_file(pr_path, pr);

  std::string rel = "bin_low,bin_high,count,mean_score,accuracy\n";
  for (const auto& b : report.reliability)
    rel += format_csv_value(b.lo) + "," + format_csv_value(b.hi) + "," +
           std::to_string(b.count) + "," + format_csv_value(b.mean_score) + "," +
           format_csv_value(b.accuracy) + "\n";
  const std::string rel_path = join(out_dir, "reliability.csv");
  write_text_file(rel_path, rel);

  std::string roc = "fpr,tpr\n";
  for (const auto& p : report.roc_curve)
    roc += format_csv_value(p.fpr) + "," + format_csv_value(p.tpr) + "\n";
  const std::string roc_path = join(out_dir, "roc.csv");
  write_text_file(roc_path, roc);

  mw.set_config(json{
      {"iou_threshold", ec.iou_threshold},
      {"ece_bins", ec.ece_bins},
      {"boundary_scale", ec.boundary_scale},
      {"ap_interp", ec.ap_interp == ApInterp::AllPoint ? "all_point" : "eleven_point"},
      {"shifted", opts.shifted_path ? json(*opts.shifted_path) : json(nullptr)}});
  mw.add_output(report_path);
  mw.add_output(pr_path);
  mw.add_output(rel_path);
  mw.add_output(roc_path);
  mw.write();
}

}  // namespace certainnet
