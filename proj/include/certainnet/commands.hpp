#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace certainnet {

inline constexpr const char kVersion[] = "0.1.0";

// "A0".."A6" -> ablation level; throws UsageError otherwise.
int parse_ablation(const std::string& name);

// Each command validates its inputs, writes its artifacts under out_dir, and
// finishes with a manifest.json recording the resolved configuration, seed,
// paths, and timing. Failures surface as the exception types in errors.hpp;
// exit-code mapping happens in the executable.

void cmd_synth(const std::string& config_path, const std::string& out_dir,
               std::optional<uint64_t> seed_override);

struct TrainOptions {
  uint64_t seed = 1;
  std::optional<int> ablation;  // overrides the config's flag set when given
};

void cmd_train(const std::string& dataset_dir, const std::string& config_path,
               const std::string& out_dir, const TrainOptions& opts);

struct InferOptions {
  std::optional<std::string> config_path;
  std::optional<double> peak_threshold;
  std::optional<double> eta;
  std::optional<double> boundary_scale;
  bool export_heatmaps = false;
};

// Exactly one of dataset_dir (model mode, checkpoint required) or dump_path
// (post-hoc mode, decode only) must be given.
void cmd_infer(const std::optional<std::string>& checkpoint_path,
               const std::optional<std::string>& dataset_dir,
               const std::optional<std::string>& dump_path,
               const std::string& out_dir, const InferOptions& opts);

struct EvalOptions {
  std::optional<std::string> config_path;
  std::optional<double> iou_threshold;
  std::optional<double> boundary_scale;
  std::optional<int> bins;
  bool eleven_point = false;
  std::optional<std::string> shifted_path;
};

void cmd_eval(const std::string& detections_path, const std::string& dataset_dir,
              const std::string& out_dir, const EvalOptions& opts);

}  // namespace certainnet
