#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "certainnet/commands.hpp"
#include "certainnet/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"certainnet: anchor-free detection with closed-form uncertainty"};
  app.set_version_flag("--version", std::string("certainnet ") + certainnet::kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  std::string synth_config, synth_out;
  std::optional<uint64_t> synth_seed;
  synth->add_option("--config", synth_config, "Scene config file")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "Override the config's seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  std::string train_data, train_config, train_out, train_ablation;
  certainnet::TrainOptions train_opts;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--config", train_config, "Training config file")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--seed", train_opts.seed, "Training seed")->default_val(1);
  train->add_option("--ablation", train_ablation, "Flag preset A0..A6");

  // infer
  auto* infer = app.add_subcommand("infer", "Run detection plus uncertainty extraction");
  std::optional<std::string> infer_ckpt, infer_data, infer_dump;
  std::string infer_out;
  certainnet::InferOptions infer_opts;
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint");
  infer->add_option("--data", infer_data, "Dataset directory (model mode)");
  infer->add_option("--dump", infer_dump, "Heatmap dump file (post-hoc mode)");
  infer->add_option("--out", infer_out, "Output directory")->required();
  infer->add_option("--config", infer_opts.config_path, "Decode config file");
  infer->add_option("--peak-thresh", infer_opts.peak_threshold, "Peak score threshold");
  infer->add_option("--eta", infer_opts.eta, "Angular weighting exponent");
  infer->add_option("--boundary-scale", infer_opts.boundary_scale,
                    "Confidence-box scale k");
  infer->add_flag("--export-heatmaps", infer_opts.export_heatmaps,
                  "Also write raw head grids for post-hoc decoding");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate detections against a dataset");
  std::string eval_dets, eval_data, eval_out;
  certainnet::EvalOptions eval_opts;
  eval->add_option("--detections", eval_dets, "Detections file")->required();
  eval->add_option("--data", eval_data, "Dataset directory with ground truth")
      ->required();
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--config", eval_opts.config_path, "Eval config file");
  eval->add_option("--iou-thresh", eval_opts.iou_threshold, "Matching IoU threshold");
  eval->add_option("--bins", eval_opts.bins, "Calibration bin count");
  eval->add_option("--boundary-scale", eval_opts.boundary_scale,
                   "Confidence-box scale k");
  eval->add_flag("--ap-eleven-point", eval_opts.eleven_point,
                 "Sample the PR curve at 11 recall points");
  eval->add_option("--shifted", eval_opts.shifted_path,
                   "Second detections file for the domain-shift comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(synth)) {
      certainnet::cmd_synth(synth_config, synth_out, synth_seed);
    } else if (app.got_subcommand(train)) {
      if (!train_ablation.empty())
        train_opts.ablation = certainnet::parse_ablation(train_ablation);
      certainnet::cmd_train(train_data, train_config, train_out, train_opts);
    } else if (app.got_subcommand(infer)) {
      certainnet::cmd_infer(infer_ckpt, infer_data, infer_dump, infer_out, infer_opts);
    } else if (app.got_subcommand(eval)) {
      certainnet::cmd_eval(eval_dets, eval_data, eval_out, eval_opts);
    }
  } catch (const certainnet::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const certainnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const certainnet::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
