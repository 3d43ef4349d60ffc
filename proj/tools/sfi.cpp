// sfi: train, evaluate, export filter maps and check gradients.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfi/commands.hpp"

namespace {

struct SourceOptions {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd, const std::string& default_preset) {
    preset = default_preset;
    cmd->add_option("-c,--config", config, "Configuration file (section.key = value lines)");
    cmd->add_option("--preset", preset, "Preset used when no --config is given: desk, tiny or paper-protocol")
        ->capture_default_str();
    cmd->add_option("--set", overrides, "Override one key, e.g. --set train.lr=0.01 (repeatable)");
  }

  sfi::cli::ConfigSource source() const {
    sfi::cli::ConfigSource src;
    if (!config.empty()) src.path = config;
    src.preset = preset;
    src.overrides = overrides;
    return src;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ambiguity and noise filtering with semantic reconstitution for fine-grained classification"};
  app.require_subcommand(1);

  SourceOptions train_opts, eval_opts, export_opts, grad_opts;

  auto* train = app.add_subcommand("train", "Train on the configured synthetic dataset");
  train_opts.attach(train, "desk");

  auto* eval = app.add_subcommand("eval", "Report top-1 accuracy of a checkpoint");
  eval_opts.attach(eval, "desk");
  std::string eval_checkpoint, eval_split = "test";
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--split", eval_split, "Dataset split: train or test")->capture_default_str();

  auto* exp = app.add_subcommand("export-maps", "Write per-stage filter maps as PGM and CSV");
  export_opts.attach(exp, "desk");
  std::string export_checkpoint, export_out, export_image;
  sfi::cli::ExportInput input;
  exp->add_option("--checkpoint", export_checkpoint, "Checkpoint written by train")->required();
  exp->add_option("-o,--out", export_out, "Directory receiving the maps")->required();
  exp->add_option("--image", export_image, "Binary PGM/PPM image matching the model input size");
  exp->add_option("--sample", input.sample, "Index of a dataset image, used when --image is absent")
      ->capture_default_str();
  exp->add_option("--split", input.split, "Dataset split for --sample")->capture_default_str();
  exp->add_option("--id", input.id, "File-name prefix (default: image stem or split+index)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_opts.attach(grad, "tiny");
  std::string corrupt;
  grad->add_option("--corrupt", corrupt, "Deliberately corrupt the backward rule of this op (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sfi::cli::kUsage;
  }

  if (*train) return sfi::cli::cmd_train(train_opts.source(), std::cout, std::cerr);
  if (*eval) return sfi::cli::cmd_eval(eval_opts.source(), eval_checkpoint, eval_split, std::cout, std::cerr);
  if (*exp) {
    if (!export_image.empty()) input.image = export_image;
    return sfi::cli::cmd_export_maps(export_opts.source(), export_checkpoint, input, export_out, std::cout, std::cerr);
  }
  return sfi::cli::cmd_gradcheck(grad_opts.source(), corrupt, std::cout, std::cerr);
}
