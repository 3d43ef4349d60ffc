#pragma once

// Command implementations behind the `sfi` executable. Each returns the
// process exit code: 0 success, 1 failed check or aborted run, 2 bad usage,
// invalid configuration or unreadable input.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/gradcheck_suite.hpp"
#include "sfi/model.hpp"
#include "sfi/serialize.hpp"
#include "sfi/training.hpp"

namespace sfi::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

inline constexpr const char* kSeedEnv = "SFI_SEED";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kCheckpointFile = "checkpoint.txt";
inline constexpr const char* kResolvedFile = "resolved.cfg";

/// Where a configuration comes from and what to change on top of it.
struct ConfigSource {
  std::optional<std::filesystem::path> path;  // config file; the preset is used when absent
  std::string preset = "desk";
  std::vector<std::string> overrides;         // `section.key=value`
};

/// Preset or file, then `SFI_SEED`, then `--set` overrides; validated.
inline RunConfig resolve_config(const ConfigSource& src) {
  RunConfig cfg;
  if (src.path) {
    if (!std::filesystem::is_regular_file(*src.path))
      throw FormatError("cannot read config file " + src.path->string());
    cfg = load_config(*src.path);
  } else {
    cfg = RunConfig::preset(src.preset);
  }
  if (const char* env = std::getenv(kSeedEnv); env && *env) cfg.set("train.seed", env);
  for (const auto& o : src.overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

namespace detail {

/// Runs `body`, mapping library exceptions onto exit codes.
template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "error: run aborted: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}

inline SfiNet load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  if (!std::filesystem::is_regular_file(checkpoint)) throw FormatError("cannot read checkpoint " + checkpoint.string());
  Rng rng(cfg.train.seed);
  SfiNet model(cfg.model(), rng);
  model.load_parameters(load_checkpoint(checkpoint));
  return model;
}

inline void write_map(const std::filesystem::path& dir, const std::string& stem, const Tensor& map) {
  save_pgm(dir / (stem + ".pgm"), map);
  save_tensor_csv(dir / (stem + ".csv"), map);
}

}  // namespace detail

/// Trains on the configured synthetic dataset. Writes `metrics.csv`,
/// `checkpoint.txt` and `resolved.cfg` into the run's output directory.
inline int cmd_train(const ConfigSource& src, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = resolve_config(src);
    const std::filesystem::path dir = cfg.out_dir;
    std::filesystem::create_directories(dir);
    {
      std::ofstream snap(dir / kResolvedFile);
      if (!snap) throw FormatError("cannot write " + (dir / kResolvedFile).string());
      snap << cfg.to_text();
    }
    const auto data = make_synthetic(cfg.data);
    Rng rng(cfg.train.seed);
    SfiNet model(cfg.model(), rng);
    out << "training " << model.parameters().size() << " tensors on " << data.train.size() << " images for "
        << cfg.train.epochs << " epochs\n";
    std::ofstream metrics(dir / kMetricsFile);
    if (!metrics) throw FormatError("cannot write " + (dir / kMetricsFile).string());
    metrics << "epoch,split,loss,acc\n";
    auto history = train(model, data, cfg.train, [&](const EpochMetrics& m) {
      metrics << m.epoch << ',' << m.split << ',' << format_double(m.loss) << ',' << format_double(m.accuracy) << '\n';
      metrics.flush();
      out << "epoch " << m.epoch << ' ' << m.split << " loss " << format_double(m.loss) << " acc "
          << format_double(m.accuracy) << '\n';
    });
    save_checkpoint(dir / kCheckpointFile, model.parameters());
    out << "wrote " << (dir / kMetricsFile).string() << ", " << (dir / kCheckpointFile).string() << " and "
        << (dir / kResolvedFile).string() << '\n';
    return int{kOk};
  });
}

/// Prints top-1 accuracy and mean loss of a checkpoint on one split.
inline int cmd_eval(const ConfigSource& src, const std::filesystem::path& checkpoint, const std::string& split,
                    std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    if (split != "train" && split != "test") {
      err << "error: --split must be train or test, got '" << split << "'\n";
      return int{kUsage};
    }
    const auto cfg = resolve_config(src);
    const auto model = detail::load_model(cfg, checkpoint);
    const auto data = make_synthetic(cfg.data);
    const auto r = evaluate(model, split == "train" ? data.train : data.test, cfg.train.xi);
    out << "split: " << split << '\n' << "loss: " << format_double(r.loss) << '\n'
        << "accuracy: " << format_double(r.accuracy) << '\n';
    return int{kOk};
  });
}

/// Input to export-maps: a PNM file or a sample of the configured dataset.
struct ExportInput {
  std::optional<std::filesystem::path> image;
  std::size_t sample = 0;
  std::string split = "test";
  std::string id;  // file-name prefix; derived from the input when empty
};

/// Writes, for an image, `{id}_stage{i}_{kind}.{pgm,csv}` with kind one of
/// ambiguity, mask, scores and top{j} (j = 1..k, most likely class first),
/// `{id}_adjacency.{pgm,csv}` and a `{id}_summary.txt` listing the top-k
/// classes and the prediction.
inline int cmd_export_maps(const ConfigSource& src, const std::filesystem::path& checkpoint, const ExportInput& input,
                           const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = resolve_config(src);
    const auto model = detail::load_model(cfg, checkpoint);
    const auto data = make_synthetic(cfg.data);
    Tensor image;
    std::string id = input.id;
    if (input.image) {
      if (!std::filesystem::is_regular_file(*input.image))
        throw FormatError("cannot read image " + input.image->string());
      const auto raw = load_image(*input.image);
      const auto& bc = cfg.model().backbone;
      if (raw.dim(0) != bc.input_width || raw.dim(1) != bc.input_height || raw.dim(2) != bc.input_channels)
        throw ShapeError("image " + input.image->string() + " is " + shape_str(raw.shape()) + ", model expects " +
                         shape_str({bc.input_width, bc.input_height, bc.input_channels}));
      image = normalize_image(raw, data.channel_mean, data.channel_std);
      if (id.empty()) id = input.image->stem().string();
    } else {
      if (input.split != "train" && input.split != "test")
        throw FormatError("--split must be train or test, got '" + input.split + "'");
      const auto& samples = input.split == "train" ? data.train : data.test;
      if (input.sample >= samples.size())
        throw FormatError("sample " + std::to_string(input.sample) + " out of range for " +
                          std::to_string(samples.size()) + " " + input.split + " images");
      image = samples[input.sample].image;
      if (id.empty()) id = input.split + std::to_string(input.sample);
    }
    std::filesystem::create_directories(out_dir);
    const auto result = model.forward(image);
    std::ofstream summary(out_dir / (id + "_summary.txt"));
    summary << "predicted_class = " << result.predicted_class() << '\n';
    for (std::size_t i = 0; i < result.filters.size(); ++i) {
      const auto& f = result.filters[i];
      const auto stem = id + "_stage" + std::to_string(i) + "_";
      detail::write_map(out_dir, stem + "ambiguity", f.ambiguity);
      detail::write_map(out_dir, stem + "mask", f.mask);
      detail::write_map(out_dir, stem + "scores", f.noise.scores);
      summary << "stage" << i << ".topk =";
      for (std::size_t j = 0; j < f.topk.indices.size(); ++j) {
        const auto& maps = f.class_maps.maps;
        auto slice = reshape(gather_channels(maps, {f.topk.indices[j]}), {maps.dim(0), maps.dim(1)});
        detail::write_map(out_dir, stem + "top" + std::to_string(j + 1), slice);
        summary << ' ' << f.topk.indices[j];
      }
      summary << '\n';
    }
    detail::write_map(out_dir, id + "_adjacency", model.sir_weights().adjacency);
    out << "wrote maps for '" << id << "' to " << out_dir.string() << '\n';
    return int{kOk};
  });
}

/// Runs the finite-difference suite on the configured model (the `tiny`
/// preset by default). `corrupt_op` scales that op's backward rule by 1.5.
inline int cmd_gradcheck(const ConfigSource& src, const std::string& corrupt_op, std::ostream& out,
                         std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = resolve_config(src);
    std::unique_ptr<ScopedBackwardFault> fault;
    if (!corrupt_op.empty()) {
      fault = std::make_unique<ScopedBackwardFault>(corrupt_op, 1.5);
      out << "corrupting backward rule of '" << corrupt_op << "'\n";
    }
    const auto report = run_gradcheck_suite(cfg.model(), cfg.train.xi, cfg.train.seed);
    out << std::left;
    for (const auto& e : report.entries)
      out << std::setw(12) << e.module << ' ' << std::setw(44) << e.report.name << " n=" << std::setw(5)
          << e.report.checked << " max_rel=" << std::setw(13) << format_double(e.report.max_rel_error)
          << (e.report.passed() ? " ok" : " FAIL") << '\n';
    out << "worst relative error per module:\n";
    for (const auto& [module, worst] : report.worst_by_module())
      out << "  " << std::setw(12) << module << ' ' << format_double(worst) << '\n';
    out << (report.passed() ? "gradcheck: PASS" : "gradcheck: FAIL") << '\n';
    return int{report.passed() ? kOk : kCheckFailed};
  });
}

}  // namespace sfi::cli
