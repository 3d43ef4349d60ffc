#pragma once

// Toy multi-stage feature extractor: each stage is a strided linear patch
// embedding followed by tanh. Spatial extent shrinks by the stage stride and
// channel depth is non-decreasing.

#include <string>
#include <vector>

#include "sfi/layers.hpp"
#include "sfi/ops.hpp"
#include "sfi/rng.hpp"

namespace sfi {

struct BackboneConfig {
  std::size_t input_width = 32;
  std::size_t input_height = 32;
  std::size_t input_channels = 3;
  std::vector<std::size_t> strides{4, 2, 2, 1};
  std::vector<std::size_t> channels{16, 32, 64, 64};

  std::size_t num_stages() const { return strides.size(); }

  struct Extent {
    std::size_t width, height, channels;
  };

  /// Output shape of every stage; throws ConfigError on invalid configs.
  std::vector<Extent> stage_extents() const {
    if (strides.empty()) throw ConfigError("backbone: at least one stage required");
    if (strides.size() != channels.size())
      throw ConfigError("backbone: " + std::to_string(strides.size()) + " strides but " +
                        std::to_string(channels.size()) + " channel depths");
    if (input_channels == 0) throw ConfigError("backbone: input channels must be positive");
    std::vector<Extent> out;
    std::size_t w = input_width, h = input_height;
    for (std::size_t i = 0; i < strides.size(); ++i) {
      const auto s = strides[i];
      if (s == 0 || w % s != 0 || h % s != 0)
        throw ConfigError("backbone: stage " + std::to_string(i) + " extent " + std::to_string(w) + "x" +
                          std::to_string(h) + " not divisible by stride " + std::to_string(s));
      if (channels[i] == 0 || (i > 0 && channels[i] < channels[i - 1]))
        throw ConfigError("backbone: channel depths must be positive and non-decreasing");
      w /= s;
      h /= s;
      out.push_back({w, h, channels[i]});
    }
    if (w < 2 || h < 2) throw ConfigError("backbone: final stage extent must be at least 2x2");
    return out;
  }
};

struct StageFeatures {
  std::size_t stage = 0;
  Tensor features;  // W_i × H_i × C_i
};

class Backbone {
 public:
  struct Stage {
    Tensor weight;  // (stride·stride·C_prev) × C_i
    Tensor bias;    // C_i
  };

  Backbone() = default;

  Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
    config_.stage_extents();
    std::size_t prev = config_.input_channels;
    for (std::size_t i = 0; i < config_.num_stages(); ++i) {
      const std::size_t fan_in = config_.strides[i] * config_.strides[i] * prev;
      stages_.push_back({init_uniform({fan_in, config_.channels[i]}, fan_in, rng),
                         Tensor::zeros({config_.channels[i]}, true)});
      prev = config_.channels[i];
    }
  }

  const BackboneConfig& config() const { return config_; }
  std::vector<Stage>& stages() { return stages_; }
  const std::vector<Stage>& stages() const { return stages_; }

  std::vector<StageFeatures> forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != config_.input_width || image.dim(1) != config_.input_height ||
        image.dim(2) != config_.input_channels)
      throw ShapeError("backbone: image " + shape_str(image.shape()) + " does not match configured input " +
                       shape_str({config_.input_width, config_.input_height, config_.input_channels}));
    std::vector<StageFeatures> out;
    Tensor x = image;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const auto s = config_.strides[i];
      const std::size_t w = x.dim(0) / s, h = x.dim(1) / s;
      auto y = tanh(add_row(matmul(patchify(x, s), stages_[i].weight), stages_[i].bias));
      x = reshape(y, {w, h, config_.channels[i]});
      out.push_back({i, x});
    }
    return out;
  }

  NamedTensors parameters() const {
    NamedTensors out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      out.emplace_back("backbone.stage" + std::to_string(i) + ".weight", stages_[i].weight);
      out.emplace_back("backbone.stage" + std::to_string(i) + ".bias", stages_[i].bias);
    }
    return out;
  }

 private:
  BackboneConfig config_;
  std::vector<Stage> stages_;
};

}  // namespace sfi
