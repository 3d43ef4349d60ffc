#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sfi/backbone.hpp"
#include "sfi/mff.hpp"
#include "sfi/rng.hpp"
#include "sfi/sir.hpp"

namespace sfi {

struct ModelConfig {
  BackboneConfig backbone;
  mff::AmbiguityParams ambiguity;
  mff::NoiseParams noise;
  sir::SirConfig sir;
  std::size_t num_classes = 4;
  bool mff_enabled = true;

  void validate() const {
    backbone.stage_extents();
    mff::validate(ambiguity, noise);
    sir.validate();
    if (num_classes < 2) throw ConfigError("data.classes must be at least 2");
    if (ambiguity.k > num_classes)
      throw ConfigError("mff.k = " + std::to_string(ambiguity.k) + " exceeds the " + std::to_string(num_classes) +
                        " classes");
    for (const auto& e : backbone.stage_extents()) {
      const std::size_t s = e.width * e.height;
      if (!mff_enabled) continue;
      const auto keep = mff::preserved_count(ambiguity.gamma1, s);
      if (keep == 0 || keep == s)
        throw ConfigError("mff.gamma1 = " + std::to_string(ambiguity.gamma1) + " gives a degenerate mask on a " +
                          std::to_string(e.width) + "x" + std::to_string(e.height) + " stage");
      if (mff::preserved_count(noise.gamma2, s) < 1)
        throw ConfigError("mff.gamma2 = " + std::to_string(noise.gamma2) + " keeps nothing on a " +
                          std::to_string(e.width) + "x" + std::to_string(e.height) + " stage");
    }
  }

  /// Number of preserved features per stage; fixed by the configuration.
  std::vector<std::size_t> preserved_per_stage() const {
    std::vector<std::size_t> out;
    for (const auto& e : backbone.stage_extents()) {
      const std::size_t s = e.width * e.height;
      out.push_back(mff_enabled ? mff::preserved_count(noise.gamma2, s) : s);
    }
    return out;
  }

  std::size_t total_nodes() const {
    std::size_t n = 0;
    for (auto s : preserved_per_stage()) n += s;
    return n;
  }
};

struct ForwardResult {
  std::vector<StageFeatures> stages;
  std::vector<mff::FilterArtifacts> filters;
  sir::SemanticState semantic;
  std::optional<Tensor> filter_loss;  // present when a label was given
  std::optional<Tensor> class_loss;

  const Tensor& probabilities() const { return semantic.classification.probabilities; }

  std::size_t predicted_class() const {
    auto p = probabilities().data();
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  std::vector<mff::StageSelection> selections() const {
    std::vector<mff::StageSelection> out;
    for (const auto& f : filters) out.push_back(mff::selection_of(f));
    return out;
  }
};

/// Backbone → per-stage MFF → SIR, with per-stage class-map projections and
/// filter classifiers.
class SfiNet {
 public:
  SfiNet(ModelConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    backbone_ = Backbone(config_.backbone, rng);
    std::vector<std::size_t> channels;
    for (const auto& e : config_.backbone.stage_extents()) {
      channels.push_back(e.channels);
      filter_heads_.push_back(LinearHead::init(e.channels, config_.num_classes, rng));
    }
    sir_ = sir::SirWeights::init(config_.sir, channels, config_.total_nodes(), config_.num_classes, rng);
  }

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const sir::SirWeights& sir_weights() const { return sir_; }
  const std::vector<LinearHead>& filter_heads() const { return filter_heads_; }

  /// `frozen` replays recorded per-stage selections (gradient checks).
  ForwardResult forward(const Tensor& image, std::optional<std::size_t> label = std::nullopt,
                        const std::vector<mff::StageSelection>* frozen = nullptr) const {
    if (label && *label >= config_.num_classes)
      throw std::out_of_range("label " + std::to_string(*label) + " out of range for " +
                              std::to_string(config_.num_classes) + " classes");
    if (frozen && frozen->size() != config_.backbone.num_stages())
      throw ShapeError("frozen selections do not match the number of stages");
    ForwardResult r;
    r.stages = backbone_.forward(image);
    std::vector<Tensor> selected;
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
      r.filters.push_back(mff::filter_stage(r.stages[i].features, filter_heads_[i].weight, config_.ambiguity,
                                            config_.noise, frozen ? &(*frozen)[i] : nullptr, !config_.mff_enabled));
      selected.push_back(r.filters.back().noise.features);
    }
    r.semantic = sir::reconstitute(selected, sir_);
    if (label) {
      r.filter_loss = mff::filter_loss(selected, filter_heads_, *label);
      r.class_loss = cross_entropy(r.semantic.classification.logits, *label);
    }
    return r;
  }

  /// Every trainable tensor with a stable name.
  NamedTensors parameters() const {
    NamedTensors out = backbone_.parameters();
    for (std::size_t i = 0; i < filter_heads_.size(); ++i) {
      out.emplace_back("mff.stage" + std::to_string(i) + ".filter_classifier.weight", filter_heads_[i].weight);
      out.emplace_back("mff.stage" + std::to_string(i) + ".filter_classifier.bias", filter_heads_[i].bias);
    }
    for (auto& p : sir_.parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto [name, t] : parameters()) t.zero_grad();
  }

  /// Copies values from a checkpoint; every parameter must be present with an
  /// identical shape.
  void load_parameters(const std::map<std::string, Tensor>& values) {
    for (auto [name, t] : parameters()) {
      auto it = values.find(name);
      if (it == values.end()) throw ShapeError("checkpoint is missing parameter '" + name + "'");
      if (it->second.shape() != t.shape())
        throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                         ", model expects " + shape_str(t.shape()));
      auto src = it->second.data();
      std::copy(src.begin(), src.end(), t.mutable_data().begin());
    }
    if (values.size() != parameters().size())
      throw ShapeError("checkpoint holds " + std::to_string(values.size()) + " tensors, model has " +
                       std::to_string(parameters().size()));
  }

 private:
  ModelConfig config_;
  Backbone backbone_;
  std::vector<LinearHead> filter_heads_;
  sir::SirWeights sir_;
};

}  // namespace sfi
