#pragma once

// Semantic information reconstitution: stage concatenation, semantic
// reassembly, talking-head attention, trainable-adjacency GCN, classifier.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sfi/layers.hpp"
#include "sfi/ops.hpp"
#include "sfi/rng.hpp"

namespace sfi::sir {

struct SirConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t gcn_depth = 1;
  std::optional<double> adjacency_init;  // defaults to 1/𝒮

  void validate() const {
    if (dim == 0 || heads == 0) throw ConfigError("sir.dim and sir.heads must be positive");
    if (dim % heads != 0)
      throw ConfigError("sir.heads = " + std::to_string(heads) + " does not divide sir.dim = " + std::to_string(dim));
    if (gcn_depth < 1) throw ConfigError("sir.gcn_depth must be at least 1");
  }
};

/// Projects each stage's selected features to the common width and stacks
/// them in stage order.
inline Tensor concat_stages(const std::vector<Tensor>& selected, const std::vector<Tensor>& projections) {
  if (selected.empty()) throw ShapeError("concat_stages: no stages");
  if (selected.size() != projections.size()) throw ShapeError("concat_stages: one projection per stage required");
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i].rank() != 2 || projections[i].rank() != 2 || selected[i].dim(1) != projections[i].dim(0))
      throw ShapeError("concat_stages: stage " + std::to_string(i) + " features " + shape_str(selected[i].shape()) +
                       " do not match projection " + shape_str(projections[i].shape()));
    parts.push_back(matmul(selected[i], projections[i]));
  }
  return concat_rows(parts);
}

/// B_i = W₋₁⊗G_{i−1} + W₀⊗G_i + W₁⊗G_{i+1}, zero padded at both ends.
inline Tensor semantic_reassembly(const Tensor& g, const Tensor& w_prev, const Tensor& w_self, const Tensor& w_next) {
  auto b = add(mul_row(shift_rows(g, -1), w_prev), mul_row(g, w_self));
  return add(b, mul_row(shift_rows(g, 1), w_next));
}

struct HeadWeights {
  Tensor query, key, value;  // each C × C/H
};

struct HeadOutput {
  Tensor attention;  // 𝒮×𝒮 row-stochastic
  Tensor output;     // J_h, 𝒮 × C/H
};

/// softmax(QKᵀ/√(C/H))·V for every head.
inline std::vector<HeadOutput> attention_heads(const Tensor& b, const std::vector<HeadWeights>& heads) {
  if (heads.empty()) throw ShapeError("attention: no heads");
  std::vector<HeadOutput> out;
  for (const auto& hw : heads) {
    auto q = matmul(b, hw.query);
    auto k = matmul(b, hw.key);
    auto v = matmul(b, hw.value);
    const double inv = 1.0 / std::sqrt(static_cast<double>(hw.query.dim(1)));
    auto att = softmax(scale(matmul(q, transpose(k)), inv), 1);
    out.push_back({att, matmul(att, v)});
  }
  return out;
}

/// O_h = Σ_h′ U[h, h′]·J_h′.
inline std::vector<Tensor> mix_heads(const std::vector<Tensor>& head_outputs, const Tensor& mixing) {
  const std::size_t h = head_outputs.size();
  if (mixing.rank() != 2 || mixing.dim(0) != h || mixing.dim(1) != h)
    throw ShapeError("mix_heads: mixing matrix " + shape_str(mixing.shape()) + " does not match " +
                     std::to_string(h) + " heads");
  const auto shape = head_outputs.front().shape();
  const std::size_t flat = numel_of(shape);
  std::vector<Tensor> rows;
  for (const auto& j : head_outputs) rows.push_back(reshape(j, {1, flat}));
  auto mixed = matmul(mixing, concat_rows(rows));
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < h; ++i) out.push_back(reshape(gather_rows(mixed, {i}), shape));
  return out;
}

/// Plain multi-head concatenation, no head mixing.
inline Tensor multi_head_concat(const std::vector<HeadOutput>& heads) {
  std::vector<Tensor> parts;
  for (const auto& h : heads) parts.push_back(h.output);
  return concat_cols(parts);
}

struct AttentionResult {
  std::vector<HeadOutput> heads;
  Tensor output;  // O, 𝒮×C
};

inline AttentionResult talking_head_attention(const Tensor& b, const std::vector<HeadWeights>& heads,
                                              const Tensor& mixing) {
  std::size_t width = 0;
  for (const auto& hw : heads) width += hw.value.dim(1);
  if (b.rank() != 2 || width != b.dim(1) || b.dim(1) % heads.size() != 0)
    throw ShapeError("talking_head_attention: " + std::to_string(heads.size()) + " heads do not divide input " +
                     shape_str(b.shape()));
  AttentionResult res;
  res.heads = attention_heads(b, heads);
  std::vector<Tensor> js;
  for (const auto& h : res.heads) js.push_back(h.output);
  res.output = concat_cols(mix_heads(js, mixing));
  return res;
}

/// f ← ReLU(Ad·f·W_l) for each layer weight, adjacency shared.
inline Tensor gcn_forward(const Tensor& o, const Tensor& adjacency, const std::vector<Tensor>& weights) {
  if (weights.empty()) throw ConfigError("gcn_forward: depth must be at least 1");
  if (adjacency.rank() != 2 || adjacency.dim(0) != o.dim(0) || adjacency.dim(1) != o.dim(0))
    throw ShapeError("gcn_forward: adjacency " + shape_str(adjacency.shape()) + " does not match " +
                     std::to_string(o.dim(0)) + " nodes");
  Tensor f = o;
  for (const auto& w : weights) f = relu(matmul(matmul(adjacency, f), w));
  return f;
}

struct Classification {
  Tensor logits;
  Tensor probabilities;
};

/// Mean-pool over nodes, linear head, softmax.
inline Classification classify(const Tensor& f_rec, const LinearHead& head) {
  auto logits = head(mean_rows(f_rec));
  return {logits, softmax(logits, 0)};
}

/// Trainable state of the reconstitution module.
struct SirWeights {
  /// Variance-preserving uniform init (doubled before the ReLU in the GCN).
  static constexpr double kGain = 3.0;

  std::vector<Tensor> stage_projections;  // C_i × C
  Tensor sr_prev, sr_self, sr_next;       // C each
  std::vector<HeadWeights> heads;
  Tensor mixing;     // H×H
  Tensor adjacency;  // 𝒮×𝒮
  std::vector<Tensor> gcn;
  LinearHead classifier;

  static SirWeights init(const SirConfig& cfg, const std::vector<std::size_t>& stage_channels,
                         std::size_t total_nodes, std::size_t num_classes, Rng& rng) {
    cfg.validate();
    if (total_nodes == 0) throw ConfigError("sir: no preserved features");
    SirWeights w;
    const std::size_t c = cfg.dim, d = cfg.dim / cfg.heads;
    for (auto ci : stage_channels) w.stage_projections.push_back(init_uniform({ci, c}, ci, rng, kGain));
    w.sr_prev = Tensor::zeros({c}, true);
    w.sr_self = Tensor::full({c}, 1.0, true);
    w.sr_next = Tensor::zeros({c}, true);
    for (std::size_t h = 0; h < cfg.heads; ++h)
      w.heads.push_back(
          {init_uniform({c, d}, c, rng, kGain), init_uniform({c, d}, c, rng, kGain), init_uniform({c, d}, c, rng, kGain)});
    std::vector<double> eye(cfg.heads * cfg.heads, 0.0);
    for (std::size_t h = 0; h < cfg.heads; ++h) eye[h * cfg.heads + h] = 1.0;
    w.mixing = Tensor::from({cfg.heads, cfg.heads}, std::move(eye), true);
    const double a0 = cfg.adjacency_init.value_or(1.0 / static_cast<double>(total_nodes));
    w.adjacency = Tensor::full({total_nodes, total_nodes}, a0, true);
    for (std::size_t l = 0; l < cfg.gcn_depth; ++l) w.gcn.push_back(init_uniform({c, c}, c, rng, 2.0 * kGain));
    w.classifier = LinearHead::init(c, num_classes, rng, kGain);
    return w;
  }

  NamedTensors parameters() const {
    NamedTensors out;
    for (std::size_t i = 0; i < stage_projections.size(); ++i)
      out.emplace_back("sir.stage" + std::to_string(i) + ".projection", stage_projections[i]);
    out.emplace_back("sir.reassembly.prev", sr_prev);
    out.emplace_back("sir.reassembly.self", sr_self);
    out.emplace_back("sir.reassembly.next", sr_next);
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto p = "sir.head" + std::to_string(h);
      out.emplace_back(p + ".query", heads[h].query);
      out.emplace_back(p + ".key", heads[h].key);
      out.emplace_back(p + ".value", heads[h].value);
    }
    out.emplace_back("sir.mixing", mixing);
    out.emplace_back("sir.adjacency", adjacency);
    for (std::size_t l = 0; l < gcn.size(); ++l) out.emplace_back("sir.gcn" + std::to_string(l) + ".weight", gcn[l]);
    out.emplace_back("sir.classifier.weight", classifier.weight);
    out.emplace_back("sir.classifier.bias", classifier.bias);
    return out;
  }
};

struct SemanticState {
  Tensor concatenated;   // G
  Tensor reassembled;    // B
  AttentionResult attention;
  Tensor reconstituted;  // f_rec
  Classification classification;
};

inline SemanticState reconstitute(const std::vector<Tensor>& selected, const SirWeights& w) {
  SemanticState st;
  st.concatenated = concat_stages(selected, w.stage_projections);
  if (st.concatenated.dim(0) != w.adjacency.dim(0))
    throw ShapeError("sir: " + std::to_string(st.concatenated.dim(0)) + " preserved features but adjacency is " +
                     shape_str(w.adjacency.shape()));
  st.reassembled = semantic_reassembly(st.concatenated, w.sr_prev, w.sr_self, w.sr_next);
  st.attention = talking_head_attention(st.reassembled, w.heads, w.mixing);
  st.reconstituted = gcn_forward(st.attention.output, w.adjacency, w.gcn);
  st.classification = classify(st.reconstituted, w.classifier);
  return st;
}

}  // namespace sfi::sir
