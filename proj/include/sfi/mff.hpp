#pragma once

// Multi-level feature filter: per-stage ambiguity filter (class maps, top-k
// weighted ambiguity map, rank mask) followed by the noise filter (channel
// average scores, top-(1−γ₂) position selection) and the filter loss.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sfi/backbone.hpp"
#include "sfi/layers.hpp"
#include "sfi/ops.hpp"

namespace sfi::mff {

struct AmbiguityParams {
  std::size_t k = 4;
  double beta_h = 1.1;
  double beta_l = 0.95;
  double gamma1 = 0.1;

  void validate() const {
    if (k < 2) throw ConfigError("mff.k must be at least 2, got " + std::to_string(k));
    if (!(beta_l > 0.0 && beta_h > beta_l))
      throw ConfigError("mff.beta_h must exceed mff.beta_l and both must be positive");
    if (!(gamma1 > 0.0 && gamma1 < 1.0)) throw ConfigError("mff.gamma1 must lie in (0, 1)");
  }
};

struct NoiseParams {
  double gamma2 = 0.2;

  void validate() const {
    if (!(gamma2 > 0.0 && gamma2 < 1.0)) throw ConfigError("mff.gamma2 must lie in (0, 1)");
  }
};

/// AF zeroes regions and NF removes them, so AF may not drop more than NF.
inline void validate(const AmbiguityParams& a, const NoiseParams& n) {
  a.validate();
  n.validate();
  if (a.gamma1 > n.gamma2) throw ConfigError("mff.gamma1 may not exceed mff.gamma2");
}

/// floor((1 − ratio)·total). The small slack keeps exact integer products
/// such as (1 − 0.9)·10 from flooring one too low under binary rounding.
inline std::size_t preserved_count(double drop_ratio, std::size_t total) {
  return static_cast<std::size_t>(std::floor((1.0 - drop_ratio) * static_cast<double>(total) + 1e-9));
}

struct ClassMaps {
  Tensor maps;        // W×H×N
  Tensor prediction;  // N, GAP of maps
};

/// Per-pixel projection of stage features onto class channels plus the
/// coarse GAP prediction.
inline ClassMaps class_maps(const Tensor& features, const Tensor& projection) {
  if (features.rank() != 3) throw ShapeError("class_maps: expected W×H×C features, got " + shape_str(features.shape()));
  const std::size_t w = features.dim(0), h = features.dim(1), c = features.dim(2);
  if (projection.rank() != 2 || projection.dim(0) != c)
    throw ShapeError("class_maps: projection " + shape_str(projection.shape()) + " does not match " +
                     std::to_string(c) + " feature channels");
  auto maps = reshape(matmul(reshape(features, {w * h, c}), projection), {w, h, projection.dim(1)});
  auto pred = global_average_pool(maps);
  return {maps, pred};
}

/// Equally spaced weights from beta_h down to beta_l.
inline std::vector<double> ambiguity_weights(std::size_t k, double beta_h, double beta_l) {
  if (k < 2) throw ConfigError("ambiguity weights need k >= 2");
  const double delta = (beta_h - beta_l) / static_cast<double>(k - 1);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = beta_h - static_cast<double>(i) * delta;
  return w;
}

struct TopK {
  std::vector<std::size_t> indices;  // descending score, ties to lower index
  std::vector<double> weights;
};

inline TopK topk_weights(const Tensor& prediction, const AmbiguityParams& params) {
  const std::size_t n = prediction.numel();
  if (params.k < 2) throw ConfigError("top-k needs k >= 2, got " + std::to_string(params.k));
  if (params.k > n)
    throw ConfigError("top-k: k = " + std::to_string(params.k) + " exceeds " + std::to_string(n) + " classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto p = prediction.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  order.resize(params.k);
  return {order, ambiguity_weights(params.k, params.beta_h, params.beta_l)};
}

/// (1/k)·Σ w_i·T_i over the selected class slices → W×H.
inline Tensor ambiguity_map(const Tensor& maps, const std::vector<std::size_t>& indices,
                            const std::vector<double>& weights) {
  if (indices.size() != weights.size() || indices.empty())
    throw ShapeError("ambiguity_map: need one weight per selected class");
  const std::size_t w = maps.dim(0), h = maps.dim(1), k = indices.size();
  auto slices = reshape(gather_channels(maps, indices), {w * h, k});
  auto weighted = matmul(slices, Tensor::from({k, 1}, weights));
  return reshape(scale(weighted, 1.0 / static_cast<double>(k)), {w, h});
}

/// Binary W×H mask keeping the floor((1−γ₁)·W·H) least ambiguous positions.
/// Ranks ascend with the score; equal scores rank in row-major order.
inline Tensor ambiguity_mask(const Tensor& ambiguity, double gamma1) {
  if (ambiguity.rank() != 2) throw ShapeError("ambiguity_mask: expected W×H map, got " + shape_str(ambiguity.shape()));
  if (!(gamma1 > 0.0 && gamma1 < 1.0)) throw ConfigError("ambiguity_mask: gamma1 must lie in (0, 1)");
  const std::size_t s = ambiguity.numel();
  const std::size_t keep = preserved_count(gamma1, s);
  if (keep == 0 || keep == s)
    throw ConfigError("ambiguity_mask: gamma1 = " + std::to_string(gamma1) + " on " + std::to_string(s) +
                      " positions keeps " + std::to_string(keep) + "; the mask would be degenerate");
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  auto a = ambiguity.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x] < a[y]; });
  std::vector<double> mask(s, 0.0);
  for (std::size_t r = 0; r < keep; ++r) mask[order[r]] = 1.0;
  return Tensor::from(ambiguity.shape(), std::move(mask));
}

struct Masked {
  Tensor maps;      // M′
  Tensor features;  // f′
};

inline Masked apply_mask(const Tensor& mask, const Tensor& maps, const Tensor& features) {
  if (mask.rank() != 2 || maps.rank() != 3 || features.rank() != 3 || maps.dim(0) != mask.dim(0) ||
      maps.dim(1) != mask.dim(1) || features.dim(0) != mask.dim(0) || features.dim(1) != mask.dim(1))
    throw ShapeError("apply_mask: spatial shapes disagree: mask " + shape_str(mask.shape()) + ", maps " +
                     shape_str(maps.shape()) + ", features " + shape_str(features.shape()));
  return {hadamard(maps, mask), hadamard(features, mask)};
}

/// f′ flattened to S×C with the rows at `positions`, in order.
inline Tensor gather_positions(const Tensor& features, const std::vector<std::size_t>& positions) {
  const std::size_t s = features.dim(0) * features.dim(1);
  return gather_rows(reshape(features, {s, features.dim(2)}), positions);
}

struct NoiseSelection {
  Tensor scores;                      // A, W×H channel-average of M′
  std::vector<std::size_t> selected;  // ℛ′, descending score
  Tensor features;                    // g, S′×C
};

/// Keeps the floor((1−γ₂)·S) highest-scoring positions. When the ambiguity
/// mask is supplied, dropped positions rank below every kept one so that the
/// selection never reaches into a dropped region.
inline NoiseSelection noise_select(const Tensor& masked_maps, const Tensor& masked_features, double gamma2,
                                   const Tensor* mask = nullptr) {
  if (masked_maps.rank() != 3 || masked_features.rank() != 3 || masked_maps.dim(0) != masked_features.dim(0) ||
      masked_maps.dim(1) != masked_features.dim(1))
    throw ShapeError("noise_select: spatial shapes disagree: " + shape_str(masked_maps.shape()) + " vs " +
                     shape_str(masked_features.shape()));
  const std::size_t s = masked_maps.dim(0) * masked_maps.dim(1);
  const std::size_t keep = preserved_count(gamma2, s);
  if (keep < 1)
    throw ConfigError("noise_select: gamma2 = " + std::to_string(gamma2) + " leaves no positions out of " +
                      std::to_string(s));
  if (mask && mask->numel() != s) throw ShapeError("noise_select: mask does not match spatial extent");
  auto scores = channel_average_pool(masked_maps);
  auto a = scores.data();
  auto kept = [&](std::size_t i) { return !mask || mask->data()[i] != 0.0; };
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (kept(x) != kept(y)) return kept(x);
    return a[x] > a[y];
  });
  order.resize(keep);
  auto g = gather_positions(masked_features, order);
  return {scores, order, g};
}

/// Σ_l cross-entropy(classifier_l(mean of g_l), label).
inline Tensor filter_loss(const std::vector<Tensor>& selected, const std::vector<LinearHead>& classifiers,
                          std::size_t label) {
  if (selected.empty()) throw ShapeError("filter_loss: no stages");
  if (selected.size() != classifiers.size()) throw ShapeError("filter_loss: one classifier per stage required");
  Tensor total;
  for (std::size_t l = 0; l < selected.size(); ++l) {
    auto term = cross_entropy(classifiers[l](mean_rows(selected[l])), label);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Discrete decisions of one stage, reusable to evaluate the same forward
/// pass with frozen selections.
struct StageSelection {
  std::vector<std::size_t> topk;
  std::vector<double> mask;
  std::vector<std::size_t> selected;
};

struct FilterArtifacts {
  ClassMaps class_maps;
  TopK topk;
  Tensor ambiguity;  // 𝓜
  Tensor mask;       // 𝓜′
  Masked masked;     // M′, f′
  NoiseSelection noise;
};

/// Full ambiguity + noise filter on one stage. `frozen` replays recorded
/// decisions; `bypass` keeps every position (all-ones mask, ℛ′ = 0..S−1).
inline FilterArtifacts filter_stage(const Tensor& features, const Tensor& projection, const AmbiguityParams& amb,
                                    const NoiseParams& noise, const StageSelection* frozen = nullptr,
                                    bool bypass = false) {
  FilterArtifacts out;
  out.class_maps = class_maps(features, projection);
  const std::size_t w = features.dim(0), h = features.dim(1), s = w * h;
  if (frozen) {
    out.topk = {frozen->topk, ambiguity_weights(frozen->topk.size(), amb.beta_h, amb.beta_l)};
  } else {
    out.topk = topk_weights(out.class_maps.prediction, amb);
  }
  out.ambiguity = ambiguity_map(out.class_maps.maps, out.topk.indices, out.topk.weights);
  if (frozen) {
    out.mask = Tensor::from({w, h}, frozen->mask);
  } else if (bypass) {
    out.mask = Tensor::full({w, h}, 1.0);
  } else {
    out.mask = ambiguity_mask(out.ambiguity, amb.gamma1);
  }
  out.masked = apply_mask(out.mask, out.class_maps.maps, features);
  if (frozen || bypass) {
    std::vector<std::size_t> positions;
    if (frozen) {
      positions = frozen->selected;
    } else {
      positions.resize(s);
      std::iota(positions.begin(), positions.end(), 0);
    }
    out.noise = {channel_average_pool(out.masked.maps), positions, gather_positions(out.masked.features, positions)};
  } else {
    out.noise = noise_select(out.masked.maps, out.masked.features, noise.gamma2, &out.mask);
  }
  return out;
}

inline StageSelection selection_of(const FilterArtifacts& a) {
  auto m = a.mask.data();
  return {a.topk.indices, std::vector<double>(m.begin(), m.end()), a.noise.selected};
}

}  // namespace sfi::mff
