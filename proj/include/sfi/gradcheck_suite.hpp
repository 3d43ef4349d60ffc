#pragma once

// The complete finite-difference suite: every differentiable op, each module
// in isolation, and the end-to-end loss of a small model with its discrete
// selections frozen.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sfi/gradcheck.hpp"
#include "sfi/model.hpp"
#include "sfi/ops.hpp"
#include "sfi/rng.hpp"
#include "sfi/training.hpp"

namespace sfi {

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;

struct SuiteEntry {
  std::string module;
  GradcheckReport report;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const SuiteEntry& e) { return e.report.passed(); });
  }

  /// Worst relative error per module, in first-seen order.
  std::vector<std::pair<std::string, double>> worst_by_module() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& e : entries) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == e.module; });
      if (it == out.end()) out.emplace_back(e.module, e.report.max_rel_error);
      else it->second = std::max(it->second, e.report.max_rel_error);
    }
    return out;
  }
};

namespace detail {

/// Values drawn from ±[0.1, 1] so ReLU inputs sit away from the kink.
inline Tensor off_kink(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  auto n = numel_of(shape);
  return Tensor::from(std::move(shape), rng.uniform_vector(n, -1.0, 1.0), requires_grad);
}

/// Scalar probe Σ out ⊙ R with a fixed random R, so every output element
/// carries a distinct upstream gradient.
class Probe {
 public:
  explicit Probe(Rng& rng) : rng_(rng) {}

  Tensor operator()(const Tensor& out) {
    auto it = weights_.find(out.shape());
    if (it == weights_.end()) it = weights_.emplace(out.shape(), random_tensor(out.shape(), rng_, false)).first;
    return sum(hadamard(out, it->second));
  }

 private:
  Rng& rng_;
  std::map<Shape, Tensor> weights_;
};

class SuiteBuilder {
 public:
  explicit SuiteBuilder(SuiteReport& report) : report_(report) {}

  void check(const std::string& module, const std::string& name, const std::function<Tensor()>& loss,
             const NamedTensors& inputs, double tol = kOpTolerance) {
    NamedTensors named;
    for (const auto& [suffix, t] : inputs) named.emplace_back(name + (suffix.empty() ? "" : "." + suffix), t);
    for (auto& rep : check_gradients(loss, named, tol)) report_.entries.push_back({module, std::move(rep)});
  }

 private:
  SuiteReport& report_;
};

}  // namespace detail

/// Per-op checks on small random inputs.
inline void gradcheck_ops(SuiteReport& report, Rng& rng) {
  detail::SuiteBuilder s(report);
  detail::Probe probe(rng);
  const std::string m = "tensor_core";
  auto rt = [&](Shape sh) { return detail::random_tensor(std::move(sh), rng); };

  auto a = rt({3, 4}), b = rt({4, 2});
  s.check(m, "matmul", [&] { return probe(matmul(a, b)); }, {{"lhs", a}, {"rhs", b}});
  auto c = rt({3, 4}), d = rt({3, 4});
  s.check(m, "add", [&] { return probe(add(c, d)); }, {{"lhs", c}, {"rhs", d}});
  s.check(m, "scale", [&] { return probe(scale(c, -1.7)); }, {{"", c}});
  s.check(m, "hadamard", [&] { return probe(hadamard(c, d)); }, {{"lhs", c}, {"rhs", d}});
  auto maps = rt({3, 2, 4}), mask = rt({3, 2});
  s.check(m, "hadamard_broadcast", [&] { return probe(hadamard(maps, mask)); }, {{"lhs", maps}, {"mask", mask}});
  auto k = detail::off_kink({3, 4}, rng);
  s.check(m, "relu", [&] { return probe(relu(k)); }, {{"", k}});
  s.check(m, "tanh", [&] { return probe(sfi::tanh(c)); }, {{"", c}});
  auto row = rt({4});
  s.check(m, "add_row", [&] { return probe(add_row(c, row)); }, {{"x", c}, {"row", row}});
  s.check(m, "mul_row", [&] { return probe(mul_row(c, row)); }, {{"x", c}, {"row", row}});
  s.check(m, "sum", [&] { return scale(sum(c), 0.7); }, {{"", c}});
  s.check(m, "mean_rows", [&] { return probe(mean_rows(c)); }, {{"", c}});
  s.check(m, "global_average_pool", [&] { return probe(global_average_pool(maps)); }, {{"", maps}});
  s.check(m, "channel_average_pool", [&] { return probe(channel_average_pool(maps)); }, {{"", maps}});
  s.check(m, "softmax_rows", [&] { return probe(softmax(c, 1)); }, {{"", c}});
  s.check(m, "softmax_cols", [&] { return probe(softmax(c, 0)); }, {{"", c}});
  s.check(m, "softmax_inner", [&] { return probe(softmax(maps, 1)); }, {{"", maps}});
  auto logits = rt({5});
  s.check(m, "cross_entropy", [&] { return cross_entropy(logits, 3); }, {{"", logits}});
  s.check(m, "reshape", [&] { return probe(reshape(c, {2, 6})); }, {{"", c}});
  s.check(m, "transpose", [&] { return probe(transpose(c)); }, {{"", c}});
  s.check(m, "gather_rows", [&] { return probe(gather_rows(c, {2, 0, 2})); }, {{"", c}});
  s.check(m, "gather_channels", [&] { return probe(gather_channels(maps, {3, 1})); }, {{"", maps}});
  s.check(m, "slice_cols", [&] { return probe(slice_cols(c, 1, 3)); }, {{"", c}});
  s.check(m, "shift_rows", [&] { return probe(add(shift_rows(c, 1), shift_rows(c, -2))); }, {{"", c}});
  auto image = rt({4, 4, 2});
  s.check(m, "patchify", [&] { return probe(patchify(image, 2)); }, {{"", image}});
  auto e = rt({2, 4});
  s.check(m, "concat_rows", [&] { return probe(concat_rows({c, e})); }, {{"top", c}, {"bottom", e}});
  auto f = rt({3, 1});
  s.check(m, "concat_cols", [&] { return probe(concat_cols({c, f})); }, {{"left", c}, {"right", f}});
}

/// Module-level checks with the model configuration's shapes.
inline void gradcheck_modules(SuiteReport& report, const ModelConfig& cfg, Rng& rng) {
  detail::SuiteBuilder s(report);
  detail::Probe probe(rng);
  auto rt = [&](Shape sh) { return detail::random_tensor(std::move(sh), rng); };
  const auto& bc = cfg.backbone;

  Backbone backbone(bc, rng);
  auto image = rt({bc.input_width, bc.input_height, bc.input_channels});
  NamedTensors bparams = backbone.parameters();
  bparams.emplace_back("image", image);
  s.check("backbone", "backbone", [&] {
    Tensor total;
    for (const auto& st : backbone.forward(image)) {
      auto term = probe(st.features);
      total = total.defined() ? add(total, term) : term;
    }
    return total;
  }, bparams);

  const auto extent = bc.stage_extents().front();
  const std::size_t w = extent.width, h = extent.height, ch = extent.channels, n = cfg.num_classes;
  auto features = rt({w, h, ch}), projection = rt({ch, n});
  s.check("mff", "class_maps", [&] {
    auto cm = mff::class_maps(features, projection);
    return add(probe(cm.maps), probe(cm.prediction));
  }, {{"features", features}, {"projection", projection}});
  auto maps = rt({w, h, n});
  const auto topk = mff::topk_weights(global_average_pool(maps), cfg.ambiguity);
  s.check("mff", "ambiguity_map", [&] { return probe(mff::ambiguity_map(maps, topk.indices, topk.weights)); },
          {{"maps", maps}});
  const auto mask = mff::ambiguity_mask(mff::ambiguity_map(maps, topk.indices, topk.weights), cfg.ambiguity.gamma1);
  s.check("mff", "apply_mask", [&] {
    auto mk = mff::apply_mask(mask, maps, features);
    return add(probe(mk.maps), probe(mk.features));
  }, {{"maps", maps}, {"features", features}});
  const auto masked = mff::apply_mask(mask, maps, features);
  const auto sel = mff::noise_select(masked.maps, masked.features, cfg.noise.gamma2, &mask).selected;
  s.check("mff", "gather_positions", [&] { return probe(mff::gather_positions(features, sel)); },
          {{"features", features}});
  std::vector<Tensor> selected;
  std::vector<LinearHead> heads;
  NamedTensors fparams;
  for (std::size_t i = 0; i < bc.num_stages(); ++i) {
    const auto ci = bc.stage_extents()[i].channels;
    selected.push_back(rt({3, ci}));
    heads.push_back(LinearHead::init(ci, n, rng));
    const auto p = "stage" + std::to_string(i);
    fparams.emplace_back(p + ".selected", selected.back());
    fparams.emplace_back(p + ".weight", heads.back().weight);
    fparams.emplace_back(p + ".bias", heads.back().bias);
  }
  s.check("mff", "filter_loss", [&] { return mff::filter_loss(selected, heads, n - 1); }, fparams);

  const std::size_t dim = cfg.sir.dim, nodes = 5;
  std::vector<Tensor> stage_sel, proj;
  NamedTensors cparams;
  for (std::size_t i = 0; i < bc.num_stages(); ++i) {
    const auto ci = bc.stage_extents()[i].channels;
    stage_sel.push_back(rt({2 + i, ci}));
    proj.push_back(rt({ci, dim}));
    cparams.emplace_back("stage" + std::to_string(i) + ".selected", stage_sel.back());
    cparams.emplace_back("stage" + std::to_string(i) + ".projection", proj.back());
  }
  s.check("sir", "concat_stages", [&] { return probe(sir::concat_stages(stage_sel, proj)); }, cparams);
  auto g = rt({nodes, dim}), wp = rt({dim}), ws = rt({dim}), wn = rt({dim});
  s.check("sir", "semantic_reassembly", [&] { return probe(sir::semantic_reassembly(g, wp, ws, wn)); },
          {{"input", g}, {"prev", wp}, {"self", ws}, {"next", wn}});
  std::vector<sir::HeadWeights> hw;
  NamedTensors aparams{{"input", g}};
  const std::size_t dh = dim / cfg.sir.heads;
  for (std::size_t i = 0; i < cfg.sir.heads; ++i) {
    hw.push_back({rt({dim, dh}), rt({dim, dh}), rt({dim, dh})});
    const auto p = "head" + std::to_string(i);
    aparams.emplace_back(p + ".query", hw.back().query);
    aparams.emplace_back(p + ".key", hw.back().key);
    aparams.emplace_back(p + ".value", hw.back().value);
  }
  auto mixing = rt({cfg.sir.heads, cfg.sir.heads});
  aparams.emplace_back("mixing", mixing);
  s.check("sir", "talking_head_attention", [&] { return probe(sir::talking_head_attention(g, hw, mixing).output); },
          aparams);
  auto o = detail::off_kink({nodes, dim}, rng), adj = rt({nodes, nodes});
  std::vector<Tensor> gw;
  NamedTensors gparams{{"input", o}, {"adjacency", adj}};
  for (std::size_t l = 0; l < cfg.sir.gcn_depth; ++l) {
    gw.push_back(rt({dim, dim}));
    gparams.emplace_back("weight" + std::to_string(l), gw.back());
  }
  s.check("sir", "gcn", [&] { return probe(sir::gcn_forward(o, adj, gw)); }, gparams);
  auto head = LinearHead::init(dim, n, rng);
  s.check("sir", "classify", [&] {
    auto cl = sir::classify(g, head);
    return add(probe(cl.probabilities), cross_entropy(cl.logits, 0));
  }, {{"input", g}, {"weight", head.weight}, {"bias", head.bias}});
}

/// ξ·L_filt + L_cls of a freshly initialised model on a random image, with
/// the discrete selections recorded once and replayed. Every parameter tensor
/// gets its own entry.
inline void gradcheck_end_to_end(SuiteReport& report, const ModelConfig& cfg, double xi, Rng& rng) {
  SfiNet model(cfg, rng);
  const auto& bc = cfg.backbone;
  auto image = detail::random_tensor({bc.input_width, bc.input_height, bc.input_channels}, rng, false);
  const std::size_t label = cfg.num_classes - 1;
  const auto frozen = model.forward(image, label).selections();
  auto loss = [&] {
    auto out = model.forward(image, label, &frozen);
    return total_loss(*out.filter_loss, *out.class_loss, xi);
  };
  for (auto& rep : check_gradients(loss, model.parameters(), kEndToEndTolerance))
    report.entries.push_back({"end_to_end", std::move(rep)});
}

inline SuiteReport run_gradcheck_suite(const ModelConfig& cfg, double xi, std::uint64_t seed) {
  cfg.validate();
  SuiteReport report;
  Rng rng(seed);
  gradcheck_ops(report, rng);
  gradcheck_modules(report, cfg, rng);
  gradcheck_end_to_end(report, cfg, xi, rng);
  return report;
}

}  // namespace sfi
