#pragma once

// Composite loss, SGD with momentum, cosine schedule, synthetic data and the
// training loop.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <algorithm>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sfi/model.hpp"
#include "sfi/rng.hpp"
#include "sfi/serialize.hpp"

namespace sfi {

// ---------------------------------------------------------------------------
// Loss and optimization

/// ξ·L_filt + L_cls.
inline Tensor total_loss(const Tensor& filter_loss, const Tensor& class_loss, double xi) {
  if (xi < 0.0) throw ConfigError("train.xi must be non-negative");
  return add(scale(filter_loss, xi), class_loss);
}

/// v ← momentum·v + (g + wd·θ); θ ← θ − lr·v.
inline void sgd_momentum_step(std::span<double> param, std::span<const double> grad, std::vector<double>& velocity,
                              double lr, double momentum, double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size())
    throw ShapeError("sgd step: parameter, gradient and velocity sizes disagree (" + std::to_string(param.size()) +
                     ", " + std::to_string(grad.size()) + ", " + std::to_string(velocity.size()) + ")");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const NamedTensors& params, double lr) {
    if (velocity_.empty())
      for (const auto& [name, t] : params) velocity_.emplace_back(t.numel(), 0.0);
    if (velocity_.size() != params.size()) throw ShapeError("sgd: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].second;
      const auto g = t.grad();
      sgd_momentum_step(t.mutable_data(), g, velocity_[i], lr, momentum_, weight_decay_);
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) throw std::out_of_range("cosine_lr: step outside [0, total]");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t classes = 4;
  std::size_t train_per_class = 64;
  std::size_t test_per_class = 16;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t jitter = 4;        // max offset of the patch from the image centre
  double texture = 0.25;         // amplitude of the fixed per-class texture around its base colour
  double gain_spread = 0.2;      // per-sample intensity gain drawn from 1 ± gain_spread
  double noise = 0.0;            // additive per-pixel noise amplitude
  double overlap = 0.0;          // shared fraction of the patch within an ambiguous pair
  std::size_t ambiguous_pairs = 1;
  bool standardize = true;       // per-channel zero mean, unit variance from training-split statistics
  std::uint64_t seed = kDefaultSeed;

  void validate() const {
    if (classes < 2) throw ConfigError("data.classes must be at least 2");
    if (train_per_class == 0 || test_per_class == 0) throw ConfigError("data: per-class sample counts must be positive");
    if (channels == 0) throw ConfigError("data.channels must be positive");
    if (patch_size == 0 || patch_size > image_size)
      throw ConfigError("data.patch_size = " + std::to_string(patch_size) + " does not fit a " +
                        std::to_string(image_size) + " pixel image");
    if (texture < 0.0 || gain_spread < 0.0 || gain_spread >= 1.0 || noise < 0.0)
      throw ConfigError("data: texture and noise must be non-negative and gain_spread in [0, 1)");
    if (overlap < 0.0 || overlap > 1.0) throw ConfigError("data.overlap must lie in [0, 1]");
    if (2 * ambiguous_pairs > classes) throw ConfigError("data.ambiguous_pairs needs two classes per pair");
    if (gain_spread == 0.0 && noise == 0.0 && train_per_class + test_per_class > placements())
      throw ConfigError("data: without gain spread or noise, " + std::to_string(train_per_class + test_per_class) +
                        " samples per class cannot be distinct over " + std::to_string(placements()) +
                        " placements");
  }

  std::size_t max_offset() const { return std::min(jitter, (image_size - patch_size) / 2); }
  std::size_t placements() const {
    const std::size_t span = 2 * max_offset() + 1;
    return span * span;
  }
};

struct Sample {
  Tensor image;  // W×H×C
  std::size_t label = 0;
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::vector<Tensor> signatures;  // per-class patch, P×P×C
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<double> channel_mean;  // applied shift, zero when not standardized
  std::vector<double> channel_std;   // applied scale, one when not standardized
};

/// (x − mean_c) / std_c on every pixel of a W×H×C image.
inline Tensor normalize_image(const Tensor& image, const std::vector<double>& mean, const std::vector<double>& std) {
  if (image.rank() != 3 || image.dim(2) != mean.size() || mean.size() != std.size())
    throw ShapeError("normalize_image: image " + shape_str(image.shape()) + " does not have " +
                     std::to_string(mean.size()) + " channels");
  std::vector<double> out(image.data().begin(), image.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % mean.size()]) / std[i % std.size()];
  return Tensor::from(image.shape(), std::move(out));
}

/// Per-channel mean and standard deviation over every training pixel.
inline std::pair<std::vector<double>, std::vector<double>> channel_statistics(const std::vector<Sample>& samples,
                                                                             std::size_t channels) {
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t count = 0;
  for (const auto& s : samples) {
    auto d = s.image.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      sum[i % channels] += d[i];
      sq[i % channels] += d[i] * d[i];
    }
    count += d.size() / channels;
  }
  std::vector<double> mean(channels), std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    mean[c] = sum[c] / static_cast<double>(count);
    const double var = sq[c] / static_cast<double>(count) - mean[c] * mean[c];
    std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return {mean, std};
}

/// Each image is additive noise plus its class signature patch, scaled by a
/// per-sample gain and placed at a jittered offset from the centre. A
/// signature is a base colour with a fixed texture; the second class of an
/// ambiguous pair copies the leading `overlap` fraction of the first class's
/// patch (a contiguous band along x), leaving a small distinguishing band. Test images
/// that coincide with a training image are redrawn, so the splits are
/// disjoint. With `standardize`, both splits are shifted and scaled per
/// channel by the training-split statistics.
inline SyntheticDataset make_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticDataset ds;
  ds.config = cfg;
  const std::size_t p = cfg.patch_size, c = cfg.channels, n = cfg.image_size;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    const auto base = rng.uniform_vector(c, 0.0, 1.0);
    std::vector<double> sig(p * p * c);
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = base[i % c] + cfg.texture * rng.uniform(-1.0, 1.0);
    ds.signatures.push_back(Tensor::from({p, p, c}, std::move(sig)));
  }
  if (cfg.overlap > 0.0) {
    const auto shared = static_cast<std::size_t>(std::lround(cfg.overlap * static_cast<double>(p * p)));
    for (std::size_t pair = 0; pair < cfg.ambiguous_pairs; ++pair) {
      auto src = ds.signatures[2 * pair].data();
      auto dst = ds.signatures[2 * pair + 1].mutable_data();
      std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(shared * c), dst.begin());
    }
  }
  const std::size_t off = cfg.max_offset(), span = 2 * off + 1;
  const std::size_t corner = (n - p) / 2 - off;
  auto render = [&](std::size_t label) {
    const std::size_t placement = rng.below(span * span);
    const std::size_t x0 = corner + placement / span, y0 = corner + placement % span;
    const double gain = 1.0 + cfg.gain_spread * rng.uniform(-1.0, 1.0);
    std::vector<double> img(n * n * c);
    for (auto& v : img) v = cfg.noise > 0.0 ? cfg.noise * rng.uniform(-1.0, 1.0) : 0.0;
    auto sig = ds.signatures[label].data();
    for (std::size_t dx = 0; dx < p; ++dx)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t ch = 0; ch < c; ++ch)
          img[((x0 + dx) * n + (y0 + dy)) * c + ch] += gain * sig[(dx * p + dy) * c + ch];
    return Sample{Tensor::from({n, n, c}, std::move(img)), label};
  };
  auto same = [](const Sample& a, const Sample& b) {
    return std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin());
  };
  for (std::size_t k = 0; k < cfg.classes; ++k)
    for (std::size_t i = 0; i < cfg.train_per_class; ++i) ds.train.push_back(render(k));
  for (std::size_t k = 0; k < cfg.classes; ++k)
    for (std::size_t i = 0; i < cfg.test_per_class; ++i) {
      Sample s = render(k);
      while (std::any_of(ds.train.begin(), ds.train.end(), [&](const Sample& t) { return same(s, t); })) s = render(k);
      ds.test.push_back(std::move(s));
    }
  ds.channel_mean.assign(c, 0.0);
  ds.channel_std.assign(c, 1.0);
  if (cfg.standardize) {
    std::tie(ds.channel_mean, ds.channel_std) = channel_statistics(ds.train, c);
    for (auto* split : {&ds.train, &ds.test})
      for (auto& smp : *split) smp.image = normalize_image(smp.image, ds.channel_mean, ds.channel_std);
  }
  return ds;
}

/// Random shift by up to `pad` pixels (zero fill) and a horizontal flip with
/// probability 1/2.
inline Tensor augment(const Tensor& image, Rng& rng, std::size_t pad = 2) {
  const std::size_t w = image.dim(0), h = image.dim(1), c = image.dim(2);
  const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  const bool flip = rng.below(2) == 1;
  std::vector<double> out(image.numel(), 0.0);
  auto src = image.data();
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t y = 0; y < h; ++y) {
      const auto sx0 = static_cast<std::ptrdiff_t>(flip ? w - 1 - x : x) + dx;
      const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
      if (sx0 < 0 || sy < 0 || sx0 >= static_cast<std::ptrdiff_t>(w) || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(x * h + y) * c + ch] = src[(static_cast<std::size_t>(sx0) * h + static_cast<std::size_t>(sy)) * c + ch];
    }
  return Tensor::from(image.shape(), std::move(out));
}

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> test_class_accuracy;
};

/// Multinomial logistic regression on raw pixels, full-batch gradient descent.
/// Independent of the autodiff engine; used to characterize datasets.
inline ProbeResult linear_probe(const SyntheticDataset& ds, std::size_t iterations = 300, double lr = 0.5) {
  const std::size_t d = ds.train.front().image.numel(), k = ds.config.classes;
  std::vector<double> w(d * k, 0.0), b(k, 0.0);
  auto logits = [&](const Tensor& x) {
    std::vector<double> z(b);
    auto v = x.data();
    for (std::size_t i = 0; i < d; ++i)
      if (v[i] != 0.0)
        for (std::size_t j = 0; j < k; ++j) z[j] += v[i] * w[i * k + j];
    return z;
  };
  const double inv_n = 1.0 / static_cast<double>(ds.train.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> gw(d * k, 0.0), gb(k, 0.0);
    for (const auto& s : ds.train) {
      auto z = logits(s.image);
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (auto& v : z) sum += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < k; ++j) {
        const double r = z[j] / sum - (j == s.label ? 1.0 : 0.0);
        gb[j] += r;
        auto v = s.image.data();
        for (std::size_t i = 0; i < d; ++i)
          if (v[i] != 0.0) gw[i * k + j] += r * v[i];
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * inv_n * gw[i];
    for (std::size_t j = 0; j < k; ++j) b[j] -= lr * inv_n * gb[j];
  }
  auto predict = [&](const Tensor& x) {
    auto z = logits(x);
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  };
  ProbeResult res;
  std::size_t ok = 0;
  for (const auto& s : ds.train) ok += predict(s.image) == s.label;
  res.train_accuracy = static_cast<double>(ok) / static_cast<double>(ds.train.size());
  std::vector<std::size_t> hits(k, 0), counts(k, 0);
  ok = 0;
  for (const auto& s : ds.test) {
    const bool hit = predict(s.image) == s.label;
    ok += hit;
    hits[s.label] += hit;
    ++counts[s.label];
  }
  res.test_accuracy = static_cast<double>(ok) / static_cast<double>(ds.test.size());
  for (std::size_t j = 0; j < k; ++j)
    res.test_class_accuracy.push_back(counts[j] ? static_cast<double>(hits[j]) / static_cast<double>(counts[j]) : 0.0);
  return res;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double xi = 3.0;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 30;
  std::size_t batch_size = 12;
  std::uint64_t seed = kDefaultSeed;
  bool augment = false;

  void validate() const {
    if (!(xi >= 0.0)) throw ConfigError("train.xi must be non-negative");
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalResult evaluate(const SfiNet& model, const std::vector<Sample>& samples, double xi) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  EvalResult r;
  std::size_t ok = 0;
  for (const auto& s : samples) {
    auto out = model.forward(s.image, s.label);
    r.loss += total_loss(*out.filter_loss, *out.class_loss, xi).item();
    ok += out.predicted_class() == s.label;
  }
  r.loss /= static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(ok) / static_cast<double>(samples.size());
  return r;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& history) {
  os << "epoch,split,loss,acc\n";
  for (const auto& m : history)
    os << m.epoch << ',' << m.split << ',' << format_double(m.loss) << ',' << format_double(m.accuracy) << '\n';
}

/// Mini-batch SGD on ξ·L_filt + L_cls with a cosine schedule. After every
/// epoch both splits are evaluated with the updated weights. `on_epoch`, when
/// given, is called with each pair of rows as they are produced.
inline std::vector<EpochMetrics> train(SfiNet& model, const SyntheticDataset& data, const TrainConfig& cfg,
                                       const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training set");
  Rng order_rng(cfg.seed + 1);
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  const auto params = model.parameters();
  const std::size_t batches = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::size_t step = 0;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t b = 0; b < batches; ++b) {
      model.zero_grad();
      const std::size_t begin = b * cfg.batch_size, end = std::min(order.size(), begin + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = data.train[order[i]];
        try {
          const Tensor image = cfg.augment ? augment(s.image, order_rng) : s.image;
          auto out = model.forward(image, s.label);
          backward(scale(total_loss(*out.filter_loss, *out.class_loss, cfg.xi), inv));
        } catch (const NumericError& e) {
          throw NumericError("epoch " + std::to_string(epoch) + ", training sample " + std::to_string(order[i]) +
                             ": " + e.what());
        }
      }
      opt.step(params, cosine_lr(step++, total_steps, cfg.lr));
    }
    model.zero_grad();
    for (const auto* split : {"train", "test"}) {
      const auto& samples = std::string(split) == "train" ? data.train : data.test;
      if (samples.empty()) continue;
      auto r = evaluate(model, samples, cfg.xi);
      history.push_back({epoch, split, r.loss, r.accuracy});
      if (on_epoch) on_epoch(history.back());
    }
  }
  return history;
}

}  // namespace sfi
