// Acceptance gate: one PASS/FAIL line per criterion with the measured values
// and elapsed time. Criterion 8 is a direction-of-effect report and does not
// set the exit status; every other criterion does.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mff_oracles.hpp"
#include "sfi/config.hpp"
#include "sfi/gradcheck_suite.hpp"
#include "sfi/model.hpp"
#include "sfi/serialize.hpp"
#include "sfi/training.hpp"

using namespace sfi;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  bool advisory;
  std::function<Outcome()> run;
};

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = numel_of(shape);
  return Tensor::from(std::move(shape), rng.uniform_vector(n, lo, hi));
}

Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::from({n, n}, std::move(v));
}

std::vector<sir::HeadWeights> random_heads(std::size_t c, std::size_t h, Rng& rng) {
  std::vector<sir::HeadWeights> out;
  for (std::size_t i = 0; i < h; ++i)
    out.push_back({random_tensor({c, c / h}, rng), random_tensor({c, c / h}, rng), random_tensor({c, c / h}, rng)});
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Outcome weight_schedule() {
  const mff::AmbiguityParams p;
  const auto w = mff::ambiguity_weights(p.k, p.beta_h, p.beta_l);
  const std::vector<double> expected{1.10, 1.05, 1.00, 0.95};
  double worst = w.size() == expected.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(w.size(), expected.size()); ++i)
    worst = std::max(worst, std::abs(w[i] - expected[i]));
  return {worst <= 1e-12 && p.k == 4, "k=" + std::to_string(p.k) + " max |w - expected| = " + fmt(worst)};
}

/// Drop ratios on a 1/1000 grid so the expected counts are integer arithmetic.
Outcome cardinalities() {
  Rng rng(2024);
  std::size_t checked = 0, bad = 0;
  mff::AmbiguityParams amb;
  amb.k = 2;
  while (checked < 500) {
    const std::size_t w = 1 + rng.below(16), h = 1 + rng.below(16), s = w * h;
    const std::size_t g1 = 1 + rng.below(998), g2 = g1 + rng.below(999 - g1);
    const std::size_t keep1 = (1000 - g1) * s / 1000, keep2 = (1000 - g2) * s / 1000;
    if (keep1 == 0 || keep1 == s || keep2 == 0) continue;
    amb.gamma1 = static_cast<double>(g1) / 1000.0;
    mff::NoiseParams noise;
    noise.gamma2 = static_cast<double>(g2) / 1000.0;
    const std::size_t c = 1 + rng.below(4);
    auto f = mff::filter_stage(random_tensor({w, h, c}, rng), random_tensor({c, 3}, rng), amb, noise);
    const auto ones = static_cast<std::size_t>(std::count(f.mask.data().begin(), f.mask.data().end(), 1.0));
    auto sel = f.noise.selected;
    std::sort(sel.begin(), sel.end());
    const bool distinct = std::adjacent_find(sel.begin(), sel.end()) == sel.end();
    if (ones != keep1 || sel.size() != keep2 || !distinct || f.noise.features.dim(0) != keep2) ++bad;
    ++checked;
  }
  return {bad == 0, std::to_string(checked) + " configurations, " + std::to_string(bad) + " mismatches"};
}

Outcome oracle_equivalence() {
  Rng rng(31);
  std::size_t checked = 0, bad = 0;
  while (checked < 200) {
    const std::size_t w = 2 + rng.below(7), h = 2 + rng.below(7), n = 1 + rng.below(4), s = w * h;
    const double g1 = static_cast<double>(5 + rng.below(45)) / 100.0;
    const double g2 = g1 + static_cast<double>(rng.below(45)) / 100.0;
    const std::size_t k1 = test::exact_keep(g1, s), k2 = test::exact_keep(g2, s);
    if (k1 == 0 || k1 == s || k2 == 0) continue;
    auto amb = test::tied_scores({w, h}, rng);
    auto mask = mff::ambiguity_mask(amb, g1);
    const auto expected_mask = test::naive_mask(values(amb), g1);
    auto maps = test::tied_scores({w, h, n}, rng);
    auto masked = mff::apply_mask(mask, maps, random_tensor({w, h, 3}, rng));
    auto sel = mff::noise_select(masked.maps, masked.features, g2, &mask);
    const auto mv = values(mask);
    const auto expected_sel = test::naive_select(test::naive_channel_mean(values(masked.maps), n), k2, &mv);
    if (mv != expected_mask || sel.selected != expected_sel) ++bad;
    ++checked;
  }
  return {bad == 0, std::to_string(checked) + " instances with tied scores, " + std::to_string(bad) + " mismatches"};
}

Outcome gradient_suite() {
  const auto cfg = RunConfig::preset("tiny");
  std::size_t largest = 0;
  for (const auto& e : cfg.model().backbone.stage_extents()) largest = std::max({largest, e.width, e.height});
  const auto report = run_gradcheck_suite(cfg.model(), cfg.train.xi, cfg.train.seed);
  std::string detail = std::to_string(report.entries.size()) + " checks, largest stage extent " +
                       std::to_string(largest) + ";";
  for (const auto& [module, worst] : report.worst_by_module()) detail += " " + module + " " + fmt(worst);
  return {report.passed() && largest <= 4, detail};
}

Outcome algebraic_identities() {
  Rng rng(5);
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng.below(4), d = 1 + rng.below(3), s = 1 + rng.below(8), c = h * d;
    auto b = random_tensor({s, c}, rng);
    auto heads = random_heads(c, h, rng);
    ok &= values(sir::talking_head_attention(b, heads, identity(h)).output) ==
          values(sir::multi_head_concat(sir::attention_heads(b, heads)));

    auto o = random_tensor({s, c}, rng, 0.0, 3.0);
    ok &= values(sir::gcn_forward(o, identity(s), {identity(c)})) == values(o);

    auto g = random_tensor({s, c}, rng);
    ok &= values(sir::semantic_reassembly(g, Tensor::zeros({c}), Tensor::full({c}, 1.0), Tensor::zeros({c}))) ==
          values(g);
  }
  const bool exact = ok;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.below(10), cols = 1 + rng.below(40);
    auto p = softmax(random_tensor({rows, cols}, rng, -30.0, 30.0), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) sum += p.at({r, j});
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return {exact && worst <= 1e-12, std::string("THA/GCN/SR identities ") + (exact ? "exact" : "NOT exact") +
                                       ", softmax max |sum - 1| = " + fmt(worst)};
}

Outcome permutation_equivariance() {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(4), d = 1 + rng.below(4), s = 2 + rng.below(12), c = h * d;
    auto heads = random_heads(c, h, rng);
    auto u = random_tensor({h, h}, rng);
    auto b = random_tensor({s, c}, rng);
    std::vector<std::size_t> perm(s);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto lhs = sir::talking_head_attention(gather_rows(b, perm), heads, u).output;
    auto rhs = gather_rows(sir::talking_head_attention(b, heads, u).output, perm);
    for (std::size_t i = 0; i < lhs.numel(); ++i) worst = std::max(worst, std::abs(lhs.data()[i] - rhs.data()[i]));
  }
  return {worst < 1e-9, "100 pairs, max |deviation| = " + fmt(worst)};
}

Outcome end_to_end_learning() {
  SyntheticConfig dc;
  dc.seed = 42;
  const auto data = make_synthetic(dc);
  TrainConfig tc;
  tc.seed = 42;
  auto run = [&] {
    Rng rng(tc.seed);
    SfiNet model(ModelConfig{}, rng);
    return train(model, data, tc);
  };
  const auto a = run(), b = run();
  double best_train = 0.0;
  for (const auto& m : a)
    if (m.split == "train") best_train = std::max(best_train, m.accuracy);
  const double test = a.back().accuracy;
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].loss == b[i].loss && a[i].accuracy == b[i].accuracy;
  return {best_train >= 0.95 && test >= 0.85 && same,
          std::to_string(dc.classes) + " classes x " + std::to_string(dc.train_per_class) + ", " +
              std::to_string(tc.epochs) + " epochs: best train acc " + fmt(best_train) + ", final held-out acc " +
              fmt(test) + ", repeat run " + (same ? "identical" : "DIFFERENT")};
}

Outcome filter_direction() {
  double mean[2] = {0.0, 0.0};
  std::string per_seed;
  for (int enabled : {1, 0}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      SyntheticConfig dc;
      dc.overlap = 0.8;
      dc.noise = 0.1;
      dc.seed = seed;
      const auto data = make_synthetic(dc);
      ModelConfig mc;
      mc.mff_enabled = enabled == 1;
      Rng rng(seed);
      SfiNet model(mc, rng);
      TrainConfig tc;
      tc.seed = seed;
      const double acc = train(model, data, tc).back().accuracy;
      mean[enabled] += acc / 3.0;
      per_seed += std::string(enabled ? " on" : " off") + "[" + std::to_string(seed) + "]=" + fmt(acc);
    }
  }
  return {mean[1] >= mean[0], "mean held-out acc with filtering " + fmt(mean[1]) + ", bypassed " + fmt(mean[0]) +
                                  " (" + per_seed.substr(1) + ")"};
}

Outcome loss_constants() {
  double worst = 0.0;
  std::string detail;
  for (std::size_t classes : {2u, 4u, 7u}) {
    RunConfig rc;
    rc.data.classes = classes;
    rc.ambiguity.k = 2;
    Rng rng(9);
    SfiNet model(rc.model(), rng);
    for (auto [name, t] : model.parameters())
      if (name.find("classifier") != std::string::npos) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    Rng img(10);
    auto out = model.forward(random_tensor({32, 32, 3}, img), classes - 1);
    const double stages = static_cast<double>(rc.backbone.num_stages());
    // ln N from its series rather than std::log.
    const double x = (static_cast<double>(classes) - 1.0) / (static_cast<double>(classes) + 1.0);
    double ln = 0.0, term = x;
    for (int k = 1; k < 400; k += 2, term *= x * x) ln += term / k;
    ln *= 2.0;
    worst = std::max({worst, std::abs(out.filter_loss->item() - stages * ln), std::abs(out.class_loss->item() - ln)});
    detail += " N=" + std::to_string(classes);
  }
  return {worst <= 1e-9, "uniform predictions," + detail + ", L=4: max deviation " + fmt(worst)};
}

Outcome reproducibility() {
  SyntheticConfig dc;
  const auto data = make_synthetic(dc);
  TrainConfig tc;
  tc.epochs = 10;
  const auto dir = std::filesystem::temp_directory_path() / "sfi_acceptance";
  std::filesystem::create_directories(dir);
  auto run = [&](const std::string& tag) {
    Rng rng(tc.seed);
    SfiNet model(ModelConfig{}, rng);
    const auto history = train(model, data, tc);
    std::ostringstream csv;
    write_metrics_csv(csv, history);
    save_checkpoint(dir / (tag + ".txt"), model.parameters());
    return std::make_pair(csv.str(), model.parameters());
  };
  const auto [csv_a, params_a] = run("a");
  const auto [csv_b, params_b] = run("b");
  const bool same_csv = csv_a == csv_b;

  Rng other(1234);
  SfiNet restored(ModelConfig{}, other), original(ModelConfig{}, other);
  restored.load_parameters(load_checkpoint(dir / "a.txt"));
  std::map<std::string, Tensor> direct(params_a.begin(), params_a.end());
  original.load_parameters(direct);
  bool same_forward = true;
  for (const auto& s : data.test) {
    auto x = original.forward(s.image, s.label), y = restored.forward(s.image, s.label);
    same_forward &= values(x.probabilities()) == values(y.probabilities()) &&
                    x.filter_loss->item() == y.filter_loss->item() && x.class_loss->item() == y.class_loss->item();
  }
  std::filesystem::remove_all(dir);
  return {same_csv && same_forward, std::to_string(tc.epochs) + "-epoch runs: metrics CSV " +
                                        (same_csv ? "bitwise identical" : "DIFFERENT") + ", checkpoint round trip " +
                                        (same_forward ? "bitwise identical" : "DIFFERENT") + " on " +
                                        std::to_string(data.test.size()) + " images"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "ambiguity weight schedule", 1, false, weight_schedule},
      {2, "filter cardinalities", 10, false, cardinalities},
      {3, "rank filters match brute-force oracles", 10, false, oracle_equivalence},
      {4, "finite-difference gradient suite", 300, false, gradient_suite},
      {5, "algebraic identities", 30, false, algebraic_identities},
      {6, "attention permutation equivariance", 30, false, permutation_equivariance},
      {7, "end-to-end learning on clean data", 900, false, end_to_end_learning},
      {8, "filtering vs bypass on ambiguous pairs", 2700, true, filter_direction},
      {9, "uniform-prediction loss constants", 1, false, loss_constants},
      {10, "reproducibility", 1200, false, reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool passed = o.passed && in_time;
    std::ostringstream line;
    line << "[" << c.id << "] " << (passed ? "PASS" : "FAIL") << (c.advisory && !passed ? " (reported)" : "") << " "
         << c.name << ": " << o.detail << " | " << std::fixed << std::setprecision(2) << secs << " s of "
         << c.budget_seconds << " s" << (in_time ? "" : " (over budget)");
    std::cout << line.str() << std::endl;
    if (!passed && !c.advisory) ++failures;
  }
  std::cout << (failures == 0 ? "acceptance: PASS" : "acceptance: FAIL (" + std::to_string(failures) + ")") << '\n';
  return failures == 0 ? 0 : 1;
}
