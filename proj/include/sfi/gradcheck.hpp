#pragma once

// Central finite-difference checks of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sfi/tensor.hpp"

namespace sfi {

struct GradcheckReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

inline double gradcheck_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

/// Compares d(loss_fn())/d(param) against central differences. `loss_fn` must
/// rebuild the graph from the current parameter values on every call.
inline GradcheckReport check_gradient(const std::function<Tensor()>& loss_fn, Tensor param, std::string name,
                                      double tolerance = 1e-4, double step = 1e-5) {
  GradcheckReport rep{std::move(name), 0, 0.0, tolerance};
  param.zero_grad();
  backward(loss_fn());
  const auto analytic = param.grad();
  auto values = param.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = loss_fn().item();
    values[i] = orig - step;
    const double down = loss_fn().item();
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    rep.max_rel_error = std::max(rep.max_rel_error, gradcheck_error(analytic[i], numeric));
    ++rep.checked;
  }
  param.zero_grad();
  return rep;
}

/// Checks every tensor in `params` against the same loss, with one analytic
/// backward pass shared by all of them.
inline std::vector<GradcheckReport> check_gradients(const std::function<Tensor()>& loss_fn,
                                                    const std::vector<std::pair<std::string, Tensor>>& params,
                                                    double tolerance = 1e-4, double step = 1e-5) {
  for (auto [name, t] : params) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : params) analytic.push_back(t.grad());
  std::vector<GradcheckReport> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradcheckReport rep{params[k].first, 0, 0.0, tolerance};
    Tensor t = params[k].second;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = loss_fn().item();
      values[i] = orig - step;
      const double down = loss_fn().item();
      values[i] = orig;
      rep.max_rel_error = std::max(rep.max_rel_error, gradcheck_error(analytic[k][i], (up - down) / (2.0 * step)));
      ++rep.checked;
    }
    out.push_back(rep);
  }
  for (auto [name, t] : params) t.zero_grad();
  return out;
}

}  // namespace sfi
