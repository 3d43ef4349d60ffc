#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sfi/ops.hpp"
#include "sfi/rng.hpp"

namespace sfi {


/// Trainable tensor drawn from uniform(−a, a), a = sqrt(gain/fan_in).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  const double a = std::sqrt(gain / static_cast<double>(fan_in));
  auto values = rng.uniform_vector(numel_of(shape), -a, a);
  return Tensor::from(std::move(shape), std::move(values), true);
}

/// Affine map of a feature vector to class logits.
struct LinearHead {
  Tensor weight;  // in × out
  Tensor bias;    // out

  static LinearHead init(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    return {init_uniform({in, out}, in, rng, gain), Tensor::zeros({out}, true)};
  }

  Tensor operator()(const Tensor& z) const {
    if (z.numel() != weight.dim(0))
      throw ShapeError("linear head: input " + shape_str(z.shape()) + " does not match weight " +
                       shape_str(weight.shape()));
    auto row = matmul(reshape(z, {1, z.numel()}), weight);
    return reshape(add_row(row, bias), {weight.dim(1)});
  }
};

}  // namespace sfi
