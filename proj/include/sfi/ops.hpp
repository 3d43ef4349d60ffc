#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sfi/tensor.hpp"

namespace sfi {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t r, std::string_view op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + " tensor, got " +
                     shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = &B[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& G = self.grad;
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          (*ga)[i * k + p] += s;
        }
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * G[i * n + j];
        }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
  });
}

/// Elementwise product. `b` may also be a spatial mask whose shape equals the
/// leading dimensions of `a` (e.g. W×H against W×H×C); it then applies to
/// every trailing channel.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t inner = 1;
  if (sa != sb) {
    bool prefix = sb.size() < sa.size() && std::equal(sb.begin(), sb.end(), sa.begin());
    if (!prefix)
      throw ShapeError("hadamard: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    inner = numel_of(Shape(sa.begin() + static_cast<std::ptrdiff_t>(sb.size()), sa.end()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i / inner];
  return detail::make_result("hadamard", sa, std::move(out), {a, b}, [inner](detail::Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * B[i / inner];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i / inner] += self.grad[i] * A[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return detail::make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& X = self.parents[0]->value;
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (X[i] > 0.0) (*g)[i] += self.grad[i];
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  return detail::make_result("tanh", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

// ---------------------------------------------------------------------------
// Row-vector broadcasts over a 2-D matrix (explicit; no implicit broadcasting)

inline Tensor add_row(const Tensor& x, const Tensor& v) {
  detail::require_rank(x, 2, "add_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.numel() != n)
    throw ShapeError("add_row: vector " + shape_str(v.shape()) + " does not match rows of " + shape_str(x.shape()));
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + v.data()[j];
  return detail::make_result("add_row", x.shape(), std::move(out), {x, v}, [m, n](detail::Node& self) {
    if (auto* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m * n; ++i) (*gx)[i] += self.grad[i];
    if (auto* gv = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gv)[j] += self.grad[i * n + j];
  });
}

inline Tensor mul_row(const Tensor& x, const Tensor& v) {
  detail::require_rank(x, 2, "mul_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.numel() != n)
    throw ShapeError("mul_row: vector " + shape_str(v.shape()) + " does not match rows of " + shape_str(x.shape()));
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] * v.data()[j];
  return detail::make_result("mul_row", x.shape(), std::move(out), {x, v}, [m, n](detail::Node& self) {
    const auto& X = self.parents[0]->value;
    const auto& V = self.parents[1]->value;
    if (auto* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += self.grad[i * n + j] * V[j];
    if (auto* gv = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gv)[j] += self.grad[i * n + j] * X[i * n + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("sum", {1}, {s}, {a}, [](detail::Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (auto& x : *g) x += self.grad[0];
  });
}

/// Mean over the leading axis of an S×C matrix → C.
inline Tensor mean_rows(const Tensor& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.data()[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (auto& v : out) v *= inv;
  return detail::make_result("mean_rows", {n}, std::move(out), {x}, [m, n, inv](detail::Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += inv * self.grad[j];
  });
}

/// GAP over the spatial axes: W×H×N → N.
inline Tensor global_average_pool(const Tensor& m) {
  detail::require_rank(m, 3, "global_average_pool");
  const std::size_t s = m.dim(0) * m.dim(1), n = m.dim(2);
  std::vector<double> out(n, 0.0);
  for (std::size_t p = 0; p < s; ++p)
    for (std::size_t c = 0; c < n; ++c) out[c] += m.data()[p * n + c];
  const double inv = 1.0 / static_cast<double>(s);
  for (auto& v : out) v *= inv;
  return detail::make_result("global_average_pool", {n}, std::move(out), {m}, [s, n, inv](detail::Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t p = 0; p < s; ++p)
        for (std::size_t c = 0; c < n; ++c) (*g)[p * n + c] += inv * self.grad[c];
  });
}

/// Mean over the channel axis: W×H×N → W×H.
inline Tensor channel_average_pool(const Tensor& m) {
  detail::require_rank(m, 3, "channel_average_pool");
  const std::size_t s = m.dim(0) * m.dim(1), n = m.dim(2);
  std::vector<double> out(s, 0.0);
  for (std::size_t p = 0; p < s; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += m.data()[p * n + c];
    out[p] = acc / static_cast<double>(n);
  }
  const double inv = 1.0 / static_cast<double>(n);
  return detail::make_result("channel_average_pool", {m.dim(0), m.dim(1)}, std::move(out), {m},
                             [s, n, inv](detail::Node& self) {
                               if (auto* g = detail::parent_grad(self, 0))
                                 for (std::size_t p = 0; p < s; ++p)
                                   for (std::size_t c = 0; c < n; ++c) (*g)[p * n + c] += inv * self.grad[p];
                             });
}

// ---------------------------------------------------------------------------
// Softmax family

/// Softmax along `axis`, max-subtracted.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  const std::size_t inner = numel_of(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t outer = x.numel() / (len * inner);
  std::vector<double> out(x.numel());
  auto X = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, X[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        out[base + i * inner] = std::exp(X[base + i * inner] - mx);
        z += out[base + i * inner];
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
    }
  return detail::make_result("softmax", s, std::move(out), {x}, [outer, len, inner](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& Y = self.value;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += G[base + i * inner] * Y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i)
          (*g)[base + i * inner] += Y[base + i * inner] * (G[base + i * inner] - dot);
      }
  });
}

/// −log softmax(logits)[label] for a 1-D logit vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  detail::require_rank(logits, 1, "cross_entropy");
  const std::size_t n = logits.numel();
  if (label >= n)
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(n) + " classes");
  auto Z = logits.data();
  const double mx = *std::max_element(Z.begin(), Z.end());
  double z = 0.0;
  for (double v : Z) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return detail::make_result("cross_entropy", {1}, {lse - Z[label]}, {logits}, [label, lse](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& Z = self.parents[0]->value;
    for (std::size_t i = 0; i < Z.size(); ++i)
      (*g)[i] += self.grad[0] * (std::exp(Z[i] - lse) - (i == label ? 1.0 : 0.0));
  });
}

// ---------------------------------------------------------------------------
// Index-driven ops. Indices are fixed at forward time; gradients scatter back
// to the gathered source positions only.

inline constexpr std::ptrdiff_t kZeroPad = -1;

/// out[i] = x[index[i]] (or 0 where index[i] == kZeroPad).
inline Tensor gather(const Tensor& x, std::vector<std::ptrdiff_t> index, Shape out_shape,
                     std::string_view op = "gather") {
  if (numel_of(out_shape) != index.size())
    throw ShapeError(std::string(op) + ": index count does not match output shape " + shape_str(out_shape));
  const auto n = static_cast<std::ptrdiff_t>(x.numel());
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto j = index[i];
    if (j == kZeroPad) {
      out[i] = 0.0;
      continue;
    }
    if (j < 0 || j >= n) throw std::out_of_range(std::string(op) + ": source index out of range");
    out[i] = x.data()[static_cast<std::size_t>(j)];
  }
  return detail::make_result(op, std::move(out_shape), std::move(out), {x},
                             [index = std::move(index)](detail::Node& self) {
                               if (auto* g = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < index.size(); ++i)
                                   if (index[i] != kZeroPad) (*g)[static_cast<std::size_t>(index[i])] += self.grad[i];
                             });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<std::ptrdiff_t> idx(x.numel());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(x, std::move(idx), std::move(shape), "reshape");
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::ptrdiff_t> idx(m * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) idx[j * m + i] = static_cast<std::ptrdiff_t>(i * n + j);
  return gather(x, std::move(idx), {n, m}, "transpose");
}

/// Rows of an S×C matrix at the given positions, in the given order.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  detail::require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  std::vector<std::ptrdiff_t> idx;
  idx.reserve(rows.size() * n);
  for (auto r : rows) {
    if (r >= x.dim(0)) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range");
    for (std::size_t j = 0; j < n; ++j) idx.push_back(static_cast<std::ptrdiff_t>(r * n + j));
  }
  return gather(x, std::move(idx), {rows.size(), n}, "gather_rows");
}

/// Selected trailing-axis channels of a W×H×N map → W×H×k.
inline Tensor gather_channels(const Tensor& m, const std::vector<std::size_t>& channels) {
  detail::require_rank(m, 3, "gather_channels");
  const std::size_t s = m.dim(0) * m.dim(1), n = m.dim(2), k = channels.size();
  if (k == 0) throw ShapeError("gather_channels: empty channel selection");
  std::vector<std::ptrdiff_t> idx(s * k);
  for (std::size_t c : channels)
    if (c >= n) throw std::out_of_range("gather_channels: channel " + std::to_string(c) + " out of range");
  for (std::size_t p = 0; p < s; ++p)
    for (std::size_t i = 0; i < k; ++i) idx[p * k + i] = static_cast<std::ptrdiff_t>(p * n + channels[i]);
  return gather(m, std::move(idx), {m.dim(0), m.dim(1), k}, "gather_channels");
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin >= end || end > n) throw ShapeError("slice_cols: invalid column range for " + shape_str(x.shape()));
  const std::size_t w = end - begin;
  std::vector<std::ptrdiff_t> idx(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) idx[i * w + j] = static_cast<std::ptrdiff_t>(i * n + begin + j);
  return gather(x, std::move(idx), {m, w}, "slice_cols");
}

/// out row i = x row (i + offset), zero outside [0, S).
inline Tensor shift_rows(const Tensor& x, std::ptrdiff_t offset) {
  detail::require_rank(x, 2, "shift_rows");
  const auto m = static_cast<std::ptrdiff_t>(x.dim(0));
  const auto n = static_cast<std::ptrdiff_t>(x.dim(1));
  std::vector<std::ptrdiff_t> idx(static_cast<std::size_t>(m * n));
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    const auto src = i + offset;
    for (std::ptrdiff_t j = 0; j < n; ++j)
      idx[static_cast<std::size_t>(i * n + j)] = (src < 0 || src >= m) ? kZeroPad : src * n + j;
  }
  return gather(x, std::move(idx), x.shape(), "shift_rows");
}

/// Non-overlapping stride×stride patches of a W×H×C map, flattened row-major
/// by patch position → (W/s·H/s) × (s·s·C).
inline Tensor patchify(const Tensor& image, std::size_t stride) {
  detail::require_rank(image, 3, "patchify");
  const std::size_t w = image.dim(0), h = image.dim(1), c = image.dim(2);
  if (stride == 0 || w % stride != 0 || h % stride != 0)
    throw ShapeError("patchify: extent " + shape_str(image.shape()) + " not divisible by stride " +
                     std::to_string(stride));
  const std::size_t pw = w / stride, ph = h / stride, len = stride * stride * c;
  std::vector<std::ptrdiff_t> idx;
  idx.reserve(pw * ph * len);
  for (std::size_t px = 0; px < pw; ++px)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t dx = 0; dx < stride; ++dx)
        for (std::size_t dy = 0; dy < stride; ++dy)
          for (std::size_t ch = 0; ch < c; ++ch)
            idx.push_back(static_cast<std::ptrdiff_t>(((px * stride + dx) * h + (py * stride + dy)) * c + ch));
  return gather(image, std::move(idx), {pw * ph, len}, "patchify");
}

// ---------------------------------------------------------------------------
// Concatenation

namespace detail {

inline Tensor concat_impl(const std::vector<Tensor>& parts, bool along_rows) {
  const std::string_view op = along_rows ? "concat_rows" : "concat_cols";
  if (parts.empty()) throw ShapeError(std::string(op) + ": nothing to concatenate");
  for (auto& p : parts) require_rank(p, 2, op);
  const std::size_t fixed = along_rows ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (auto& p : parts) {
    if ((along_rows ? p.dim(1) : p.dim(0)) != fixed)
      throw ShapeError(std::string(op) + ": mismatched shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()));
    total += along_rows ? p.dim(0) : p.dim(1);
  }
  const std::size_t rows = along_rows ? total : fixed, cols = along_rows ? fixed : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = along_rows ? off + i : i, c = along_rows ? j : off + j;
        out[r * cols + c] = p.data()[i * pc + j];
      }
    off += along_rows ? pr : pc;
  }
  return make_result(op, {rows, cols}, std::move(out), parts,
                     [offsets, along_rows, cols](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto* g = parent_grad(self, k);
                         if (!g) continue;
                         const auto& ps = self.parents[k]->shape;
                         for (std::size_t i = 0; i < ps[0]; ++i)
                           for (std::size_t j = 0; j < ps[1]; ++j) {
                             const std::size_t r = along_rows ? offsets[k] + i : i;
                             const std::size_t c = along_rows ? j : offsets[k] + j;
                             (*g)[i * ps[1] + j] += self.grad[r * cols + c];
                           }
                       }
                     });
}

}  // namespace detail

inline Tensor concat_rows(const std::vector<Tensor>& parts) { return detail::concat_impl(parts, true); }
inline Tensor concat_cols(const std::vector<Tensor>& parts) { return detail::concat_impl(parts, false); }

}  // namespace sfi
