#pragma once

// Dense f64 tensor with a dynamically recorded computation graph and
// reverse-mode gradient propagation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sfi {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid hyper-parameters or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

// Installed by ScopedBackwardFault; scales the upstream gradient of every node
// whose op name matches before its backward rule runs.
struct BackwardFault {
  std::string op;
  double factor = 1.0;
};

inline thread_local const BackwardFault* active_fault = nullptr;

}  // namespace detail

/// Corrupts the backward rule of one op for the lifetime of the guard
/// (current thread only). Used as a negative control for gradient checks.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(std::string op, double factor)
      : fault_{std::move(op), factor}, previous_(detail::active_fault) {
    detail::active_fault = &fault_;
  }
  ~ScopedBackwardFault() { detail::active_fault = previous_; }
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  detail::BackwardFault fault_;
  const detail::BackwardFault* previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(numel_of(shape), 0.0);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(numel_of(shape), value);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (numel_of(shape) != values.size())
      throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                       " values, got " + std::to_string(values.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->seq = detail::next_seq();
    n->op = "leaf";
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("dimension index " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node().shape[i];
  }
  std::size_t numel() const { return node().value.size(); }

  std::span<const double> data() const { return node().value; }
  /// Mutable view of the values; intended for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node().value; }

  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const {
    const auto& n = node();
    if (n.grad.size() != n.value.size()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }
  bool has_grad() const { return node().grad.size() == node().value.size(); }
  void zero_grad() { node().grad.clear(); }

  bool requires_grad() const { return node().requires_grad; }
  const std::string& op() const { return node().op; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node().value[0];
  }

  double at(std::initializer_list<std::size_t> idx) const { return node().value[offset(idx)]; }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    const auto& s = shape();
    if (idx.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= s[k]) throw ShapeError("index out of range for " + shape_str(s));
      off = off * s[k] + i;
      ++k;
    }
    return off;
  }

  /// Copy of the values as a fresh leaf, cut from the graph.
  Tensor detach(bool requires_grad = false) const { return from(shape(), node().value, requires_grad); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::Node& node() const {
    if (!node_) throw GraphError("use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(std::string_view op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
}

/// Wraps a computed value as a graph node. The backward rule is kept only
/// when some input requires a gradient.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = next_seq();
  n->op = std::string(op);
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

/// Gradient buffer of parent i if it participates in differentiation.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace detail

/// Operations reachable from a scalar loss, ordered by execution.
class CompGraph {
 public:
  static CompGraph trace(const Tensor& loss) {
    CompGraph g;
    g.root_ = loss.node_ptr();
    if (!g.root_) throw GraphError("backward on undefined tensor");
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{g.root_.get()};
    seen.insert(g.root_.get());
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      g.nodes_.push_back(n);
      for (auto& p : n->parents)
        if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(g.nodes_.begin(), g.nodes_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
    for (auto* n : g.nodes_)
      for (auto& p : n->parents)
        if (p->seq >= n->seq)
          throw GraphError("cycle detected: op '" + n->op + "' consumes a value produced after it");
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Execution-ordered op names (leaves included).
  std::vector<std::string> ops() const {
    std::vector<std::string> out;
    for (auto* n : nodes_) out.push_back(n->op);
    return out;
  }

  void backward() {
    if (root_->value.size() != 1)
      throw GraphError("backward requires a scalar loss, got shape " + shape_str(root_->shape));
    for (auto* n : nodes_)
      if (!n->is_leaf()) n->grad.clear();
    if (!root_->requires_grad) return;
    root_->ensure_grad()[0] += 1.0;
    const auto* fault = detail::active_fault;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto* n = *it;
      if (n->is_leaf() || n->grad.empty()) continue;
      if (fault && fault->op == n->op)
        for (auto& g : n->grad) g *= fault->factor;
      n->backward(*n);
    }
  }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> nodes_;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Accumulates dloss/dt into every requires_grad leaf reachable from loss.
inline void backward(const Tensor& loss) { CompGraph::trace(loss).backward(); }

}  // namespace sfi
