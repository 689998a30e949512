#ifndef FLDM_TENSOR_HPP
#define FLDM_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fldm/error.hpp"

namespace fldm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

class Graph;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  const Graph* graph = nullptr;
  std::size_t node_id = 0;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Tensors share their storage on copy (handle semantics). Values are treated
/// as immutable once a tensor has been consumed by a recorded op; only leaf
/// tensors (parameters, inputs) expose mutable storage.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, {value}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }

  /// Mutable storage; only leaves may be written.
  std::span<double> data() {
    if (!impl_->is_leaf) throw GraphError("cannot mutate a non-leaf tensor");
    return impl_->values;
  }

  double item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf; }

  void set_requires_grad(bool flag) {
    if (!impl_->is_leaf) throw GraphError("requires_grad is fixed on non-leaf tensors");
    impl_->requires_grad = flag;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values, disconnected from any graph.
  Tensor detach() const { return Tensor(shape(), impl_->values); }

  bool all_finite() const {
    return std::all_of(impl_->values.begin(), impl_->values.end(),
                       [](double v) { return std::isfinite(v); });
  }

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

/// Append-only record of differentiable operations.
///
/// Ops record into the graph that is active on the calling thread (see
/// Graph::Scope) whenever at least one input requires a gradient. A graph can
/// be differentiated once; afterwards it is consumed.
class Graph {
 public:
  struct Node {
    std::string_view kind;
    std::vector<detail::ImplPtr> inputs;
    std::vector<detail::ImplPtr> outputs;
    std::function<void()> backward;
  };

  /// RAII activation of a graph on the current thread.
  class Scope {
   public:
    explicit Scope(Graph& graph) : previous_(slot()) { slot() = &graph; }
    ~Scope() { slot() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

  /// Suspends recording on the current thread (inference / finite differences).
  class Pause {
   public:
    Pause() : previous_(slot()) { slot() = nullptr; }
    ~Pause() { slot() = previous_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Graph* previous_;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active() { return slot(); }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Bytes held by recorded outputs; a proxy for activation memory.
  std::size_t recorded_bytes() const { return recorded_bytes_; }

  void record(std::string_view kind, std::vector<detail::ImplPtr> inputs,
              std::vector<detail::ImplPtr> outputs, std::function<void()> backward) {
    if (consumed_) throw GraphError("cannot record into a consumed graph");
    const std::size_t id = nodes_.size();
    for (const auto& out : outputs) {
      out->requires_grad = true;
      out->is_leaf = false;
      out->graph = this;
      out->node_id = id;
      recorded_bytes_ += out->values.size() * sizeof(double);
    }
    nodes_.push_back(Node{kind, std::move(inputs), std::move(outputs), std::move(backward)});
  }

  /// Reverse pass from a scalar loss. Leaf gradients accumulate; leaves that
  /// took part in the graph but were not reached receive zero gradients.
  void backward(const Tensor& loss) {
    if (consumed_) throw GraphError("graph already consumed by a previous backward pass");
    if (loss.numel() != 1) {
      throw GraphError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    const auto& li = loss.impl();
    if (li->graph != this || li->is_leaf) {
      throw GraphError("loss was not produced by this graph");
    }
    li->ensure_grad();
    li->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const bool reached = std::any_of(it->outputs.begin(), it->outputs.end(),
                                       [](const auto& o) { return !o->grad.empty(); });
      if (!reached) continue;
      for (auto& o : it->outputs) o->ensure_grad();
      it->backward();
    }
    for (auto& n : nodes_) {
      for (auto& in : n.inputs) {
        if (in->is_leaf && in->requires_grad) in->ensure_grad();
      }
      n.backward = nullptr;
    }
    consumed_ = true;
  }

 private:
  static Graph*& slot() {
    thread_local Graph* active = nullptr;
    return active;
  }

  std::vector<Node> nodes_;
  std::size_t recorded_bytes_ = 0;
  bool consumed_ = false;
};

namespace detail {

/// Graph an op should record into, or nullptr when no input needs a gradient.
inline Graph* recording_graph(std::initializer_list<const Tensor*> inputs) {
  Graph* g = Graph::active();
  if (g == nullptr || g->consumed()) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return g;
  }
  return nullptr;
}

inline void accumulate(TensorImpl& target, std::size_t i, double v) {
  if (!target.requires_grad) return;
  target.ensure_grad();
  target.grad[i] += v;
}

}  // namespace detail

/// Seeded generator used for every random draw in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng,
                             bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter initialisation.
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return uniform_tensor(std::move(shape), -bound, bound, rng, true);
}

}  // namespace fldm

#endif  // FLDM_TENSOR_HPP
