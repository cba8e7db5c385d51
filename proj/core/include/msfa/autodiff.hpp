#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msfa/tensor.hpp"

// Tape-based reverse-mode differentiation over a closed set of primitives.
namespace msfa::ad {

// Arithmetic precision of the heavy kernels (conv3d). Values are always stored as doubles;
// f32 rounds conv operands to float and accumulates in float.
enum class Precision { f64, f32 };

struct ParamId {
  std::uint32_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

// Named trainable tensors. Insertion order is the canonical parameter order.
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor init);

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t total_elements() const noexcept;

  const std::string& name(ParamId id) const { return names_.at(id.index); }
  Tensor& value(ParamId id) { return values_.at(id.index); }
  const Tensor& value(ParamId id) const { return values_.at(id.index); }

  std::optional<ParamId> find(std::string_view name) const;
  ParamId at(std::string_view name) const;

  std::vector<Tensor> zeros_like() const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor>& values() noexcept { return values_; }
  const std::vector<Tensor>& values() const noexcept { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::uint32_t, std::less<>> index_;
};

// One gradient tensor per parameter, aligned with ParameterSet order.
using Gradients = std::vector<Tensor>;

void accumulate(Gradients& into, const Gradients& from);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Graph& graph() const { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

class Graph {
 public:
  // Reads the node's output gradient via grad(self) and accumulates into its inputs.
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(const ParameterSet* params = nullptr, Precision precision = Precision::f64);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(ParamId id);
  Var param(std::string_view name);

  // Appends a node; used by the primitive implementations.
  Var record(const char* op, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  // Reverse pass from a scalar loss. Returns gradients for every parameter of the bound
  // ParameterSet; parameters that did not influence the loss get zeros.
  Gradients backward(Var loss);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  Tensor& grad(std::uint32_t id);
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::span<const std::uint32_t> inputs(std::uint32_t id) const { return nodes_[id].inputs; }
  const char* op_name(std::uint32_t id) const { return nodes_[id].op; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Discrete choices an op made in its forward pass (e.g. argmax positions). The derivative is
  // only defined while these stay fixed under perturbation.
  void set_branch(std::uint32_t id, std::vector<std::uint32_t> choices) { nodes_[id].branch = std::move(choices); }
  const std::vector<std::uint32_t>& branch(std::uint32_t id) const { return nodes_[id].branch; }

  Precision precision() const noexcept { return precision_; }
  const ParameterSet* parameters() const noexcept { return params_; }

  // Number of nodes whose backward function ran during the last backward().
  std::size_t last_backward_visits() const noexcept { return last_visits_; }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    std::int64_t param = -1;
    bool requires_grad = false;
    std::vector<std::uint32_t> branch;
  };

  const ParameterSet* params_;
  Precision precision_;
  std::deque<Node> nodes_;
  std::deque<std::optional<Tensor>> grads_;
  std::size_t last_visits_ = 0;
};

// ---- primitives -------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);

// [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m].
Var matmul(Var a, Var b);

// x: [Ci,D,H,W], w: [Co,Ci,kd,kh,kw] (odd extents), b: [Co]. Zero padding, stride 1.
Var conv3d(Var x, Var w, Var b);

Var softmax(Var x, std::size_t axis);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
// Natural log; inputs must be positive.
Var log(Var x);
// Elementwise clamp; gradient passes only strictly inside (lo, hi).
Var clamp(Var x, double lo, double hi);

Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, std::size_t axis);
Var mean_axis(Var x, std::size_t axis);
// Ties route the gradient to the first maximal element.
Var max_axis(Var x, std::size_t axis);

// x: [C,D,H,W] -> [C,od,oh,ow] with bins [floor(i*L/n), ceil((i+1)*L/n)).
Var adaptive_avg_pool3d(Var x, std::size_t od, std::size_t oh, std::size_t ow);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
// Same rank; every source extent must be 1 or equal to the target extent.
Var broadcast_to(Var x, const Shape& shape);
Var reshape(Var x, const Shape& shape);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return shift(a, c); }
inline Var operator-(double c, Var a) { return shift(scale(a, -1.0), c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace msfa::ad
