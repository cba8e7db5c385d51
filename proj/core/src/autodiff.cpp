#include "msfa/autodiff.hpp"

#include <algorithm>

#include "msfa/errors.hpp"

namespace msfa::ad {

ParamId ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
  const auto idx = static_cast<std::uint32_t>(values_.size());
  index_.emplace(name, idx);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{idx};
}

std::size_t ParameterSet::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

ParamId ParameterSet::at(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw ValueError("unknown parameter '" + std::string(name) + "'");
}

std::vector<Tensor> ParameterSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Tensor::like(v));
  return out;
}

void accumulate(Gradients& into, const Gradients& from) {
  if (into.size() != from.size()) throw ShapeError("gradient list length mismatch");
  for (std::size_t p = 0; p < into.size(); ++p) {
    auto dst = into[p].data();
    auto src = from[p].data();
    if (dst.size() != src.size()) throw ShapeError("gradient shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

const Tensor& Var::value() const { return graph_->value(id_); }

Graph::Graph(const ParameterSet* params, Precision precision) : params_(params), precision_(precision) {}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, -1, false});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::param(ParamId id) {
  if (!params_) throw ValueError("graph has no parameter set bound");
  nodes_.push_back(Node{"param", params_->value(id), {}, {}, static_cast<std::int64_t>(id.index), true});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::param(std::string_view name) {
  if (!params_) throw ValueError("graph has no parameter set bound");
  return param(params_->at(name));
}

Var Graph::record(const char* op, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  bool rg = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ValueError(std::string("op '") + op + "' references a foreign node");
    rg = rg || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(backward), -1, rg});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Graph::grad(std::uint32_t id) {
  auto& slot = grads_[id];
  if (!slot) slot.emplace(Tensor::like(nodes_[id].value));
  return *slot;
}

Gradients Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ValueError("loss belongs to a different graph");
  if (value(loss.id()).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
  }
  for (std::uint32_t i = 0; i <= loss.id(); ++i) {
    if (!nodes_[i].value.all_finite()) {
      throw AnomalyError(std::string("forward:") + nodes_[i].op, -1,
                         "non-finite value in node " + std::to_string(i));
    }
  }
  for (auto& g : grads_) g.reset();

  grad(loss.id()).fill(1.0);
  last_visits_ = 0;
  // Tape order is a topological order, so one reverse sweep visits each node once.
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    const auto id = static_cast<std::uint32_t>(i);
    auto& node = nodes_[id];
    if (!node.requires_grad || !grads_[id] || !node.backward) continue;
    node.backward(*this, id);
    ++last_visits_;
  }

  Gradients out = params_ ? params_->zeros_like() : Gradients{};
  for (std::uint32_t i = 0; i <= loss.id(); ++i) {
    const auto& node = nodes_[i];
    if (node.param < 0 || !grads_[i]) continue;
    auto& dst = out[static_cast<std::size_t>(node.param)];
    const auto& src = *grads_[i];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return out;
}

}  // namespace msfa::ad
