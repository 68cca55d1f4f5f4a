#include "udagcn/autodiff.hpp"

namespace udagcn {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape())
    grad = Tensor(value.shape(), 0.0);
  else
    std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (frozen_.contains(&p)) return constant(p.value);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, true});
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

void Tape::freeze(const ParamRefs& params) {
  for (const Parameter* p : params) frozen_.insert(p);
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("op input is not on this tape");
    needs = needs || nodes_[id].requires_grad;
  }
  Node n{std::move(value), {}, std::move(inputs), {}, nullptr, needs};
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (backward_done_) throw ContractError("backward() already ran on this tape");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  grad_buffer(loss.id())[0] = 1.0;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad, *this);
    if (n.bound) {
      Parameter& p = *n.bound;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
      auto dst = p.grad.values();
      auto src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace udagcn
