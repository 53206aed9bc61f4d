#include "layoutmuse/autodiff/tape.hpp"

#include "layoutmuse/autodiff/ops.hpp"

namespace layoutmuse::ad {

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::constant(TensorT value) {
  Node n;
  n.op = "constant";
  n.kind = Kind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::input(TensorT value) {
  Node n;
  n.op = "input";
  n.kind = Kind::Input;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::parameter(BasicParameter<T>& param) {
  Node n;
  n.op = "parameter";
  n.kind = Kind::Parameter;
  n.external = &param.value;
  n.param = &param;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::frozen(const BasicParameter<T>& param) {
  Node n;
  n.op = "frozen";
  n.kind = Kind::Constant;
  n.external = &param.value;
  return push(std::move(n));
}

template <typename T>
typename BasicTape<T>::Var BasicTape<T>::record(std::string_view op, TensorT value,
                                                std::span<const Var> inputs, BackwardFn backward,
                                                bool second_order) {
  if (!value.all_finite()) {
    throw NonFiniteValue("non-finite value produced by op '" + std::string(op) + "'");
  }
  Node n;
  n.op = op;
  n.kind = Kind::Op;
  n.value = std::move(value);
  n.second_order = second_order;
  bool needs = false;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.valid() && &v.tape() != this) throw ShapeMismatch("op '" + std::string(op) + "' mixes tapes");
    n.inputs.push_back(v.id());
    if (v.valid() && requires_grad(v.id())) needs = true;
  }
  if (grad_enabled_ && needs) {
    n.requires_grad = true;
    n.backward = std::move(backward);
  }
  return push(std::move(n));
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external ? *n.external : n.value;
}

template <typename T>
std::vector<BasicVar<T>> BasicTape<T>::reverse_sweep(const Var& output, bool create_graph) {
  if (!output.valid() || &output.tape() != this) throw ShapeMismatch("output does not belong to this tape");
  if (value(output.id()).size() != 1) {
    throw NonScalarOutput("backward needs a scalar output, got shape " + shape_str(value(output.id()).shape()));
  }
  const int top = output.id();
  std::vector<Var> grads(static_cast<std::size_t>(top) + 1);
  grads[static_cast<std::size_t>(top)] = constant(TensorT(value(top).shape(), T{1}));

  for (int id = top; id >= 0; --id) {
    const Var g = grads[static_cast<std::size_t>(id)];
    if (!g.valid()) continue;
    // Copy what we need: backward rules append to nodes_.
    const Kind kind = nodes_[static_cast<std::size_t>(id)].kind;
    if (kind != Kind::Op || !nodes_[static_cast<std::size_t>(id)].requires_grad) continue;
    if (create_graph && !nodes_[static_cast<std::size_t>(id)].second_order) {
      throw UnsupportedSecondOrder("op '" + std::string(nodes_[static_cast<std::size_t>(id)].op) +
                                   "' has no second-order rule");
    }
    const std::vector<int> inputs = nodes_[static_cast<std::size_t>(id)].inputs;
    const BackwardFn fn = nodes_[static_cast<std::size_t>(id)].backward;
    std::vector<Var> in_grads = fn(g, Var(this, id));
    for (std::size_t k = 0; k < inputs.size() && k < in_grads.size(); ++k) {
      const int in = inputs[k];
      if (in < 0 || !in_grads[k].valid() || !requires_grad(in)) continue;
      Var& slot = grads[static_cast<std::size_t>(in)];
      slot = slot.valid() ? add(slot, in_grads[k]) : in_grads[k];
    }
  }
  return grads;
}

template <typename T>
void BasicTape<T>::backward(const Var& output) {
  const std::size_t mark = nodes_.size();
  const bool saved = grad_enabled_;
  grad_enabled_ = false;
  std::vector<Var> grads;
  try {
    grads = reverse_sweep(output, false);
  } catch (...) {
    grad_enabled_ = saved;
    throw;
  }
  grad_enabled_ = saved;

  for (std::size_t id = 0; id < grads.size(); ++id) {
    if (!grads[id].valid()) continue;
    Node& n = nodes_[id];
    if (n.kind == Kind::Parameter) {
      const TensorT& gv = value(grads[id].id());
      auto dst = n.param->grad.data();
      if (dst.size() != gv.size()) n.param->grad = TensorT(n.param->value.shape());
      dst = n.param->grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv[i];
    } else if (n.kind == Kind::Input) {
      TensorT gv = value(grads[id].id());
      auto it = leaf_grads_.find(static_cast<int>(id));
      if (it == leaf_grads_.end()) {
        leaf_grads_.emplace(static_cast<int>(id), std::move(gv));
      } else {
        for (std::size_t i = 0; i < gv.size(); ++i) it->second[i] += gv[i];
      }
    }
  }
  // Nodes created during a first-order sweep are never referenced again.
  while (nodes_.size() > mark) nodes_.pop_back();
}

template <typename T>
BasicTensor<T> BasicTape<T>::grad(const Var& leaf) const {
  auto it = leaf_grads_.find(leaf.id());
  if (it != leaf_grads_.end()) return it->second;
  return TensorT(value(leaf.id()).shape());
}

template <typename T>
BasicVar<T> BasicTape<T>::grad_graph(const Var& output, const Var& wrt) {
  std::vector<Var> grads = reverse_sweep(output, true);
  if (wrt.id() < static_cast<int>(grads.size()) && grads[static_cast<std::size_t>(wrt.id())].valid()) {
    return grads[static_cast<std::size_t>(wrt.id())];
  }
  return constant(TensorT(value(wrt.id()).shape()));
}

template <typename T>
void BasicTape<T>::clear() {
  nodes_.clear();
  leaf_grads_.clear();
  grad_enabled_ = true;
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace layoutmuse::ad
