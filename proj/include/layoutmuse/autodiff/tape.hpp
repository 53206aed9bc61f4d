#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "layoutmuse/autodiff/tensor.hpp"

namespace layoutmuse::ad {

template <typename T>
class BasicTape;

/// Handle to a value recorded on a tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been cleared.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }
  BasicTape<T>& tape() const { return *tape_; }
  int id() const noexcept { return id_; }

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  BasicTape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of operations for reverse-mode differentiation.
///
/// Every op stores its output value and a backward rule. Backward rules are
/// themselves written in terms of recorded ops, so `grad_graph` can return a
/// gradient that is differentiable again (needed for gradient penalties).
/// Ops whose backward is a raw numeric kernel are marked first-order only and
/// raise UnsupportedSecondOrder when `grad_graph` has to pass through them.
template <typename T>
class BasicTape {
 public:
  using Var = BasicVar<T>;
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, const Var& output)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(TensorT value);
  Var input(TensorT value);
  Var parameter(BasicParameter<T>& param);
  /// Registers a parameter as a constant: its value is read but it collects no gradient.
  Var frozen(const BasicParameter<T>& param);

  Var record(std::string_view op, TensorT value, std::span<const Var> inputs, BackwardFn backward,
             bool second_order = true);

  const TensorT& value(int id) const;
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::string_view op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse accumulation from a scalar. Parameter gradients are added into
  /// `BasicParameter::grad`; input-leaf gradients are kept for `grad()`.
  void backward(const Var& output);
  /// Gradient of a leaf after `backward`; zeros when the leaf was unreachable.
  TensorT grad(const Var& leaf) const;

  /// Gradient of `output` w.r.t. `wrt`, recorded as tape ops.
  Var grad_graph(const Var& output, const Var& wrt);

  /// While false, new ops are recorded without backward rules.
  bool grad_enabled() const noexcept { return grad_enabled_; }

  void clear();

 private:
  enum class Kind { Constant, Input, Parameter, Op };

  struct Node {
    std::string_view op;
    Kind kind = Kind::Constant;
    TensorT value;
    const TensorT* external = nullptr;
    BasicParameter<T>* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool second_order = true;
  };

  std::vector<Var> reverse_sweep(const Var& output, bool create_graph);
  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<int, TensorT> leaf_grads_;
  bool grad_enabled_ = true;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;
using Tape64 = BasicTape<double>;
using Var64 = BasicVar<double>;

}  // namespace layoutmuse::ad
