#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

#if defined(S2S_CHECK_FINITE) || !defined(NDEBUG)
inline constexpr bool kCheckFiniteDefault = true;
#else
inline constexpr bool kCheckFiniteDefault = false;
#endif

/// A named trainable tensor. Gradients from Tape::backward accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

/// Handle to a tensor recorded on a Tape.
struct Var {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

/// Reverse-mode tape. Operations are recorded in execution order, so the record is
/// topologically sorted by construction; backward replays it once in reverse.
///
/// Gradient accumulation: interior gradients are cleared at the start of every
/// backward call, while leaf variables and Parameters keep accumulating across calls
/// until the caller resets them.
///
/// A tape and everything on it belong to a single thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_check_finite(bool on) { check_finite_ = on; }
  [[nodiscard]] bool check_finite() const { return check_finite_; }

  Var constant(Tensor<T> value) { return push(Node{std::move(value), nullptr, {}, nullptr, false, true}); }

  Var variable(Tensor<T> value) {
    Node node{std::move(value), nullptr, {}, nullptr, true, true};
    node.grad_own = Tensor<T>(node.value_own.shape());
    return push(std::move(node));
  }

  /// References the parameter's storage; the parameter must outlive the tape's use.
  Var parameter(Parameter<T>& p) {
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    return push(Node{{}, &p.value, {}, &p.grad, true, true});
  }

  [[nodiscard]] const Tensor<T>& value(Var v) const { return node(v).value(); }
  [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] std::size_t op_count() const { return ops_.size(); }

  [[nodiscard]] const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    detail::require(n.requires_grad, "tape: tensor does not require grad");
    return n.grad();
  }

  /// Gradient buffer of `v` for use inside backward rules; null when `v` needs no gradient.
  Tensor<T>* grad_sink(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.grad().shape() != n.value().shape()) n.grad() = Tensor<T>(n.value().shape());
    return &n.grad();
  }

  /// Records the result of a primitive. `backward` is kept only if some input needs a gradient.
  Var record(Tensor<T> out, std::initializer_list<Var> inputs, BackwardFn backward, const char* op_name) {
    if (check_finite_ && !out.all_finite())
      throw NumericError(std::string("non-finite value produced by ") + op_name);
    bool needs_grad = false;
    for (Var in : inputs) needs_grad = needs_grad || node(in).requires_grad;
    Var result = push(Node{std::move(out), nullptr, {}, nullptr, needs_grad, false});
    if (needs_grad) ops_.push_back(Op{result.index, std::move(backward)});
    return result;
  }

  void backward(Var loss) {
    const Node& root = node(loss);
    detail::require(root.value().size() == 1, "backward: loss must be a scalar, got shape " +
                                                  to_string(root.value().shape()));
    for (Node& n : nodes_)
      if (!n.leaf) n.grad_own = Tensor<T>();
    if (!root.requires_grad) return;
    Tensor<T>* seed = grad_sink(loss);
    (*seed)[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (it->output > loss.index) continue;
      const Tensor<T>& g = nodes_[it->output].grad();
      if (g.empty() && !nodes_[it->output].value().empty()) continue;  // not on the path to loss
      it->backward(*this, g);
    }
  }

 private:
  struct Node {
    Tensor<T> value_own;
    const Tensor<T>* value_ref = nullptr;
    Tensor<T> grad_own;
    Tensor<T>* grad_ref = nullptr;
    bool requires_grad = false;
    bool leaf = false;

    const Tensor<T>& value() const { return value_ref ? *value_ref : value_own; }
    Tensor<T>& grad() { return grad_ref ? *grad_ref : grad_own; }
    const Tensor<T>& grad() const { return grad_ref ? *grad_ref : grad_own; }
  };

  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{id_, nodes_.size() - 1};
  }

  Node& node(Var v) {
    detail::require(v.tape_id == id_ && v.index < nodes_.size(), "tape: tensor is not on this tape");
    return nodes_[v.index];
  }
  const Node& node(Var v) const {
    detail::require(v.tape_id == id_ && v.index < nodes_.size(), "tape: tensor is not on this tape");
    return nodes_[v.index];
  }

  std::uint64_t id_;
  bool check_finite_ = kCheckFiniteDefault;
  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace s2s
