#pragma once

// Tape-based reverse-mode differentiation over mice::Tensor.
//
// A Tape records one forward graph. Parameters enter by reference through
// Tape::param and are never written to by the tape; after backward() their
// gradients are read back with Tape::grad(param). This keeps weights const
// during the forward pass so several tapes can share one set of weights.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "mice/tensor.hpp"

namespace mice {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape; }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Buffer<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  /// Records `p` by reference; `p` must outlive the tape. Repeated calls with
  /// the same tensor return the same node so gradients from every use merge.
  Var<T> param(const Tensor<T>& p);

  const Tensor<T>& value(Var<T> v) const { return node_value(nodes_[v.id]); }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every ancestor.
  void backward(Var<T> loss);

  /// Gradient buffer of a node, or nullptr when none reached it.
  const Buffer<T>* grad(Var<T> v) const;
  const Buffer<T>* grad(const Tensor<T>& param) const;

  // Op-implementation interface.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);
  Buffer<T>& grad_mut(std::size_t id);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Buffer<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  static const Tensor<T>& node_value(const Node& n) { return n.external ? *n.external : n.owned; }

  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_nodes_;
};

// Ops. Every op validates shapes and throws DimensionError on mismatch.
// Two-dimensional ops treat all leading axes as rows.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// x[...×din] · w[din×dout] + b[dout].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// Sum of all elements as a [1] tensor.
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(Var<T> x);
/// Softmax over the last axis restricted to allowed entries; disallowed
/// entries come out as exact zeros. `allow` has cols() entries shared by
/// every row, or rows()*cols() entries. A row with nothing allowed throws
/// ContractError.
template <typename T>
Var<T> masked_softmax(Var<T> logits, std::span<const std::uint8_t> allow);
/// Multi-head scaled dot-product attention. q[t×d], k[s×d], v[s×d],
/// allow[t×s] row-major; the same mask applies to every head.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> allow,
                 std::size_t heads);
/// Rows `ids` of `table`, shape [ids.size()×cols].
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> ids);
template <typename T>
Var<T> concat_rows(Var<T> top, Var<T> bottom);
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);

}  // namespace mice
