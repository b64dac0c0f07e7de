#include "mice/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mice/kernels.hpp"

namespace mice {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.external = &p;
  n.needs_grad = grad_enabled_ && p.requires_grad;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
  if (!all_finite(value)) throw NumericError("non-finite value produced on the tape");
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const auto& p : parents) {
      if (p.tape != this) throw UsageError("ops may not mix variables from different tapes");
      n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    }
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Buffer<T>& Tape<T>::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(node_value(n).numel(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw UsageError("backward: variable belongs to another tape");
  if (value(loss).numel() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(value(loss).shape));
  }
  if (backward_done_) throw UsageError("backward: already run on this tape");
  backward_done_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad_mut(loss.id)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
const Buffer<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
const Buffer<T>* Tape<T>::grad(const Tensor<T>& param) const {
  auto it = param_nodes_.find(&param);
  if (it == param_nodes_.end()) return nullptr;
  return grad(Var<T>{const_cast<Tape*>(this), it->second});
}

namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw UsageError(std::string(op) + ": variables from different tapes");
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape));
  }
}

template <typename T>
void add_into(Buffer<T>& dst, const Buffer<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void check_allow_rows(std::span<const std::uint8_t> allow, std::size_t rows, std::size_t cols,
                      bool per_row, const char* op) {
  for (std::size_t r = 0; r < (per_row ? rows : 1); ++r) {
    const auto row = allow.subspan(r * cols, cols);
    if (std::none_of(row.begin(), row.end(), [](std::uint8_t a) { return a != 0; })) {
      throw ContractError(std::string(op) + ": row " + std::to_string(r) + " is fully masked");
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t r = av.shape[0], k = av.shape[1], n = bv.shape[1];
  if (bv.shape[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
  }
  Tensor<T> out({r, n});
  kernels::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), r, k, n);
  return a.tape->record(std::move(out), {a, b}, [a, b, r, k, n](Tape<T>& tape, const Buffer<T>& g) {
    if (tape.needs_grad(a)) {
      kernels::gemm_nt(g.data(), tape.value(b).data.data(), tape.grad_mut(a.id).data(), r, n, k,
                       true);
    }
    if (tape.needs_grad(b)) {
      kernels::gemm_tn(tape.value(a).data.data(), g.data(), tape.grad_mut(b.id).data(), k, r, n,
                       true);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require_same_tape(x, w, "linear");
  require_same_tape(x, b, "linear");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  require_matrix(wv, "linear");
  const std::size_t din = wv.shape[0], dout = wv.shape[1];
  if (xv.cols() != din || bv.numel() != dout) {
    throw DimensionError("linear: input " + shape_str(xv.shape) + ", weight " +
                         shape_str(wv.shape) + ", bias " + shape_str(bv.shape));
  }
  const std::size_t rows = xv.rows();
  Shape shape = xv.shape;
  shape.back() = dout;
  Tensor<T> out(shape);
  kernels::gemm_nn(xv.data.data(), wv.data.data(), out.data.data(), rows, din, dout);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < dout; ++j) out.data[i * dout + j] += bv.data[j];
  }
  return x.tape->record(
      std::move(out), {x, w, b}, [x, w, b, rows, din, dout](Tape<T>& tape, const Buffer<T>& g) {
        if (tape.needs_grad(x)) {
          kernels::gemm_nt(g.data(), tape.value(w).data.data(), tape.grad_mut(x.id).data(), rows,
                           dout, din, true);
        }
        if (tape.needs_grad(w)) {
          kernels::gemm_tn(tape.value(x).data.data(), g.data(), tape.grad_mut(w.id).data(), din,
                           rows, dout, true);
        }
        if (tape.needs_grad(b)) {
          auto& gb = tape.grad_mut(b.id);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
          }
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape != bv.shape) {
    throw DimensionError("add: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Buffer<T>& g) {
    if (tape.needs_grad(a)) add_into(tape.grad_mut(a.id), g);
    if (tape.needs_grad(b)) add_into(tape.grad_mut(b.id), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape != bv.shape) {
    throw DimensionError("sub: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] - bv.data[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Buffer<T>& g) {
    if (tape.needs_grad(a)) add_into(tape.grad_mut(a.id), g);
    if (tape.needs_grad(b)) {
      auto& gb = tape.grad_mut(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape != bv.shape) {
    throw DimensionError("mul: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Buffer<T>& g) {
    const auto& ad = tape.value(a).data;
    const auto& bd = tape.value(b).data;
    if (tape.needs_grad(a)) {
      auto& ga = tape.grad_mut(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (tape.needs_grad(b)) {
      auto& gb = tape.grad_mut(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] * factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& tape, const Buffer<T>& g) {
    auto& ga = tape.grad_mut(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().data) acc += v;
  Tensor<T> out({1}, {acc});
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& tape, const Buffer<T>& g) {
    for (auto& v : tape.grad_mut(a.id)) v += g[0];
  });
}

template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  require_same_tape(x, gain, "layernorm");
  require_same_tape(x, bias, "layernorm");
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.cols(), rows = xv.rows();
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw DimensionError("layernorm: affine parameters do not match width " + std::to_string(d));
  }
  Tensor<T> out(xv.shape);
  Buffer<T> xhat(xv.numel());
  Buffer<T> inv_std(rows);
  kernels::layernorm_forward(xv.data.data(), gain.value().data.data(), bias.value().data.data(),
                             rows, d, eps, out.data.data(), xhat.data(), inv_std.data());
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& tape, const Buffer<T>& g) {
        T* dx = tape.needs_grad(x) ? tape.grad_mut(x.id).data() : nullptr;
        T* dg = tape.needs_grad(gain) ? tape.grad_mut(gain.id).data() : nullptr;
        T* db = tape.needs_grad(bias) ? tape.grad_mut(bias.id).data() : nullptr;
        kernels::layernorm_backward(g.data(), xhat.data(), inv_std.data(),
                                    tape.value(gain).data.data(), rows, d, dx, dg, db);
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape);
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = xv.data[i];
    out.data[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return x.tape->record(std::move(out), {x}, [x, inv_sqrt2](Tape<T>& tape, const Buffer<T>& g) {
    const auto& xd = tape.value(x).data;
    auto& gx = tape.grad_mut(x.id);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xd[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> masked_softmax(Var<T> logits, std::span<const std::uint8_t> allow) {
  const Tensor<T>& lv = logits.value();
  const std::size_t s = lv.cols(), rows = lv.rows();
  bool per_row;
  if (allow.size() == s) {
    per_row = false;
  } else if (allow.size() == rows * s) {
    per_row = true;
  } else {
    throw DimensionError("masked_softmax: mask of " + std::to_string(allow.size()) +
                         " entries for logits " + shape_str(lv.shape));
  }
  check_allow_rows<T>(allow, rows, s, per_row, "masked_softmax");
  Tensor<T> out(lv.shape);
  kernels::masked_softmax_rows(lv.data.data(), allow.data(), per_row, rows, s, out.data.data());
  const std::size_t id = logits.tape->size();
  return logits.tape->record(
      std::move(out), {logits}, [logits, rows, s, id](Tape<T>& tape, const Buffer<T>& g) {
        const auto& p = tape.value(Var<T>{&tape, id}).data;
        auto& gl = tape.grad_mut(logits.id);
        for (std::size_t i = 0; i < rows; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < s; ++j) dot += p[i * s + j] * g[i * s + j];
          for (std::size_t j = 0; j < s; ++j) gl[i * s + j] += p[i * s + j] * (g[i * s + j] - dot);
        }
      });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> allow,
                 std::size_t heads) {
  require_same_tape(q, k, "attention");
  require_same_tape(q, v, "attention");
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  require_matrix(qv, "attention");
  require_matrix(kv, "attention");
  const std::size_t t = qv.shape[0], d = qv.shape[1], s = kv.shape[0];
  if (kv.shape[1] != d || vv.shape != kv.shape) {
    throw DimensionError("attention: q " + shape_str(qv.shape) + ", k " + shape_str(kv.shape) +
                         ", v " + shape_str(vv.shape));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(heads) + " heads");
  }
  if (allow.size() != t * s) {
    throw DimensionError("attention: mask of " + std::to_string(allow.size()) +
                         " entries, expected " + std::to_string(t * s));
  }
  check_allow_rows<T>(allow, t, s, true, "attention");
  Tensor<T> out({t, d});
  Buffer<T> probs(heads * t * s);
  kernels::attention_forward(qv.data.data(), kv.data.data(), vv.data.data(), allow.data(), t, s,
                             d, heads, probs.data(), out.data.data());
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, t, s, d, heads, probs = std::move(probs)](Tape<T>& tape, const Buffer<T>& g) {
        Buffer<T> scratch(heads * t * s);
        Buffer<T> tmp_q, tmp_k, tmp_v;
        auto target = [&](Var<T> var, Buffer<T>& tmp, std::size_t n) -> T* {
          if (tape.needs_grad(var)) return tape.grad_mut(var.id).data();
          tmp.assign(n, T(0));
          return tmp.data();
        };
        T* dq = target(q, tmp_q, t * d);
        T* dk = target(k, tmp_k, s * d);
        T* dv = target(v, tmp_v, s * d);
        kernels::attention_backward(tape.value(q).data.data(), tape.value(k).data.data(),
                                    tape.value(v).data.data(), probs.data(), g.data(), t, s, d,
                                    heads, scratch.data(), dq, dk, dv);
      });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> ids) {
  const Tensor<T>& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t rows = tv.shape[0], cols = tv.shape[1];
  if (ids.empty()) throw InputError("gather_rows: no rows requested");
  for (std::size_t id : ids) {
    if (id >= rows) {
      throw InputError("gather_rows: index " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
  }
  Tensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data.begin() + ids[i] * cols, cols, out.data.begin() + i * cols);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape->record(
      std::move(out), {table}, [table, cols, idx = std::move(idx)](Tape<T>& tape, const Buffer<T>& g) {
        auto& gt = tape.grad_mut(table.id);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t c = 0; c < cols; ++c) gt[idx[i] * cols + c] += g[i * cols + c];
        }
      });
}

template <typename T>
Var<T> concat_rows(Var<T> top, Var<T> bottom) {
  require_same_tape(top, bottom, "concat_rows");
  const Tensor<T>& a = top.value();
  const Tensor<T>& b = bottom.value();
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  if (a.shape[1] != b.shape[1]) {
    throw DimensionError("concat_rows: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  Tensor<T> out({a.shape[0] + b.shape[0], a.shape[1]});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
  const std::size_t split = a.numel();
  return top.tape->record(std::move(out), {top, bottom},
                          [top, bottom, split](Tape<T>& tape, const Buffer<T>& g) {
                            if (tape.needs_grad(top)) {
                              auto& gt = tape.grad_mut(top.id);
                              for (std::size_t i = 0; i < split; ++i) gt[i] += g[i];
                            }
                            if (tape.needs_grad(bottom)) {
                              auto& gb = tape.grad_mut(bottom.id);
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                            }
                          });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = x.value();
  require_matrix(xv, "slice_rows");
  const std::size_t cols = xv.shape[1];
  if (count == 0 || begin + count > xv.shape[0]) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(xv.shape));
  }
  Tensor<T> out({count, cols});
  std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>(begin * cols), count * cols,
              out.data.begin());
  return x.tape->record(std::move(out), {x}, [x, begin, cols](Tape<T>& tape, const Buffer<T>& g) {
    auto& gx = tape.grad_mut(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
  });
}

#define MICE_INSTANTIATE_OPS(T)                                                        \
  template class Tape<T>;                                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                              \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> sub(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> layernorm(Var<T>, Var<T>, Var<T>, T);                                \
  template Var<T> gelu(Var<T>);                                                        \
  template Var<T> masked_softmax(Var<T>, std::span<const std::uint8_t>);               \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>,     \
                            std::size_t);                                              \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                   \
  template Var<T> concat_rows(Var<T>, Var<T>);                                         \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);

MICE_INSTANTIATE_OPS(float)
MICE_INSTANTIATE_OPS(double)

}  // namespace mice
