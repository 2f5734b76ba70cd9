#pragma once

#include <utility>
#include <vector>

#include "rat/tensor.hpp"

namespace rat {

// Boolean keep-mask for softmax. Broadcasts over leading axes: its shape must
// be a trailing suffix of the score shape. Empty mask = nothing masked.
struct Mask {
  Shape shape;
  std::vector<uint8_t> keep;  // 1 = participates, 0 = masked out

  bool empty() const { return keep.empty(); }
  static Mask none() { return {}; }
  static Mask full(Shape s, uint8_t value = 1);
};

// a: [..., m, k] x b: [..., k, n] -> [..., m, n]. b may be 2-d (shared across
// all leading batch axes of a) or carry batch axes identical to a's.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// Max-subtracted softmax over the last axis restricted to unmasked entries,
// plus the log-sum-exp of those entries. A fully-masked row yields all-zero
// probs and lse = -inf; this is the legitimate "no previous chunk" case.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> softmax_lse(const TensorT<T>& scores,
                                              const Mask& mask);

// First-order linear recurrence h_t = a_t*h_{t-1} + b_t over the second-to-
// last axis, h0 optional (zeros when undefined). The forward pass runs a
// logarithmic-depth inclusive combine with the associative operator
// (a2,b2)o(a1,b1) = (a1*a2, a2*b1+b2); the backward pass is an exact
// reverse-time scan.
template <typename T>
TensorT<T> linear_scan(const TensorT<T>& a, const TensorT<T>& b,
                       const TensorT<T>& h0 = {});

// Elementwise / structural suite. All differentiable ops participate in the
// tape when any input is tracked.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
// y = mul_c * x + add_c, elementwise with scalars.
template <typename T>
TensorT<T> affine(const TensorT<T>& x, T mul_c, T add_c);
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T>
TensorT<T> exp(const TensorT<T>& x);
template <typename T>
TensorT<T> gelu(const TensorT<T>& x);
// RMS-normalizes the last axis and scales by gain ([D]).
template <typename T>
TensorT<T> rmsnorm(const TensorT<T>& x, const TensorT<T>& gain,
                   T eps = T(1e-5));

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape);
template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& perm);
template <typename T>
TensorT<T> transpose(const TensorT<T>& x, int axis_a, int axis_b);
template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int64_t start, int64_t len);
template <typename T>
TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b, int axis);
template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x, int axis);
template <typename T>
TensorT<T> sum_all(const TensorT<T>& x);
// Repeats the last axis `times` times: [..., d] -> [..., times*d] with
// out[..., i*d + j] = x[..., j]. Used for head-shared projections.
template <typename T>
TensorT<T> tile_last(const TensorT<T>& x, int64_t times);

// table: [V, D]; out: [ids.shape..., D]. Ids out of range raise DataError
// naming the offending position.
template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const Tokens& ids);

// Mean negative log-likelihood of `targets` under softmax(logits) over the
// positions where mask != 0 (empty mask = all positions). Scalar output.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const Tokens& targets,
                         const std::vector<uint8_t>& mask = {});

#define RAT_EXTERN_OPS(T)                                                      \
  extern template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);     \
  extern template std::pair<TensorT<T>, TensorT<T>> softmax_lse(               \
      const TensorT<T>&, const Mask&);                                         \
  extern template TensorT<T> linear_scan(const TensorT<T>&, const TensorT<T>&, \
                                         const TensorT<T>&);                   \
  extern template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);        \
  extern template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);        \
  extern template TensorT<T> affine(const TensorT<T>&, T, T);                  \
  extern template TensorT<T> sigmoid(const TensorT<T>&);                       \
  extern template TensorT<T> exp(const TensorT<T>&);                           \
  extern template TensorT<T> gelu(const TensorT<T>&);                          \
  extern template TensorT<T> rmsnorm(const TensorT<T>&, const TensorT<T>&, T); \
  extern template TensorT<T> reshape(const TensorT<T>&, Shape);                \
  extern template TensorT<T> permute(const TensorT<T>&,                        \
                                     const std::vector<int>&);                 \
  extern template TensorT<T> transpose(const TensorT<T>&, int, int);           \
  extern template TensorT<T> slice(const TensorT<T>&, int, int64_t, int64_t);  \
  extern template TensorT<T> concat(const TensorT<T>&, const TensorT<T>&,      \
                                    int);                                      \
  extern template TensorT<T> reduce_sum(const TensorT<T>&, int);               \
  extern template TensorT<T> sum_all(const TensorT<T>&);                       \
  extern template TensorT<T> tile_last(const TensorT<T>&, int64_t);            \
  extern template TensorT<T> embedding_lookup(const TensorT<T>&,               \
                                              const Tokens&);                  \
  extern template TensorT<T> cross_entropy(const TensorT<T>&, const Tokens&,   \
                                           const std::vector<uint8_t>&);

RAT_EXTERN_OPS(float)
RAT_EXTERN_OPS(double)
#undef RAT_EXTERN_OPS

}  // namespace rat
