#pragma once

#include "rat/ops.hpp"
#include "rat/rng.hpp"
#include "rat/tensor.hpp"

namespace rat {

// Gated linear recurrence mixer: per-dimension forget/output gates over a
// value stream. Parameter budget 4*D^2, matching an attention mixer.
template <typename T>
struct RnnParamsT {
  TensorT<T> w_v;  // [D, D]
  TensorT<T> w_g;  // [D, D]
  TensorT<T> w_z;  // [D, D]
  TensorT<T> w_o;  // [D, D]

  static RnnParamsT init(int64_t dim, double std_dev, Rng& rng);
};

template <typename T>
struct RnnOutT {
  TensorT<T> y;       // [B, T, D]
  TensorT<T> h_last;  // [B, D], final gated state for stateful continuation
};

// x: [B, T, D]. h0 defaults to zeros when undefined. force_g, when given,
// replaces the computed forget gate (test hook for gate-limit cases).
template <typename T>
RnnOutT<T> rnn_forward(const TensorT<T>& x, const RnnParamsT<T>& p,
                       const TensorT<T>& h0 = {},
                       const TensorT<T>* force_g = nullptr);

using RnnParams = RnnParamsT<float>;

extern template struct RnnParamsT<float>;
extern template struct RnnParamsT<double>;
extern template RnnOutT<float> rnn_forward(const TensorT<float>&,
                                           const RnnParamsT<float>&,
                                           const TensorT<float>&,
                                           const TensorT<float>*);
extern template RnnOutT<double> rnn_forward(const TensorT<double>&,
                                            const RnnParamsT<double>&,
                                            const TensorT<double>&,
                                            const TensorT<double>*);

}  // namespace rat
