#pragma once

#include <string>
#include <vector>

#include "rat/tensor.hpp"

namespace rat {

enum class RopeMode { token_index, chunk_index, none };

std::string rope_mode_name(RopeMode mode);
RopeMode rope_mode_from_name(const std::string& name);

struct RopeSpec {
  RopeMode mode = RopeMode::token_index;
  double base = 10000.0;
  int64_t head_dim = 0;
};

// Validates head_dim even and base > 1; throws ConfigError otherwise.
RopeSpec make_rope_spec(RopeMode mode, int64_t head_dim, double base = 10000.0);

// Rotates dimension pairs (2i, 2i+1) of each row by angle
// index * base^(-2i/head_dim). x: [..., N, head_dim] with one index per
// position along the N axis. Norm-preserving; differentiable (the backward
// pass applies the inverse rotation).
template <typename T>
TensorT<T> rope_apply(const TensorT<T>& x, const std::vector<int64_t>& indices,
                      double base);

// Rotates every row of x ([..., head_dim]) by the same position index.
template <typename T>
TensorT<T> rope_rotate(const TensorT<T>& x, int64_t index,
                       const RopeSpec& spec);

extern template TensorT<float> rope_apply(const TensorT<float>&,
                                          const std::vector<int64_t>&, double);
extern template TensorT<double> rope_apply(const TensorT<double>&,
                                           const std::vector<int64_t>&, double);
extern template TensorT<float> rope_rotate(const TensorT<float>&, int64_t,
                                           const RopeSpec&);
extern template TensorT<double> rope_rotate(const TensorT<double>&, int64_t,
                                            const RopeSpec&);

// Raw-buffer version for the sequential decode path: rotates `rows` rows of
// `head_dim` floats in place by `index`.
template <typename T>
void rope_rotate_inplace(T* data, int64_t rows, int64_t head_dim, int64_t index,
                         double base);

extern template void rope_rotate_inplace(float*, int64_t, int64_t, int64_t,
                                         double);
extern template void rope_rotate_inplace(double*, int64_t, int64_t, int64_t,
                                         double);

}  // namespace rat
