#pragma once

#include <optional>
#include <vector>

#include "rat/ops.hpp"
#include "rat/rng.hpp"
#include "rat/rope.hpp"
#include "rat/tensor.hpp"

namespace rat {

template <typename T>
struct AttnParamsT {
  int64_t heads = 1;
  TensorT<T> w_q, w_k, w_v, w_o;  // [D, D] each

  static AttnParamsT init(int64_t dim, int64_t heads, double std_dev, Rng& rng);
  int64_t dim() const { return w_q.dim(0); }
  int64_t head_dim() const { return dim() / heads; }
};

// Causal multi-head attention; window = W restricts each token to the last W
// positions inclusive of itself, window = nullopt is full causal. rope.mode
// must be token_index or none. The untracked path streams query blocks so
// long sequences never materialize the full [T, T] score matrix.
template <typename T>
TensorT<T> attn_forward(const TensorT<T>& x, const AttnParamsT<T>& p,
                        std::optional<int64_t> window, const RopeSpec& rope);

// Sequential decode state: rotated keys and raw values, newest last. A
// windowed cache holds at most `window` entries.
template <typename T>
struct AttnStepStateT {
  std::vector<T> keys, values;  // [n * D]
  int64_t tokens_seen = 0;
};

template <typename T>
void attn_step(const T* x_t, const AttnParamsT<T>& p,
               std::optional<int64_t> window, const RopeSpec& rope,
               AttnStepStateT<T>& state, T* y_out);

using AttnParams = AttnParamsT<float>;

#define RAT_EXTERN_ATTN(T)                                                    \
  extern template struct AttnParamsT<T>;                                      \
  extern template TensorT<T> attn_forward(const TensorT<T>&,                  \
                                          const AttnParamsT<T>&,              \
                                          std::optional<int64_t>,             \
                                          const RopeSpec&);                   \
  extern template void attn_step(const T*, const AttnParamsT<T>&,             \
                                 std::optional<int64_t>, const RopeSpec&,     \
                                 AttnStepStateT<T>&, T*);

RAT_EXTERN_ATTN(float)
RAT_EXTERN_ATTN(double)
#undef RAT_EXTERN_ATTN

}  // namespace rat
