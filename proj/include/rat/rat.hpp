#pragma once

#include <string>
#include <vector>

#include "rat/ops.hpp"
#include "rat/rng.hpp"
#include "rat/rope.hpp"
#include "rat/tensor.hpp"

namespace rat {

// Two ways to stay inside the 4*D^2 attention/RNN parameter budget:
// share one head-dim-wide q/k projection across heads (default), or keep
// full q/k and make the gate projections low-rank.
enum class RatAllocation { shared_qk, lowrank_gates };

std::string rat_allocation_name(RatAllocation a);
RatAllocation rat_allocation_from_name(const std::string& name);

template <typename T>
struct RatParamsT {
  RatAllocation alloc = RatAllocation::shared_qk;
  int64_t heads = 1;
  int64_t head_dim = 0;

  TensorT<T> w_q, w_k;  // shared_qk: [D, head_dim]; lowrank_gates: [D, D]
  TensorT<T> w_v, w_o;  // [D, D]
  TensorT<T> w_g, w_z;  // full [D, D] gates (shared_qk allocation)
  // low-rank gate factors (lowrank_gates allocation): [D, r] and [r, D]
  TensorT<T> w_g_in, w_g_out, w_z_in, w_z_out;

  static RatParamsT init(int64_t dim, int64_t heads, double std_dev, Rng& rng,
                         RatAllocation alloc = RatAllocation::shared_qk,
                         int64_t gate_rank = 0);  // 0 = head_dim
  int64_t dim() const { return w_v.dim(0); }
};

template <typename T>
struct RatProjectionsT {
  TensorT<T> q, k;  // [B, T, D]; raw head-dim projection replicated per head
  TensorT<T> v, g, z;  // [B, T, D]
};

// Projections of Eq-style inputs: q/k share one projection across heads
// (replicated to width D) under shared_qk; gates are per-dimension sigmoids.
template <typename T>
RatProjectionsT<T> rat_project(const TensorT<T>& x, const RatParamsT<T>& p,
                               const TensorT<T>* force_g = nullptr);

// Optional view into intermediate scan state, used by the prefill path to
// seed a generation cache. Detached from any tape.
template <typename T>
struct RatScanStateT {
  TensorT<T> ktilde;  // [B, C, L, D]
  TensorT<T> vtilde;  // [B, C, L, D]
};

// The chunked recurrence + inter-chunk attention mixer. T must be divisible
// by the chunk length. rope.mode must be chunk_index or none.
template <typename T>
TensorT<T> rat_forward_parallel(const TensorT<T>& x, const RatParamsT<T>& p,
                                int64_t chunk_len, const RopeSpec& rope,
                                const TensorT<T>* force_g = nullptr,
                                RatScanStateT<T>* scan_out = nullptr);

// Combines a normalized partial softmax aggregate (o_prev, lse_prev) with one
// extra score/value pair by rescaling through the shared denominator.
// lse_prev = -inf means "no previous entries" and returns v_self exactly.
// o_prev/v_self: [..., d]; lse_prev/s_self: [...].
template <typename T>
TensorT<T> merge_online_softmax(const TensorT<T>& o_prev,
                                const TensorT<T>& lse_prev,
                                const TensorT<T>& s_self,
                                const TensorT<T>& v_self);

// ---------------------------------------------------------------------------
// Plain-loop reference and sequential step. The reference transcribes the
// layer equation directly: per token, build the explicit key/value lists
// (anchors of earlier chunks plus the running self pair) and take one full
// softmax. Test oracle; shares no kernels with the parallel path.

template <typename T>
struct RatNaivePartsT {
  int64_t B = 0, T_len = 0, D = 0;
  std::vector<T> q, g, z, v;        // [B*T*D], q already head-replicated
  std::vector<T> ktilde, vtilde;    // [B*T*D]
};

template <typename T>
RatNaivePartsT<T> rat_naive_parts(const TensorT<T>& x, const RatParamsT<T>& p,
                                  int64_t chunk_len,
                                  const TensorT<T>* force_g = nullptr);

template <typename T>
TensorT<T> rat_naive_attend(const RatNaivePartsT<T>& parts,
                            const RatParamsT<T>& p, int64_t chunk_len,
                            const RopeSpec& rope);

template <typename T>
TensorT<T> rat_reference_naive(const TensorT<T>& x, const RatParamsT<T>& p,
                               int64_t chunk_len, const RopeSpec& rope,
                               const TensorT<T>* force_g = nullptr);

// Sequential per-token state (Eq. recurrence + anchor list), shared by the
// decode path and the partial-trailing-chunk replay in prefill. Anchor keys
// are stored pre-rotated by their chunk index.
template <typename T>
struct RatStepStateT {
  std::vector<T> anchors_k, anchors_v;  // [chunks_done * D]
  std::vector<T> cur_ktilde, cur_vtilde;  // [D]
  int64_t l_in_chunk = 0;
  int64_t chunk_index = 0;
  int64_t chunks_done() const {
    return static_cast<int64_t>(anchors_k.size()) /
           std::max<int64_t>(int64_t(cur_ktilde.size()), 1);
  }
};

// One token through the mixer: gated state update, attention over anchors
// merged with the self term, output gate and projection. Appends the chunk
// anchor after emitting the output when the chunk completes.
template <typename T>
void rat_step(const T* x_t, const RatParamsT<T>& p, int64_t chunk_len,
              const RopeSpec& rope, RatStepStateT<T>& state, T* y_out);

using RatParams = RatParamsT<float>;

#define RAT_EXTERN_RAT(T)                                                     \
  extern template struct RatParamsT<T>;                                       \
  extern template RatProjectionsT<T> rat_project(                             \
      const TensorT<T>&, const RatParamsT<T>&, const TensorT<T>*);            \
  extern template TensorT<T> rat_forward_parallel(                            \
      const TensorT<T>&, const RatParamsT<T>&, int64_t, const RopeSpec&,      \
      const TensorT<T>*, RatScanStateT<T>*);                                  \
  extern template TensorT<T> merge_online_softmax(                            \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                \
      const TensorT<T>&);                                                     \
  extern template RatNaivePartsT<T> rat_naive_parts(                          \
      const TensorT<T>&, const RatParamsT<T>&, int64_t, const TensorT<T>*);   \
  extern template TensorT<T> rat_naive_attend(                                \
      const RatNaivePartsT<T>&, const RatParamsT<T>&, int64_t,                \
      const RopeSpec&);                                                       \
  extern template TensorT<T> rat_reference_naive(                             \
      const TensorT<T>&, const RatParamsT<T>&, int64_t, const RopeSpec&,      \
      const TensorT<T>*);                                                     \
  extern template void rat_step(const T*, const RatParamsT<T>&, int64_t,      \
                                const RopeSpec&, RatStepStateT<T>&, T*);

RAT_EXTERN_RAT(float)
RAT_EXTERN_RAT(double)
#undef RAT_EXTERN_RAT

}  // namespace rat
