#include "rat/attention.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace rat {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int64_t kQueryBlock = 128;

int64_t window_start(int64_t t, std::optional<int64_t> window) {
  return window.has_value() ? std::max<int64_t>(0, t - *window + 1) : 0;
}

}  // namespace

template <typename T>
AttnParamsT<T> AttnParamsT<T>::init(int64_t dim, int64_t heads, double std_dev,
                                    Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention: heads " + std::to_string(heads) +
                      " must divide dim " + std::to_string(dim));
  }
  AttnParamsT p;
  p.heads = heads;
  p.w_q = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_k = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_v = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_o = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  return p;
}

template <typename T>
TensorT<T> attn_forward(const TensorT<T>& x, const AttnParamsT<T>& p,
                        std::optional<int64_t> window, const RopeSpec& rope) {
  if (x.ndim() != 3) {
    throw ShapeError("attn_forward: x must be [B, T, D], got " +
                     shape_str(x.shape));
  }
  if (window.has_value() && *window <= 0) {
    throw ConfigError("attention: window must be positive, got " +
                      std::to_string(*window));
  }
  if (rope.mode == RopeMode::chunk_index) {
    throw ConfigError("attention: rope mode must be token_index or none");
  }
  const int64_t B = x.dim(0), T_len = x.dim(1), D = x.dim(2);
  const int64_t H = p.heads, hd = D / H;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

  TensorT<T> q = reshape(
      permute(reshape(matmul(x, p.w_q), {B, T_len, H, hd}), {0, 2, 1, 3}),
      {B, H, T_len, hd});
  TensorT<T> k = reshape(
      permute(reshape(matmul(x, p.w_k), {B, T_len, H, hd}), {0, 2, 1, 3}),
      {B, H, T_len, hd});
  TensorT<T> v = reshape(
      permute(reshape(matmul(x, p.w_v), {B, T_len, H, hd}), {0, 2, 1, 3}),
      {B, H, T_len, hd});

  if (rope.mode == RopeMode::token_index) {
    std::vector<int64_t> idx(T_len);
    for (int64_t t = 0; t < T_len; ++t) idx[t] = t;
    q = rope_apply(q, idx, rope.base);
    k = rope_apply(k, idx, rope.base);
  }

  TensorT<T> ctx;  // [B, H, T, hd]
  if (q.tracked()) {
    Mask mask;
    mask.shape = {T_len, T_len};
    mask.keep.assign(static_cast<size_t>(T_len * T_len), 0);
    for (int64_t t = 0; t < T_len; ++t) {
      for (int64_t s = window_start(t, window); s <= t; ++s) {
        mask.keep[t * T_len + s] = 1;
      }
    }
    TensorT<T> scores =
        affine(matmul(q, transpose(k, -1, -2)), inv_sqrt_hd, T(0));
    auto [probs, lse] = softmax_lse(scores, mask);
    (void)lse;
    ctx = matmul(probs, v);
  } else {
    // Inference path: stream query blocks so memory stays O(block * T).
    ctx = TensorT<T>::zeros({B, H, T_len, hd});
    const int64_t planes = B * H;
    parallel_for(planes, [&](int64_t lo, int64_t hi) {
      std::vector<T> srow;
      for (int64_t pl = lo; pl < hi; ++pl) {
        const T* qp = q.ptr() + pl * T_len * hd;
        const T* kp = k.ptr() + pl * T_len * hd;
        const T* vp = v.ptr() + pl * T_len * hd;
        T* op = ctx.ptr() + pl * T_len * hd;
        for (int64_t q0 = 0; q0 < T_len; q0 += kQueryBlock) {
          const int64_t qn = std::min(kQueryBlock, T_len - q0);
          const int64_t kv_n = q0 + qn;  // keys visible to the last row
          srow.resize(static_cast<size_t>(qn * kv_n));
          Eigen::Map<EMat<T>> S(srow.data(), qn, kv_n);
          Eigen::Map<const EMat<T>> Q(qp + q0 * hd, qn, hd);
          Eigen::Map<const EMat<T>> K(kp, kv_n, hd);
          S.noalias() = Q * K.transpose();
          for (int64_t r = 0; r < qn; ++r) {
            const int64_t t = q0 + r;
            const int64_t s_lo = window_start(t, window);
            T* row = srow.data() + r * kv_n;
            T mx = -std::numeric_limits<T>::infinity();
            for (int64_t s = s_lo; s <= t; ++s) {
              mx = std::max(mx, row[s] * inv_sqrt_hd);
            }
            T zsum = 0;
            for (int64_t s = s_lo; s <= t; ++s) {
              row[s] = std::exp(row[s] * inv_sqrt_hd - mx);
              zsum += row[s];
            }
            const T inv = T(1) / zsum;
            T* dst = op + t * hd;
            std::fill(dst, dst + hd, T(0));
            for (int64_t s = s_lo; s <= t; ++s) {
              const T w = row[s] * inv;
              const T* vrow = vp + s * hd;
              for (int64_t j = 0; j < hd; ++j) dst[j] += w * vrow[j];
            }
          }
        }
      }
    });
  }

  TensorT<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, T_len, D});
  return matmul(merged, p.w_o);
}

template <typename T>
void attn_step(const T* x_t, const AttnParamsT<T>& p,
               std::optional<int64_t> window, const RopeSpec& rope,
               AttnStepStateT<T>& state, T* y_out) {
  const int64_t D = p.dim(), H = p.heads, hd = p.head_dim();
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
  const int64_t t = state.tokens_seen;

  std::vector<T> q(static_cast<size_t>(D)), k(static_cast<size_t>(D)),
      v(static_cast<size_t>(D));
  for (int64_t j = 0; j < D; ++j) {
    T aq = 0, ak = 0, av = 0;
    for (int64_t i = 0; i < D; ++i) {
      const T xi = x_t[i];
      aq += xi * p.w_q.ptr()[i * D + j];
      ak += xi * p.w_k.ptr()[i * D + j];
      av += xi * p.w_v.ptr()[i * D + j];
    }
    q[j] = aq;
    k[j] = ak;
    v[j] = av;
  }
  if (rope.mode == RopeMode::token_index) {
    rope_rotate_inplace(q.data(), H, hd, t, rope.base);
    rope_rotate_inplace(k.data(), H, hd, t, rope.base);
  }
  state.keys.insert(state.keys.end(), k.begin(), k.end());
  state.values.insert(state.values.end(), v.begin(), v.end());
  state.tokens_seen += 1;
  if (window.has_value()) {
    const int64_t max_n = *window;
    const int64_t n = static_cast<int64_t>(state.keys.size()) / D;
    if (n > max_n) {
      state.keys.erase(state.keys.begin(), state.keys.begin() + (n - max_n) * D);
      state.values.erase(state.values.begin(),
                         state.values.begin() + (n - max_n) * D);
    }
  }

  const int64_t n = static_cast<int64_t>(state.keys.size()) / D;
  std::vector<T> mixed(static_cast<size_t>(D), T(0));
  std::vector<T> scores(static_cast<size_t>(n));
  for (int64_t h = 0; h < H; ++h) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < n; ++i) {
      T acc = 0;
      const T* kr = state.keys.data() + i * D + h * hd;
      for (int64_t j = 0; j < hd; ++j) acc += q[h * hd + j] * kr[j];
      scores[i] = acc * inv_sqrt_hd;
      mx = std::max(mx, scores[i]);
    }
    T zsum = 0;
    for (int64_t i = 0; i < n; ++i) {
      const T w = std::exp(scores[i] - mx);
      zsum += w;
      const T* vr = state.values.data() + i * D + h * hd;
      for (int64_t j = 0; j < hd; ++j) mixed[h * hd + j] += w * vr[j];
    }
    const T inv = T(1) / zsum;
    for (int64_t j = 0; j < hd; ++j) mixed[h * hd + j] *= inv;
  }
  for (int64_t j = 0; j < D; ++j) {
    T acc = 0;
    for (int64_t i = 0; i < D; ++i) acc += mixed[i] * p.w_o.ptr()[i * D + j];
    y_out[j] = acc;
  }
}

#define RAT_INSTANTIATE_ATTN(T)                                               \
  template struct AttnParamsT<T>;                                             \
  template TensorT<T> attn_forward(const TensorT<T>&, const AttnParamsT<T>&,  \
                                   std::optional<int64_t>, const RopeSpec&);  \
  template void attn_step(const T*, const AttnParamsT<T>&,                    \
                          std::optional<int64_t>, const RopeSpec&,            \
                          AttnStepStateT<T>&, T*);

RAT_INSTANTIATE_ATTN(float)
RAT_INSTANTIATE_ATTN(double)
#undef RAT_INSTANTIATE_ATTN

}  // namespace rat
