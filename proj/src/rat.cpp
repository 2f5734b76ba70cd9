#include "rat/rat.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace rat {

std::string rat_allocation_name(RatAllocation a) {
  return a == RatAllocation::shared_qk ? "shared_qk" : "lowrank_gates";
}

RatAllocation rat_allocation_from_name(const std::string& name) {
  if (name == "shared_qk") return RatAllocation::shared_qk;
  if (name == "lowrank_gates") return RatAllocation::lowrank_gates;
  throw ConfigError("unknown rat allocation '" + name +
                    "' (expected shared_qk or lowrank_gates)");
}

template <typename T>
RatParamsT<T> RatParamsT<T>::init(int64_t dim, int64_t heads, double std_dev,
                                  Rng& rng, RatAllocation alloc,
                                  int64_t gate_rank) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("rat: heads " + std::to_string(heads) +
                      " must divide dim " + std::to_string(dim));
  }
  RatParamsT p;
  p.alloc = alloc;
  p.heads = heads;
  p.head_dim = dim / heads;
  const int64_t r = gate_rank > 0 ? gate_rank : p.head_dim;
  if (alloc == RatAllocation::shared_qk) {
    p.w_q = rng.gaussian_tensor<T>({dim, p.head_dim}, std_dev);
    p.w_k = rng.gaussian_tensor<T>({dim, p.head_dim}, std_dev);
    p.w_g = rng.gaussian_tensor<T>({dim, dim}, std_dev);
    p.w_z = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  } else {
    p.w_q = rng.gaussian_tensor<T>({dim, dim}, std_dev);
    p.w_k = rng.gaussian_tensor<T>({dim, dim}, std_dev);
    p.w_g_in = rng.gaussian_tensor<T>({dim, r}, std_dev);
    p.w_g_out = rng.gaussian_tensor<T>({r, dim}, std_dev);
    p.w_z_in = rng.gaussian_tensor<T>({dim, r}, std_dev);
    p.w_z_out = rng.gaussian_tensor<T>({r, dim}, std_dev);
  }
  p.w_v = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_o = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  return p;
}

template <typename T>
RatProjectionsT<T> rat_project(const TensorT<T>& x, const RatParamsT<T>& p,
                               const TensorT<T>* force_g) {
  RatProjectionsT<T> out;
  if (p.alloc == RatAllocation::shared_qk) {
    out.q = tile_last(matmul(x, p.w_q), p.heads);
    out.k = tile_last(matmul(x, p.w_k), p.heads);
    out.g = force_g != nullptr ? *force_g : sigmoid(matmul(x, p.w_g));
    out.z = sigmoid(matmul(x, p.w_z));
  } else {
    out.q = matmul(x, p.w_q);
    out.k = matmul(x, p.w_k);
    out.g = force_g != nullptr
                ? *force_g
                : sigmoid(matmul(matmul(x, p.w_g_in), p.w_g_out));
    out.z = sigmoid(matmul(matmul(x, p.w_z_in), p.w_z_out));
  }
  out.v = matmul(x, p.w_v);
  return out;
}

template <typename T>
TensorT<T> merge_online_softmax(const TensorT<T>& o_prev,
                                const TensorT<T>& lse_prev,
                                const TensorT<T>& s_self,
                                const TensorT<T>& v_self) {
  check_same_shape("merge_online_softmax o/v", o_prev.shape, v_self.shape);
  check_same_shape("merge_online_softmax lse/s", lse_prev.shape, s_self.shape);
  if (o_prev.ndim() < 1 ||
      Shape(o_prev.shape.begin(), o_prev.shape.end() - 1) != lse_prev.shape) {
    throw ShapeError("merge_online_softmax: o_prev " + shape_str(o_prev.shape) +
                     " must be lse shape " + shape_str(lse_prev.shape) +
                     " plus one value axis");
  }
  const int64_t d = o_prev.dim(-1);
  const int64_t rows = lse_prev.size();

  TapeT<T>* tape = tape_of<T>({&o_prev, &lse_prev, &s_self, &v_self});
  TensorT<T> out = TensorT<T>::zeros(o_prev.shape);
  if (tape != nullptr) {
    out.tape = tape;
    out.node = tape->alloc_node(out.shape);
  }
  // alpha = weight on the previous-chunk aggregate, beta on the self term.
  auto alpha = std::make_shared<std::vector<T>>(rows);
  auto beta = std::make_shared<std::vector<T>>(rows);
  const T* op = o_prev.ptr();
  const T* lp = lse_prev.ptr();
  const T* sp = s_self.ptr();
  const T* vp = v_self.ptr();
  T* yp = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T m = std::max(lp[r], sp[r]);
    const T w1 = std::exp(lp[r] - m);  // exp(-inf) == 0 handles empty prev
    const T w2 = std::exp(sp[r] - m);
    const T inv = T(1) / (w1 + w2);
    const T a = w1 * inv, b = w2 * inv;
    (*alpha)[r] = a;
    (*beta)[r] = b;
    for (int64_t j = 0; j < d; ++j) {
      yp[r * d + j] = a * op[r * d + j] + b * vp[r * d + j];
    }
  }
  if (tape != nullptr) {
    auto od = o_prev.data;
    auto vd = v_self.data;
    auto yd = out.data;
    const int on = o_prev.node_on(tape), ln = lse_prev.node_on(tape);
    const int sn = s_self.node_on(tape), vn = v_self.node_on(tape);
    const int yn = out.node;
    tape->push_op([=, t = tape] {
      const auto& gy = t->grad_view(yn);
      if (gy.empty()) return;
      std::vector<T>* go = on >= 0 ? &t->grad_mut(on) : nullptr;
      std::vector<T>* gl = ln >= 0 ? &t->grad_mut(ln) : nullptr;
      std::vector<T>* gs = sn >= 0 ? &t->grad_mut(sn) : nullptr;
      std::vector<T>* gv = vn >= 0 ? &t->grad_mut(vn) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T a = (*alpha)[r], b = (*beta)[r];
        T dot_o = 0, dot_v = 0;
        for (int64_t j = 0; j < d; ++j) {
          const T g = gy[r * d + j];
          if (go != nullptr) (*go)[r * d + j] += a * g;
          if (gv != nullptr) (*gv)[r * d + j] += b * g;
          dot_o += g * ((*od)[r * d + j] - (*yd)[r * d + j]);
          dot_v += g * ((*vd)[r * d + j] - (*yd)[r * d + j]);
        }
        if (gl != nullptr) (*gl)[r] += a * dot_o;
        if (gs != nullptr) (*gs)[r] += b * dot_v;
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> rat_forward_parallel(const TensorT<T>& x, const RatParamsT<T>& p,
                                int64_t chunk_len, const RopeSpec& rope,
                                const TensorT<T>* force_g,
                                RatScanStateT<T>* scan_out) {
  if (x.ndim() != 3) {
    throw ShapeError("rat_forward_parallel: x must be [B, T, D], got " +
                     shape_str(x.shape));
  }
  const int64_t B = x.dim(0), T_len = x.dim(1), D = x.dim(2);
  const int64_t H = p.heads, hd = p.head_dim;
  if (chunk_len < 1) {
    throw ConfigError("rat: chunk_len must be >= 1, got " +
                      std::to_string(chunk_len));
  }
  if (T_len % chunk_len != 0) {
    throw ConfigError(
        "rat: sequence length " + std::to_string(T_len) +
        " is not divisible by chunk_len " + std::to_string(chunk_len) +
        "; pad the batch to a multiple of the chunk length or resize it");
  }
  if (rope.mode == RopeMode::token_index) {
    throw ConfigError("rat: rope mode must be chunk_index or none");
  }
  const int64_t C = T_len / chunk_len, L = chunk_len;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

  RatProjectionsT<T> proj = rat_project(x, p, force_g);

  // Per-chunk gated recurrence over keys and values, zero initial state.
  TensorT<T> g_ch = reshape(proj.g, {B, C, L, D});
  TensorT<T> in_mix = affine(g_ch, T(-1), T(1));  // 1 - g
  TensorT<T> ktilde =
      linear_scan(g_ch, mul(in_mix, reshape(proj.k, {B, C, L, D})));
  TensorT<T> vtilde =
      linear_scan(g_ch, mul(in_mix, reshape(proj.v, {B, C, L, D})));
  if (scan_out != nullptr) {
    scan_out->ktilde = ktilde.detached();
    scan_out->vtilde = vtilde.detached();
  }

  // Chunk-final states become the anchors later chunks attend to.
  TensorT<T> anchors_k =
      permute(reshape(slice(ktilde, 2, L - 1, 1), {B, C, H, hd}), {0, 2, 1, 3});
  TensorT<T> anchors_v =
      permute(reshape(slice(vtilde, 2, L - 1, 1), {B, C, H, hd}), {0, 2, 1, 3});

  // Heads read their D-slice of the replicated q and of the gated k/v.
  TensorT<T> q_heads = reshape(
      permute(reshape(proj.q, {B, C, L, H, hd}), {0, 3, 1, 2, 4}),
      {B, H, C * L, hd});
  TensorT<T> kt_heads = reshape(
      permute(reshape(ktilde, {B, C, L, H, hd}), {0, 3, 1, 2, 4}),
      {B, H, C * L, hd});
  TensorT<T> vt_heads = reshape(
      permute(reshape(vtilde, {B, C, L, H, hd}), {0, 3, 1, 2, 4}),
      {B, H, C * L, hd});

  TensorT<T> q_rot = q_heads;
  TensorT<T> ka_rot = anchors_k;
  if (rope.mode == RopeMode::chunk_index) {
    std::vector<int64_t> q_idx(C * L);
    for (int64_t i = 0; i < C * L; ++i) q_idx[i] = i / L;
    std::vector<int64_t> a_idx(C);
    for (int64_t i = 0; i < C; ++i) a_idx[i] = i;
    q_rot = rope_apply(q_heads, q_idx, rope.base);
    ka_rot = rope_apply(anchors_k, a_idx, rope.base);
  }

  // Strict mask: query chunk c sees anchors of chunks < c only.
  Mask mask;
  mask.shape = {C * L, C};
  mask.keep.assign(static_cast<size_t>(C * L * C), 0);
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t l = 0; l < L; ++l) {
      for (int64_t cp = 0; cp < c; ++cp) {
        mask.keep[(c * L + l) * C + cp] = 1;
      }
    }
  }

  TensorT<T> scores = affine(matmul(q_rot, transpose(ka_rot, -1, -2)),
                             inv_sqrt_hd, T(0));  // [B, H, C*L, C]
  auto [probs, lse] = softmax_lse(scores, mask);
  TensorT<T> o_prev = matmul(probs, anchors_v);  // [B, H, C*L, hd]

  // Self term on unrotated vectors: a shared chunk rotation cancels in the
  // dot product, so skipping it is exact.
  TensorT<T> s_self = affine(reduce_sum(mul(q_heads, kt_heads), -1),
                             inv_sqrt_hd, T(0));  // [B, H, C*L]
  TensorT<T> merged = merge_online_softmax(o_prev, lse, s_self, vt_heads);

  TensorT<T> y = reshape(
      permute(reshape(merged, {B, H, C, L, hd}), {0, 2, 3, 1, 4}),
      {B, T_len, D});
  return matmul(mul(proj.z, y), p.w_o);
}

// ---------------------------------------------------------------------------
// Naive reference path (test oracle): direct transcription with plain loops.

namespace {

template <typename T>
void naive_matvec(const T* x, const T* w, T* y, int64_t d_in, int64_t d_out) {
  for (int64_t j = 0; j < d_out; ++j) {
    T acc = 0;
    for (int64_t i = 0; i < d_in; ++i) acc += x[i] * w[i * d_out + j];
    y[j] = acc;
  }
}

template <typename T>
T naive_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

// Rotates one head row (head_dim wide) by `index`.
template <typename T>
void naive_rope_row(const T* in, T* out, int64_t hd, int64_t index,
                    double base) {
  for (int64_t i = 0; i < hd / 2; ++i) {
    const double ang =
        double(index) * std::pow(base, -2.0 * double(i) / double(hd));
    const T c = T(std::cos(ang)), s = T(std::sin(ang));
    const T a = in[2 * i], b = in[2 * i + 1];
    out[2 * i] = a * c - b * s;
    out[2 * i + 1] = a * s + b * c;
  }
}

template <typename T>
T naive_dot(const T* a, const T* b, int64_t n) {
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void naive_gates(const T* x, const RatParamsT<T>& p, T* g, T* z,
                 std::vector<T>& scratch) {
  const int64_t D = p.dim();
  if (p.alloc == RatAllocation::shared_qk) {
    naive_matvec(x, p.w_g.ptr(), g, D, D);
    naive_matvec(x, p.w_z.ptr(), z, D, D);
  } else {
    const int64_t r = p.w_g_in.dim(1);
    scratch.resize(r);
    naive_matvec(x, p.w_g_in.ptr(), scratch.data(), D, r);
    naive_matvec(scratch.data(), p.w_g_out.ptr(), g, r, D);
    naive_matvec(x, p.w_z_in.ptr(), scratch.data(), D, r);
    naive_matvec(scratch.data(), p.w_z_out.ptr(), z, r, D);
  }
  for (int64_t j = 0; j < D; ++j) {
    g[j] = naive_sigmoid(g[j]);
    z[j] = naive_sigmoid(z[j]);
  }
}

template <typename T>
void naive_qk(const T* x, const RatParamsT<T>& p, T* q, T* k) {
  const int64_t D = p.dim(), hd = p.head_dim, H = p.heads;
  if (p.alloc == RatAllocation::shared_qk) {
    naive_matvec(x, p.w_q.ptr(), q, D, hd);
    naive_matvec(x, p.w_k.ptr(), k, D, hd);
    for (int64_t h = H - 1; h >= 0; --h) {
      for (int64_t j = 0; j < hd; ++j) {
        q[h * hd + j] = q[j];
        k[h * hd + j] = k[j];
      }
    }
  } else {
    naive_matvec(x, p.w_q.ptr(), q, D, D);
    naive_matvec(x, p.w_k.ptr(), k, D, D);
  }
}

}  // namespace

template <typename T>
RatNaivePartsT<T> rat_naive_parts(const TensorT<T>& x, const RatParamsT<T>& p,
                                  int64_t chunk_len,
                                  const TensorT<T>* force_g) {
  const int64_t B = x.dim(0), T_len = x.dim(1), D = x.dim(2);
  RatNaivePartsT<T> parts;
  parts.B = B;
  parts.T_len = T_len;
  parts.D = D;
  const size_t n = static_cast<size_t>(B * T_len * D);
  parts.q.resize(n);
  parts.g.resize(n);
  parts.z.resize(n);
  parts.v.resize(n);
  parts.ktilde.resize(n);
  parts.vtilde.resize(n);

  std::vector<T> k(n), scratch;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T_len; ++t) {
      const int64_t off = (b * T_len + t) * D;
      const T* xt = x.ptr() + off;
      naive_qk(xt, p, parts.q.data() + off, k.data() + off);
      naive_gates(xt, p, parts.g.data() + off, parts.z.data() + off, scratch);
      naive_matvec(xt, p.w_v.ptr(), parts.v.data() + off, D, D);
      if (force_g != nullptr) {
        std::memcpy(parts.g.data() + off, force_g->ptr() + off, sizeof(T) * D);
      }
    }
  }
  // Sequential gated recurrence, state reset at every chunk boundary.
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T_len; ++t) {
      const int64_t off = (b * T_len + t) * D;
      const bool fresh = (t % chunk_len) == 0;
      for (int64_t j = 0; j < D; ++j) {
        const T prev_k = fresh ? T(0) : parts.ktilde[off - D + j];
        const T prev_v = fresh ? T(0) : parts.vtilde[off - D + j];
        const T gj = parts.g[off + j];
        parts.ktilde[off + j] = gj * prev_k + (T(1) - gj) * k[off + j];
        parts.vtilde[off + j] = gj * prev_v + (T(1) - gj) * parts.v[off + j];
      }
    }
  }
  return parts;
}

template <typename T>
TensorT<T> rat_naive_attend(const RatNaivePartsT<T>& parts,
                            const RatParamsT<T>& p, int64_t chunk_len,
                            const RopeSpec& rope) {
  const int64_t B = parts.B, T_len = parts.T_len, D = parts.D;
  const int64_t H = p.heads, hd = p.head_dim, L = chunk_len;
  const bool rotate = rope.mode == RopeMode::chunk_index;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

  TensorT<T> out = TensorT<T>::zeros({B, T_len, D});
  std::vector<T> gated(static_cast<size_t>(D));
  std::vector<T> q_rot(static_cast<size_t>(hd)), k_rot(static_cast<size_t>(hd));
  std::vector<T> scores, values;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T_len; ++t) {
      const int64_t c = t / L;
      const int64_t off = (b * T_len + t) * D;
      for (int64_t h = 0; h < H; ++h) {
        const T* qh = parts.q.data() + off + h * hd;
        // Explicit key list: rotated anchors of chunks < c, then self.
        const int64_t n_keys = c + 1;
        scores.assign(n_keys, T(0));
        values.assign(n_keys * hd, T(0));
        for (int64_t cp = 0; cp < c; ++cp) {
          const int64_t a_off = (b * T_len + cp * L + L - 1) * D + h * hd;
          const T* anchor_k = parts.ktilde.data() + a_off;
          const T* anchor_v = parts.vtilde.data() + a_off;
          if (rotate) {
            naive_rope_row(qh, q_rot.data(), hd, c, rope.base);
            naive_rope_row(anchor_k, k_rot.data(), hd, cp, rope.base);
            scores[cp] = naive_dot(q_rot.data(), k_rot.data(), hd) * inv_sqrt_hd;
          } else {
            scores[cp] = naive_dot(qh, anchor_k, hd) * inv_sqrt_hd;
          }
          std::memcpy(values.data() + cp * hd, anchor_v, sizeof(T) * hd);
        }
        scores[c] = naive_dot(qh, parts.ktilde.data() + off + h * hd, hd) *
                    inv_sqrt_hd;
        std::memcpy(values.data() + c * hd, parts.vtilde.data() + off + h * hd,
                    sizeof(T) * hd);
        // One full softmax over the concatenated list.
        T mx = scores[0];
        for (int64_t i = 1; i < n_keys; ++i) mx = std::max(mx, scores[i]);
        T z_sum = 0;
        for (int64_t i = 0; i < n_keys; ++i) {
          scores[i] = std::exp(scores[i] - mx);
          z_sum += scores[i];
        }
        for (int64_t j = 0; j < hd; ++j) {
          T acc = 0;
          for (int64_t i = 0; i < n_keys; ++i) {
            acc += scores[i] * values[i * hd + j];
          }
          gated[h * hd + j] = acc / z_sum;
        }
      }
      for (int64_t j = 0; j < D; ++j) gated[j] *= parts.z[off + j];
      naive_matvec(gated.data(), p.w_o.ptr(), out.ptr() + off, D, D);
    }
  }
  return out;
}

template <typename T>
TensorT<T> rat_reference_naive(const TensorT<T>& x, const RatParamsT<T>& p,
                               int64_t chunk_len, const RopeSpec& rope,
                               const TensorT<T>* force_g) {
  if (x.ndim() != 3) {
    throw ShapeError("rat_reference_naive: x must be [B, T, D]");
  }
  if (x.dim(1) % chunk_len != 0) {
    throw ConfigError("rat: sequence length not divisible by chunk_len; pad "
                      "the batch to a multiple of the chunk length");
  }
  RatNaivePartsT<T> parts = rat_naive_parts(x, p, chunk_len, force_g);
  return rat_naive_attend(parts, p, chunk_len, rope);
}

template <typename T>
void rat_step(const T* x_t, const RatParamsT<T>& p, int64_t chunk_len,
              const RopeSpec& rope, RatStepStateT<T>& state, T* y_out) {
  const int64_t D = p.dim(), H = p.heads, hd = p.head_dim;
  const bool rotate = rope.mode == RopeMode::chunk_index;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
  if (state.cur_ktilde.empty()) {
    state.cur_ktilde.assign(static_cast<size_t>(D), T(0));
    state.cur_vtilde.assign(static_cast<size_t>(D), T(0));
  }

  std::vector<T> q(static_cast<size_t>(D)), k(static_cast<size_t>(D));
  std::vector<T> g(static_cast<size_t>(D)), z(static_cast<size_t>(D));
  std::vector<T> v(static_cast<size_t>(D)), scratch;
  naive_qk(x_t, p, q.data(), k.data());
  naive_gates(x_t, p, g.data(), z.data(), scratch);
  naive_matvec(x_t, p.w_v.ptr(), v.data(), D, D);

  // Single recurrence update of the running chunk state.
  for (int64_t j = 0; j < D; ++j) {
    state.cur_ktilde[j] = g[j] * state.cur_ktilde[j] + (T(1) - g[j]) * k[j];
    state.cur_vtilde[j] = g[j] * state.cur_vtilde[j] + (T(1) - g[j]) * v[j];
  }

  // Self score on unrotated vectors; anchor scores on the rotated query
  // against pre-rotated cached anchors.
  std::vector<T> q_rot = q;
  if (rotate) {
    rope_rotate_inplace(q_rot.data(), H, hd, state.chunk_index, rope.base);
  }
  const int64_t n_anchor = state.chunks_done();
  std::vector<T> mixed(static_cast<size_t>(D));
  std::vector<T> scores(static_cast<size_t>(n_anchor));
  for (int64_t h = 0; h < H; ++h) {
    const T s_self =
        naive_dot(q.data() + h * hd, state.cur_ktilde.data() + h * hd, hd) *
        inv_sqrt_hd;
    T mx = s_self;
    for (int64_t i = 0; i < n_anchor; ++i) {
      scores[i] = naive_dot(q_rot.data() + h * hd,
                            state.anchors_k.data() + i * D + h * hd, hd) *
                  inv_sqrt_hd;
      mx = std::max(mx, scores[i]);
    }
    T denom = std::exp(s_self - mx);
    for (int64_t j = 0; j < hd; ++j) {
      mixed[h * hd + j] = denom * state.cur_vtilde[h * hd + j];
    }
    for (int64_t i = 0; i < n_anchor; ++i) {
      const T w = std::exp(scores[i] - mx);
      denom += w;
      const T* av = state.anchors_v.data() + i * D + h * hd;
      for (int64_t j = 0; j < hd; ++j) mixed[h * hd + j] += w * av[j];
    }
    const T inv = T(1) / denom;
    for (int64_t j = 0; j < hd; ++j) mixed[h * hd + j] *= inv;
  }
  for (int64_t j = 0; j < D; ++j) mixed[j] *= z[j];
  naive_matvec(mixed.data(), p.w_o.ptr(), y_out, D, D);

  // Append-after-output: the chunk's own final token never sees its anchor.
  if (state.l_in_chunk == chunk_len - 1) {
    std::vector<T> anchor_k = state.cur_ktilde;
    if (rotate) {
      rope_rotate_inplace(anchor_k.data(), H, hd, state.chunk_index, rope.base);
    }
    state.anchors_k.insert(state.anchors_k.end(), anchor_k.begin(),
                           anchor_k.end());
    state.anchors_v.insert(state.anchors_v.end(), state.cur_vtilde.begin(),
                           state.cur_vtilde.end());
    std::fill(state.cur_ktilde.begin(), state.cur_ktilde.end(), T(0));
    std::fill(state.cur_vtilde.begin(), state.cur_vtilde.end(), T(0));
    state.chunk_index += 1;
    state.l_in_chunk = 0;
  } else {
    state.l_in_chunk += 1;
  }
}

#define RAT_INSTANTIATE_RAT(T)                                                \
  template struct RatParamsT<T>;                                              \
  template RatProjectionsT<T> rat_project(const TensorT<T>&,                  \
                                          const RatParamsT<T>&,               \
                                          const TensorT<T>*);                 \
  template TensorT<T> rat_forward_parallel(const TensorT<T>&,                 \
                                           const RatParamsT<T>&, int64_t,     \
                                           const RopeSpec&, const TensorT<T>*,\
                                           RatScanStateT<T>*);                \
  template TensorT<T> merge_online_softmax(const TensorT<T>&,                 \
                                           const TensorT<T>&,                 \
                                           const TensorT<T>&,                 \
                                           const TensorT<T>&);                \
  template RatNaivePartsT<T> rat_naive_parts(const TensorT<T>&,               \
                                             const RatParamsT<T>&, int64_t,   \
                                             const TensorT<T>*);              \
  template TensorT<T> rat_naive_attend(const RatNaivePartsT<T>&,              \
                                       const RatParamsT<T>&, int64_t,         \
                                       const RopeSpec&);                      \
  template TensorT<T> rat_reference_naive(const TensorT<T>&,                  \
                                          const RatParamsT<T>&, int64_t,      \
                                          const RopeSpec&, const TensorT<T>*);\
  template void rat_step(const T*, const RatParamsT<T>&, int64_t,             \
                         const RopeSpec&, RatStepStateT<T>&, T*);

RAT_INSTANTIATE_RAT(float)
RAT_INSTANTIATE_RAT(double)
#undef RAT_INSTANTIATE_RAT

}  // namespace rat
