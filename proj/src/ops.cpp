#include "rat/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace rat {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;
template <typename T>
using EArr = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using EArrMap = Eigen::Map<EArr<T>>;
template <typename T>
using ECArrMap = Eigen::Map<const EArr<T>>;

constexpr int64_t kGemmRowsPerTask = 256;

// out[m,n] (+)= a[m,k] * b[k,n], row-split across workers.
template <typename T>
void gemm(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n,
          bool accumulate) {
  const int64_t tasks = (m + kGemmRowsPerTask - 1) / kGemmRowsPerTask;
  parallel_for(tasks, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t r0 = t * kGemmRowsPerTask;
      const int64_t rows = std::min(kGemmRowsPerTask, m - r0);
      ECMap<T> A(a + r0 * k, rows, k);
      ECMap<T> B(b, k, n);
      EMap<T> O(out + r0 * n, rows, n);
      if (accumulate) {
        O.noalias() += A * B;
      } else {
        O.noalias() = A * B;
      }
    }
  });
}

// out[m,n] (+)= a[m,k] * b[n,k]^T
template <typename T>
void gemm_bt(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
  const int64_t tasks = (m + kGemmRowsPerTask - 1) / kGemmRowsPerTask;
  parallel_for(tasks, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t r0 = t * kGemmRowsPerTask;
      const int64_t rows = std::min(kGemmRowsPerTask, m - r0);
      ECMap<T> A(a + r0 * k, rows, k);
      ECMap<T> B(b, n, k);
      EMap<T> O(out + r0 * n, rows, n);
      if (accumulate) {
        O.noalias() += A * B.transpose();
      } else {
        O.noalias() = A * B.transpose();
      }
    }
  });
}

// out[k,n] (+)= a[m,k]^T * b[m,n], split over output rows (columns of a).
template <typename T>
void gemm_at(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
  const int64_t tasks = (k + kGemmRowsPerTask - 1) / kGemmRowsPerTask;
  parallel_for(tasks, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t c0 = t * kGemmRowsPerTask;
      const int64_t cols = std::min(kGemmRowsPerTask, k - c0);
      ECMap<T> A(a, m, k);
      ECMap<T> B(b, m, n);
      EMap<T> O(out + c0 * n, cols, n);
      if (accumulate) {
        O.noalias() += A.middleCols(c0, cols).transpose() * B;
      } else {
        O.noalias() = A.middleCols(c0, cols).transpose() * B;
      }
    }
  });
}

template <typename T>
TensorT<T> make_out(Shape shape, TapeT<T>* tape) {
  TensorT<T> out = TensorT<T>::zeros(std::move(shape));
  if (tape != nullptr) {
    out.tape = tape;
    out.node = tape->alloc_node(out.shape);
  }
  return out;
}

// Runs one SIMD kernel over the whole buffer, tail included via a padded
// packet, so every element takes the same code path. Eigen's own array
// expressions peel a scalar prologue whose length depends on the buffer
// address; its scalar and packet transcendentals differ in the last ulp,
// which would make results vary run to run with heap layout.
template <typename T, typename PFn>
void packet_apply(const T* x, T* y, int64_t n, PFn f) {
  using P = typename Eigen::internal::packet_traits<T>::type;
  constexpr int W = Eigen::internal::unpacket_traits<P>::size;
  int64_t i = 0;
  for (; i + W <= n; i += W) {
    Eigen::internal::pstoreu(y + i, f(Eigen::internal::ploadu<P>(x + i)));
  }
  if (i < n) {
    alignas(64) T tin[W] = {};
    alignas(64) T tout[W];
    for (int64_t j = i; j < n; ++j) tin[j - i] = x[j];
    Eigen::internal::pstoreu(tout, f(Eigen::internal::ploadu<P>(tin)));
    for (int64_t j = i; j < n; ++j) y[j] = tout[j - i];
  }
}

template <typename P>
P gelu_packet(P v) {
  using namespace Eigen::internal;
  const P k0 = pset1<P>(0.7978845608028654f);
  const P k1 = pset1<P>(0.044715f);
  const P half = pset1<P>(0.5f);
  const P one = pset1<P>(1.0f);
  const P inner = pmul(k0, padd(v, pmul(k1, pmul(v, pmul(v, v)))));
  return pmul(half, pmul(v, padd(one, ptanh(inner))));
}

template <typename P>
P gelu_grad_packet(P v) {
  using namespace Eigen::internal;
  const P k0 = pset1<P>(0.7978845608028654f);
  const P k1 = pset1<P>(0.044715f);
  const P half = pset1<P>(0.5f);
  const P one = pset1<P>(1.0f);
  const P three = pset1<P>(3.0f);
  const P inner = pmul(k0, padd(v, pmul(k1, pmul(v, pmul(v, v)))));
  const P th = ptanh(inner);
  const P dinner = pmul(k0, padd(one, pmul(three, pmul(k1, pmul(v, v)))));
  const P a = pmul(half, padd(one, th));
  const P b = pmul(half, pmul(v, pmul(psub(one, pmul(th, th)), dinner)));
  return padd(a, b);
}

// Shared scaffolding for unary elementwise ops: fwd(x) and dfdx from saved
// input and output values.
template <typename T, typename Fwd, typename Dfdx>
TensorT<T> unary_op(const TensorT<T>& x, Fwd fwd, Dfdx dfdx) {
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>(x.shape, tape);
  const int64_t n = x.size();
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  if (tape != nullptr) {
    auto xd = x.data;
    auto od = out.data;
    const int xn = x.node_on(tape);
    const int on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t i = 0; i < n; ++i) {
        gx[i] += go[i] * dfdx((*xd)[i], (*od)[i]);
      }
    });
  }
  return out;
}

int normalize_axis(int axis, int ndim, const char* op) {
  int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(ndim));
  }
  return a;
}

}  // namespace

Mask Mask::full(Shape s, uint8_t value) {
  Mask m;
  m.shape = std::move(s);
  m.keep.assign(static_cast<size_t>(numel(m.shape)), value);
  return m;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: both inputs need rank >= 2, got " +
                     shape_str(a.shape) + " and " + shape_str(b.shape));
  }
  const int64_t m = a.dim(-2), k = a.dim(-1);
  const int64_t kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
  const bool shared_b = b.ndim() == 2;
  if (!shared_b) {
    Shape abatch(a.shape.begin(), a.shape.end() - 2);
    Shape bbatch(b.shape.begin(), b.shape.end() - 2);
    if (abatch != bbatch) {
      throw ShapeError("matmul: batch extents differ, " + shape_str(a.shape) +
                       " vs " + shape_str(b.shape));
    }
  }
  Shape out_shape(a.shape.begin(), a.shape.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  TapeT<T>* tape = tape_of<T>({&a, &b});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const int64_t batch = numel(out_shape) / (m * n);

  if (shared_b) {
    gemm(a.ptr(), b.ptr(), out.ptr(), batch * m, k, n, false);
  } else {
    parallel_for(batch, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        ECMap<T> A(a.ptr() + i * m * k, m, k);
        ECMap<T> B(b.ptr() + i * k * n, k, n);
        EMap<T> O(out.ptr() + i * m * n, m, n);
        O.noalias() = A * B;
      }
    });
  }

  if (tape != nullptr) {
    auto ad = a.data;
    auto bd = b.data;
    const int an = a.node_on(tape), bn = b.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      if (an >= 0) {
        auto& ga = t->grad_mut(an);
        if (shared_b) {
          gemm_bt(go.data(), bd->data(), ga.data(), batch * m, n, k, true);
        } else {
          parallel_for(batch, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
              ECMap<T> GO(go.data() + i * m * n, m, n);
              ECMap<T> B(bd->data() + i * k * n, k, n);
              EMap<T> GA(ga.data() + i * m * k, m, k);
              GA.noalias() += GO * B.transpose();
            }
          });
        }
      }
      if (bn >= 0) {
        auto& gb = t->grad_mut(bn);
        if (shared_b) {
          gemm_at(ad->data(), go.data(), gb.data(), batch * m, k, n, true);
        } else {
          for (int64_t i = 0; i < batch; ++i) {
            ECMap<T> A(ad->data() + i * m * k, m, k);
            ECMap<T> GO(go.data() + i * m * n, m, n);
            EMap<T> GB(gb.data() + i * k * n, k, n);
            GB.noalias() += A.transpose() * GO;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> softmax_lse(const TensorT<T>& scores,
                                              const Mask& mask) {
  if (scores.ndim() < 1) {
    throw ShapeError("softmax_lse: need rank >= 1, got " +
                     shape_str(scores.shape));
  }
  const int64_t n = scores.dim(-1);
  const int64_t rows = scores.size() / std::max<int64_t>(n, 1);
  int64_t mask_n = 0;
  if (!mask.empty()) {
    if (mask.shape.size() > scores.shape.size() ||
        !std::equal(mask.shape.rbegin(), mask.shape.rend(),
                    scores.shape.rbegin())) {
      throw ShapeError("softmax_lse: mask " + shape_str(mask.shape) +
                       " is not a trailing suffix of " +
                       shape_str(scores.shape));
    }
    mask_n = static_cast<int64_t>(mask.keep.size());
  }

  TapeT<T>* tape = tape_of<T>({&scores});
  TensorT<T> probs = make_out<T>(scores.shape, tape);
  Shape lse_shape(scores.shape.begin(), scores.shape.end() - 1);
  TensorT<T> lse = make_out<T>(lse_shape, tape);

  const T* sp = scores.ptr();
  T* pp = probs.ptr();
  T* lp = lse.ptr();
  const T neg_inf = -std::numeric_limits<T>::infinity();

  for (int64_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(sp[i])) {
      throw NumericError("softmax_lse: non-finite score at flat index " +
                         std::to_string(i));
    }
  }

  parallel_for(rows, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const T* s = sp + r * n;
      T* p = pp + r * n;
      const uint8_t* km =
          mask_n ? mask.keep.data() + (r * n) % mask_n : nullptr;
      T mx = neg_inf;
      for (int64_t j = 0; j < n; ++j) {
        if (km == nullptr || km[j]) mx = std::max(mx, s[j]);
      }
      if (mx == neg_inf) {  // fully masked row
        std::fill(p, p + n, T(0));
        lp[r] = neg_inf;
        continue;
      }
      if constexpr (std::is_same_v<T, float>) {
        packet_apply<float>(s, p, n, [mx](auto v) {
          return Eigen::internal::pexp(
              Eigen::internal::psub(v, Eigen::internal::pset1<decltype(v)>(mx)));
        });
      } else {
        for (int64_t j = 0; j < n; ++j) p[j] = std::exp(s[j] - mx);
      }
      T z = 0;
      if (km == nullptr) {
        for (int64_t j = 0; j < n; ++j) z += p[j];
      } else {
        for (int64_t j = 0; j < n; ++j) {
          if (km[j]) {
            z += p[j];
          } else {
            p[j] = 0;  // masked entries may have overflowed; discard
          }
        }
      }
      const T inv = T(1) / z;
      for (int64_t j = 0; j < n; ++j) p[j] *= inv;
      lp[r] = mx + std::log(z);
    }
  });

  if (tape != nullptr) {
    auto pd = probs.data;
    const int sn = scores.node_on(tape);
    const int pn = probs.node, ln = lse.node;
    tape->push_op([=, t = tape] {
      if (sn < 0) return;
      const auto& gp = t->grad_view(pn);
      const auto& gl = t->grad_view(ln);
      if (gp.empty() && gl.empty()) return;
      auto& gs = t->grad_mut(sn);
      for (int64_t r = 0; r < rows; ++r) {
        const T* p = pd->data() + r * n;
        T dot = 0;
        if (!gp.empty()) {
          for (int64_t j = 0; j < n; ++j) dot += gp[r * n + j] * p[j];
        }
        const T glr = gl.empty() ? T(0) : gl[r];
        for (int64_t j = 0; j < n; ++j) {
          T g = glr * p[j];
          if (!gp.empty()) g += p[j] * (gp[r * n + j] - dot);
          gs[r * n + j] += g;
        }
      }
    });
  }
  return {probs, lse};
}

template <typename T>
TensorT<T> linear_scan(const TensorT<T>& a, const TensorT<T>& b,
                       const TensorT<T>& h0) {
  check_same_shape("linear_scan", a.shape, b.shape);
  if (a.ndim() < 2) {
    throw ShapeError("linear_scan: need [..., L, D], got " +
                     shape_str(a.shape));
  }
  const int64_t L = a.dim(-2), D = a.dim(-1);
  Shape state_shape(a.shape.begin(), a.shape.end() - 2);
  state_shape.push_back(D);
  if (h0.defined()) check_same_shape("linear_scan h0", h0.shape, state_shape);

  TapeT<T>* tape =
      h0.defined() ? tape_of<T>({&a, &b, &h0}) : tape_of<T>({&a, &b});
  TensorT<T> out = make_out<T>(a.shape, tape);
  const int64_t batch = a.size() / std::max<int64_t>(L * D, 1);
  if (L == 0) return out;

  const T* ap = a.ptr();
  const T* bp = b.ptr();
  const T* h0p = h0.defined() ? h0.ptr() : nullptr;
  T* hp = out.ptr();

  parallel_for(batch, [&](int64_t lo, int64_t hi) {
    std::vector<T> A(static_cast<size_t>(L * D));
    std::vector<T> B(static_cast<size_t>(L * D));
    for (int64_t r = lo; r < hi; ++r) {
      const int64_t base = r * L * D;
      std::memcpy(A.data(), ap + base, sizeof(T) * L * D);
      std::memcpy(B.data(), bp + base, sizeof(T) * L * D);
      // Inclusive Hillis-Steele combine, time order preserved; after round d
      // element t holds the composition of steps (t-2d, t].
      for (int64_t d = 1; d < L; d <<= 1) {
        for (int64_t t = L - 1; t >= d; --t) {
          T* At = A.data() + t * D;
          T* Bt = B.data() + t * D;
          const T* Ae = A.data() + (t - d) * D;
          const T* Be = B.data() + (t - d) * D;
          for (int64_t j = 0; j < D; ++j) {
            Bt[j] = At[j] * Be[j] + Bt[j];
            At[j] = Ae[j] * At[j];
          }
        }
      }
      T* h = hp + base;
      if (h0p != nullptr) {
        const T* h0r = h0p + r * D;
        for (int64_t t = 0; t < L; ++t) {
          for (int64_t j = 0; j < D; ++j) {
            h[t * D + j] = A[t * D + j] * h0r[j] + B[t * D + j];
          }
        }
      } else {
        std::memcpy(h, B.data(), sizeof(T) * L * D);
      }
    }
  });

  if (tape != nullptr) {
    auto ad = a.data;
    auto od = out.data;
    auto h0d = h0.defined() ? h0.data : nullptr;
    const int an = a.node_on(tape), bn = b.node_on(tape);
    const int hn = h0.defined() ? h0.node_on(tape) : -1;
    const int on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      std::vector<T>* ga = an >= 0 ? &t->grad_mut(an) : nullptr;
      std::vector<T>* gb = bn >= 0 ? &t->grad_mut(bn) : nullptr;
      std::vector<T>* gh0 = hn >= 0 ? &t->grad_mut(hn) : nullptr;
      parallel_for(batch, [&](int64_t lo, int64_t hi) {
        std::vector<T> delta(static_cast<size_t>(D));
        for (int64_t r = lo; r < hi; ++r) {
          const int64_t base = r * L * D;
          std::fill(delta.begin(), delta.end(), T(0));
          // Reverse-time: delta_t = dL/dh_t + a_{t+1} * delta_{t+1}.
          for (int64_t s = L - 1; s >= 0; --s) {
            for (int64_t j = 0; j < D; ++j) {
              delta[j] = go[base + s * D + j] +
                         (s + 1 < L ? (*ad)[base + (s + 1) * D + j] * delta[j]
                                    : T(0));
            }
            if (gb != nullptr) {
              for (int64_t j = 0; j < D; ++j) (*gb)[base + s * D + j] += delta[j];
            }
            if (ga != nullptr) {
              for (int64_t j = 0; j < D; ++j) {
                const T hprev = s > 0 ? (*od)[base + (s - 1) * D + j]
                                      : (h0d ? (*h0d)[r * D + j] : T(0));
                (*ga)[base + s * D + j] += delta[j] * hprev;
              }
            }
          }
          if (gh0 != nullptr) {
            for (int64_t j = 0; j < D; ++j) {
              (*gh0)[r * D + j] += (*ad)[base + j] * delta[j];
            }
          }
        }
      });
    });
  }
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape("add", a.shape, b.shape);
  TapeT<T>* tape = tape_of<T>({&a, &b});
  TensorT<T> out = make_out<T>(a.shape, tape);
  const int64_t n = a.size();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  if (tape != nullptr) {
    const int an = a.node_on(tape), bn = b.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      if (an >= 0) {
        auto& ga = t->grad_mut(an);
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (bn >= 0) {
        auto& gb = t->grad_mut(bn);
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape("mul", a.shape, b.shape);
  TapeT<T>* tape = tape_of<T>({&a, &b});
  TensorT<T> out = make_out<T>(a.shape, tape);
  const int64_t n = a.size();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
  if (tape != nullptr) {
    auto ad = a.data;
    auto bd = b.data;
    const int an = a.node_on(tape), bn = b.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      if (an >= 0) {
        auto& ga = t->grad_mut(an);
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * (*bd)[i];
      }
      if (bn >= 0) {
        auto& gb = t->grad_mut(bn);
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * (*ad)[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> affine(const TensorT<T>& x, T mul_c, T add_c) {
  return unary_op(
      x, [=](T v) { return mul_c * v + add_c; },
      [=](T, T) { return mul_c; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  if constexpr (std::is_same_v<T, float>) {
    TapeT<T>* tape = tape_of<T>({&x});
    TensorT<T> out = make_out<T>(x.shape, tape);
    const int64_t n = x.size();
    packet_apply<float>(x.ptr(), out.ptr(), n, [](auto v) {
      return Eigen::internal::scalar_logistic_op<float>().packetOp(v);
    });
    if (tape != nullptr) {
      auto od = out.data;
      const int xn = x.node_on(tape), on = out.node;
      tape->push_op([=, t = tape] {
        const auto& go = t->grad_view(on);
        if (go.empty() || xn < 0) return;
        auto& gx = t->grad_mut(xn);
        const float* y = od->data();
        for (int64_t i = 0; i < n; ++i) {
          gx[i] += go[i] * y[i] * (1.0f - y[i]);
        }
      });
    }
    return out;
  } else {
    return unary_op(
        x,
        [](T v) {
          if (v >= 0) return T(1) / (T(1) + std::exp(-v));
          const T e = std::exp(v);
          return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
  }
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
  if constexpr (std::is_same_v<T, float>) {
    TapeT<T>* tape = tape_of<T>({&x});
    TensorT<T> out = make_out<T>(x.shape, tape);
    const int64_t n = x.size();
    packet_apply<float>(x.ptr(), out.ptr(), n,
                        [](auto v) { return Eigen::internal::pexp(v); });
    if (tape != nullptr) {
      auto od = out.data;
      const int xn = x.node_on(tape), on = out.node;
      tape->push_op([=, t = tape] {
        const auto& go = t->grad_view(on);
        if (go.empty() || xn < 0) return;
        auto& gx = t->grad_mut(xn);
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * (*od)[i];
      });
    }
    return out;
  } else {
    return unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
  }
}

// Tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  if constexpr (std::is_same_v<T, float>) {
    TapeT<T>* tape = tape_of<T>({&x});
    TensorT<T> out = make_out<T>(x.shape, tape);
    const int64_t n = x.size();
    packet_apply<float>(x.ptr(), out.ptr(), n,
                        [](auto v) { return gelu_packet(v); });
    if (tape != nullptr) {
      auto xd = x.data;
      const int xn = x.node_on(tape), on = out.node;
      tape->push_op([=, t = tape] {
        const auto& go = t->grad_view(on);
        if (go.empty() || xn < 0) return;
        auto& gx = t->grad_mut(xn);
        std::vector<float> d(static_cast<size_t>(n));
        packet_apply<float>(xd->data(), d.data(), n,
                            [](auto v) { return gelu_grad_packet(v); });
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * d[i];
      });
    }
    return out;
  } else {
    constexpr T k0 = T(0.7978845608028654);
    constexpr T k1 = T(0.044715);
    return unary_op(
        x,
        [](T v) {
          const T inner = k0 * (v + k1 * v * v * v);
          return T(0.5) * v * (T(1) + std::tanh(inner));
        },
        [](T v, T) {
          const T inner = k0 * (v + k1 * v * v * v);
          const T t = std::tanh(inner);
          const T dinner = k0 * (T(1) + T(3) * k1 * v * v);
          return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dinner;
        });
  }
}

template <typename T>
TensorT<T> rmsnorm(const TensorT<T>& x, const TensorT<T>& gain, T eps) {
  if (x.ndim() < 1 || gain.ndim() != 1 || gain.dim(0) != x.dim(-1)) {
    throw ShapeError("rmsnorm: gain " + shape_str(gain.shape) +
                     " does not match last axis of " + shape_str(x.shape));
  }
  const int64_t D = x.dim(-1);
  const int64_t rows = x.size() / D;
  TapeT<T>* tape = tape_of<T>({&x, &gain});
  TensorT<T> out = make_out<T>(x.shape, tape);
  std::vector<T> inv_rms(static_cast<size_t>(rows));
  const T* xp = x.ptr();
  const T* gp = gain.ptr();
  T* op = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    T ms = 0;
    for (int64_t j = 0; j < D; ++j) ms += xp[r * D + j] * xp[r * D + j];
    const T inv = T(1) / std::sqrt(ms / T(D) + eps);
    inv_rms[r] = inv;
    for (int64_t j = 0; j < D; ++j) op[r * D + j] = xp[r * D + j] * gp[j] * inv;
  }
  if (tape != nullptr) {
    auto xd = x.data;
    auto gd = gain.data;
    auto inv = std::make_shared<std::vector<T>>(std::move(inv_rms));
    const int xn = x.node_on(tape), gn = gain.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      std::vector<T>* gx = xn >= 0 ? &t->grad_mut(xn) : nullptr;
      std::vector<T>* gg = gn >= 0 ? &t->grad_mut(gn) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd->data() + r * D;
        const T ir = (*inv)[r];
        if (gg != nullptr) {
          for (int64_t j = 0; j < D; ++j) {
            (*gg)[j] += go[r * D + j] * xr[j] * ir;
          }
        }
        if (gx != nullptr) {
          T dot = 0;
          for (int64_t j = 0; j < D; ++j) {
            dot += go[r * D + j] * (*gd)[j] * xr[j];
          }
          const T c = dot * ir * ir * ir / T(D);
          for (int64_t j = 0; j < D; ++j) {
            (*gx)[r * D + j] += go[r * D + j] * (*gd)[j] * ir - c * xr[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                     shape_str(new_shape));
  }
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out;
  out.shape = std::move(new_shape);
  out.data = x.data;  // same storage, new extents
  if (tape != nullptr) {
    out.tape = tape;
    out.node = tape->alloc_node(out.shape);
    const int xn = x.node_on(tape), on = out.node;
    const int64_t n = x.size();
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

namespace {

// Precomputed odometer walk: calls fn(out_flat, in_flat) over all elements of
// the permuted view without per-element division.
template <typename T, typename Fn>
void permuted_walk(const Shape& out_shape, const std::vector<int64_t>& in_stride_for_out_axis,
                   Fn fn) {
  const int nd = static_cast<int>(out_shape.size());
  const int64_t total = numel(out_shape);
  std::vector<int64_t> idx(nd, 0);
  int64_t in_flat = 0;
  for (int64_t out_flat = 0; out_flat < total; ++out_flat) {
    fn(out_flat, in_flat);
    for (int ax = nd - 1; ax >= 0; --ax) {
      in_flat += in_stride_for_out_axis[ax];
      if (++idx[ax] < out_shape[ax]) break;
      in_flat -= in_stride_for_out_axis[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) {
    throw ShapeError("permute: perm rank " + std::to_string(perm.size()) +
                     " vs tensor rank " + std::to_string(nd));
  }
  std::vector<char> seen(nd, 0);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[p]) throw ShapeError("permute: invalid perm");
    seen[p] = 1;
  }
  std::vector<int64_t> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) {
    in_strides[i] = in_strides[i + 1] * x.shape[i + 1];
  }
  Shape out_shape(nd);
  std::vector<int64_t> stride_for_out(nd);
  for (int i = 0; i < nd; ++i) {
    out_shape[i] = x.shape[perm[i]];
    stride_for_out[i] = in_strides[perm[i]];
  }
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  // Row fast path: permutations that keep the last axis in place move whole
  // contiguous rows, which is every head split/merge in the mixers.
  const bool rowwise = nd >= 1 && perm[nd - 1] == nd - 1;
  const int64_t row = rowwise ? x.shape[nd - 1] : 1;
  if (rowwise) {
    Shape outer_shape(out_shape.begin(), out_shape.end() - 1);
    std::vector<int64_t> outer_strides(stride_for_out.begin(),
                                       stride_for_out.end() - 1);
    permuted_walk<T>(outer_shape, outer_strides, [&](int64_t of, int64_t inf) {
      std::memcpy(op + of * row, xp + inf, sizeof(T) * row);
    });
  } else {
    permuted_walk<T>(out_shape, stride_for_out,
                     [&](int64_t of, int64_t inf) { op[of] = xp[inf]; });
  }
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      if (rowwise) {
        Shape outer_shape(out_shape.begin(), out_shape.end() - 1);
        std::vector<int64_t> outer_strides(stride_for_out.begin(),
                                           stride_for_out.end() - 1);
        permuted_walk<T>(outer_shape, outer_strides,
                         [&](int64_t of, int64_t inf) {
                           const T* g = go.data() + of * row;
                           T* dst = gx.data() + inf;
                           for (int64_t j = 0; j < row; ++j) dst[j] += g[j];
                         });
      } else {
        permuted_walk<T>(out_shape, stride_for_out,
                         [&](int64_t of, int64_t inf) { gx[inf] += go[of]; });
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x, int axis_a, int axis_b) {
  const int nd = x.ndim();
  const int a = normalize_axis(axis_a, nd, "transpose");
  const int b = normalize_axis(axis_b, nd, "transpose");
  std::vector<int> perm(nd);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a], perm[b]);
  return permute(x, perm);
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int64_t start, int64_t len) {
  const int nd = x.ndim();
  const int ax = normalize_axis(axis, nd, "slice");
  if (start < 0 || len < 0 || start + len > x.shape[ax]) {
    throw ShapeError("slice: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of range on axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape[i];
  for (int i = ax + 1; i < nd; ++i) inner *= x.shape[i];
  const int64_t ax_n = x.shape[ax];
  Shape out_shape = x.shape;
  out_shape[ax] = len;

  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(op + o * len * inner, xp + (o * ax_n + start) * inner,
                sizeof(T) * len * inner);
  }
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t o = 0; o < outer; ++o) {
        const T* g = go.data() + o * len * inner;
        T* dst = gx.data() + (o * ax_n + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b, int axis) {
  const int nd = a.ndim();
  const int ax = normalize_axis(axis, nd, "concat");
  if (b.ndim() != nd) {
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  for (int i = 0; i < nd; ++i) {
    if (i != ax && a.shape[i] != b.shape[i]) {
      throw ShapeError("concat: shapes differ off-axis, " +
                       shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.shape[i];
  for (int i = ax + 1; i < nd; ++i) inner *= a.shape[i];
  const int64_t na = a.shape[ax], nb = b.shape[ax];
  Shape out_shape = a.shape;
  out_shape[ax] = na + nb;

  TapeT<T>* tape = tape_of<T>({&a, &b});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(op + o * (na + nb) * inner, ap + o * na * inner,
                sizeof(T) * na * inner);
    std::memcpy(op + (o * (na + nb) + na) * inner, bp + o * nb * inner,
                sizeof(T) * nb * inner);
  }
  if (tape != nullptr) {
    const int an = a.node_on(tape), bn = b.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty()) return;
      for (int64_t o = 0; o < outer; ++o) {
        if (an >= 0) {
          auto& ga = t->grad_mut(an);
          const T* g = go.data() + o * (na + nb) * inner;
          T* dst = ga.data() + o * na * inner;
          for (int64_t i = 0; i < na * inner; ++i) dst[i] += g[i];
        }
        if (bn >= 0) {
          auto& gb = t->grad_mut(bn);
          const T* g = go.data() + (o * (na + nb) + na) * inner;
          T* dst = gb.data() + o * nb * inner;
          for (int64_t i = 0; i < nb * inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x, int axis) {
  const int nd = x.ndim();
  const int ax = normalize_axis(axis, nd, "reduce_sum");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape[i];
  for (int i = ax + 1; i < nd; ++i) inner *= x.shape[i];
  const int64_t ax_n = x.shape[ax];
  Shape out_shape;
  for (int i = 0; i < nd; ++i) {
    if (i != ax) out_shape.push_back(x.shape[i]);
  }
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < ax_n; ++k) {
      const T* src = xp + (o * ax_n + k) * inner;
      T* dst = op + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t k = 0; k < ax_n; ++k) {
          const T* g = go.data() + o * inner;
          T* dst = gx.data() + (o * ax_n + k) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>({}, tape);
  const int64_t n = x.size();
  const T* xp = x.ptr();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += xp[i];
  out.ptr()[0] = acc;
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t i = 0; i < n; ++i) gx[i] += go[0];
    });
  }
  return out;
}

template <typename T>
TensorT<T> tile_last(const TensorT<T>& x, int64_t times) {
  if (x.ndim() < 1 || times < 1) {
    throw ShapeError("tile_last: need rank >= 1 and times >= 1");
  }
  const int64_t d = x.dim(-1);
  const int64_t rows = x.size() / std::max<int64_t>(d, 1);
  Shape out_shape = x.shape;
  out_shape.back() = d * times;
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t h = 0; h < times; ++h) {
      std::memcpy(op + (r * times + h) * d, xp + r * d, sizeof(T) * d);
    }
  }
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t h = 0; h < times; ++h) {
          const T* g = go.data() + (r * times + h) * d;
          T* dst = gx.data() + r * d;
          for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const Tokens& ids) {
  if (table.ndim() != 2) {
    throw ShapeError("embedding_lookup: table must be [V, D], got " +
                     shape_str(table.shape));
  }
  const int64_t V = table.dim(0), D = table.dim(1);
  Shape out_shape = ids.shape;
  out_shape.push_back(D);
  TapeT<T>* tape = tape_of<T>({&table});
  TensorT<T> out = make_out<T>(out_shape, tape);
  const int64_t n = ids.size();
  const T* tp = table.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const int32_t id = ids.ids[i];
    if (id < 0 || id >= V) {
      throw DataError("token id " + std::to_string(id) + " out of range [0," +
                      std::to_string(V) + ") at position " + std::to_string(i));
    }
    std::memcpy(op + i * D, tp + int64_t(id) * D, sizeof(T) * D);
  }
  if (tape != nullptr) {
    auto idv = std::make_shared<std::vector<int32_t>>(ids.ids);
    const int tn = table.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || tn < 0) return;
      auto& gt = t->grad_mut(tn);
      for (int64_t i = 0; i < n; ++i) {
        const T* g = go.data() + i * D;
        T* dst = gt.data() + int64_t((*idv)[i]) * D;
        for (int64_t j = 0; j < D; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const Tokens& targets,
                         const std::vector<uint8_t>& mask) {
  if (logits.ndim() < 2) {
    throw ShapeError("cross_entropy: logits need rank >= 2, got " +
                     shape_str(logits.shape));
  }
  const int64_t V = logits.dim(-1);
  const int64_t rows = logits.size() / V;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(rows) +
                     " logit rows vs " + std::to_string(targets.size()) +
                     " targets");
  }
  if (!mask.empty() && static_cast<int64_t>(mask.size()) != rows) {
    throw ShapeError("cross_entropy: mask size " + std::to_string(mask.size()) +
                     " vs " + std::to_string(rows) + " rows");
  }
  int64_t count = 0;
  double total = 0;
  const T* lp = logits.ptr();
  std::vector<double> shifted;
  for (int64_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    const int32_t tgt = targets.ids[r];
    if (tgt < 0 || tgt >= V) {
      throw DataError("cross_entropy: target " + std::to_string(tgt) +
                      " out of range at row " + std::to_string(r));
    }
    const T* row = lp + r * V;
    double mx = double(row[0]);
    for (int64_t j = 1; j < V; ++j) mx = std::max(mx, double(row[j]));
    double z = 0;  // fixed-order accumulation keeps runs bit-identical
    shifted.resize(static_cast<size_t>(V));
    for (int64_t j = 0; j < V; ++j) shifted[j] = double(row[j]) - mx;
    packet_apply<double>(shifted.data(), shifted.data(), V,
                         [](auto v) { return Eigen::internal::pexp(v); });
    for (int64_t j = 0; j < V; ++j) z += shifted[j];
    total += mx + std::log(z) - double(row[tgt]);
    ++count;
  }
  if (count == 0) throw DataError("cross_entropy: no unmasked targets");

  TapeT<T>* tape = tape_of<T>({&logits});
  TensorT<T> out = make_out<T>({}, tape);
  out.ptr()[0] = T(total / double(count));
  if (tape != nullptr) {
    auto ld = logits.data;
    auto tgts = std::make_shared<std::vector<int32_t>>(targets.ids);
    auto msk = std::make_shared<std::vector<uint8_t>>(mask);
    const int ln = logits.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || ln < 0) return;
      auto& gl = t->grad_mut(ln);
      const T scale = go[0] / T(count);
      parallel_for(rows, [&](int64_t lo, int64_t hi) {
        std::vector<double> e(static_cast<size_t>(V));
        for (int64_t r = lo; r < hi; ++r) {
          if (!msk->empty() && !(*msk)[r]) continue;
          const T* row = ld->data() + r * V;
          double mx = double(row[0]);
          for (int64_t j = 1; j < V; ++j) mx = std::max(mx, double(row[j]));
          for (int64_t j = 0; j < V; ++j) e[j] = double(row[j]) - mx;
          packet_apply<double>(e.data(), e.data(), V,
                               [](auto v) { return Eigen::internal::pexp(v); });
          double z = 0;
          for (int64_t j = 0; j < V; ++j) z += e[j];
          const double inv = 1.0 / z;
          T* g = gl.data() + r * V;
          const double c = double(scale) * inv;
          for (int64_t j = 0; j < V; ++j) g[j] += T(e[j] * c);
          g[(*tgts)[r]] -= scale;
        }
      });
    });
  }
  return out;
}

#define RAT_INSTANTIATE_OPS(T)                                                \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);           \
  template std::pair<TensorT<T>, TensorT<T>> softmax_lse(const TensorT<T>&,   \
                                                         const Mask&);        \
  template TensorT<T> linear_scan(const TensorT<T>&, const TensorT<T>&,       \
                                  const TensorT<T>&);                         \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);              \
  template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);              \
  template TensorT<T> affine(const TensorT<T>&, T, T);                        \
  template TensorT<T> sigmoid(const TensorT<T>&);                             \
  template TensorT<T> exp(const TensorT<T>&);                                 \
  template TensorT<T> gelu(const TensorT<T>&);                                \
  template TensorT<T> rmsnorm(const TensorT<T>&, const TensorT<T>&, T);       \
  template TensorT<T> reshape(const TensorT<T>&, Shape);                      \
  template TensorT<T> permute(const TensorT<T>&, const std::vector<int>&);    \
  template TensorT<T> transpose(const TensorT<T>&, int, int);                 \
  template TensorT<T> slice(const TensorT<T>&, int, int64_t, int64_t);        \
  template TensorT<T> concat(const TensorT<T>&, const TensorT<T>&, int);      \
  template TensorT<T> reduce_sum(const TensorT<T>&, int);                     \
  template TensorT<T> sum_all(const TensorT<T>&);                             \
  template TensorT<T> tile_last(const TensorT<T>&, int64_t);                  \
  template TensorT<T> embedding_lookup(const TensorT<T>&, const Tokens&);     \
  template TensorT<T> cross_entropy(const TensorT<T>&, const Tokens&,         \
                                    const std::vector<uint8_t>&);

RAT_INSTANTIATE_OPS(float)
RAT_INSTANTIATE_OPS(double)
#undef RAT_INSTANTIATE_OPS

}  // namespace rat
