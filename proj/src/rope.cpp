#include "rat/rope.hpp"

#include <cmath>

#include "rat/errors.hpp"

namespace rat {

std::string rope_mode_name(RopeMode mode) {
  switch (mode) {
    case RopeMode::token_index: return "token_index";
    case RopeMode::chunk_index: return "chunk_index";
    case RopeMode::none: return "none";
  }
  return "?";
}

RopeMode rope_mode_from_name(const std::string& name) {
  if (name == "token_index") return RopeMode::token_index;
  if (name == "chunk_index") return RopeMode::chunk_index;
  if (name == "none") return RopeMode::none;
  throw ConfigError("unknown rope mode '" + name +
                    "' (expected token_index, chunk_index, or none)");
}

RopeSpec make_rope_spec(RopeMode mode, int64_t head_dim, double base) {
  if (head_dim <= 0 || head_dim % 2 != 0) {
    throw ConfigError("rope head_dim must be even and positive, got " +
                      std::to_string(head_dim));
  }
  if (base <= 1.0) {
    throw ConfigError("rope base must be > 1, got " + std::to_string(base));
  }
  return RopeSpec{mode, base, head_dim};
}

namespace {

// cos/sin tables for one position index over head_dim/2 frequency pairs.
template <typename T>
void angle_tables(int64_t head_dim, int64_t index, double base, T* cs, T* sn) {
  const int64_t half = head_dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::pow(base, -2.0 * double(i) / double(head_dim));
    const double ang = double(index) * freq;
    cs[i] = T(std::cos(ang));
    sn[i] = T(std::sin(ang));
  }
}

template <typename T>
void rotate_rows(const T* in, T* out, int64_t rows, int64_t hd, const T* cs,
                 const T* sn, bool inverse) {
  const int64_t half = hd / 2;
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = in + r * hd;
    T* y = out + r * hd;
    for (int64_t i = 0; i < half; ++i) {
      const T c = cs[i];
      const T s = inverse ? -sn[i] : sn[i];
      const T a = x[2 * i], b = x[2 * i + 1];
      y[2 * i] = a * c - b * s;
      y[2 * i + 1] = a * s + b * c;
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> rope_apply(const TensorT<T>& x, const std::vector<int64_t>& indices,
                      double base) {
  if (x.ndim() < 2) {
    throw ShapeError("rope_apply: need [..., N, head_dim], got " +
                     shape_str(x.shape));
  }
  const int64_t hd = x.dim(-1);
  const int64_t n_pos = x.dim(-2);
  if (hd % 2 != 0) {
    throw ConfigError("rope_apply: odd head_dim " + std::to_string(hd));
  }
  if (static_cast<int64_t>(indices.size()) != n_pos) {
    throw ShapeError("rope_apply: " + std::to_string(indices.size()) +
                     " indices for " + std::to_string(n_pos) + " positions");
  }
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  if (tape != nullptr) {
    out.tape = tape;
    out.node = tape->alloc_node(out.shape);
  }
  const int64_t half = hd / 2;
  auto cs = std::make_shared<std::vector<T>>(n_pos * half);
  auto sn = std::make_shared<std::vector<T>>(n_pos * half);
  for (int64_t p = 0; p < n_pos; ++p) {
    angle_tables<T>(hd, indices[p], base, cs->data() + p * half,
                    sn->data() + p * half);
  }
  const int64_t outer = x.size() / (n_pos * hd);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t p = 0; p < n_pos; ++p) {
      rotate_rows(x.ptr() + (o * n_pos + p) * hd,
                  out.ptr() + (o * n_pos + p) * hd, 1, hd,
                  cs->data() + p * half, sn->data() + p * half, false);
    }
  }
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      std::vector<T> tmp(hd);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t p = 0; p < n_pos; ++p) {
          const int64_t off = (o * n_pos + p) * hd;
          rotate_rows(go.data() + off, tmp.data(), 1, hd,
                      cs->data() + p * half, sn->data() + p * half, true);
          for (int64_t j = 0; j < hd; ++j) gx[off + j] += tmp[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> rope_rotate(const TensorT<T>& x, int64_t index,
                       const RopeSpec& spec) {
  if (x.ndim() < 1 || x.dim(-1) != spec.head_dim) {
    throw ShapeError("rope_rotate: last axis of " + shape_str(x.shape) +
                     " must be head_dim " + std::to_string(spec.head_dim));
  }
  // Treat all rows as one position; reshape to [..., 1, hd] semantics.
  const int64_t hd = spec.head_dim;
  const int64_t rows = x.size() / hd;
  TapeT<T>* tape = tape_of<T>({&x});
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  if (tape != nullptr) {
    out.tape = tape;
    out.node = tape->alloc_node(out.shape);
  }
  const int64_t half = hd / 2;
  auto cs = std::make_shared<std::vector<T>>(half);
  auto sn = std::make_shared<std::vector<T>>(half);
  angle_tables<T>(hd, index, spec.base, cs->data(), sn->data());
  rotate_rows(x.ptr(), out.ptr(), rows, hd, cs->data(), sn->data(), false);
  if (tape != nullptr) {
    const int xn = x.node_on(tape), on = out.node;
    tape->push_op([=, t = tape] {
      const auto& go = t->grad_view(on);
      if (go.empty() || xn < 0) return;
      auto& gx = t->grad_mut(xn);
      std::vector<T> tmp(rows * hd);
      rotate_rows(go.data(), tmp.data(), rows, hd, cs->data(), sn->data(),
                  true);
      for (int64_t i = 0; i < rows * hd; ++i) gx[i] += tmp[i];
    });
  }
  return out;
}

template <typename T>
void rope_rotate_inplace(T* data, int64_t rows, int64_t head_dim, int64_t index,
                         double base) {
  const int64_t half = head_dim / 2;
  std::vector<T> cs(half), sn(half);
  angle_tables<T>(head_dim, index, base, cs.data(), sn.data());
  std::vector<T> tmp(head_dim);
  for (int64_t r = 0; r < rows; ++r) {
    rotate_rows(data + r * head_dim, tmp.data(), 1, head_dim, cs.data(),
                sn.data(), false);
    std::copy(tmp.begin(), tmp.end(), data + r * head_dim);
  }
}

template TensorT<float> rope_apply(const TensorT<float>&,
                                   const std::vector<int64_t>&, double);
template TensorT<double> rope_apply(const TensorT<double>&,
                                    const std::vector<int64_t>&, double);
template TensorT<float> rope_rotate(const TensorT<float>&, int64_t,
                                    const RopeSpec&);
template TensorT<double> rope_rotate(const TensorT<double>&, int64_t,
                                     const RopeSpec&);
template void rope_rotate_inplace(float*, int64_t, int64_t, int64_t, double);
template void rope_rotate_inplace(double*, int64_t, int64_t, int64_t, double);

}  // namespace rat
