#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rat/ops.hpp"
#include "rat/rnn.hpp"
#include "support/oracles.hpp"

using namespace rat;

namespace {

// Literal per-step reference for the gated recurrence layer.
template <typename T>
std::vector<T> rnn_sequential_oracle(const TensorT<T>& x,
                                     const RnnParamsT<T>& p,
                                     const std::vector<T>& h0) {
  const int64_t B = x.dim(0), T_len = x.dim(1), D = x.dim(2);
  auto matvec = [&](const T* in, const TensorT<T>& w, T* out) {
    for (int64_t j = 0; j < D; ++j) {
      T acc = 0;
      for (int64_t i = 0; i < D; ++i) acc += in[i] * w.ptr()[i * D + j];
      out[j] = acc;
    }
  };
  std::vector<T> y(size_t(B * T_len * D), T(0));
  std::vector<T> g(D), z(D), v(D), gated(D);
  for (int64_t b = 0; b < B; ++b) {
    std::vector<T> h = h0.empty()
                           ? std::vector<T>(size_t(D), T(0))
                           : std::vector<T>(h0.begin() + b * D,
                                            h0.begin() + (b + 1) * D);
    for (int64_t t = 0; t < T_len; ++t) {
      const T* xt = x.ptr() + (b * T_len + t) * D;
      matvec(xt, p.w_g, g.data());
      matvec(xt, p.w_z, z.data());
      matvec(xt, p.w_v, v.data());
      for (int64_t j = 0; j < D; ++j) {
        const T gj = T(1) / (T(1) + std::exp(-g[j]));
        const T zj = T(1) / (T(1) + std::exp(-z[j]));
        h[j] = gj * h[j] + (T(1) - gj) * v[j];
        gated[j] = zj * h[j];
      }
      matvec(gated.data(), p.w_o, y.data() + (b * T_len + t) * D);
    }
  }
  return y;
}

}  // namespace

TEST_CASE("open gate (g forced to zero) is memoryless") {
  Rng rng(1);
  const int64_t B = 2, T = 5, D = 6;
  RnnParams p = RnnParams::init(D, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({B, T, D}, -1, 1);
  Tensor zero_g = Tensor::zeros({B, T, D});
  RnnOutT<float> out = rnn_forward(x, p, {}, &zero_g);
  // y_t = (z_t * v_t) W_o exactly.
  Tensor z = sigmoid(matmul(x, p.w_z));
  Tensor v = matmul(x, p.w_v);
  Tensor want = matmul(mul(z, v), p.w_o);
  CHECK(ratt::max_abs_diff(out.y, want) < 1e-6);
}

TEST_CASE("single step from zero state is (1-g) * v") {
  Rng rng(2);
  const int64_t D = 5;
  RnnParams p = RnnParams::init(D, 0.4, rng);
  Tensor x = rng.uniform_tensor<float>({1, 1, D}, -1, 1);
  RnnOutT<float> out = rnn_forward(x, p);
  Tensor g = sigmoid(matmul(x, p.w_g));
  Tensor v = matmul(x, p.w_v);
  for (int64_t j = 0; j < D; ++j) {
    const float want = (1.0f - g.ptr()[j]) * v.ptr()[j];
    CHECK(out.h_last.ptr()[j] == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("scan path equals the sequential path") {
  Rng rng(3);
  const int64_t B = 2, T = 16, D = 8;
  RnnParams p = RnnParams::init(D, 0.25, rng);
  Tensor x = rng.uniform_tensor<float>({B, T, D}, -1, 1);
  Tensor h0 = rng.uniform_tensor<float>({B, D}, -0.5, 0.5);
  RnnOutT<float> out = rnn_forward(x, p, h0);
  std::vector<float> ref = rnn_sequential_oracle(
      x, p, std::vector<float>(h0.ptr(), h0.ptr() + h0.size()));
  for (int64_t i = 0; i < out.y.size(); ++i) {
    CHECK(std::abs(out.y.ptr()[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("stateful continuation matches one long run") {
  Rng rng(4);
  const int64_t D = 6, T = 12, split = 5;
  RnnParams p = RnnParams::init(D, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, T, D}, -1, 1);
  RnnOutT<float> full = rnn_forward(x, p);

  Tensor x1 = slice(x, 1, 0, split);
  Tensor x2 = slice(x, 1, split, T - split);
  RnnOutT<float> part1 = rnn_forward(x1, p);
  RnnOutT<float> part2 = rnn_forward(x2, p, part1.h_last);
  Tensor joined = concat(part1.y, part2.y, 1);
  CHECK(ratt::max_abs_diff(full.y, joined) < 1e-5);
}

TEST_CASE("causality: later inputs never move earlier outputs") {
  Rng rng(5);
  const int64_t T = 9, D = 6;
  RnnParams p = RnnParams::init(D, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, T, D}, -1, 1);
  RnnOutT<float> base = rnn_forward(x, p);
  Tensor xp = x;
  xp.data = std::make_shared<std::vector<float>>(*x.data);
  xp.ptr()[6 * D + 2] += 0.37f;  // perturb t = 6
  RnnOutT<float> pert = rnn_forward(xp, p);
  for (int64_t t = 0; t < 6; ++t) {
    for (int64_t j = 0; j < D; ++j) {
      CHECK(std::abs(base.y.ptr()[t * D + j] - pert.y.ptr()[t * D + j]) <= 1e-7);
    }
  }
  // and it does move some later output
  double moved = 0;
  for (int64_t t = 6; t < T; ++t) {
    for (int64_t j = 0; j < D; ++j) {
      moved = std::max(moved, double(std::abs(base.y.ptr()[t * D + j] -
                                              pert.y.ptr()[t * D + j])));
    }
  }
  CHECK(moved > 1e-6);
}

TEST_CASE("gated state stays inside the box spanned by v and h0") {
  Rng rng(6);
  const int64_t B = 1, T = 24, D = 4;
  RnnParams p = RnnParams::init(D, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({B, T, D}, -1, 1);
  // Work on the recurrence directly: v in [-2, 2], h0 in the same box.
  Tensor g = sigmoid(matmul(x, p.w_g));
  Tensor v = rng.uniform_tensor<float>({B, T, D}, -2, 2);
  Tensor h0 = rng.uniform_tensor<float>({B, D}, -2, 2);
  Tensor vt = linear_scan(g, mul(affine(g, -1.0f, 1.0f), v), h0);
  for (int64_t i = 0; i < vt.size(); ++i) {
    CHECK(vt.ptr()[i] >= -2.0f - 1e-5f);
    CHECK(vt.ptr()[i] <= 2.0f + 1e-5f);
  }
}
