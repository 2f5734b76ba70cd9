#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rat/attention.hpp"
#include "rat/ops.hpp"
#include "support/oracles.hpp"

using namespace rat;

namespace {

Tensor clone_perturbed(const Tensor& x, int64_t flat, float delta) {
  Tensor out = x;
  out.data = std::make_shared<std::vector<float>>(*x.data);
  out.ptr()[flat] += delta;
  return out;
}

// Runs attn_forward through the taped (materialized) code path.
Tensor attn_tracked(const Tensor& x, const AttnParams& p,
                    std::optional<int64_t> window, const RopeSpec& rope) {
  Tape tape;
  Tensor xt = x;
  tape.leaf(xt);
  return attn_forward(xt, p, window, rope).detached();
}

}  // namespace

TEST_CASE("single token attends only to itself") {
  Rng rng(1);
  const int64_t D = 8;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, 1, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  Tensor y = attn_forward(x, p, std::nullopt, rope);
  Tensor want = matmul(matmul(x, p.w_v), p.w_o);
  CHECK(ratt::max_abs_diff(y, want) < 1e-6);
}

TEST_CASE("window of one degenerates to the value path") {
  Rng rng(2);
  const int64_t T = 6, D = 8;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, T, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  Tensor y = attn_forward(x, p, 1, rope);
  Tensor want = matmul(matmul(x, p.w_v), p.w_o);
  CHECK(ratt::max_abs_diff(y, want) < 1e-6);
}

TEST_CASE("window covering the sequence equals full causal attention") {
  Rng rng(3);
  const int64_t T = 12, D = 8;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({2, T, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  Tensor full = attn_forward(x, p, std::nullopt, rope);
  Tensor windowed = attn_forward(x, p, T, rope);
  CHECK(ratt::max_abs_diff(full, windowed) < 1e-6);
}

TEST_CASE("streaming and taped paths agree") {
  Rng rng(4);
  const int64_t T = 20, D = 8;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({2, T, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  for (std::optional<int64_t> window :
       {std::optional<int64_t>{}, std::optional<int64_t>{5}}) {
    Tensor streamed = attn_forward(x, p, window, rope);
    Tensor taped = attn_tracked(x, p, window, rope);
    CHECK(ratt::max_abs_diff(streamed, taped) < 1e-6);
  }
}

TEST_CASE("causality and sliding-window locality") {
  Rng rng(5);
  const int64_t T = 16, D = 8, W = 4;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, T, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);

  Tensor base_full = attn_forward(x, p, std::nullopt, rope);
  Tensor base_swa = attn_forward(x, p, W, rope);

  // Future perturbation: outputs before t=10 unchanged.
  Tensor pert = clone_perturbed(x, 10 * D + 3, 0.4f);
  Tensor f = attn_forward(pert, p, std::nullopt, rope);
  for (int64_t t = 0; t < 10; ++t) {
    for (int64_t j = 0; j < D; ++j) {
      CHECK(std::abs(base_full.ptr()[t * D + j] - f.ptr()[t * D + j]) <= 1e-7);
    }
  }
  // Locality: perturbing t=2 cannot move outputs at t >= 2 + W.
  Tensor pert2 = clone_perturbed(x, 2 * D + 1, 0.4f);
  Tensor s = attn_forward(pert2, p, W, rope);
  for (int64_t t = 2 + W; t < T; ++t) {
    for (int64_t j = 0; j < D; ++j) {
      CHECK(std::abs(base_swa.ptr()[t * D + j] - s.ptr()[t * D + j]) <= 1e-7);
    }
  }
}

TEST_CASE("attention rows are stochastic") {
  // With identical inputs at every position all value rows coincide, so the
  // output reproduces that shared value iff each weight row sums to one.
  Rng rng(6);
  const int64_t T = 9, D = 8;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = Tensor::full({1, T, D}, 0.37f);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  Tensor y = attn_forward(x, p, std::nullopt, rope);
  Tensor row = slice(x, 1, 0, 1);
  Tensor want = matmul(matmul(row, p.w_v), p.w_o);  // [1, 1, D]
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t j = 0; j < D; ++j) {
      CHECK(std::abs(y.ptr()[t * D + j] - want.ptr()[j]) < 1e-5);
    }
  }
}

TEST_CASE("non-positive window is a config error") {
  Rng rng(8);
  AttnParams p = AttnParams::init(8, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, 4, 8}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, 4);
  CHECK_THROWS_AS(attn_forward(x, p, 0, rope), ConfigError);
  CHECK_THROWS_AS(attn_forward(x, p, -3, rope), ConfigError);
}

TEST_CASE("attn_step matches the parallel forward position by position") {
  Rng rng(9);
  const int64_t T = 14, D = 8, W = 5;
  AttnParams p = AttnParams::init(D, 2, 0.3, rng);
  Tensor x = rng.uniform_tensor<float>({1, T, D}, -1, 1);
  RopeSpec rope = make_rope_spec(RopeMode::token_index, D / 2);
  for (std::optional<int64_t> window :
       {std::optional<int64_t>{}, std::optional<int64_t>{W}}) {
    Tensor parallel = attn_forward(x, p, window, rope);
    AttnStepStateT<float> state;
    std::vector<float> y(D);
    for (int64_t t = 0; t < T; ++t) {
      attn_step(x.ptr() + t * D, p, window, rope, state, y.data());
      for (int64_t j = 0; j < D; ++j) {
        CHECK(std::abs(y[j] - parallel.ptr()[t * D + j]) < 1e-4);
      }
    }
  }
}
