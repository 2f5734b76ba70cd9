#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "rat/bench.hpp"
#include "rat/generate.hpp"

using namespace rat;

TEST_CASE("score work: attention scales with T, rnn is constant") {
  const int64_t D = 2048;
  // Hand-derived: at the final position attention touches T entries, each
  // costing one score MAC and one value MAC per dimension -> 2*T*D.
  CHECK(score_flops_per_token(MixerKind::attn, 4096, 1, D) ==
        2L * 4096 * 2048);
  CHECK(score_flops_per_token(MixerKind::attn, 8192, 1, D) ==
        2L * 8192 * 2048);
  CHECK(score_flops_per_token(MixerKind::rnn, 1024, 1, D) ==
        score_flops_per_token(MixerKind::rnn, 1 << 20, 1, D));
}

TEST_CASE("rat score work is 16x smaller than attention at T=4096, L=16") {
  const int64_t D = 2048;
  const int64_t attn = score_flops_per_token(MixerKind::attn, 4096, 1, D);
  const int64_t rat = score_flops_per_token(MixerKind::rat, 4096, 16, D);
  // Final position: 255 anchors + the self term = 256 entries = 4096 / 16.
  CHECK(rat == 2L * 256 * 2048);
  CHECK(attn == 16 * rat);
}

TEST_CASE("per-position score work follows the chunk index, not the position") {
  const int64_t D = 64, L = 8;
  for (int64_t c = 0; c < 6; ++c) {
    const int64_t at_first = score_flops_at(MixerKind::rat, c * L, L, D);
    for (int64_t l = 1; l < L; ++l) {
      CHECK(score_flops_at(MixerKind::rat, c * L + l, L, D) == at_first);
    }
    CHECK(at_first == 2 * D * (c + 1));
  }
  // Attention grows with every position.
  CHECK(score_flops_at(MixerKind::attn, 7, 1, D) <
        score_flops_at(MixerKind::attn, 8, 1, D));
}

TEST_CASE("layer flops endpoints: L=1 dominates attention, L=T shrinks to rnn") {
  const int64_t D = 128, H = 2, T = 512;
  const int64_t attn = flops_per_token(MixerKind::attn, T, 1, D, H);
  const int64_t rat_l1 = flops_per_token(MixerKind::rat, T, 1, D, H);
  CHECK(rat_l1 >= attn);  // same score work plus the gated recurrence
  const int64_t rat_lt = flops_per_token(MixerKind::rat, T, T, D, H);
  const int64_t rnn = flops_per_token(MixerKind::rnn, T, 1, D, H);
  // One softmax entry left: score work 2*D, shared q/k extra 2*D*hd.
  CHECK(rat_lt - rnn == 2 * D * (D / H) + 2 * D + 2 * D);
}

TEST_CASE("sliding window caps the attended entries") {
  const int64_t D = 64;
  CHECK(score_flops_per_token(MixerKind::swa, 4096, 1, D, 1024) ==
        2 * D * 1024);
  CHECK(score_flops_per_token(MixerKind::swa, 512, 1, D, 1024) ==
        2 * D * 512);
}

TEST_CASE("cache formulas: exact 1:16 payload ratio at T=4096, L=16") {
  const int64_t D = 2048;
  const CacheBytes rat = cache_bytes_formula(MixerKind::rat, 4096, 16, D, {});
  const CacheBytes attn = cache_bytes_formula(MixerKind::attn, 4096, 16, D, {});
  CHECK(rat.kv_payload == 256L * 2 * D * 4);
  CHECK(attn.kv_payload == 4096L * 2 * D * 4);
  CHECK(attn.kv_payload == 16 * rat.kv_payload);
}

TEST_CASE("bench produces timed rows with sane quantiles") {
  BenchConfig cfg;
  cfg.dim = 32;
  cfg.heads = 2;
  cfg.reps = 5;
  cfg.warmup = 1;
  for (BenchMode mode : {BenchMode::train, BenchMode::prefill, BenchMode::generate}) {
    auto rows = bench(mode, MixerKind::rat, {64}, {8}, cfg);
    REQUIRE(rows.size() == 1);
    CHECK(!rows[0].oom);
    CHECK(rows[0].reps == 5);
    CHECK(rows[0].p10_ms <= rows[0].median_ms + 1e-12);
    CHECK(rows[0].median_ms <= rows[0].p90_ms + 1e-12);
    CHECK(rows[0].median_ms > 0.0);
  }
}

TEST_CASE("bench grid covers T x L for rat and ignores L otherwise") {
  BenchConfig cfg;
  cfg.dim = 32;
  cfg.reps = 5;
  cfg.warmup = 0;
  auto rows = bench(BenchMode::prefill, MixerKind::rat, {32, 64}, {8, 16}, cfg);
  CHECK(rows.size() == 4);
  rows = bench(BenchMode::prefill, MixerKind::rnn, {32, 64}, {8, 16}, cfg);
  CHECK(rows.size() == 2);
}

TEST_CASE("rows beyond the byte cap come back as OOM, not a crash") {
  BenchConfig cfg;
  cfg.dim = 64;
  cfg.reps = 5;
  cfg.byte_cap = 1000;  // everything overflows
  auto rows = bench(BenchMode::train, MixerKind::attn, {256}, {}, cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].oom);
  const std::string csv = bench_csv(rows);
  CHECK(csv.find("OOM") != std::string::npos);
}

TEST_CASE("attention rows hit the cap before rat rows at the same budget") {
  BenchConfig cfg;
  cfg.dim = 64;
  cfg.heads = 2;
  cfg.reps = 5;
  const int64_t T = 512;
  // Derive a cap between the two footprints.
  const int64_t attn_need = est_bytes(BenchMode::train, MixerKind::attn, 1, T,
                                      16, cfg.dim, cfg.heads);
  const int64_t rat_need = est_bytes(BenchMode::train, MixerKind::rat, 1, T,
                                     16, cfg.dim, cfg.heads);
  REQUIRE(rat_need < attn_need);
  cfg.byte_cap = (attn_need + rat_need) / 2;
  auto attn_rows = bench(BenchMode::train, MixerKind::attn, {T}, {}, cfg);
  auto rat_rows = bench(BenchMode::train, MixerKind::rat, {T}, {16}, cfg);
  CHECK(attn_rows[0].oom);
  CHECK(!rat_rows[0].oom);
}

TEST_CASE("csv column order is stable") {
  const std::string header =
      "mode,kind,T,L,B,reps,median_ms,p10_ms,p90_ms,cache_bytes,"
      "flops_per_token";
  BenchConfig cfg;
  cfg.dim = 32;
  cfg.reps = 5;
  cfg.warmup = 0;
  auto rows = bench(BenchMode::prefill, MixerKind::rnn, {32}, {}, cfg);
  std::istringstream is(bench_csv(rows));
  std::string first;
  std::getline(is, first);
  CHECK(first == header);
  std::string second;
  std::getline(is, second);
  CHECK(second.substr(0, 12) == "prefill,rnn,");
}
