#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rat/model.hpp"

namespace rat {

enum class BenchMode { train, prefill, generate };

std::string bench_mode_name(BenchMode m);
BenchMode bench_mode_from_name(const std::string& name);

struct BenchConfig {
  int64_t dim = 128;
  int64_t heads = 2;
  int64_t batch = 1;
  int64_t reps = 7;     // >= 5
  int64_t warmup = 2;   // excluded from statistics
  int64_t window = 1024;  // swa only
  int64_t byte_cap = 2LL * 1024 * 1024 * 1024;
  uint64_t seed = 7;
};

struct BenchRow {
  BenchMode mode;
  MixerKind kind;
  int64_t T = 0, L = 0, B = 0, reps = 0;
  double median_ms = 0, p10_ms = 0, p90_ms = 0;
  int64_t cache_bytes = 0;      // generate mode: total cache after T tokens
  int64_t flops_per_token = 0;  // closed form at the final position
  bool oom = false;             // byte cap exceeded; timings not measured
};

// Closed-form multiply-add counts for one mixing layer at the final position
// of a length-T sequence (projections + recurrence + score/value work).
int64_t flops_per_token(MixerKind kind, int64_t T, int64_t L, int64_t D,
                        int64_t H, std::optional<int64_t> window = {});

// The attention score + value-aggregation part only: 2*D*(number of
// attended entries). For a rat layer the entries are the previous-chunk
// anchors plus the running self term.
int64_t score_flops_per_token(MixerKind kind, int64_t T, int64_t L, int64_t D,
                              std::optional<int64_t> window = {});

// Same, at an arbitrary 0-based position t: work depends on the chunk index
// for rat layers, the position for attention, and is constant for the rnn.
int64_t score_flops_at(MixerKind kind, int64_t t, int64_t L, int64_t D,
                       std::optional<int64_t> window = {});

// Rough accounting of the dominant transient buffers for the byte cap.
int64_t est_bytes(BenchMode mode, MixerKind kind, int64_t B, int64_t T,
                  int64_t L, int64_t D, int64_t H);

// Times a single mixer layer (with projections) over a (T, L) grid. L is
// ignored for non-rat kinds (one row per T). Rows whose estimated footprint
// exceeds the byte cap are recorded as OOM rather than crashing.
std::vector<BenchRow> bench(BenchMode mode, MixerKind kind,
                            const std::vector<int64_t>& Ts,
                            const std::vector<int64_t>& Ls,
                            const BenchConfig& cfg);

// CSV with the stable column order:
// mode,kind,T,L,B,reps,median_ms,p10_ms,p90_ms,cache_bytes,flops_per_token
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace rat
