#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rat/model.hpp"

namespace rat {

// Per-layer sequential decoding state. RAT layers keep one anchor per
// completed chunk plus the running chunk state, so the cache holds exactly
// floor(tokens_seen / L) entries instead of one per token.
struct GenLayerCache {
  MixerKind kind = MixerKind::rat;
  RatStepStateT<float> rat;
  AttnStepStateT<float> attn;   // attn: all tokens; swa: last `window`
  std::vector<float> rnn_h;     // [D]
};

struct GenCache {
  std::vector<GenLayerCache> layers;
  int64_t tokens_seen = 0;
};

struct PrefillResult {
  std::vector<float> logits_last;  // [vocab]
  GenCache cache;
};

// Runs the parallel path over the complete chunks, then replays the trailing
// partial chunk sequentially so the cache reflects exactly the tokens
// consumed. tokens is one sequence; batch decoding uses one cache per
// sequence.
PrefillResult prefill(const Model& m, std::span<const int32_t> tokens);

// One token through every layer using the cached state; returns next-token
// logits [vocab].
std::vector<float> decode_step(const Model& m, int32_t token, GenCache& cache);

struct CacheBytes {
  int64_t kv_payload = 0;  // growable key/value entries
  int64_t fixed = 0;       // recurrent state plus counters
  int64_t total() const { return kv_payload + fixed; }
};

CacheBytes cache_bytes(const GenCache& cache);
CacheBytes cache_bytes_layer(const GenLayerCache& layer);

// Closed-form accounting for a layer after `tokens_seen` tokens; must agree
// exactly with the measured cache (asserted in tests).
CacheBytes cache_bytes_formula(MixerKind kind, int64_t tokens_seen, int64_t L,
                               int64_t D, std::optional<int64_t> window);

}  // namespace rat
