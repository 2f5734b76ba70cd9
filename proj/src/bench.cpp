#include "rat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <sstream>

#include "rat/generate.hpp"
#include "rat/ops.hpp"
#include "rat/rng.hpp"

namespace rat {

std::string bench_mode_name(BenchMode m) {
  switch (m) {
    case BenchMode::train: return "train";
    case BenchMode::prefill: return "prefill";
    case BenchMode::generate: return "generate";
  }
  return "?";
}

BenchMode bench_mode_from_name(const std::string& name) {
  if (name == "train") return BenchMode::train;
  if (name == "prefill") return BenchMode::prefill;
  if (name == "generate") return BenchMode::generate;
  throw ConfigError("unknown bench mode '" + name +
                    "' (expected train, prefill, or generate)");
}

int64_t score_flops_at(MixerKind kind, int64_t t, int64_t L, int64_t D,
                       std::optional<int64_t> window) {
  switch (kind) {
    case MixerKind::attn:
      return 2 * D * (t + 1);
    case MixerKind::swa: {
      const int64_t terms = window.has_value() ? std::min(t + 1, *window) : t + 1;
      return 2 * D * terms;
    }
    case MixerKind::rat: {
      const int64_t c = t / L;  // anchors of chunks < c, plus the self term
      return 2 * D * (c + 1);
    }
    case MixerKind::rnn:
      return 0;  // no attention scores at all
  }
  throw ConfigError("bad mixer kind");
}

int64_t score_flops_per_token(MixerKind kind, int64_t T, int64_t L, int64_t D,
                              std::optional<int64_t> window) {
  return score_flops_at(kind, T - 1, L, D, window);
}

int64_t flops_per_token(MixerKind kind, int64_t T, int64_t L, int64_t D,
                        int64_t H, std::optional<int64_t> window) {
  const int64_t hd = D / H;
  switch (kind) {
    case MixerKind::attn:
    case MixerKind::swa:
      return 4 * D * D + score_flops_per_token(kind, T, L, D, window);
    case MixerKind::rnn:
      return 4 * D * D + 2 * D;  // projections plus one gated update
    case MixerKind::rat:
      // Shared q/k projections, full v/g/z/o, gated update of both streams.
      return 4 * D * D + 2 * D * hd + 4 * D +
             score_flops_per_token(kind, T, L, D, window);
  }
  throw ConfigError("bad mixer kind");
}

int64_t est_bytes(BenchMode mode, MixerKind kind, int64_t B, int64_t T,
                  int64_t L, int64_t D, int64_t H) {
  const int64_t f = sizeof(float);
  const int64_t act = B * T * D * f;  // one activation plane
  switch (mode) {
    case BenchMode::generate: {
      // Dominant cost is the cache itself.
      const CacheBytes cb = cache_bytes_formula(
          kind, T, L, D, kind == MixerKind::swa ? std::optional<int64_t>(1024)
                                                : std::nullopt);
      return B * cb.total() + 16 * D * f;
    }
    case BenchMode::prefill:
      switch (kind) {
        case MixerKind::attn:
          return 8 * act + B * H * 128 * T * f;  // q/k/v/out + score block
        case MixerKind::swa:
          return 8 * act + B * H * 128 * T * f;
        case MixerKind::rat:
          return 12 * act + 2 * B * H * T * (T / L) * f;
        case MixerKind::rnn:
          return 8 * act;
      }
      break;
    case BenchMode::train: {
      // Tape keeps every intermediate; scores dominate for attention kinds.
      switch (kind) {
        case MixerKind::attn:
        case MixerKind::swa:
          return 24 * act + 3 * B * H * T * T * f;
        case MixerKind::rat:
          return 30 * act + 5 * B * H * T * (T / L) * f;
        case MixerKind::rnn:
          return 20 * act;
      }
      break;
    }
  }
  throw ConfigError("bad bench mode");
}

namespace {

struct MixerUnderTest {
  MixerKind kind;
  RatParams rat;
  AttnParams attn;
  RnnParams rnn;
  RopeSpec rope;
  int64_t window = 1024;
  int64_t chunk_len = 1;
};

MixerUnderTest make_mixer(MixerKind kind, int64_t D, int64_t H, int64_t L,
                          int64_t window, Rng& rng) {
  MixerUnderTest mx;
  mx.kind = kind;
  mx.window = window;
  mx.chunk_len = L;
  const double std_dev = 0.02;
  switch (kind) {
    case MixerKind::rat:
      mx.rat = RatParams::init(D, H, std_dev, rng);
      mx.rope = make_rope_spec(RopeMode::chunk_index, D / H);
      break;
    case MixerKind::attn:
    case MixerKind::swa:
      mx.attn = AttnParams::init(D, H, std_dev, rng);
      mx.rope = make_rope_spec(RopeMode::token_index, D / H);
      break;
    case MixerKind::rnn:
      mx.rnn = RnnParams::init(D, std_dev, rng);
      mx.rope = make_rope_spec(RopeMode::none, D / H);
      break;
  }
  return mx;
}

Tensor mixer_forward(const MixerUnderTest& mx, const Tensor& x) {
  switch (mx.kind) {
    case MixerKind::rat:
      return rat_forward_parallel(x, mx.rat, mx.chunk_len, mx.rope);
    case MixerKind::attn:
      return attn_forward(x, mx.attn, std::nullopt, mx.rope);
    case MixerKind::swa:
      return attn_forward(x, mx.attn, mx.window, mx.rope);
    case MixerKind::rnn:
      return rnn_forward(x, mx.rnn).y;
  }
  throw ConfigError("bad mixer kind");
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

// Synthetic single-layer decode state at position T, filled with plausible
// values; building it directly avoids stepping T tokens per row.
struct DecodeState {
  RatStepStateT<float> rat;
  AttnStepStateT<float> attn;
  std::vector<float> rnn_h;
};

DecodeState make_decode_state(const MixerUnderTest& mx, int64_t T, int64_t D,
                              Rng& rng) {
  DecodeState st;
  switch (mx.kind) {
    case MixerKind::rat: {
      const int64_t chunks = T / mx.chunk_len;
      st.rat.anchors_k.resize(chunks * D);
      st.rat.anchors_v.resize(chunks * D);
      for (auto& v : st.rat.anchors_k) v = float(rng.gaussian());
      for (auto& v : st.rat.anchors_v) v = float(rng.gaussian());
      st.rat.cur_ktilde.assign(D, 0.1f);
      st.rat.cur_vtilde.assign(D, 0.1f);
      st.rat.chunk_index = chunks;
      st.rat.l_in_chunk = T % mx.chunk_len;
      break;
    }
    case MixerKind::attn:
    case MixerKind::swa: {
      const int64_t kept =
          mx.kind == MixerKind::swa ? std::min<int64_t>(T, mx.window) : T;
      st.attn.keys.resize(kept * D);
      st.attn.values.resize(kept * D);
      for (auto& v : st.attn.keys) v = float(rng.gaussian());
      for (auto& v : st.attn.values) v = float(rng.gaussian());
      st.attn.tokens_seen = T;
      break;
    }
    case MixerKind::rnn:
      st.rnn_h.assign(D, 0.1f);
      break;
  }
  return st;
}

}  // namespace

std::vector<BenchRow> bench(BenchMode mode, MixerKind kind,
                            const std::vector<int64_t>& Ts,
                            const std::vector<int64_t>& Ls,
                            const BenchConfig& cfg) {
  if (cfg.reps < 5) throw ConfigError("bench reps must be >= 5");
  const int64_t D = cfg.dim, H = cfg.heads, B = cfg.batch;
  std::vector<int64_t> chunk_lens =
      kind == MixerKind::rat ? Ls : std::vector<int64_t>{1};
  if (chunk_lens.empty()) chunk_lens = {1};

  std::vector<BenchRow> rows;
  for (int64_t T : Ts) {
    for (int64_t L : chunk_lens) {
      if (kind == MixerKind::rat && T % L != 0) {
        throw ConfigError("bench: T=" + std::to_string(T) +
                          " not divisible by L=" + std::to_string(L));
      }
      BenchRow row;
      row.mode = mode;
      row.kind = kind;
      row.T = T;
      row.L = L;
      row.B = B;
      row.reps = cfg.reps;
      row.flops_per_token = flops_per_token(
          kind, T, L, D, H,
          kind == MixerKind::swa ? std::optional<int64_t>(cfg.window)
                                 : std::nullopt);
      row.cache_bytes =
          B * cache_bytes_formula(
                  kind, T, L, D,
                  kind == MixerKind::swa ? std::optional<int64_t>(cfg.window)
                                         : std::nullopt)
                  .total();

      if (est_bytes(mode, kind, B, T, L, D, H) > cfg.byte_cap) {
        row.oom = true;  // recorded, not crashed
        rows.push_back(row);
        continue;
      }

      Rng rng(cfg.seed);
      MixerUnderTest mx = make_mixer(kind, D, H, L, cfg.window, rng);
      std::vector<double> times;
      try {
        if (mode == BenchMode::generate) {
          DecodeState st = make_decode_state(mx, T, D, rng);
          std::vector<float> x(D), y(D);
          for (auto& v : x) v = float(rng.gaussian());
          for (int64_t i = 0; i < cfg.warmup + cfg.reps; ++i) {
            // One decode step for each of B per-sequence caches; the cache
            // copies stay outside the timed region.
            std::vector<DecodeState> fresh(static_cast<size_t>(B), st);
            const auto t0 = std::chrono::steady_clock::now();
            for (int64_t b = 0; b < B; ++b) {
              switch (kind) {
                case MixerKind::rat:
                  rat_step(x.data(), mx.rat, mx.chunk_len, mx.rope,
                           fresh[b].rat, y.data());
                  break;
                case MixerKind::attn:
                  attn_step(x.data(), mx.attn, std::nullopt, mx.rope,
                            fresh[b].attn, y.data());
                  break;
                case MixerKind::swa:
                  attn_step(x.data(), mx.attn, mx.window, mx.rope,
                            fresh[b].attn, y.data());
                  break;
                case MixerKind::rnn: {
                  std::vector<float>& h = fresh[b].rnn_h;
                  const RnnParams& p = mx.rnn;
                  for (int64_t j = 0; j < D; ++j) {
                    float ag = 0, az = 0, av = 0;
                    for (int64_t ii = 0; ii < D; ++ii) {
                      ag += x[ii] * p.w_g.ptr()[ii * D + j];
                      az += x[ii] * p.w_z.ptr()[ii * D + j];
                      av += x[ii] * p.w_v.ptr()[ii * D + j];
                    }
                    const float gj = 1.0f / (1.0f + std::exp(-ag));
                    h[j] = gj * h[j] + (1.0f - gj) * av;
                    y[j] = h[j] / (1.0f + std::exp(-az));
                  }
                  // Output projection kept in the measurement.
                  std::vector<float> out(D, 0.0f);
                  for (int64_t ii = 0; ii < D; ++ii) {
                    for (int64_t j = 0; j < D; ++j) {
                      out[j] += y[ii] * p.w_o.ptr()[ii * D + j];
                    }
                  }
                  y = out;
                  break;
                }
              }
            }
            const auto t1 = std::chrono::steady_clock::now();
            if (i >= cfg.warmup) {
              times.push_back(
                  std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
          }
        } else {
          Tensor x = rng.gaussian_tensor<float>({B, T, D}, 1.0);
          for (int64_t i = 0; i < cfg.warmup + cfg.reps; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            if (mode == BenchMode::train) {
              Tape tape;
              Tensor xt = x;
              tape.leaf(xt);
              // Leaf the weights so the backward pass covers projections.
              MixerUnderTest tracked = mx;
              switch (kind) {
                case MixerKind::rat:
                  tape.leaf(tracked.rat.w_q);
                  tape.leaf(tracked.rat.w_k);
                  tape.leaf(tracked.rat.w_v);
                  tape.leaf(tracked.rat.w_g);
                  tape.leaf(tracked.rat.w_z);
                  tape.leaf(tracked.rat.w_o);
                  break;
                case MixerKind::attn:
                case MixerKind::swa:
                  tape.leaf(tracked.attn.w_q);
                  tape.leaf(tracked.attn.w_k);
                  tape.leaf(tracked.attn.w_v);
                  tape.leaf(tracked.attn.w_o);
                  break;
                case MixerKind::rnn:
                  tape.leaf(tracked.rnn.w_v);
                  tape.leaf(tracked.rnn.w_g);
                  tape.leaf(tracked.rnn.w_z);
                  tape.leaf(tracked.rnn.w_o);
                  break;
              }
              Tensor y = mixer_forward(tracked, xt);
              tape.backward(sum_all(y));
            } else {
              Tensor y = mixer_forward(mx, x);
              (void)y;
            }
            const auto t1 = std::chrono::steady_clock::now();
            if (i >= cfg.warmup) {
              times.push_back(
                  std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
          }
        }
      } catch (const std::bad_alloc&) {
        row.oom = true;
        rows.push_back(row);
        continue;
      }
      row.median_ms = quantile(times, 0.5);
      row.p10_ms = quantile(times, 0.1);
      row.p90_ms = quantile(times, 0.9);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mode,kind,T,L,B,reps,median_ms,p10_ms,p90_ms,cache_bytes,"
        "flops_per_token\n";
  for (const BenchRow& r : rows) {
    os << bench_mode_name(r.mode) << "," << mixer_kind_name(r.kind) << ","
       << r.T << "," << r.L << "," << r.B << "," << r.reps << ",";
    if (r.oom) {
      os << "OOM,OOM,OOM,";
    } else {
      os << r.median_ms << "," << r.p10_ms << "," << r.p90_ms << ",";
    }
    os << r.cache_bytes << "," << r.flops_per_token << "\n";
  }
  return os.str();
}

}  // namespace rat
