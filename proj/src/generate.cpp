#include "rat/generate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rat {

namespace {

// Row-wise rmsnorm on a raw [D] vector, matching ops::rmsnorm.
void rmsnorm_row(const float* x, const float* gain, float* out, int64_t D,
                 float eps = 1e-5f) {
  float ms = 0;
  for (int64_t j = 0; j < D; ++j) ms += x[j] * x[j];
  const float inv = 1.0f / std::sqrt(ms / float(D) + eps);
  for (int64_t j = 0; j < D; ++j) out[j] = x[j] * gain[j] * inv;
}

GenLayerCache make_layer_cache(const LayerParams& layer, int64_t D) {
  GenLayerCache c;
  c.kind = layer.kind;
  if (layer.kind == MixerKind::rat) {
    c.rat.cur_ktilde.assign(static_cast<size_t>(D), 0.0f);
    c.rat.cur_vtilde.assign(static_cast<size_t>(D), 0.0f);
  } else if (layer.kind == MixerKind::rnn) {
    c.rnn_h.assign(static_cast<size_t>(D), 0.0f);
  }
  return c;
}

// One RNN step: h = g*h + (1-g)*v; y = (z*h) W_o.
void rnn_step(const float* x_t, const RnnParams& p, std::vector<float>& h,
              float* y_out) {
  const int64_t D = p.w_v.dim(0);
  std::vector<float> g(D), z(D), v(D), gated(D);
  for (int64_t j = 0; j < D; ++j) {
    float ag = 0, az = 0, av = 0;
    for (int64_t i = 0; i < D; ++i) {
      const float xi = x_t[i];
      ag += xi * p.w_g.ptr()[i * D + j];
      az += xi * p.w_z.ptr()[i * D + j];
      av += xi * p.w_v.ptr()[i * D + j];
    }
    g[j] = 1.0f / (1.0f + std::exp(-ag));
    z[j] = 1.0f / (1.0f + std::exp(-az));
    v[j] = av;
  }
  for (int64_t j = 0; j < D; ++j) {
    h[j] = g[j] * h[j] + (1.0f - g[j]) * v[j];
    gated[j] = z[j] * h[j];
  }
  for (int64_t j = 0; j < D; ++j) {
    float acc = 0;
    for (int64_t i = 0; i < D; ++i) acc += gated[i] * p.w_o.ptr()[i * D + j];
    y_out[j] = acc;
  }
}

// Mixer output for one token given the layer cache; advances the cache.
void mixer_step(const Model& m, const LayerParams& layer, GenLayerCache& cache,
                const float* nx, float* mix) {
  const ModelConfig& cfg = m.cfg;
  switch (layer.kind) {
    case MixerKind::rat:
      rat_step(nx, layer.rat, cfg.chunk_len, cfg.rope_for(MixerKind::rat),
               cache.rat, mix);
      break;
    case MixerKind::attn:
      attn_step(nx, layer.attn, std::nullopt, cfg.rope_for(MixerKind::attn),
                cache.attn, mix);
      break;
    case MixerKind::swa:
      attn_step(nx, layer.attn, cfg.window, cfg.rope_for(MixerKind::swa),
                cache.attn, mix);
      break;
    case MixerKind::rnn:
      rnn_step(nx, layer.rnn, cache.rnn_h, mix);
      break;
  }
}

}  // namespace

PrefillResult prefill(const Model& m, std::span<const int32_t> tokens) {
  const ModelConfig& cfg = m.cfg;
  const int64_t T = static_cast<int64_t>(tokens.size());
  const int64_t D = cfg.dim, L = cfg.chunk_len;
  if (T < 1) throw DataError("prefill: need at least one token");

  PrefillResult res;
  for (const LayerParams& layer : m.layers) {
    res.cache.layers.push_back(make_layer_cache(layer, D));
  }
  res.cache.tokens_seen = T;

  Tokens batch;
  batch.shape = {1, T};
  batch.ids.assign(tokens.begin(), tokens.end());
  Tensor h = embedding_lookup(m.embed, batch);  // [1, T, D] untracked

  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerParams& layer = m.layers[li];
    GenLayerCache& cache = res.cache.layers[li];
    Tensor nx = rmsnorm(h, layer.norm_mixer_gain);
    Tensor mix = Tensor::zeros({1, T, D});

    switch (layer.kind) {
      case MixerKind::rat: {
        const RopeSpec rope = cfg.rope_for(MixerKind::rat);
        const int64_t chunks_done = T / L;
        const int64_t t_complete = chunks_done * L;
        if (t_complete > 0) {
          Tensor head_part = slice(nx, 1, 0, t_complete);
          RatScanStateT<float> scan;
          Tensor y = rat_forward_parallel(
              head_part, layer.rat, L, rope,
              static_cast<const Tensor*>(nullptr), &scan);
          std::memcpy(mix.ptr(), y.ptr(), sizeof(float) * t_complete * D);
          // Chunk-final states become the cached anchors, keys pre-rotated
          // by their own chunk index.
          for (int64_t c = 0; c < chunks_done; ++c) {
            const float* kt = scan.ktilde.ptr() + ((c * L) + L - 1) * D;
            const float* vt = scan.vtilde.ptr() + ((c * L) + L - 1) * D;
            std::vector<float> krow(kt, kt + D);
            if (rope.mode == RopeMode::chunk_index) {
              rope_rotate_inplace(krow.data(), cfg.heads, cfg.head_dim(), c,
                                  rope.base);
            }
            cache.rat.anchors_k.insert(cache.rat.anchors_k.end(), krow.begin(),
                                       krow.end());
            cache.rat.anchors_v.insert(cache.rat.anchors_v.end(), vt, vt + D);
          }
        }
        cache.rat.chunk_index = chunks_done;
        cache.rat.l_in_chunk = 0;
        // Trailing partial chunk replays sequentially; this populates the
        // running state without padding.
        for (int64_t t = t_complete; t < T; ++t) {
          rat_step(nx.ptr() + t * D, layer.rat, L, rope, cache.rat,
                   mix.ptr() + t * D);
        }
        break;
      }
      case MixerKind::attn:
      case MixerKind::swa: {
        const bool is_swa = layer.kind == MixerKind::swa;
        const std::optional<int64_t> window =
            is_swa ? std::optional<int64_t>(cfg.window) : std::nullopt;
        const RopeSpec rope =
            cfg.rope_for(is_swa ? MixerKind::swa : MixerKind::attn);
        Tensor y = attn_forward(nx, layer.attn, window, rope);
        std::memcpy(mix.ptr(), y.ptr(), sizeof(float) * T * D);
        // Fill the token cache: rotated keys, raw values, last `window` only
        // for the sliding variant.
        Tensor k = matmul(nx, layer.attn.w_k);
        Tensor v = matmul(nx, layer.attn.w_v);
        const int64_t keep = window.has_value() ? std::min(T, *window) : T;
        for (int64_t t = T - keep; t < T; ++t) {
          std::vector<float> krow(k.ptr() + t * D, k.ptr() + (t + 1) * D);
          if (rope.mode == RopeMode::token_index) {
            rope_rotate_inplace(krow.data(), cfg.heads, cfg.head_dim(), t,
                                rope.base);
          }
          cache.attn.keys.insert(cache.attn.keys.end(), krow.begin(),
                                 krow.end());
          cache.attn.values.insert(cache.attn.values.end(), v.ptr() + t * D,
                                   v.ptr() + (t + 1) * D);
        }
        cache.attn.tokens_seen = T;
        break;
      }
      case MixerKind::rnn: {
        RnnOutT<float> y = rnn_forward(nx, layer.rnn);
        std::memcpy(mix.ptr(), y.y.ptr(), sizeof(float) * T * D);
        std::memcpy(cache.rnn_h.data(), y.h_last.ptr(), sizeof(float) * D);
        break;
      }
    }

    h = add(h, mix);
    Tensor nf = rmsnorm(h, layer.norm_ffn_gain);
    h = add(h, matmul(gelu(matmul(nf, layer.ffn_w1)), layer.ffn_w2));
  }

  Tensor last = reshape(slice(h, 1, T - 1, 1), {1, 1, D});
  last = rmsnorm(last, m.norm_final_gain);
  Tensor logits = cfg.tie_embeddings ? matmul(last, transpose(m.embed, 0, 1))
                                     : matmul(last, m.head);
  res.logits_last.assign(logits.ptr(), logits.ptr() + cfg.vocab_size);
  return res;
}

std::vector<float> decode_step(const Model& m, int32_t token, GenCache& cache) {
  const ModelConfig& cfg = m.cfg;
  const int64_t D = cfg.dim;
  if (cache.layers.size() != m.layers.size()) {
    throw ConfigError("decode_step: cache has " +
                      std::to_string(cache.layers.size()) + " layers, model " +
                      std::to_string(m.layers.size()));
  }
  if (token < 0 || token >= cfg.vocab_size) {
    throw DataError("token id " + std::to_string(token) +
                    " out of range [0," + std::to_string(cfg.vocab_size) + ")");
  }

  std::vector<float> h(m.embed.ptr() + int64_t(token) * D,
                       m.embed.ptr() + (int64_t(token) + 1) * D);
  std::vector<float> nx(D), mix(D);
  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerParams& layer = m.layers[li];
    GenLayerCache& lc = cache.layers[li];
    if (lc.kind != layer.kind) {
      throw ConfigError("decode_step: cache layer kind mismatch at layer " +
                        std::to_string(li));
    }
    rmsnorm_row(h.data(), layer.norm_mixer_gain.ptr(), nx.data(), D);
    mixer_step(m, layer, lc, nx.data(), mix.data());
    for (int64_t j = 0; j < D; ++j) h[j] += mix[j];

    rmsnorm_row(h.data(), layer.norm_ffn_gain.ptr(), nx.data(), D);
    // FFN row: gelu(x W1) W2 via the ops layer on a [1,1,D] view.
    Tensor row = Tensor::from({1, 1, D}, std::vector<float>(nx.begin(), nx.end()));
    Tensor f = matmul(gelu(matmul(row, layer.ffn_w1)), layer.ffn_w2);
    for (int64_t j = 0; j < D; ++j) h[j] += f.ptr()[j];
  }

  std::vector<float> hn(D);
  rmsnorm_row(h.data(), m.norm_final_gain.ptr(), hn.data(), D);
  Tensor row = Tensor::from({1, 1, D}, std::move(hn));
  Tensor logits = cfg.tie_embeddings ? matmul(row, transpose(m.embed, 0, 1))
                                     : matmul(row, m.head);
  cache.tokens_seen += 1;
  return std::vector<float>(logits.ptr(), logits.ptr() + cfg.vocab_size);
}

CacheBytes cache_bytes_layer(const GenLayerCache& layer) {
  CacheBytes cb;
  switch (layer.kind) {
    case MixerKind::rat:
      cb.kv_payload = static_cast<int64_t>(
          (layer.rat.anchors_k.size() + layer.rat.anchors_v.size()) *
          sizeof(float));
      cb.fixed = static_cast<int64_t>(
          (layer.rat.cur_ktilde.size() + layer.rat.cur_vtilde.size()) *
              sizeof(float) +
          2 * sizeof(int64_t));  // chunk_index and l_in_chunk
      break;
    case MixerKind::attn:
    case MixerKind::swa:
      cb.kv_payload = static_cast<int64_t>(
          (layer.attn.keys.size() + layer.attn.values.size()) * sizeof(float));
      cb.fixed = sizeof(int64_t);  // tokens_seen
      break;
    case MixerKind::rnn:
      cb.fixed = static_cast<int64_t>(layer.rnn_h.size() * sizeof(float));
      break;
  }
  return cb;
}

CacheBytes cache_bytes(const GenCache& cache) {
  CacheBytes total;
  for (const GenLayerCache& layer : cache.layers) {
    const CacheBytes cb = cache_bytes_layer(layer);
    total.kv_payload += cb.kv_payload;
    total.fixed += cb.fixed;
  }
  return total;
}

CacheBytes cache_bytes_formula(MixerKind kind, int64_t tokens_seen, int64_t L,
                               int64_t D, std::optional<int64_t> window) {
  CacheBytes cb;
  switch (kind) {
    case MixerKind::rat:
      cb.kv_payload = (tokens_seen / L) * 2 * D * int64_t(sizeof(float));
      cb.fixed = 2 * D * int64_t(sizeof(float)) + 2 * int64_t(sizeof(int64_t));
      break;
    case MixerKind::attn:
      cb.kv_payload = tokens_seen * 2 * D * int64_t(sizeof(float));
      cb.fixed = sizeof(int64_t);
      break;
    case MixerKind::swa: {
      const int64_t kept =
          window.has_value() ? std::min(tokens_seen, *window) : tokens_seen;
      cb.kv_payload = kept * 2 * D * int64_t(sizeof(float));
      cb.fixed = sizeof(int64_t);
      break;
    }
    case MixerKind::rnn:
      cb.fixed = D * int64_t(sizeof(float));
      break;
  }
  return cb;
}

}  // namespace rat
