#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rat/attention.hpp"
#include "rat/rat.hpp"
#include "rat/rnn.hpp"
#include "rat/rope.hpp"

namespace rat {

enum class MixerKind { rat, attn, swa, rnn };

std::string mixer_kind_name(MixerKind k);
MixerKind mixer_kind_from_name(const std::string& name);

struct ModelConfig {
  int64_t vocab_size = 258;
  int64_t dim = 128;
  int64_t n_layers = 2;
  int64_t heads = 2;
  int64_t chunk_len = 16;
  std::vector<MixerKind> layer_pattern = {MixerKind::rat};
  int64_t window = 1024;
  double rope_base = 10000.0;
  RopeMode rope_attn = RopeMode::token_index;
  RopeMode rope_swa = RopeMode::token_index;
  RopeMode rope_rat = RopeMode::chunk_index;
  int64_t ffn_mult = 4;
  double init_std = 0.02;
  bool tie_embeddings = false;
  RatAllocation rat_allocation = RatAllocation::shared_qk;
  int64_t rat_gate_rank = 0;  // 0 = head_dim

  int64_t head_dim() const { return dim / heads; }
  int64_t ffn_dim() const { return ffn_mult * dim; }
  // Pattern cycles over layers: pattern[i % pattern.size()].
  MixerKind layer_kind(int64_t layer) const;
  RopeSpec rope_for(MixerKind kind) const;
  void validate() const;  // throws ConfigError
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct LayerParams {
  MixerKind kind = MixerKind::rat;
  RatParams rat;
  AttnParams attn;  // attn and swa
  RnnParams rnn;
  Tensor norm_mixer_gain, norm_ffn_gain;  // [D]
  Tensor ffn_w1, ffn_w2;                  // [D, F], [F, D]
};

struct Model {
  ModelConfig cfg;
  Tensor embed;  // [V, D]
  std::vector<LayerParams> layers;
  Tensor norm_final_gain;  // [D]
  Tensor head;             // [D, V]; undefined when tie_embeddings

  static Model init(const ModelConfig& cfg, uint64_t seed);

  // Stable (name, tensor) listing; checkpoint order and optimizer slot order.
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;

  // Registers every parameter as a leaf on `tape` / clears tracking. The
  // usual cycle is: attach, forward, backward, read grads, detach.
  void attach(Tape& tape);
  void detach();
};

// tokens: [B, T] with ids < vocab_size; returns logits [B, T, vocab_size].
// For models containing rat layers, T must be a multiple of chunk_len.
Tensor model_forward(const Model& m, const Tokens& tokens);

struct ParamCount {
  int64_t total = 0;
  int64_t embedding = 0;
  int64_t head = 0;
  std::vector<int64_t> mixer_per_layer;
  int64_t ffn_per_layer = 0;
  int64_t norm_total = 0;
};

int64_t mixer_param_count(MixerKind kind, const ModelConfig& cfg);
ParamCount count_params(const ModelConfig& cfg);

// Checkpoint file: magic "RATK", format version, config JSON, then a named
// tensor table (name, shape, little-endian f32 payload). Bit-exact round
// trip.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace rat
