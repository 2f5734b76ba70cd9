#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rat/model.hpp"
#include "rat/rng.hpp"

namespace rat {

// Byte-level vocabulary: 256 raw bytes plus separator and pad ids.
constexpr int32_t kSepId = 256;
constexpr int32_t kPadId = 257;
constexpr int64_t kByteVocab = 258;

struct Corpus {
  std::vector<int32_t> stream;  // documents joined by exactly one kSepId
};

// Each path is a UTF-8 text file (one document) or a directory of them
// (read in sorted name order). Throws DataError on an empty corpus.
Corpus ingest(const std::vector<std::string>& paths);
Corpus corpus_from_docs(const std::vector<std::string>& docs);

struct Batch {
  Tokens inputs;   // [B, T'], T' = T rounded up to a multiple of L
  Tokens targets;  // [B, T']
  std::vector<uint8_t> loss_mask;  // pad positions masked out
};

// Deterministic given the rng state; windows drawn from stream[lo, hi).
Batch sample_batch(const Corpus& corpus, int64_t batch, int64_t seq_len,
                   int64_t chunk_len, Rng& rng, int64_t lo = 0,
                   int64_t hi = -1);

struct TrainSpec {
  double lr_max = 6e-4;
  double lr_min = 1e-6;
  double warmup_fraction = 0.1;
  int64_t batch_tokens = 4096;
  int64_t seq_len = 256;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double clip_norm = 1.0;
  int64_t steps = 300;
  uint64_t seed = 1;
  double eval_fraction = 0.1;  // held-out tail of the stream
  int64_t eval_every = 50;
  int64_t eval_batches = 8;
  int64_t checkpoint_every = 0;  // 0 = final only

  int64_t batch_size() const { return std::max<int64_t>(1, batch_tokens / seq_len); }
};

// Cosine schedule with linear warmup; step is 0-based.
double lr_at(const TrainSpec& spec, int64_t step);

// Decoupled AdamW over the model's named parameter list.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8);

  // grads[i] aligned with params[i]; empty grad = all zeros. Returns the
  // pre-clip global gradient norm.
  double step(std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<const std::vector<float>*>& grads, double lr,
              double clip_norm);

 private:
  double beta1_, beta2_, weight_decay_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class SynthKind { copy, kv_retrieval };

std::string synth_kind_name(SynthKind k);
SynthKind synth_kind_from_name(const std::string& name);

struct SynthTask {
  SynthKind kind = SynthKind::kv_retrieval;
  int64_t seq_len = 160;
  int64_t num_pairs = 8;
  int64_t key_alphabet = 16;
  int64_t value_alphabet = 16;
  int64_t distance_min = 128;  // haystack value to query marker, in tokens
  uint64_t seed = 1;
};

struct SynthSample {
  std::vector<int32_t> tokens;
  std::vector<int64_t> answer_positions;  // indices into tokens
};

SynthSample gen_synth(const SynthTask& task, Rng& rng);

// Exact-match accuracy at the answer positions (argmax of the logits at the
// preceding input position).
double eval_synth(const Model& m, const SynthTask& task, int64_t n_samples,
                  uint64_t seed);

// ---------------------------------------------------------------------------
// Training loop

struct RunReport {
  std::vector<double> losses;      // per step
  std::vector<double> grad_norms;  // per step, pre-clip
  std::vector<double> lrs;
  double final_val_ppl = 0.0;
  double final_train_loss = 0.0;
  double synth_accuracy = -1.0;  // synthetic tasks only
  int64_t steps = 0;
  double wall_seconds = 0.0;
  std::string config_json;  // resolved config echo
};

// Language-model training on a byte corpus. out_dir may be empty (no files
// written); otherwise writes loss.csv, report.json, and checkpoints.
RunReport train_lm(Model& m, const Corpus& corpus, const TrainSpec& spec,
                   const std::string& out_dir,
                   const std::string& config_echo = "{}");

// Training on freshly generated synthetic samples with loss restricted to
// the answer positions.
RunReport train_synth(Model& m, const SynthTask& task, const TrainSpec& spec,
                      const std::string& out_dir,
                      const std::string& config_echo = "{}");

// Mean next-token loss of the model over eval batches (used for PPL).
double eval_lm_loss(const Model& m, const Corpus& corpus,
                    const TrainSpec& spec);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace rat
