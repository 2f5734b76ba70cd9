#include "rat/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rat {

using nlohmann::json;

SynthTask TaskConfig::to_synth(uint64_t seed) const {
  SynthTask t;
  t.kind = synth_kind_from_name(kind);
  t.seq_len = seq_len;
  t.num_pairs = num_pairs;
  t.key_alphabet = key_alphabet;
  t.value_alphabet = value_alphabet;
  t.distance_min = distance_min;
  t.seed = seed;
  return t;
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known,
                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw ConfigError("unknown config key '" + section + "." + it.key() + "'");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for config key '" + std::string(key) +
                      "': " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  check_keys(j, {"model", "train", "task", "bench"}, "");

  RunConfig cfg;
  if (j.contains("model")) {
    cfg.model = model_config_from_json(j["model"].dump());
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"lr_max", "lr_min", "warmup_fraction", "batch_tokens",
                "seq_len", "weight_decay", "beta1", "beta2", "clip_norm",
                "steps", "seed", "eval_fraction", "eval_every", "eval_batches",
                "checkpoint_every"},
               "train");
    read_field(t, "lr_max", cfg.train.lr_max);
    read_field(t, "lr_min", cfg.train.lr_min);
    read_field(t, "warmup_fraction", cfg.train.warmup_fraction);
    read_field(t, "batch_tokens", cfg.train.batch_tokens);
    read_field(t, "seq_len", cfg.train.seq_len);
    read_field(t, "weight_decay", cfg.train.weight_decay);
    read_field(t, "beta1", cfg.train.beta1);
    read_field(t, "beta2", cfg.train.beta2);
    read_field(t, "clip_norm", cfg.train.clip_norm);
    read_field(t, "steps", cfg.train.steps);
    read_field(t, "seed", cfg.train.seed);
    read_field(t, "eval_fraction", cfg.train.eval_fraction);
    read_field(t, "eval_every", cfg.train.eval_every);
    read_field(t, "eval_batches", cfg.train.eval_batches);
    read_field(t, "checkpoint_every", cfg.train.checkpoint_every);
    if (cfg.train.steps < 1) throw ConfigError("train.steps must be >= 1");
    if (cfg.train.seq_len < 2) throw ConfigError("train.seq_len must be >= 2");
  }
  if (j.contains("task")) {
    const json& t = j["task"];
    check_keys(t,
               {"kind", "seq_len", "num_pairs", "key_alphabet",
                "value_alphabet", "distance_min", "eval_samples"},
               "task");
    read_field(t, "kind", cfg.task.kind);
    read_field(t, "seq_len", cfg.task.seq_len);
    read_field(t, "num_pairs", cfg.task.num_pairs);
    read_field(t, "key_alphabet", cfg.task.key_alphabet);
    read_field(t, "value_alphabet", cfg.task.value_alphabet);
    read_field(t, "distance_min", cfg.task.distance_min);
    read_field(t, "eval_samples", cfg.task.eval_samples);
    if (cfg.task.kind != "ppl" && cfg.task.kind != "copy" &&
        cfg.task.kind != "kv_retrieval") {
      throw ConfigError("task.kind must be ppl, copy, or kv_retrieval");
    }
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    check_keys(b,
               {"dim", "heads", "batch", "reps", "warmup", "window",
                "byte_cap", "seed"},
               "bench");
    read_field(b, "dim", cfg.bench.dim);
    read_field(b, "heads", cfg.bench.heads);
    read_field(b, "batch", cfg.bench.batch);
    read_field(b, "reps", cfg.bench.reps);
    read_field(b, "warmup", cfg.bench.warmup);
    read_field(b, "window", cfg.bench.window);
    read_field(b, "byte_cap", cfg.bench.byte_cap);
    read_field(b, "seed", cfg.bench.seed);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = json::parse(model_config_to_json(cfg.model));
  j["train"] = {{"lr_max", cfg.train.lr_max},
                {"lr_min", cfg.train.lr_min},
                {"warmup_fraction", cfg.train.warmup_fraction},
                {"batch_tokens", cfg.train.batch_tokens},
                {"seq_len", cfg.train.seq_len},
                {"weight_decay", cfg.train.weight_decay},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"clip_norm", cfg.train.clip_norm},
                {"steps", cfg.train.steps},
                {"seed", cfg.train.seed},
                {"eval_fraction", cfg.train.eval_fraction},
                {"eval_every", cfg.train.eval_every},
                {"eval_batches", cfg.train.eval_batches},
                {"checkpoint_every", cfg.train.checkpoint_every}};
  j["task"] = {{"kind", cfg.task.kind},
               {"seq_len", cfg.task.seq_len},
               {"num_pairs", cfg.task.num_pairs},
               {"key_alphabet", cfg.task.key_alphabet},
               {"value_alphabet", cfg.task.value_alphabet},
               {"distance_min", cfg.task.distance_min},
               {"eval_samples", cfg.task.eval_samples}};
  j["bench"] = {{"dim", cfg.bench.dim},
                {"heads", cfg.bench.heads},
                {"batch", cfg.bench.batch},
                {"reps", cfg.bench.reps},
                {"warmup", cfg.bench.warmup},
                {"window", cfg.bench.window},
                {"byte_cap", cfg.bench.byte_cap},
                {"seed", cfg.bench.seed}};
  return j.dump();
}

std::string run_config_docs() {
  return
      "config keys (JSON; every key optional, defaults shown):\n"
      "  model.vocab_size      258          token vocabulary (256 bytes + sep + pad)\n"
      "  model.dim             128          model width D\n"
      "  model.n_layers        2            transformer blocks\n"
      "  model.heads           2            attention heads (dim % heads == 0)\n"
      "  model.chunk_len       16           rat chunk length L\n"
      "  model.layer_pattern   [\"rat\"]      cycled mixer kinds: rat|attn|swa|rnn\n"
      "  model.window          1024         swa window (last W positions)\n"
      "  model.rope_base       10000.0      rotary base\n"
      "  model.rope_attn       token_index  token_index | none\n"
      "  model.rope_swa        token_index  token_index | none\n"
      "  model.rope_rat        chunk_index  chunk_index | none\n"
      "  model.ffn_mult        4            FFN expansion\n"
      "  model.init_std        0.02         gaussian init stddev\n"
      "  model.tie_embeddings  false        reuse embedding as output head\n"
      "  model.rat_allocation  shared_qk    shared_qk | lowrank_gates\n"
      "  model.rat_gate_rank   0            gate rank (0 = head_dim)\n"
      "  train.lr_max          0.0006       peak learning rate\n"
      "  train.lr_min          1e-06        final learning rate\n"
      "  train.warmup_fraction 0.1          linear warmup share of steps\n"
      "  train.batch_tokens    4096         tokens per optimizer step\n"
      "  train.seq_len         256          training context length\n"
      "  train.weight_decay    0.1          decoupled decay on matrices\n"
      "  train.beta1           0.9          adam beta1\n"
      "  train.beta2           0.98         adam beta2\n"
      "  train.clip_norm       1.0          global gradient-norm clip\n"
      "  train.steps           300          optimizer steps\n"
      "  train.seed            1            run seed\n"
      "  train.eval_fraction   0.1          held-out tail of the corpus\n"
      "  train.eval_every      50           eval cadence in steps (0 = end only)\n"
      "  train.eval_batches    8            batches per eval\n"
      "  train.checkpoint_every 0           step checkpoints (0 = final only)\n"
      "  task.kind             ppl          ppl | copy | kv_retrieval\n"
      "  task.seq_len          160          synthetic sample length\n"
      "  task.num_pairs        8            key/value pairs in the haystack\n"
      "  task.key_alphabet     16           distinct key tokens\n"
      "  task.value_alphabet   16           distinct value tokens\n"
      "  task.distance_min     128          min tokens from planted value to query\n"
      "  task.eval_samples     256          samples for accuracy eval\n"
      "  bench.dim             128          layer width for benchmarks\n"
      "  bench.heads           2            heads for benchmarks\n"
      "  bench.batch           1            sequences per measurement\n"
      "  bench.reps            7            timed repetitions (>= 5)\n"
      "  bench.warmup          2            discarded warmup repetitions\n"
      "  bench.window          1024         swa window for benchmarks\n"
      "  bench.byte_cap        2147483648   estimated-footprint cap before OOM row\n"
      "  bench.seed            7            benchmark input seed\n";
}

}  // namespace rat
