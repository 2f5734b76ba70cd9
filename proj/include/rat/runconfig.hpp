#pragma once

#include <string>

#include "rat/bench.hpp"
#include "rat/model.hpp"
#include "rat/train.hpp"

namespace rat {

struct TaskConfig {
  std::string kind = "ppl";  // ppl | copy | kv_retrieval
  int64_t seq_len = 160;
  int64_t num_pairs = 8;
  int64_t key_alphabet = 16;
  int64_t value_alphabet = 16;
  int64_t distance_min = 128;
  int64_t eval_samples = 256;

  SynthTask to_synth(uint64_t seed) const;  // kind must be copy/kv_retrieval
};

// One canonical JSON document with model / train / task / bench sections.
// Unknown keys are rejected; every field has a default. The resolved config
// (defaults applied) is echoed into run reports for reproducibility.
struct RunConfig {
  ModelConfig model;
  TrainSpec train;
  TaskConfig task;
  BenchConfig bench;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

// Human-readable key / default / meaning table (surface for --help).
std::string run_config_docs();

}  // namespace rat
