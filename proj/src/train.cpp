#include "rat/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace rat {

namespace fs = std::filesystem;
using nlohmann::json;

Corpus corpus_from_docs(const std::vector<std::string>& docs) {
  Corpus c;
  bool first = true;
  for (const std::string& doc : docs) {
    if (!first) c.stream.push_back(kSepId);
    first = false;
    for (unsigned char ch : doc) c.stream.push_back(int32_t(ch));
  }
  if (c.stream.empty()) throw DataError("corpus is empty");
  return c;
}

Corpus ingest(const std::vector<std::string>& paths) {
  std::vector<std::string> files;
  for (const std::string& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> inner;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) inner.push_back(e.path().string());
      }
      std::sort(inner.begin(), inner.end());
      files.insert(files.end(), inner.begin(), inner.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw DataError("corpus path not found: " + p);
    }
  }
  std::vector<std::string> docs;
  for (const std::string& f : files) {
    std::ifstream is(f, std::ios::binary);
    if (!is) throw DataError("cannot read corpus file: " + f);
    std::ostringstream ss;
    ss << is.rdbuf();
    docs.push_back(ss.str());
  }
  if (docs.empty()) throw DataError("corpus is empty: no files found");
  return corpus_from_docs(docs);
}

Batch sample_batch(const Corpus& corpus, int64_t batch, int64_t seq_len,
                   int64_t chunk_len, Rng& rng, int64_t lo, int64_t hi) {
  if (hi < 0) hi = static_cast<int64_t>(corpus.stream.size());
  if (hi - lo < seq_len + 1) {
    throw DataError("corpus region too small: " + std::to_string(hi - lo) +
                    " tokens for seq_len " + std::to_string(seq_len));
  }
  const int64_t padded =
      (seq_len + chunk_len - 1) / chunk_len * chunk_len;  // multiple of L
  Batch b;
  b.inputs = Tokens::zeros({batch, padded});
  b.targets = Tokens::zeros({batch, padded});
  b.loss_mask.assign(static_cast<size_t>(batch * padded), 0);
  for (int64_t i = 0; i < batch; ++i) {
    const int64_t start = lo + rng.uniform_int(hi - lo - seq_len);
    for (int64_t t = 0; t < padded; ++t) {
      if (t < seq_len && start + t + 1 < hi) {
        b.inputs.ids[i * padded + t] = corpus.stream[start + t];
        b.targets.ids[i * padded + t] = corpus.stream[start + t + 1];
        b.loss_mask[i * padded + t] = 1;
      } else {  // pad tail with separators, masked out of the loss
        b.inputs.ids[i * padded + t] = kSepId;
        b.targets.ids[i * padded + t] = kSepId;
      }
    }
  }
  return b;
}

double lr_at(const TrainSpec& spec, int64_t step) {
  const int64_t warmup =
      std::max<int64_t>(1, int64_t(spec.warmup_fraction * double(spec.steps)));
  if (step < warmup) {
    return spec.lr_max * double(step + 1) / double(warmup);
  }
  const int64_t last = spec.steps - 1;
  if (last <= warmup) return spec.lr_min;
  const double progress = double(step - warmup) / double(last - warmup);
  const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  return spec.lr_min + (spec.lr_max - spec.lr_min) * cosine;
}

AdamW::AdamW(double beta1, double beta2, double weight_decay, double eps)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

double AdamW::step(std::vector<std::pair<std::string, Tensor*>>& params,
                   const std::vector<const std::vector<float>*>& grads,
                   double lr, double clip_norm) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params[i].second->size()), 0.0f);
      v_[i].assign(static_cast<size_t>(params[i].second->size()), 0.0f);
    }
  }
  t_ += 1;
  double sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr || grads[i]->empty()) continue;
    for (float g : *grads[i]) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  const double scale =
      (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i].second;
    const int64_t n = p->size();
    float* w = p->ptr();
    const std::vector<float>* g = grads[i];
    // Decoupled decay on matrices only; gains and other vectors are exempt.
    const double wd = p->ndim() >= 2 ? weight_decay_ : 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double gj =
          (g != nullptr && !g->empty()) ? double((*g)[j]) * scale : 0.0;
      m_[i][j] = float(beta1_ * m_[i][j] + (1.0 - beta1_) * gj);
      v_[i][j] = float(beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj);
      const double mhat = double(m_[i][j]) / bc1;
      const double vhat = double(v_[i][j]) / bc2;
      w[j] = float(double(w[j]) - lr * (mhat / (std::sqrt(vhat) + eps_) +
                                        wd * double(w[j])));
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

std::string synth_kind_name(SynthKind k) {
  return k == SynthKind::copy ? "copy" : "kv_retrieval";
}

SynthKind synth_kind_from_name(const std::string& name) {
  if (name == "copy") return SynthKind::copy;
  if (name == "kv_retrieval") return SynthKind::kv_retrieval;
  throw ConfigError("unknown synthetic task '" + name +
                    "' (expected copy or kv_retrieval)");
}

namespace {

constexpr int32_t kNoiseTok = 32;   // ' '
constexpr int32_t kKeyBase = 33;    // keys occupy [33, 33+K)
constexpr int32_t kValueBase = 128; // values occupy [128, 128+V)

void validate_task(const SynthTask& task) {
  if (task.seq_len < 8) throw ConfigError("synth seq_len too small");
  if (task.num_pairs < 1) throw ConfigError("synth num_pairs must be >= 1");
  if (task.key_alphabet < task.num_pairs) {
    throw ConfigError("key alphabet " + std::to_string(task.key_alphabet) +
                      " too small for " + std::to_string(task.num_pairs) +
                      " distinct keys");
  }
  if (task.value_alphabet < task.num_pairs) {
    throw ConfigError("value alphabet " + std::to_string(task.value_alphabet) +
                      " too small for " + std::to_string(task.num_pairs) +
                      " distinct values");
  }
  if (kKeyBase + task.key_alphabet > kValueBase) {
    throw ConfigError("key alphabet must fit below the value range");
  }
  if (kValueBase + task.value_alphabet > 256) {
    throw ConfigError("value alphabet must fit in the byte range");
  }
}

// Fisher-Yates over 0..n-1, taking the first k.
std::vector<int64_t> sample_distinct(int64_t n, int64_t k, Rng& rng) {
  std::vector<int64_t> all(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) all[i] = i;
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + rng.uniform_int(n - i);
    std::swap(all[i], all[j]);
  }
  all.resize(static_cast<size_t>(k));
  return all;
}

}  // namespace

SynthSample gen_synth(const SynthTask& task, Rng& rng) {
  validate_task(task);
  SynthSample s;
  if (task.kind == SynthKind::copy) {
    const int64_t n = (task.seq_len - 1) / 2;
    s.tokens.reserve(static_cast<size_t>(2 * n + 1));
    std::vector<int32_t> src(static_cast<size_t>(n));
    for (auto& t : src) {
      t = kKeyBase + int32_t(rng.uniform_int(task.key_alphabet));
    }
    s.tokens.insert(s.tokens.end(), src.begin(), src.end());
    s.tokens.push_back(kSepId);
    s.tokens.insert(s.tokens.end(), src.begin(), src.end());
    for (int64_t i = n + 1; i < 2 * n + 1; ++i) s.answer_positions.push_back(i);
    return s;
  }

  // kv_retrieval: haystack of (key, value) pairs in two-token cells, one
  // queried key planted at a controlled distance from the query marker.
  const int64_t S = task.seq_len;
  const int64_t hay_len = S - 3;  // tail is [SEP, key_q, value_q]
  const int64_t cells = hay_len / 2;
  if (cells < task.num_pairs) {
    throw ConfigError("synth seq_len too small for " +
                      std::to_string(task.num_pairs) + " pairs");
  }
  // Queried pair must sit early enough that value -> marker >= distance_min.
  // distance(cell) = hay_len - (2*cell + 1).
  const int64_t q_cell_max = (hay_len - 1 - task.distance_min) / 2;
  if (q_cell_max < 0) {
    throw ConfigError("distance_min " + std::to_string(task.distance_min) +
                      " impossible at seq_len " + std::to_string(S));
  }

  std::vector<int64_t> keys = sample_distinct(task.key_alphabet, task.num_pairs, rng);
  std::vector<int64_t> values =
      sample_distinct(task.value_alphabet, task.num_pairs, rng);
  const int64_t q_cell = rng.uniform_int(std::min(q_cell_max + 1, cells));
  std::vector<int64_t> other_cells;
  {
    std::vector<int64_t> pool;
    for (int64_t c = 0; c < cells; ++c) {
      if (c != q_cell) pool.push_back(c);
    }
    std::vector<int64_t> picks =
        sample_distinct(int64_t(pool.size()), task.num_pairs - 1, rng);
    for (int64_t p : picks) other_cells.push_back(pool[p]);
  }

  s.tokens.assign(static_cast<size_t>(S), kNoiseTok);
  auto place = [&](int64_t cell, int64_t pair) {
    s.tokens[2 * cell] = kKeyBase + int32_t(keys[pair]);
    s.tokens[2 * cell + 1] = kValueBase + int32_t(values[pair]);
  };
  place(q_cell, 0);
  for (size_t i = 0; i < other_cells.size(); ++i) place(other_cells[i], i + 1);
  s.tokens[S - 3] = kSepId;
  s.tokens[S - 2] = kKeyBase + int32_t(keys[0]);
  s.tokens[S - 1] = kValueBase + int32_t(values[0]);
  s.answer_positions.push_back(S - 1);
  return s;
}

namespace {

Batch batch_from_samples(const std::vector<SynthSample>& samples,
                         int64_t chunk_len) {
  const int64_t B = static_cast<int64_t>(samples.size());
  const int64_t S = static_cast<int64_t>(samples[0].tokens.size());
  const int64_t padded = (S + chunk_len - 1) / chunk_len * chunk_len;
  Batch b;
  b.inputs = Tokens::zeros({B, padded});
  b.targets = Tokens::zeros({B, padded});
  b.loss_mask.assign(static_cast<size_t>(B * padded), 0);
  for (int64_t i = 0; i < B; ++i) {
    const auto& toks = samples[i].tokens;
    for (int64_t t = 0; t < padded; ++t) {
      b.inputs.ids[i * padded + t] = t < S ? toks[t] : kSepId;
      b.targets.ids[i * padded + t] = (t + 1) < S ? toks[t + 1] : kSepId;
    }
    for (int64_t a : samples[i].answer_positions) {
      if (a > 0) b.loss_mask[i * padded + a - 1] = 1;
    }
  }
  return b;
}

}  // namespace

double eval_synth(const Model& m, const SynthTask& task, int64_t n_samples,
                  uint64_t seed) {
  Rng rng(seed);
  int64_t hits = 0, total = 0;
  const int64_t eval_batch = 32;
  for (int64_t done = 0; done < n_samples; done += eval_batch) {
    const int64_t n = std::min(eval_batch, n_samples - done);
    std::vector<SynthSample> samples;
    for (int64_t i = 0; i < n; ++i) samples.push_back(gen_synth(task, rng));
    Batch b = batch_from_samples(samples, m.cfg.chunk_len);
    Tensor logits = model_forward(m, b.inputs);
    const int64_t padded = b.inputs.dim(1);
    const int64_t V = m.cfg.vocab_size;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t a : samples[i].answer_positions) {
        const float* row = logits.ptr() + ((i * padded) + a - 1) * V;
        int32_t best = 0;
        for (int64_t k = 1; k < V; ++k) {
          if (row[k] > row[best]) best = int32_t(k);
        }
        hits += best == samples[i].tokens[a] ? 1 : 0;
        total += 1;
      }
    }
  }
  return total == 0 ? 0.0 : double(hits) / double(total);
}

// ---------------------------------------------------------------------------
// Training loop

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write file: " + path);
  os << content;
}

namespace {

struct TrainHooks {
  std::function<Batch(int64_t step, Rng& rng)> next_batch;
  std::function<double()> eval_loss;  // NaN = no eval available
};

RunReport run_train(Model& m, const TrainSpec& spec, const TrainHooks& hooks,
                    const std::string& out_dir,
                    const std::string& config_echo) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config_json = config_echo;
  Rng rng(spec.seed);
  AdamW opt(spec.beta1, spec.beta2, spec.weight_decay);
  auto params = m.named_params();

  if (!out_dir.empty()) fs::create_directories(out_dir);

  for (int64_t step = 0; step < spec.steps; ++step) {
    Batch batch = hooks.next_batch(step, rng);
    const double lr = lr_at(spec, step);

    Tape tape;
    m.attach(tape);
    params = m.named_params();
    Tensor logits = model_forward(m, batch.inputs);
    Tensor loss = cross_entropy(logits, batch.targets, batch.loss_mask);
    const double loss_val = loss.item();
    if (!std::isfinite(loss_val)) {
      m.detach();
      throw NumericError("training diverged: non-finite loss at step " +
                         std::to_string(step));
    }
    tape.backward(loss);
    std::vector<const std::vector<float>*> grads;
    grads.reserve(params.size());
    for (auto& [name, t] : params) grads.push_back(&tape.grad_view(*t));
    const double gnorm = opt.step(params, grads, lr, spec.clip_norm);
    m.detach();

    report.losses.push_back(loss_val);
    report.grad_norms.push_back(gnorm);
    report.lrs.push_back(lr);

    if (spec.checkpoint_every > 0 && !out_dir.empty() &&
        (step + 1) % spec.checkpoint_every == 0) {
      save_checkpoint(m, out_dir + "/model_step" + std::to_string(step + 1) +
                             ".ratk");
    }
    if (spec.eval_every > 0 && (step + 1) % spec.eval_every == 0 &&
        hooks.eval_loss) {
      const double el = hooks.eval_loss();
      if (std::isfinite(el)) report.final_val_ppl = std::exp(el);
    }
  }
  report.steps = spec.steps;
  report.final_train_loss = report.losses.empty() ? 0.0 : report.losses.back();
  if (hooks.eval_loss) {
    const double el = hooks.eval_loss();
    if (std::isfinite(el)) report.final_val_ppl = std::exp(el);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

void write_run_outputs(const Model& m, const RunReport& report,
                       const std::string& out_dir) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  save_checkpoint(m, out_dir + "/model.ratk");
  std::ostringstream csv;
  csv << "step,lr,loss,grad_norm\n";
  for (size_t i = 0; i < report.losses.size(); ++i) {
    csv << i << "," << report.lrs[i] << "," << report.losses[i] << ","
        << report.grad_norms[i] << "\n";
  }
  write_text_file(out_dir + "/loss.csv", csv.str());

  json j;
  j["final_val_ppl"] = report.final_val_ppl;
  j["final_train_loss"] = report.final_train_loss;
  j["steps"] = report.steps;
  j["wall_seconds"] = report.wall_seconds;
  if (report.synth_accuracy >= 0) j["synth_accuracy"] = report.synth_accuracy;
  j["config"] =
      json::parse(report.config_json.empty() ? "{}" : report.config_json);
  write_text_file(out_dir + "/report.json", j.dump(2) + "\n");
}

}  // namespace

double eval_lm_loss(const Model& m, const Corpus& corpus,
                    const TrainSpec& spec) {
  const int64_t len = static_cast<int64_t>(corpus.stream.size());
  const int64_t eval_lo = int64_t(double(len) * (1.0 - spec.eval_fraction));
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  double total = 0.0;
  for (int64_t i = 0; i < spec.eval_batches; ++i) {
    Batch b = sample_batch(corpus, spec.batch_size(), spec.seq_len,
                           m.cfg.chunk_len, rng, eval_lo, len);
    Tensor logits = model_forward(m, b.inputs);
    total += cross_entropy(logits, b.targets, b.loss_mask).item();
  }
  return total / double(spec.eval_batches);
}

RunReport train_lm(Model& m, const Corpus& corpus, const TrainSpec& spec,
                   const std::string& out_dir, const std::string& config_echo) {
  const int64_t len = static_cast<int64_t>(corpus.stream.size());
  const int64_t eval_lo = int64_t(double(len) * (1.0 - spec.eval_fraction));
  TrainHooks hooks;
  hooks.next_batch = [&](int64_t, Rng& rng) {
    return sample_batch(corpus, spec.batch_size(), spec.seq_len,
                        m.cfg.chunk_len, rng, 0, eval_lo);
  };
  hooks.eval_loss = [&] { return eval_lm_loss(m, corpus, spec); };
  RunReport report = run_train(m, spec, hooks, out_dir, config_echo);
  write_run_outputs(m, report, out_dir);
  return report;
}

RunReport train_synth(Model& m, const SynthTask& task, const TrainSpec& spec,
                      const std::string& out_dir,
                      const std::string& config_echo) {
  TrainHooks hooks;
  hooks.next_batch = [&](int64_t, Rng& rng) {
    std::vector<SynthSample> samples;
    for (int64_t i = 0; i < spec.batch_size(); ++i) {
      samples.push_back(gen_synth(task, rng));
    }
    return batch_from_samples(samples, m.cfg.chunk_len);
  };
  hooks.eval_loss = nullptr;
  RunReport report = run_train(m, spec, hooks, out_dir, config_echo);
  report.synth_accuracy =
      eval_synth(m, task, /*n_samples=*/256, task.seed ^ 0xabcdef12345ull);
  write_run_outputs(m, report, out_dir);
  return report;
}

}  // namespace rat
