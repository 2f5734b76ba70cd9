#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rat/bench.hpp"
#include "rat/generate.hpp"
#include "rat/model.hpp"
#include "rat/rng.hpp"
#include "rat/runconfig.hpp"
#include "rat/train.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
  uint64_t seed = 1;
  bool seed_set = false;
  bool deterministic = false;
  int threads = 0;
};

// T=1024,4096;L=4,16 -> two axis lists.
std::vector<int64_t> parse_axis(const std::string& grid, const std::string& axis) {
  std::vector<int64_t> out;
  std::stringstream parts(grid);
  std::string part;
  while (std::getline(parts, part, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) {
      throw rat::ConfigError("bad grid segment '" + part +
                             "' (expected name=v1,v2,...)");
    }
    if (part.substr(0, eq) != axis) continue;
    std::stringstream vals(part.substr(eq + 1));
    std::string v;
    while (std::getline(vals, v, ',')) {
      try {
        out.push_back(std::stoll(v));
      } catch (...) {
        throw rat::ConfigError("bad grid value '" + v + "'");
      }
    }
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw rat::DataError("cannot read file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void emit_metrics(const json& j, const std::string& out_path) {
  if (!out_path.empty()) {
    rat::write_text_file(out_path, j.dump() + "\n");
  }
  std::cerr << j.dump() << "\n";
}

int32_t pick_token(const std::vector<float>& logits, bool greedy,
                   double temperature, rat::Rng& rng) {
  if (greedy || temperature <= 0.0) {
    int32_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = int32_t(i);
    }
    return best;
  }
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, double(v));
  std::vector<double> p(logits.size());
  double z = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((double(logits[i]) - mx) / temperature);
    z += p[i];
  }
  double r = rng.uniform() * z;
  for (size_t i = 0; i < p.size(); ++i) {
    r -= p[i];
    if (r <= 0) return int32_t(i);
  }
  return int32_t(p.size()) - 1;
}

int cmd_train(const GlobalOpts& g, const std::string& config_path,
              const std::vector<std::string>& corpus_paths,
              const std::string& out_dir) {
  rat::RunConfig cfg =
      config_path.empty() ? rat::RunConfig{} : rat::load_run_config(config_path);
  if (g.seed_set) cfg.train.seed = g.seed;
  const std::string echo = rat::run_config_to_json(cfg);
  rat::Model model = rat::Model::init(cfg.model, cfg.train.seed);
  rat::RunReport report;
  if (cfg.task.kind == "ppl") {
    if (corpus_paths.empty()) {
      throw rat::ConfigError("train: --corpus required for task.kind=ppl");
    }
    rat::Corpus corpus = rat::ingest(corpus_paths);
    report = rat::train_lm(model, corpus, cfg.train, out_dir, echo);
  } else {
    report = rat::train_synth(model, cfg.task.to_synth(cfg.train.seed),
                              cfg.train, out_dir, echo);
  }
  json j{{"final_val_ppl", report.final_val_ppl},
         {"final_train_loss", report.final_train_loss},
         {"steps", report.steps},
         {"wall_seconds", report.wall_seconds}};
  if (report.synth_accuracy >= 0) j["synth_accuracy"] = report.synth_accuracy;
  std::cerr << j.dump() << "\n";
  return 0;
}

int cmd_generate(const GlobalOpts& g, const std::string& ckpt,
                 const std::string& prompt_file, int64_t max_new, bool greedy,
                 double temperature, const std::string& timing_out) {
  rat::Model model = rat::load_checkpoint(ckpt);
  const std::string prompt = read_file(prompt_file);
  if (prompt.empty()) throw rat::DataError("empty prompt file");
  std::vector<int32_t> tokens;
  for (unsigned char c : prompt) tokens.push_back(int32_t(c));

  rat::Rng rng(g.seed);
  const auto t0 = std::chrono::steady_clock::now();
  rat::PrefillResult pre = rat::prefill(model, tokens);
  const auto t1 = std::chrono::steady_clock::now();

  std::vector<float> logits = std::move(pre.logits_last);
  int64_t emitted = 0;
  for (int64_t i = 0; i < max_new; ++i) {
    const int32_t tok = pick_token(logits, greedy, temperature, rng);
    if (tok < 256) {
      std::fputc(tok, stdout);
    } else if (tok == rat::kSepId) {
      std::fputc('\n', stdout);
    }  // pad prints nothing
    std::fflush(stdout);
    emitted += 1;
    logits = rat::decode_step(model, tok, pre.cache);
  }
  const auto t2 = std::chrono::steady_clock::now();

  const double prefill_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double decode_ms =
      std::chrono::duration<double, std::milli>(t2 - t1).count();
  const rat::CacheBytes cb = rat::cache_bytes(pre.cache);
  json j{{"prefill_ms", prefill_ms},
         {"decode_ms_total", decode_ms},
         {"decode_ms_per_token", emitted > 0 ? decode_ms / double(emitted) : 0.0},
         {"prompt_tokens", int64_t(tokens.size())},
         {"new_tokens", emitted},
         {"cache_bytes", cb.total()}};
  emit_metrics(j, timing_out);
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt,
             const std::string& task, const std::string& config_path,
             const std::vector<std::string>& corpus_paths,
             const std::string& out_path) {
  rat::RunConfig cfg =
      config_path.empty() ? rat::RunConfig{} : rat::load_run_config(config_path);
  if (g.seed_set) cfg.train.seed = g.seed;
  rat::Model model = rat::load_checkpoint(ckpt);
  json j;
  j["task"] = task;
  if (task == "ppl") {
    if (corpus_paths.empty()) {
      throw rat::ConfigError("eval: --corpus required for task ppl");
    }
    rat::Corpus corpus = rat::ingest(corpus_paths);
    const double loss = rat::eval_lm_loss(model, corpus, cfg.train);
    j["val_loss"] = loss;
    j["val_ppl"] = std::exp(loss);
  } else {
    cfg.task.kind = task;
    const double acc = rat::eval_synth(model, cfg.task.to_synth(cfg.train.seed),
                                       cfg.task.eval_samples, cfg.train.seed);
    j["accuracy"] = acc;
    j["eval_samples"] = cfg.task.eval_samples;
  }
  emit_metrics(j, out_path);
  return 0;
}

int cmd_bench(const GlobalOpts& g, const std::string& mode,
              const std::string& kind, const std::string& grid,
              const std::string& config_path, const std::string& out_path) {
  rat::RunConfig cfg =
      config_path.empty() ? rat::RunConfig{} : rat::load_run_config(config_path);
  if (g.seed_set) cfg.bench.seed = g.seed;
  std::vector<int64_t> Ts = parse_axis(grid, "T");
  std::vector<int64_t> Ls = parse_axis(grid, "L");
  if (Ts.empty()) throw rat::ConfigError("bench: grid needs T=...");
  const auto rows = rat::bench(rat::bench_mode_from_name(mode),
                               rat::mixer_kind_from_name(kind), Ts, Ls,
                               cfg.bench);
  const std::string csv = rat::bench_csv(rows);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    rat::write_text_file(out_path, csv);
    std::cerr << json{{"rows", rows.size()}, {"out", out_path}}.dump() << "\n";
  }
  return 0;
}

int cmd_inspect(const std::string& ckpt) {
  rat::Model model = rat::load_checkpoint(ckpt);
  const rat::ParamCount pc = rat::count_params(model.cfg);
  std::cout << "config: " << rat::model_config_to_json(model.cfg) << "\n\n";
  std::printf("%-28s %14s\n", "tensor group", "params");
  std::printf("%-28s %14lld\n", "embedding", (long long)pc.embedding);
  for (size_t i = 0; i < pc.mixer_per_layer.size(); ++i) {
    const std::string name =
        "layer." + std::to_string(i) + "." +
        rat::mixer_kind_name(model.cfg.layer_kind(int64_t(i)));
    std::printf("%-28s %14lld\n", (name + ".mixer").c_str(),
                (long long)pc.mixer_per_layer[i]);
    std::printf("%-28s %14lld\n", (name + ".ffn").c_str(),
                (long long)pc.ffn_per_layer);
  }
  std::printf("%-28s %14lld\n", "norm gains", (long long)pc.norm_total);
  std::printf("%-28s %14lld\n", "head", (long long)pc.head);
  std::printf("%-28s %14lld\n", "total", (long long)pc.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rat: chunked recurrence + inter-chunk attention language "
               "models (train / generate / eval / bench / inspect)"};
  app.require_subcommand(1);
  app.footer(rat::run_config_docs());

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global seed override")
      ->each([&](const std::string&) { g.seed_set = true; });
  app.add_flag("--deterministic", g.deterministic,
               "bit-reproducible mode: fixed seeds; all reductions already "
               "run in a fixed order regardless of thread count");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");

  std::string config_path, out_dir, ckpt, prompt_file, timing_out, task = "ppl";
  std::string mode = "prefill", kind = "rat", grid = "T=1024,4096;L=16";
  std::string out_path;
  std::vector<std::string> corpus_paths;
  int64_t max_new = 0;
  bool greedy = false;
  double temperature = 1.0;

  CLI::App* train = app.add_subcommand("train", "train a model per config");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--corpus", corpus_paths, "corpus files or directories");
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* gen = app.add_subcommand("generate", "prefill a prompt then decode");
  gen->add_option("--ckpt", ckpt, "checkpoint file")->required();
  gen->add_option("--prompt-file", prompt_file, "prompt bytes")->required();
  gen->add_option("--max-new", max_new, "tokens to generate")->required();
  gen->add_flag("--greedy", greedy, "argmax decoding (default sampling)");
  gen->add_option("--temperature", temperature, "sampling temperature");
  gen->add_option("--timing-out", timing_out, "timing JSON file");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--task", task, "ppl | copy | kv_retrieval")->required();
  ev->add_option("--config", config_path, "run config JSON");
  ev->add_option("--corpus", corpus_paths, "corpus for ppl");
  ev->add_option("--out", out_path, "metrics JSON file");

  CLI::App* be = app.add_subcommand("bench", "single-layer latency grid");
  be->add_option("--mode", mode, "train | prefill | generate")->required();
  be->add_option("--kind", kind, "rat | attn | swa | rnn")->required();
  be->add_option("--grid", grid, "axis lists, e.g. \"T=1024,4096;L=4,16\"");
  be->add_option("--config", config_path, "run config JSON");
  be->add_option("--out", out_path, "CSV output file (default stdout)");

  CLI::App* in = app.add_subcommand("inspect", "print config and param counts");
  in->add_option("--ckpt", ckpt, "checkpoint file")->required();

  // Global flags remain valid after the subcommand name.
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (g.threads > 0) rat::set_num_threads(g.threads);
    if (train->parsed()) return cmd_train(g, config_path, corpus_paths, out_dir);
    if (gen->parsed()) {
      // Greedy is the default decoding policy; sampling is opt-in.
      const bool use_greedy = greedy || gen->count("--temperature") == 0;
      return cmd_generate(g, ckpt, prompt_file, max_new, use_greedy,
                          temperature, timing_out);
    }
    if (ev->parsed()) {
      return cmd_eval(g, ckpt, task, config_path, corpus_paths, out_path);
    }
    if (be->parsed()) {
      return cmd_bench(g, mode, kind, grid, config_path, out_path);
    }
    if (in->parsed()) return cmd_inspect(ckpt);
  } catch (const std::exception& e) {
    const int code = int(rat::exit_code_for(e));
    json err{{"error", e.what()}, {"exit_code", code}};
    std::cerr << err.dump() << "\n";
    return code;
  }
  return 0;
}
