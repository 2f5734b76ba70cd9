#include "rat/model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rat {

using nlohmann::json;

std::string mixer_kind_name(MixerKind k) {
  switch (k) {
    case MixerKind::rat: return "rat";
    case MixerKind::attn: return "attn";
    case MixerKind::swa: return "swa";
    case MixerKind::rnn: return "rnn";
  }
  return "?";
}

MixerKind mixer_kind_from_name(const std::string& name) {
  if (name == "rat") return MixerKind::rat;
  if (name == "attn") return MixerKind::attn;
  if (name == "swa") return MixerKind::swa;
  if (name == "rnn") return MixerKind::rnn;
  throw ConfigError("unknown mixer kind '" + name +
                    "' (expected rat, attn, swa, or rnn)");
}

MixerKind ModelConfig::layer_kind(int64_t layer) const {
  return layer_pattern[static_cast<size_t>(layer) % layer_pattern.size()];
}

RopeSpec ModelConfig::rope_for(MixerKind kind) const {
  switch (kind) {
    case MixerKind::attn: return make_rope_spec(rope_attn, head_dim(), rope_base);
    case MixerKind::swa: return make_rope_spec(rope_swa, head_dim(), rope_base);
    case MixerKind::rat: return make_rope_spec(rope_rat, head_dim(), rope_base);
    case MixerKind::rnn: return make_rope_spec(RopeMode::none, head_dim(), rope_base);
  }
  throw ConfigError("bad mixer kind");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (dim < 1 || n_layers < 1) throw ConfigError("dim and n_layers must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("heads must divide dim: dim=" + std::to_string(dim) +
                      " heads=" + std::to_string(heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("head_dim must be even for rotary encoding, got " +
                      std::to_string(head_dim()));
  }
  if (chunk_len < 1) throw ConfigError("chunk_len must be >= 1");
  if (layer_pattern.empty()) throw ConfigError("layer_pattern must be non-empty");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  if (rope_attn == RopeMode::chunk_index || rope_swa == RopeMode::chunk_index) {
    throw ConfigError("attention layers use token_index or none rope modes");
  }
  if (rope_rat == RopeMode::token_index) {
    throw ConfigError("rat layers use chunk_index or none rope modes");
  }
  if (rat_gate_rank < 0) throw ConfigError("rat_gate_rank must be >= 0");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["vocab_size"] = cfg.vocab_size;
  j["dim"] = cfg.dim;
  j["n_layers"] = cfg.n_layers;
  j["heads"] = cfg.heads;
  j["chunk_len"] = cfg.chunk_len;
  std::vector<std::string> pat;
  for (MixerKind k : cfg.layer_pattern) pat.push_back(mixer_kind_name(k));
  j["layer_pattern"] = pat;
  j["window"] = cfg.window;
  j["rope_base"] = cfg.rope_base;
  j["rope_attn"] = rope_mode_name(cfg.rope_attn);
  j["rope_swa"] = rope_mode_name(cfg.rope_swa);
  j["rope_rat"] = rope_mode_name(cfg.rope_rat);
  j["ffn_mult"] = cfg.ffn_mult;
  j["init_std"] = cfg.init_std;
  j["tie_embeddings"] = cfg.tie_embeddings;
  j["rat_allocation"] = rat_allocation_name(cfg.rat_allocation);
  j["rat_gate_rank"] = cfg.rat_gate_rank;
  return j.dump();  // nlohmann keeps object keys sorted: canonical form
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  static const char* known[] = {
      "vocab_size", "dim", "n_layers", "heads", "chunk_len", "layer_pattern",
      "window", "rope_base", "rope_attn", "rope_swa", "rope_rat", "ffn_mult",
      "init_std", "tie_embeddings", "rat_allocation", "rat_gate_rank"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown model config key '" + it.key() + "'");
  }
  try {
    if (j.contains("vocab_size")) cfg.vocab_size = j["vocab_size"].get<int64_t>();
    if (j.contains("dim")) cfg.dim = j["dim"].get<int64_t>();
    if (j.contains("n_layers")) cfg.n_layers = j["n_layers"].get<int64_t>();
    if (j.contains("heads")) cfg.heads = j["heads"].get<int64_t>();
    if (j.contains("chunk_len")) cfg.chunk_len = j["chunk_len"].get<int64_t>();
    if (j.contains("layer_pattern")) {
      cfg.layer_pattern.clear();
      for (const auto& s : j["layer_pattern"]) {
        cfg.layer_pattern.push_back(mixer_kind_from_name(s.get<std::string>()));
      }
    }
    if (j.contains("window")) cfg.window = j["window"].get<int64_t>();
    if (j.contains("rope_base")) cfg.rope_base = j["rope_base"].get<double>();
    if (j.contains("rope_attn")) cfg.rope_attn = rope_mode_from_name(j["rope_attn"]);
    if (j.contains("rope_swa")) cfg.rope_swa = rope_mode_from_name(j["rope_swa"]);
    if (j.contains("rope_rat")) cfg.rope_rat = rope_mode_from_name(j["rope_rat"]);
    if (j.contains("ffn_mult")) cfg.ffn_mult = j["ffn_mult"].get<int64_t>();
    if (j.contains("init_std")) cfg.init_std = j["init_std"].get<double>();
    if (j.contains("tie_embeddings")) cfg.tie_embeddings = j["tie_embeddings"].get<bool>();
    if (j.contains("rat_allocation")) {
      cfg.rat_allocation = rat_allocation_from_name(j["rat_allocation"]);
    }
    if (j.contains("rat_gate_rank")) cfg.rat_gate_rank = j["rat_gate_rank"].get<int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  const int64_t D = cfg.dim, F = cfg.ffn_dim();
  m.embed = rng.gaussian_tensor<float>({cfg.vocab_size, D}, cfg.init_std);
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    LayerParams layer;
    layer.kind = cfg.layer_kind(i);
    switch (layer.kind) {
      case MixerKind::rat:
        layer.rat = RatParams::init(D, cfg.heads, cfg.init_std, rng,
                                    cfg.rat_allocation, cfg.rat_gate_rank);
        break;
      case MixerKind::attn:
      case MixerKind::swa:
        layer.attn = AttnParams::init(D, cfg.heads, cfg.init_std, rng);
        break;
      case MixerKind::rnn:
        layer.rnn = RnnParams::init(D, cfg.init_std, rng);
        break;
    }
    layer.norm_mixer_gain = Tensor::full({D}, 1.0f);
    layer.norm_ffn_gain = Tensor::full({D}, 1.0f);
    layer.ffn_w1 = rng.gaussian_tensor<float>({D, F}, cfg.init_std);
    layer.ffn_w2 = rng.gaussian_tensor<float>({F, D}, cfg.init_std);
    m.layers.push_back(std::move(layer));
  }
  m.norm_final_gain = Tensor::full({D}, 1.0f);
  if (!cfg.tie_embeddings) {
    m.head = rng.gaussian_tensor<float>({D, cfg.vocab_size}, cfg.init_std);
  }
  return m;
}

namespace {

void collect_params(Model& m,
                    std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back("embed", &m.embed);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    LayerParams& l = m.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    const std::string mixer = pre + "mixer." + mixer_kind_name(l.kind) + ".";
    switch (l.kind) {
      case MixerKind::rat:
        out.emplace_back(mixer + "w_q", &l.rat.w_q);
        out.emplace_back(mixer + "w_k", &l.rat.w_k);
        out.emplace_back(mixer + "w_v", &l.rat.w_v);
        if (l.rat.alloc == RatAllocation::shared_qk) {
          out.emplace_back(mixer + "w_g", &l.rat.w_g);
          out.emplace_back(mixer + "w_z", &l.rat.w_z);
        } else {
          out.emplace_back(mixer + "w_g_in", &l.rat.w_g_in);
          out.emplace_back(mixer + "w_g_out", &l.rat.w_g_out);
          out.emplace_back(mixer + "w_z_in", &l.rat.w_z_in);
          out.emplace_back(mixer + "w_z_out", &l.rat.w_z_out);
        }
        out.emplace_back(mixer + "w_o", &l.rat.w_o);
        break;
      case MixerKind::attn:
      case MixerKind::swa:
        out.emplace_back(mixer + "w_q", &l.attn.w_q);
        out.emplace_back(mixer + "w_k", &l.attn.w_k);
        out.emplace_back(mixer + "w_v", &l.attn.w_v);
        out.emplace_back(mixer + "w_o", &l.attn.w_o);
        break;
      case MixerKind::rnn:
        out.emplace_back(mixer + "w_v", &l.rnn.w_v);
        out.emplace_back(mixer + "w_g", &l.rnn.w_g);
        out.emplace_back(mixer + "w_z", &l.rnn.w_z);
        out.emplace_back(mixer + "w_o", &l.rnn.w_o);
        break;
    }
    out.emplace_back(pre + "norm_mixer.gain", &l.norm_mixer_gain);
    out.emplace_back(pre + "norm_ffn.gain", &l.norm_ffn_gain);
    out.emplace_back(pre + "ffn.w1", &l.ffn_w1);
    out.emplace_back(pre + "ffn.w2", &l.ffn_w2);
  }
  out.emplace_back("norm_final.gain", &m.norm_final_gain);
  if (!m.cfg.tie_embeddings) out.emplace_back("head", &m.head);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_params(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor*>> tmp;
  collect_params(*const_cast<Model*>(this), tmp);
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(tmp.size());
  for (auto& [name, t] : tmp) out.emplace_back(name, t);
  return out;
}

void Model::attach(Tape& tape) {
  for (auto& [name, t] : named_params()) tape.leaf(*t);
}

void Model::detach() {
  for (auto& [name, t] : named_params()) {
    t->tape = nullptr;
    t->node = -1;
  }
}

Tensor model_forward(const Model& m, const Tokens& tokens) {
  if (tokens.shape.size() != 2) {
    throw ShapeError("model_forward: tokens must be [B, T], got " +
                     shape_str(tokens.shape));
  }
  const ModelConfig& cfg = m.cfg;
  Tensor h = embedding_lookup(m.embed, tokens);
  for (const LayerParams& layer : m.layers) {
    Tensor nx = rmsnorm(h, layer.norm_mixer_gain);
    Tensor mix;
    switch (layer.kind) {
      case MixerKind::rat:
        mix = rat_forward_parallel(nx, layer.rat, cfg.chunk_len,
                                   cfg.rope_for(MixerKind::rat));
        break;
      case MixerKind::attn:
        mix = attn_forward(nx, layer.attn, std::nullopt,
                           cfg.rope_for(MixerKind::attn));
        break;
      case MixerKind::swa:
        mix = attn_forward(nx, layer.attn, cfg.window,
                           cfg.rope_for(MixerKind::swa));
        break;
      case MixerKind::rnn:
        mix = rnn_forward(nx, layer.rnn).y;
        break;
    }
    h = add(h, mix);
    Tensor nf = rmsnorm(h, layer.norm_ffn_gain);
    Tensor f = matmul(gelu(matmul(nf, layer.ffn_w1)), layer.ffn_w2);
    h = add(h, f);
  }
  h = rmsnorm(h, m.norm_final_gain);
  if (cfg.tie_embeddings) return matmul(h, transpose(m.embed, 0, 1));
  return matmul(h, m.head);
}

int64_t mixer_param_count(MixerKind kind, const ModelConfig& cfg) {
  const int64_t D = cfg.dim, hd = cfg.head_dim();
  switch (kind) {
    case MixerKind::attn:
    case MixerKind::swa:
    case MixerKind::rnn:
      return 4 * D * D;
    case MixerKind::rat: {
      if (cfg.rat_allocation == RatAllocation::shared_qk) {
        return 4 * D * D + 2 * D * hd;  // full v/g/z/o plus shared q,k
      }
      const int64_t r = cfg.rat_gate_rank > 0 ? cfg.rat_gate_rank : hd;
      return 4 * D * D + 4 * D * r;  // full q/k/v/o plus low-rank gates
    }
  }
  throw ConfigError("bad mixer kind");
}

ParamCount count_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamCount pc;
  const int64_t D = cfg.dim;
  pc.embedding = cfg.vocab_size * D;
  pc.head = cfg.tie_embeddings ? 0 : D * cfg.vocab_size;
  pc.ffn_per_layer = D * cfg.ffn_dim() + cfg.ffn_dim() * D;
  pc.norm_total = (2 * cfg.n_layers + 1) * D;
  pc.total = pc.embedding + pc.head + pc.norm_total;
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    const int64_t mix = mixer_param_count(cfg.layer_kind(i), cfg);
    pc.mixer_per_layer.push_back(mix);
    pc.total += mix + pc.ffn_per_layer;
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'R', 'A', 'T', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw DataError("checkpoint truncated");
  }
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw DataError("checkpoint truncated");
  }
  return v;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const std::string cfg_json = model_config_to_json(m.cfg);
  write_u64(os, cfg_json.size());
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  const auto params = m.named_params();
  write_u64(os, params.size());
  for (const auto& [name, t] : params) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t->shape.size());
    for (int64_t d : t->shape) write_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t->ptr()),
             static_cast<std::streamsize>(sizeof(float) * t->size()));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad checkpoint magic in " + path +
                    " (expected \"RATK\")");
  }
  const uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + " (expected " +
                    std::to_string(kVersion) + ")");
  }
  const uint64_t cfg_len = read_u64(is);
  std::string cfg_json(cfg_len, '\0');
  if (!is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len))) {
    throw DataError("checkpoint truncated in config block");
  }
  Model m = Model::init(model_config_from_json(cfg_json), /*seed=*/0);

  auto params = m.named_params();
  std::vector<bool> filled(params.size(), false);
  const uint64_t n_tensors = read_u64(is);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    const uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw DataError("checkpoint truncated in tensor table");
    }
    const uint64_t ndim = read_u64(is);
    Shape shape(ndim);
    for (uint64_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int64_t>(read_u64(is));
    }
    size_t slot = params.size();
    for (size_t s = 0; s < params.size(); ++s) {
      if (params[s].first == name) {
        slot = s;
        break;
      }
    }
    if (slot == params.size()) {
      throw DataError("unknown tensor name '" + name + "' in checkpoint");
    }
    Tensor* t = params[slot].second;
    if (t->shape != shape) {
      throw DataError("tensor '" + name + "' has shape " + shape_str(shape) +
                      " but config expects " + shape_str(t->shape));
    }
    if (!is.read(reinterpret_cast<char*>(t->ptr()),
                 static_cast<std::streamsize>(sizeof(float) * t->size()))) {
      throw DataError("checkpoint truncated in tensor '" + name + "'");
    }
    filled[slot] = true;
  }
  for (size_t s = 0; s < params.size(); ++s) {
    if (!filled[s]) {
      throw DataError("checkpoint missing tensor '" + params[s].first + "'");
    }
  }
  return m;
}

}  // namespace rat
