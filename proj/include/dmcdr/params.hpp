#pragma once

// Learnable state: embedding tables, preference encoder, denoiser MLP, null
// token and (for some pipelines) the scoring projection. Everything lives in a
// flat list of named arrays so optimizers, gradient buffers and checkpoints
// can treat the model uniformly.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmcdr/autograd.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/rng.hpp"
#include "dmcdr/variants.hpp"

namespace dmcdr {

struct ModelConfig {
  int n_users = 0;
  int n_src_items = 0;
  int n_tgt_items = 0;
  int d1 = 64;
  int max_history_len = 20;
  int encoder_layers = 2;
  int heads = 1;
  int ff_dim = 64;
  int mlp_layers = 3;
  int hidden = 64;
  bool layer_norm = true;
  PipelineSpec pipeline;
};

inline void validate(const ModelConfig& c) {
  std::string bad;
  auto need = [&](bool ok, const char* msg) {
    if (!ok) bad += std::string(" ") + msg + ";";
  };
  need(c.n_users > 0, "n_users must be positive");
  need(c.n_src_items > 0, "n_src_items must be positive");
  need(c.n_tgt_items > 0, "n_tgt_items must be positive");
  need(c.d1 > 0, "d1 must be positive");
  need(c.max_history_len > 0, "max_history_len must be positive");
  need(c.encoder_layers >= 1 && c.encoder_layers <= 6, "encoder_layers must lie in 1..6");
  need(c.heads >= 1 && c.d1 % c.heads == 0, "heads must divide d1");
  need(c.ff_dim > 0, "ff_dim must be positive");
  need(c.mlp_layers >= 1, "mlp_layers must be >= 1");
  need(c.hidden > 0, "hidden must be positive");
  if (!bad.empty()) throw ConfigError("invalid model config:" + bad);
}

// Sinusoidal step embedding: even slots sin, odd slots cos, frequencies
// spaced geometrically from 1 down to 1e-4.
template <class S>
RowVector<S> step_embedding(int t, int dim) {
  RowVector<S> e(dim);
  const int pairs = (dim + 1) / 2;
  for (int j = 0; j < pairs; ++j) {
    const double freq = pairs > 1 ? std::pow(1e-4, static_cast<double>(j) / (pairs - 1)) : 1.0;
    const double a = t * freq;
    e(2 * j) = static_cast<S>(std::sin(a));
    if (2 * j + 1 < dim) e(2 * j + 1) = static_cast<S>(std::cos(a));
  }
  return e;
}

template <class S>
struct ParamArray {
  std::string name;
  Matrix<S> value;
};

// Handles into the array list for one encoder layer.
struct EncoderLayerIds {
  int ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
  int ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ParamIds {
  int user_emb = -1, src_item_emb = -1, tgt_item_emb = -1, null_token = -1;
  int pos_emb = -1, projection = -1;
  int final_ln_gain = -1, final_ln_bias = -1;
  std::vector<EncoderLayerIds> encoder;
  std::vector<int> den_w, den_b;
};

template <class S>
class ModelParams {
 public:
  using Mat = Matrix<S>;

  ModelParams() = default;

  // Allocate every array the pipeline needs, zero-filled, layer-norm gains at 1.
  explicit ModelParams(ModelConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    const int d = cfg_.d1;
    const auto& p = cfg_.pipeline;
    ids_.user_emb = add("user_emb", cfg_.n_users, d);
    ids_.src_item_emb = add("src_item_emb", cfg_.n_src_items, d);
    ids_.tgt_item_emb = add("tgt_item_emb", cfg_.n_tgt_items, d);
    if (p.has_null_token()) ids_.null_token = add("null_token", 1, d);
    if (p.needs_history() && p.use_transformer) {
      ids_.pos_emb = add("enc.pos_emb", cfg_.max_history_len, d);
      for (int l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l) + ".";
        EncoderLayerIds e{};
        e.ln1_gain = add(pre + "ln1.gain", 1, d);
        e.ln1_bias = add(pre + "ln1.bias", 1, d);
        e.wq = add(pre + "attn.wq", d, d);
        e.bq = add(pre + "attn.bq", 1, d);
        e.wk = add(pre + "attn.wk", d, d);
        e.bk = add(pre + "attn.bk", 1, d);
        e.wv = add(pre + "attn.wv", d, d);
        e.bv = add(pre + "attn.bv", 1, d);
        e.wo = add(pre + "attn.wo", d, d);
        e.bo = add(pre + "attn.bo", 1, d);
        e.ln2_gain = add(pre + "ln2.gain", 1, d);
        e.ln2_bias = add(pre + "ln2.bias", 1, d);
        e.ff1_w = add(pre + "ff1.w", cfg_.ff_dim, d);
        e.ff1_b = add(pre + "ff1.b", 1, cfg_.ff_dim);
        e.ff2_w = add(pre + "ff2.w", d, cfg_.ff_dim);
        e.ff2_b = add(pre + "ff2.b", 1, d);
        ids_.encoder.push_back(e);
      }
      if (cfg_.layer_norm) {
        ids_.final_ln_gain = add("enc.ln_f.gain", 1, d);
        ids_.final_ln_bias = add("enc.ln_f.bias", 1, d);
      }
    }
    if (p.diffusion) {
      const int state = p.state_dim(d);
      int in = state + p.cond_dim(d) + d;
      for (int k = 0; k < cfg_.mlp_layers; ++k) {
        const int out = k + 1 == cfg_.mlp_layers ? state : cfg_.hidden;
        ids_.den_w.push_back(add("den." + std::to_string(k) + ".w", out, in));
        ids_.den_b.push_back(add("den." + std::to_string(k) + ".b", 1, out));
        in = out;
      }
    }
    if (p.has_projection()) ids_.projection = add("proj.w", d, 2 * d);
    for (const auto& e : ids_.encoder) {
      arrays_[e.ln1_gain].value.setOnes();
      arrays_[e.ln2_gain].value.setOnes();
    }
    if (ids_.final_ln_gain >= 0) arrays_[ids_.final_ln_gain].value.setOnes();
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamIds& ids() const { return ids_; }
  int d1() const { return cfg_.d1; }

  std::vector<ParamArray<S>>& arrays() { return arrays_; }
  const std::vector<ParamArray<S>>& arrays() const { return arrays_; }
  Mat& operator[](int id) { return arrays_[id].value; }
  const Mat& operator[](int id) const { return arrays_[id].value; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      if (arrays_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& a : arrays_) out.push_back(a.name);
    return out;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += static_cast<std::size_t>(a.value.size());
    return n;
  }

  // Same layout, all zeros; used for gradient buffers and optimizer moments.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& a : z.arrays_) a.value.setZero();
    return z;
  }

  bool all_finite() const {
    for (const auto& a : arrays_) {
      if (!a.value.allFinite()) return false;
    }
    return true;
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out(cfg_);
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      out.arrays()[i].value = arrays_[i].value.template cast<T>();
    }
    return out;
  }

  bool operator==(const ModelParams& other) const {
    if (arrays_.size() != other.arrays_.size()) return false;
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
      const auto& a = arrays_[i].value;
      const auto& b = other.arrays_[i].value;
      if (arrays_[i].name != other.arrays_[i].name || a.rows() != b.rows() ||
          a.cols() != b.cols()) {
        return false;
      }
      if (a.size() > 0 && std::memcmp(a.data(), b.data(), sizeof(S) * a.size()) != 0) return false;
    }
    return true;
  }

 private:
  int add(std::string name, int rows, int cols) {
    arrays_.push_back({std::move(name), Mat::Zero(rows, cols)});
    return static_cast<int>(arrays_.size()) - 1;
  }

  ModelConfig cfg_;
  ParamIds ids_;
  std::vector<ParamArray<S>> arrays_;
};

// i.i.d. uniform(-init_scale, init_scale) for every table and weight; the
// null token starts at zero and layer-norm gains/biases at 1/0.
template <class S = float>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed, double init_scale) {
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
  ModelParams<S> p(cfg);
  CounterRng rng(seed, 0x1A17);
  for (auto& a : p.arrays()) {
    const bool fixed = a.name == "null_token" || a.name.find(".ln") != std::string::npos;
    if (fixed) continue;
    for (Eigen::Index k = 0; k < a.value.size(); ++k) {
      a.value.data()[k] = static_cast<S>(rng.uniform(-init_scale, init_scale));
    }
  }
  return p;
}

// Binds a parameter set (and optionally a gradient buffer of the same
// layout) to a tape. Each array becomes at most one leaf node.
template <class S>
class Graph {
 public:
  Graph(ad::Tape<S>& tape, const ModelParams<S>& params, ModelParams<S>* grads = nullptr)
      : tape_(tape), params_(params), grads_(grads), leaves_(params.arrays().size()) {}

  ad::Tape<S>& tape() { return tape_; }
  const ModelParams<S>& params() const { return params_; }
  const ModelConfig& config() const { return params_.config(); }

  ad::Var param(int id) {
    ad::Var& leaf = leaves_[id];
    if (!leaf.valid()) leaf = tape_.parameter(params_[id], grads_ ? &(*grads_)[id] : nullptr);
    return leaf;
  }

  ad::Var rows(int id, std::vector<int> indices) {
    return tape_.gather_rows(params_[id], grads_ ? &(*grads_)[id] : nullptr, std::move(indices));
  }

  ad::Var row(int id, int index) { return rows(id, {index}); }

 private:
  ad::Tape<S>& tape_;
  const ModelParams<S>& params_;
  ModelParams<S>* grads_;
  std::vector<ad::Var> leaves_;
};

// ---------------------------------------------------------------------------
// Checkpoints: `<path>` is a text manifest, `<path>.bin` a blob of
// little-endian float32 values in manifest order.
//
//   dmcdr-checkpoint 1
//   config <key> <value>          (one line per ModelConfig field)
//   array <name> <rows> <cols> float32 <offset>
// ---------------------------------------------------------------------------

namespace detail {

inline void write_config(std::ostream& out, const ModelConfig& c) {
  out << "config pipeline " << c.pipeline.name << '\n'
      << "config n_users " << c.n_users << '\n'
      << "config n_src_items " << c.n_src_items << '\n'
      << "config n_tgt_items " << c.n_tgt_items << '\n'
      << "config d1 " << c.d1 << '\n'
      << "config max_history_len " << c.max_history_len << '\n'
      << "config encoder_layers " << c.encoder_layers << '\n'
      << "config heads " << c.heads << '\n'
      << "config ff_dim " << c.ff_dim << '\n'
      << "config mlp_layers " << c.mlp_layers << '\n'
      << "config hidden " << c.hidden << '\n'
      << "config layer_norm " << (c.layer_norm ? 1 : 0) << '\n';
}

inline void set_config(ModelConfig& c, const std::string& key, const std::string& value) {
  auto as_int = [&] {
    try {
      return std::stoi(value);
    } catch (const std::exception&) {
      throw CheckpointError("checkpoint config '" + key + "' is not an integer: " + value);
    }
  };
  if (key == "pipeline") {
    try {
      c.pipeline = pipeline_by_name(value);
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  } else if (key == "n_users") c.n_users = as_int();
  else if (key == "n_src_items") c.n_src_items = as_int();
  else if (key == "n_tgt_items") c.n_tgt_items = as_int();
  else if (key == "d1") c.d1 = as_int();
  else if (key == "max_history_len") c.max_history_len = as_int();
  else if (key == "encoder_layers") c.encoder_layers = as_int();
  else if (key == "heads") c.heads = as_int();
  else if (key == "ff_dim") c.ff_dim = as_int();
  else if (key == "mlp_layers") c.mlp_layers = as_int();
  else if (key == "hidden") c.hidden = as_int();
  else if (key == "layer_norm") c.layer_norm = as_int() != 0;
  else throw CheckpointError("checkpoint: unknown config key '" + key + "'");
}

inline void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[b]} << (8 * b);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline std::string blob_path(const std::string& manifest_path) { return manifest_path + ".bin"; }

template <class S>
void save_checkpoint(const ModelParams<S>& params, const std::string& path) {
  std::ofstream manifest(path);
  if (!manifest) throw CheckpointError("cannot write checkpoint manifest '" + path + "'");
  manifest << "dmcdr-checkpoint 1\n";
  detail::write_config(manifest, params.config());
  std::string blob;
  std::size_t offset = 0;
  for (const auto& a : params.arrays()) {
    manifest << "array " << a.name << ' ' << a.value.rows() << ' ' << a.value.cols()
             << " float32 " << offset << '\n';
    for (Eigen::Index k = 0; k < a.value.size(); ++k) {
      detail::put_f32_le(blob, static_cast<float>(a.value.data()[k]));
    }
    offset += static_cast<std::size_t>(a.value.size()) * 4;
  }
  std::ofstream bin(blob_path(path), std::ios::binary);
  if (!bin) throw CheckpointError("cannot write checkpoint blob '" + blob_path(path) + "'");
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!manifest || !bin) throw CheckpointError("short write on checkpoint '" + path + "'");
}

template <class S = float>
ModelParams<S> load_checkpoint(const std::string& path) {
  std::ifstream manifest(path);
  if (!manifest) throw CheckpointError("cannot open checkpoint manifest '" + path + "'");
  std::string line;
  if (!std::getline(manifest, line) || line != "dmcdr-checkpoint 1") {
    throw CheckpointError(path + ": not a dmcdr checkpoint manifest");
  }
  struct Entry {
    std::string name;
    long rows, cols;
    std::size_t offset;
  };
  ModelConfig cfg;
  std::vector<Entry> entries;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    if (kind == "config") {
      std::string key, value;
      if (!(in >> key >> value)) throw CheckpointError(path + ": bad config line " + std::to_string(line_no));
      detail::set_config(cfg, key, value);
    } else if (kind == "array") {
      Entry e;
      std::string dtype;
      if (!(in >> e.name >> e.rows >> e.cols >> dtype >> e.offset) || dtype != "float32") {
        throw CheckpointError(path + ": bad array line " + std::to_string(line_no));
      }
      entries.push_back(e);
    } else {
      throw CheckpointError(path + ": unexpected manifest line " + std::to_string(line_no));
    }
  }

  ModelParams<S> params;
  try {
    params = ModelParams<S>(cfg);
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  const auto expected = params.names();
  auto expected_list = [&] {
    std::string s;
    for (const auto& n : expected) s += (s.empty() ? "" : ", ") + n;
    return s;
  };
  for (const auto& e : entries) {
    if (params.find(e.name) < 0) {
      throw CheckpointError(path + ": unknown array '" + e.name + "'; expected: " + expected_list());
    }
  }
  if (entries.size() != expected.size()) {
    throw CheckpointError(path + ": manifest lists " + std::to_string(entries.size()) +
                          " arrays; expected: " + expected_list());
  }

  std::ifstream bin(blob_path(path), std::ios::binary);
  if (!bin) throw CheckpointError("cannot open checkpoint blob '" + blob_path(path) + "'");
  std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.name != expected[i]) {
      throw CheckpointError(path + ": array '" + e.name + "' out of order (expected '" +
                            expected[i] + "')");
    }
    auto& a = params.arrays()[i].value;
    if (e.rows != a.rows() || e.cols != a.cols()) {
      throw CheckpointError(path + ": shape mismatch for array '" + e.name + "': manifest " +
                            std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                            ", model expects " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()));
    }
    const std::size_t bytes = static_cast<std::size_t>(a.size()) * 4;
    if (e.offset + bytes > blob.size()) {
      throw CheckpointError(path + ": blob truncated while reading array '" + e.name + "'");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + e.offset;
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = static_cast<S>(detail::get_f32_le(p + 4 * k));
  }
  return params;
}

}  // namespace dmcdr
