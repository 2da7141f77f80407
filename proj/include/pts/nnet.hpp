// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pts/config.hpp"
#include "pts/corpus.hpp"
#include "pts/graph.hpp"
#include "pts/mat.hpp"

namespace pts {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

enum class TensorKind { weight, bias, embedding, ln_gain };

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  TensorKind kind = TensorKind::weight;

  size_t count() const { return static_cast<size_t>(rows) * cols; }
};

// Named trainable tensors. One store backs both the planning and the seaming
// pass; sharing is by construction (same names resolve to the same tensors).
template <typename Real>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat<Real>> tensors;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, Mat<Real> t) {
    if (index.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
    index.emplace(name, static_cast<int>(tensors.size()));
    names.push_back(name);
    tensors.push_back(std::move(t));
    return static_cast<int>(tensors.size()) - 1;
  }

  bool has(const std::string& name) const { return index.count(name) > 0; }

  Mat<Real>& get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
    return tensors[it->second];
  }

  const Mat<Real>& get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
    return tensors[it->second];
  }

  size_t total_params() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
};

template <typename Real>
using Gradients = std::unordered_map<std::string, Mat<Real>>;

// ---- parameter manifest ----

namespace manifest {

inline void attention_block(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) out.push_back({prefix + "." + w, d, d, TensorKind::weight});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + "." + b, 1, d, TensorKind::bias});
}

inline void layer_norm(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", 1, d, TensorKind::ln_gain});
  out.push_back({prefix + ".b", 1, d, TensorKind::bias});
}

inline void ffn_block(std::vector<TensorSpec>& out, const std::string& prefix, int d, int dh) {
  out.push_back({prefix + ".W1", d, dh, TensorKind::weight});
  out.push_back({prefix + ".b1", 1, dh, TensorKind::bias});
  out.push_back({prefix + ".W2", dh, d, TensorKind::weight});
  out.push_back({prefix + ".b2", 1, d, TensorKind::bias});
}

inline void encoder_layer(std::vector<TensorSpec>& out, const std::string& prefix, int d, int dh) {
  attention_block(out, prefix + ".attn", d);
  layer_norm(out, prefix + ".ln1", d);
  ffn_block(out, prefix + ".ffn", d, dh);
  layer_norm(out, prefix + ".ln2", d);
}

inline void decoder_layer(std::vector<TensorSpec>& out, const std::string& prefix, int d, int dh) {
  attention_block(out, prefix + ".self", d);
  layer_norm(out, prefix + ".ln1", d);
  attention_block(out, prefix + ".cross", d);
  layer_norm(out, prefix + ".ln2", d);
  ffn_block(out, prefix + ".ffn", d, dh);
  layer_norm(out, prefix + ".ln3", d);
}

inline void pointer_head(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".W", 2 * d, d, TensorKind::weight});
  out.push_back({prefix + ".b", 1, d, TensorKind::bias});
  out.push_back({prefix + ".v", d, 1, TensorKind::weight});
}

}  // namespace manifest

// The full tensor manifest of the shared-network model. `with_rethinking`
// controls the calibration extras (fusion, one extra decoder block, second
// pointer head); everything else is the shared base.
inline std::vector<TensorSpec> model_manifest(const RunConfig& c, bool with_rethinking) {
  std::vector<TensorSpec> out;
  const int d = c.d_model, dh = c.d_hidden;
  const int rec_in = c.emb_token + c.emb_key + 2 * c.emb_pos;

  out.push_back({"emb.token", c.vocab_size, c.emb_token, TensorKind::embedding});
  out.push_back({"emb.key", c.key_vocab_size, c.emb_key, TensorKind::embedding});
  out.push_back({"emb.pos_fwd", c.max_record_pos, c.emb_pos, TensorKind::embedding});
  out.push_back({"emb.pos_bwd", c.max_record_pos, c.emb_pos, TensorKind::embedding});
  out.push_back({"emb.dec_pos", c.max_seq, d, TensorKind::embedding});

  out.push_back({"rec_proj.W", rec_in, d, TensorKind::weight});
  out.push_back({"rec_proj.b", 1, d, TensorKind::bias});
  out.push_back({"dec_in.W", c.emb_token, d, TensorKind::weight});
  out.push_back({"dec_in.b", 1, d, TensorKind::bias});

  for (int l = 0; l < c.enc_layers; ++l)
    manifest::encoder_layer(out, "enc." + std::to_string(l), d, dh);
  for (int l = 0; l < c.dec_layers; ++l)
    manifest::decoder_layer(out, "dec." + std::to_string(l), d, dh);

  // heads: insertion count and deletion are shared by planning and seaming;
  // the pointer head copies records, the token head writes vocabulary tokens.
  out.push_back({"head.count.W", 2 * d, c.max_placeholders + 1, TensorKind::weight});
  out.push_back({"head.count.b", 1, c.max_placeholders + 1, TensorKind::bias});
  manifest::pointer_head(out, "head.pointer_a", d);
  out.push_back({"head.del.W", d, 2, TensorKind::weight});
  out.push_back({"head.del.b", 1, 2, TensorKind::bias});
  out.push_back({"head.token.W", d, c.vocab_size, TensorKind::weight});
  out.push_back({"head.token.b", 1, c.vocab_size, TensorKind::bias});

  if (with_rethinking) {
    out.push_back({"rethink.fuse.W", 2 * d, d, TensorKind::weight});
    out.push_back({"rethink.fuse.b", 1, d, TensorKind::bias});
    manifest::decoder_layer(out, "rethink.block", d, dh);
    manifest::pointer_head(out, "head.pointer_b", d);
  }
  return out;
}

inline size_t count_params(const RunConfig& c, bool with_rethinking) {
  size_t n = 0;
  for (const auto& spec : model_manifest(c, with_rethinking)) n += spec.count();
  return n;
}

// A two-network configuration: disjoint planning and seaming models, each a
// full copy of the shared base (no rethinking extras).
inline size_t count_disjoint_params(const RunConfig& c) { return 2 * count_params(c, false); }

template <typename Real>
ParamStore<Real> init_params(const RunConfig& c, Rng& rng) {
  ParamStore<Real> store;
  for (const auto& spec : model_manifest(c, c.rethinking)) {
    Mat<Real> t(spec.rows, spec.cols);
    switch (spec.kind) {
      case TensorKind::weight: {
        const double s = std::sqrt(3.0 / spec.rows);
        fill_uniform(t, rng, -s, s);
        break;
      }
      case TensorKind::embedding: {
        const double s = std::sqrt(3.0 / spec.cols);
        fill_uniform(t, rng, -s, s);
        break;
      }
      case TensorKind::ln_gain:
        for (auto& v : t.a) v = Real(1);
        break;
      case TensorKind::bias:
        break;  // zeros
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

// ---- graph binding ----

// Lends parameters to a graph as leaf nodes, one per name per graph, so
// repeated uses share a node and gradients accumulate across passes.
template <typename Real>
class Binder {
 public:
  Binder(Graph<Real>& g, const ParamStore<Real>& store) : g_(&g), store_(&store) {}

  int operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const int id = g_->leaf(store_->get(name));
    bound_.emplace(name, id);
    return id;
  }

  // After backward: pull gradients for every bound parameter.
  void collect(Gradients<Real>& out) {
    for (const auto& [name, node] : bound_) {
      auto& g = g_->grad(node);
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, g);
      } else {
        for (size_t i = 0; i < g.size(); ++i) it->second.a[i] += g.a[i];
      }
    }
  }

  const std::unordered_map<std::string, int>& bound() const { return bound_; }

 private:
  Graph<Real>* g_;
  const ParamStore<Real>* store_;
  std::unordered_map<std::string, int> bound_;
};

// ---- layers ----

template <typename Real>
int linear(Graph<Real>& g, int x, int W, int b) {
  return g.add_rowvec(g.matmul(x, W), b);
}

// Scaled dot-product multi-head attention; queries from q_in, keys/values
// from kv_in. No masking anywhere: self-attention is non-causal by design and
// sequences are processed one instance at a time.
template <typename Real>
int multi_head_attention(Graph<Real>& g, Binder<Real>& bind, const std::string& prefix, int q_in,
                         int kv_in, int n_heads) {
  const int d = g.cols(q_in);
  if (g.cols(kv_in) != d) throw std::runtime_error("dimension mismatch in attention");
  if (d % n_heads != 0) throw std::runtime_error("dimension mismatch in attention heads");
  const int dh = d / n_heads;
  const int Q = linear(g, q_in, bind(prefix + ".Wq"), bind(prefix + ".bq"));
  const int K = linear(g, kv_in, bind(prefix + ".Wk"), bind(prefix + ".bk"));
  const int V = linear(g, kv_in, bind(prefix + ".Wv"), bind(prefix + ".bv"));
  std::vector<int> ctx;
  ctx.reserve(n_heads);
  const Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
  for (int h = 0; h < n_heads; ++h) {
    const int Qh = g.slice_cols(Q, h * dh, (h + 1) * dh);
    const int Kh = g.slice_cols(K, h * dh, (h + 1) * dh);
    const int Vh = g.slice_cols(V, h * dh, (h + 1) * dh);
    const int scores = g.scale(g.matmul(Qh, g.transpose(Kh)), inv_sqrt);
    const int attn = g.softmax_rows(scores);
    ctx.push_back(g.matmul(attn, Vh));
  }
  const int merged = ctx.size() == 1 ? ctx[0] : g.concat_cols(ctx);
  return linear(g, merged, bind(prefix + ".Wo"), bind(prefix + ".bo"));
}

template <typename Real>
int feed_forward(Graph<Real>& g, Binder<Real>& bind, const std::string& prefix, int x) {
  const int h = g.relu(linear(g, x, bind(prefix + ".W1"), bind(prefix + ".b1")));
  return linear(g, h, bind(prefix + ".W2"), bind(prefix + ".b2"));
}

template <typename Real>
int maybe_dropout(Graph<Real>& g, int x, Real rate, Rng* rng) {
  return rng ? g.dropout(x, rate, *rng) : x;
}

constexpr double kLayerNormEps = 1e-5;

// Post-norm residual encoder layer.
template <typename Real>
int encoder_layer(Graph<Real>& g, Binder<Real>& bind, const std::string& prefix, int x, int n_heads,
                  Real dropout_rate = 0, Rng* dropout_rng = nullptr) {
  int a = multi_head_attention(g, bind, prefix + ".attn", x, x, n_heads);
  a = maybe_dropout(g, a, dropout_rate, dropout_rng);
  const int x1 =
      g.layer_norm_rows(g.add(x, a), bind(prefix + ".ln1.g"), bind(prefix + ".ln1.b"), Real(kLayerNormEps));
  int f = feed_forward(g, bind, prefix + ".ffn", x1);
  f = maybe_dropout(g, f, dropout_rate, dropout_rng);
  const int x2 =
      g.layer_norm_rows(g.add(x1, f), bind(prefix + ".ln2.g"), bind(prefix + ".ln2.b"), Real(kLayerNormEps));
  g.check_finite(x2, "encoder layer");
  return x2;
}

// Post-norm decoder layer with non-causal self-attention and cross-attention
// over the table memory.
template <typename Real>
int decoder_layer(Graph<Real>& g, Binder<Real>& bind, const std::string& prefix, int x, int memory,
                  int n_heads, Real dropout_rate = 0, Rng* dropout_rng = nullptr) {
  int a = multi_head_attention(g, bind, prefix + ".self", x, x, n_heads);
  a = maybe_dropout(g, a, dropout_rate, dropout_rng);
  const int x1 =
      g.layer_norm_rows(g.add(x, a), bind(prefix + ".ln1.g"), bind(prefix + ".ln1.b"), Real(kLayerNormEps));
  int cr = multi_head_attention(g, bind, prefix + ".cross", x1, memory, n_heads);
  cr = maybe_dropout(g, cr, dropout_rate, dropout_rng);
  const int x2 =
      g.layer_norm_rows(g.add(x1, cr), bind(prefix + ".ln2.g"), bind(prefix + ".ln2.b"), Real(kLayerNormEps));
  int f = feed_forward(g, bind, prefix + ".ffn", x2);
  f = maybe_dropout(g, f, dropout_rate, dropout_rng);
  const int x3 =
      g.layer_norm_rows(g.add(x2, f), bind(prefix + ".ln3.g"), bind(prefix + ".ln3.b"), Real(kLayerNormEps));
  g.check_finite(x3, "decoder layer");
  return x3;
}

// ---- checkpoint I/O ----
// Layout: magic, format version, config echo, token vocab, key vocab, then
// named float32 tensors with explicit shapes. Little-endian throughout.

namespace ckpt {

constexpr char kMagic[8] = {'P', 'T', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const uint32_t n = read_u32(in);
  if (n > (1u << 28)) throw std::runtime_error("corrupt checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated file");
  return s;
}

inline void write_vocab(std::ostream& out, const Vocab& v) {
  write_u32(out, static_cast<uint32_t>(v.size()));
  for (const auto& t : v.id_to_token) write_string(out, t);
}

inline Vocab read_vocab(std::istream& in) {
  const uint32_t n = read_u32(in);
  Vocab v;
  for (uint32_t i = 0; i < n; ++i) {
    const std::string t = read_string(in);
    if (i < static_cast<uint32_t>(Vocab::kReserved)) {
      if (t != v.id_to_token[i]) throw std::runtime_error("corrupt checkpoint: reserved vocab mismatch");
    } else {
      v.push(t);
    }
  }
  return v;
}

}  // namespace ckpt

template <typename Real>
struct Checkpoint {
  RunConfig config;  // model fields only are meaningful
  Vocab vocab;
  Vocab key_vocab;
  ParamStore<Real> params;
};

template <typename Real>
void save_checkpoint(const ParamStore<Real>& params, const RunConfig& cfg, const Vocab& vocab,
                     const Vocab& key_vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write(ckpt::kMagic, 8);
  ckpt::write_u32(out, ckpt::kVersion);
  const auto echo = model_config_echo(cfg);
  ckpt::write_u32(out, static_cast<uint32_t>(echo.size()));
  for (const auto& [k, v] : echo) {
    ckpt::write_string(out, k);
    ckpt::write_string(out, v);
  }
  ckpt::write_vocab(out, vocab);
  ckpt::write_vocab(out, key_vocab);
  ckpt::write_u32(out, static_cast<uint32_t>(params.tensors.size()));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    ckpt::write_string(out, params.names[i]);
    ckpt::write_u32(out, static_cast<uint32_t>(t.rows));
    ckpt::write_u32(out, static_cast<uint32_t>(t.cols));
    for (Real v : t.a) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw std::runtime_error("cannot write " + path);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, ckpt::kMagic, 8) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic");
  const uint32_t version = ckpt::read_u32(in);
  if (version != ckpt::kVersion)
    throw std::runtime_error("checkpoint version mismatch: found " + std::to_string(version) +
                             ", expected " + std::to_string(ckpt::kVersion));
  Checkpoint<Real> ck;
  const uint32_t n_cfg = ckpt::read_u32(in);
  std::map<std::string, std::string> echo;
  for (uint32_t i = 0; i < n_cfg; ++i) {
    std::string k = ckpt::read_string(in);
    echo[k] = ckpt::read_string(in);
  }
  apply_config_echo(ck.config, echo);
  ck.vocab = ckpt::read_vocab(in);
  ck.key_vocab = ckpt::read_vocab(in);
  const uint32_t n_tensors = ckpt::read_u32(in);
  const auto expected = model_manifest(ck.config, ck.config.rethinking);
  if (n_tensors != expected.size())
    throw std::runtime_error("corrupt checkpoint: tensor count does not match config");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = ckpt::read_string(in);
    const int rows = static_cast<int>(ckpt::read_u32(in));
    const int cols = static_cast<int>(ckpt::read_u32(in));
    if (name != expected[i].name || rows != expected[i].rows || cols != expected[i].cols)
      throw std::runtime_error("corrupt checkpoint: tensor " + name + " does not match config shapes");
    Mat<Real> t(rows, cols);
    for (auto& v : t.a) {
      float f = 0;
      in.read(reinterpret_cast<char*>(&f), 4);
      if (!in) throw std::runtime_error("corrupt checkpoint: truncated file");
      v = static_cast<Real>(f);
    }
    ck.params.add(name, std::move(t));
  }
  if (ck.vocab.size() > ck.config.vocab_size || ck.key_vocab.size() > ck.config.key_vocab_size)
    throw std::runtime_error("corrupt checkpoint: vocab exceeds configured size");
  return ck;
}

}  // namespace pts
