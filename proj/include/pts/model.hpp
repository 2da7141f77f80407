// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pts/config.hpp"
#include "pts/edit.hpp"
#include "pts/graph.hpp"
#include "pts/nnet.hpp"

namespace pts {

// Counts decoder forward passes actually executed. decoder_passes is the
// I_DEC accounting; the per-role counters back the structural invariants
// (one placeholder pass, two pointer passes, one deletion pass per plan).
struct DecodeCounters {
  int decoder_passes = 0;
  int placeholder_passes = 0;
  int pointer_passes = 0;
  int deletion_passes = 0;
  int token_passes = 0;
  int rethink_passes = 0;
};

// Everything a forward pass needs: config, a graph to build into, parameter
// binding, counters, and (during training only) a dropout stream.
template <typename Real>
struct ModelContext {
  const RunConfig& cfg;
  Graph<Real>& g;
  Binder<Real> bind;
  const Vocab& vocab;
  const Vocab& key_vocab;
  DecodeCounters* counters = nullptr;
  Rng* dropout_rng = nullptr;

  ModelContext(const RunConfig& c, Graph<Real>& graph, const ParamStore<Real>& params,
               const Vocab& v, const Vocab& kv)
      : cfg(c), g(graph), bind(graph, params), vocab(v), key_vocab(kv) {}

  void count_decoder_pass() {
    if (counters) ++counters->decoder_passes;
  }
};

// Embed a framed token sequence for the decoder: token embedding projected to
// d_model plus a learned absolute position embedding.
template <typename Real>
int decoder_input(ModelContext<Real>& ctx, const std::vector<int>& token_ids) {
  const int n = static_cast<int>(token_ids.size());
  if (n > ctx.cfg.max_seq) throw std::runtime_error("sequence too long for decoder");
  auto& g = ctx.g;
  const int tok = g.gather_rows(ctx.bind("emb.token"), token_ids);
  const int proj = linear(g, tok, ctx.bind("dec_in.W"), ctx.bind("dec_in.b"));
  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;
  const int pos = g.gather_rows(ctx.bind("emb.dec_pos"), positions);
  return g.add(proj, pos);
}

// One full decoder stack forward over a framed token sequence, cross-attending
// to the table memory states. Returns per-position states (n x d_model).
template <typename Real>
int decoder_pass(ModelContext<Real>& ctx, const std::vector<int>& token_ids, int memory_states) {
  auto& g = ctx.g;
  int x = decoder_input(ctx, token_ids);
  x = maybe_dropout(g, x, Real(ctx.cfg.dropout), ctx.dropout_rng);
  for (int l = 0; l < ctx.cfg.dec_layers; ++l)
    x = decoder_layer(g, ctx.bind, "dec." + std::to_string(l), x, memory_states, ctx.cfg.n_heads,
                      Real(ctx.cfg.dropout), ctx.dropout_rng);
  ctx.count_decoder_pass();
  return x;
}

// ---- heads ----

// Insertion-count logits for every adjacent pair of positions: row i scores
// how many placeholders belong between position i and i+1. (n-1) x (L+1).
template <typename Real>
int insert_count_logits(ModelContext<Real>& ctx, int states) {
  auto& g = ctx.g;
  const int n = g.rows(states);
  if (n < 2) throw std::runtime_error("insert_count_logits: need at least two positions");
  const int left = g.slice_rows(states, 0, n - 1);
  const int right = g.slice_rows(states, 1, n);
  const int pairs = g.concat_cols({left, right});
  return linear(g, pairs, ctx.bind("head.count.W"), ctx.bind("head.count.b"));
}

// Pointer scores between placeholder states (n x d) and record memory states
// (K x d): an additive scorer with a tanh bottleneck. A purely linear map on
// the concatenated pair is separable across the pair and would give every
// placeholder the same distribution over records, so the bottleneck is load-
// bearing. Returns logits (n x K).
template <typename Real>
int pointer_logits(ModelContext<Real>& ctx, const std::string& head, int query_states,
                   int memory_states) {
  auto& g = ctx.g;
  const int d = g.cols(query_states);
  const int n = g.rows(query_states);
  const int K = g.rows(memory_states);
  const int W = ctx.bind(head + ".W");
  const int Wq = g.slice_rows(W, 0, d);
  const int Wm = g.slice_rows(W, d, 2 * d);
  const int A = g.matmul(query_states, Wq);   // n x d
  const int B = g.matmul(memory_states, Wm);  // K x d
  const int pairs = g.add_rowvec(g.outer_add_rows(A, B), ctx.bind(head + ".b"));
  const int scores = g.matmul(g.tanh_act(pairs), ctx.bind(head + ".v"));  // n*K x 1
  return g.reshape(scores, n, K);
}

// Per-position keep/delete logits (n x 2); column 1 is "delete".
template <typename Real>
int delete_logits(ModelContext<Real>& ctx, int states) {
  return linear(ctx.g, states, ctx.bind("head.del.W"), ctx.bind("head.del.b"));
}

// Vocabulary logits (n x |V|).
template <typename Real>
int token_logits(ModelContext<Real>& ctx, int states) {
  return linear(ctx.g, states, ctx.bind("head.token.W"), ctx.bind("head.token.b"));
}

// Rethinking: fuse each pointer-pass state with the embedding of the record
// it selected, run one non-causal decoder block over the fused sequence with
// cross-attention to the table memory, and return the calibrated states.
// selected_records aligns with the framed sequence; frame symbols carry -1
// and contribute a zero embedding.
template <typename Real>
int rethink_states(ModelContext<Real>& ctx, int pointer_pass_states,
                   const std::vector<int>& selected_records, int record_embeddings,
                   int memory_states) {
  auto& g = ctx.g;
  const int sel = g.gather_rows(record_embeddings, selected_records);
  const int fused =
      linear(g, g.concat_cols({pointer_pass_states, sel}), ctx.bind("rethink.fuse.W"),
             ctx.bind("rethink.fuse.b"));
  const int out = decoder_layer(g, ctx.bind, "rethink.block", fused, memory_states,
                                ctx.cfg.n_heads, Real(ctx.cfg.dropout), ctx.dropout_rng);
  ctx.count_decoder_pass();
  if (ctx.counters) ++ctx.counters->rethink_passes;
  return out;
}

// Deterministic argmax over a row; ties go to the lowest index. `limit`
// restricts the search to the first `limit` columns (the token head is sized
// by config and can be wider than the vocabulary actually built).
template <typename Real>
int argmax_row(const Mat<Real>& m, int row, int limit = -1) {
  const int end = limit < 0 ? m.cols : std::min(limit, m.cols);
  int best = 0;
  for (int c = 1; c < end; ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

}  // namespace pts
