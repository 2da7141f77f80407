// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pts/corpus.hpp"
#include "pts/model.hpp"

namespace pts {

// Contextual memory over one table: encoder output states plus the raw
// record embeddings (the rethinking pass re-reads those).
struct TableMemory {
  int states = -1;             // node id, K x d_model
  int record_embeddings = -1;  // node id, K x d_model
  int num_records = 0;
  std::vector<std::string> value_tokens;  // surface strings for copying
};

// Initial record representation: ReLU(W [value; key; fwd pos; bwd pos] + b)
// for the whole record sequence at once (K x d_model). Positions beyond the
// configured table are clamped to the last embedding row.
template <typename Real>
int embed_records(ModelContext<Real>& ctx, const std::vector<Record>& records) {
  auto& g = ctx.g;
  const int K = static_cast<int>(records.size());
  std::vector<int> tok_ids(K), key_ids(K), fwd_ids(K), bwd_ids(K);
  for (int i = 0; i < K; ++i) {
    tok_ids[i] = ctx.vocab.id(records[i].value_token);
    key_ids[i] = ctx.key_vocab.id(records[i].key_token);
    fwd_ids[i] = std::min(records[i].pos_fwd, ctx.cfg.max_record_pos) - 1;
    bwd_ids[i] = std::min(records[i].pos_bwd, ctx.cfg.max_record_pos) - 1;
  }
  const int cat = g.concat_cols({g.gather_rows(ctx.bind("emb.token"), tok_ids),
                                 g.gather_rows(ctx.bind("emb.key"), key_ids),
                                 g.gather_rows(ctx.bind("emb.pos_fwd"), fwd_ids),
                                 g.gather_rows(ctx.bind("emb.pos_bwd"), bwd_ids)});
  return g.relu(linear(g, cat, ctx.bind("rec_proj.W"), ctx.bind("rec_proj.b")));
}

template <typename Real>
int embed_record(ModelContext<Real>& ctx, const Record& record) {
  return embed_records(ctx, std::vector<Record>{record});
}

template <typename Real>
TableMemory encode_table(ModelContext<Real>& ctx, const std::vector<Record>& records) {
  if (records.empty()) throw std::runtime_error("empty input table");
  if (static_cast<int>(records.size()) > ctx.cfg.max_records)
    throw std::runtime_error("table too large");
  TableMemory mem;
  mem.num_records = static_cast<int>(records.size());
  mem.record_embeddings = embed_records(ctx, records);
  int x = maybe_dropout(ctx.g, mem.record_embeddings, Real(ctx.cfg.dropout), ctx.dropout_rng);
  for (int l = 0; l < ctx.cfg.enc_layers; ++l)
    x = encoder_layer(ctx.g, ctx.bind, "enc." + std::to_string(l), x, ctx.cfg.n_heads,
                      Real(ctx.cfg.dropout), ctx.dropout_rng);
  mem.states = x;
  mem.value_tokens.reserve(records.size());
  for (const auto& r : records) mem.value_tokens.push_back(r.value_token);
  return mem;
}

// Batched encoding; instances are independent, so the batch is processed one
// table at a time (row-level outputs match the single-table call exactly).
template <typename Real>
std::vector<TableMemory> encode_tables(ModelContext<Real>& ctx,
                                       const std::vector<std::vector<Record>>& batch) {
  std::vector<TableMemory> out;
  out.reserve(batch.size());
  for (const auto& records : batch) out.push_back(encode_table(ctx, records));
  return out;
}

}  // namespace pts
