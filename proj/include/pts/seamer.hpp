// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <vector>

#include "pts/planner.hpp"

namespace pts {

// Per-instance decode record: sequence snapshot after every iteration, the
// number of decoder forward passes actually executed, and wall-clock time.
struct DecodeTrace {
  std::vector<std::vector<std::string>> iterates;
  int iterations = 0;
  int decoder_passes = 0;
  double wall_ms = 0.0;
};

// Predict an insertion count for every adjacent pair and insert that many
// placeholders, clamped so the sequence stays within max_seq.
template <typename Real>
EditSequence predict_gap_insertions(ModelContext<Real>& ctx, const EditSequence& seq,
                                    const TableMemory& mem) {
  auto& g = ctx.g;
  const int states = decoder_pass(ctx, seq.vocab_ids(), mem.states);
  if (ctx.counters) ++ctx.counters->placeholder_passes;
  const int dist = g.softmax_rows(insert_count_logits(ctx, states));
  const auto& dv = g.val(dist);
  int budget = ctx.cfg.max_seq - seq.length();
  EditSequence out;
  for (int i = 0; i < seq.length(); ++i) {
    out.tokens.push_back(seq.tokens[i]);
    if (i + 1 < seq.length()) {
      int count = argmax_row(dv, i);
      count = std::min(count, budget);
      budget -= count;
      for (int k = 0; k < count; ++k) out.tokens.push_back(make_placeholder());
    }
  }
  return out;
}

// Replace each placeholder with the token head's argmax over the vocabulary.
template <typename Real>
EditSequence fill_placeholders(ModelContext<Real>& ctx, const EditSequence& seq,
                               const TableMemory& mem) {
  const auto plh = placeholder_positions(seq);
  if (plh.empty()) return seq;
  auto& g = ctx.g;
  const int states = decoder_pass(ctx, seq.vocab_ids(), mem.states);
  if (ctx.counters) ++ctx.counters->token_passes;
  const int slots = g.gather_rows(states, plh);
  const int dist = g.softmax_rows(token_logits(ctx, slots));
  const auto& dv = g.val(dist);
  EditSequence out = seq;
  for (size_t i = 0; i < plh.size(); ++i) {
    const int tok = argmax_row(dv, static_cast<int>(i), ctx.vocab.size());
    out.tokens[plh[i]] = generated_token(ctx.vocab.token(tok), ctx.vocab);
  }
  return out;
}

// Iteratively seam connective tokens into the plan: insert placeholders,
// fill them from the vocabulary, delete leftovers. Stops at the first
// fixed point or after max_iter iterations.
template <typename Real>
std::pair<EditSequence, DecodeTrace> seam(ModelContext<Real>& ctx, const EditSequence& start,
                                          const TableMemory& mem, int max_iter) {
  const auto t0 = std::chrono::steady_clock::now();
  const int passes_before = ctx.counters ? ctx.counters->decoder_passes : 0;
  DecodeTrace trace;
  EditSequence current = start;
  trace.iterates.push_back(current.interior_texts());
  for (int it = 1; it <= max_iter; ++it) {
    const EditSequence previous = current;
    current = predict_gap_insertions(ctx, current, mem);
    current = fill_placeholders(ctx, current, mem);
    current = delete_tokens(ctx, current, mem).first;
    trace.iterates.push_back(current.interior_texts());
    trace.iterations = it;
    if (current.same_tokens(previous)) break;
  }
  if (ctx.counters) trace.decoder_passes = ctx.counters->decoder_passes - passes_before;
  trace.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {current, trace};
}

// ---- whole-pipeline decoding ----

struct DecodeOutput {
  std::vector<std::string> hypothesis;  // final interior tokens
  std::vector<std::string> plan_tokens;
  DecodeTrace trace;  // decoder_passes covers planning + seaming
  int plan_decoder_passes = 0;
};

// Build the gold-plan starting sequence for the diagnostic decode path.
inline EditSequence gold_plan_sequence(const TableInstance& inst, const Vocab& vocab) {
  if (!inst.has_plan) throw std::runtime_error("instance missing plan annotation");
  std::vector<EditToken> interior;
  for (size_t i = 0; i < inst.plan_tokens.size(); ++i)
    interior.push_back(copied_token(inst.plan_tokens[i], inst.plan_pointers[i], vocab));
  return EditSequence::from_interior(interior);
}

template <typename Real>
DecodeOutput decode_instance(const ParamStore<Real>& params, const RunConfig& cfg,
                             const Vocab& vocab, const Vocab& key_vocab,
                             const TableInstance& inst, int max_iter, bool use_gold_plan = false) {
  const auto t0 = std::chrono::steady_clock::now();
  Graph<Real> g;
  ModelContext<Real> ctx(cfg, g, params, vocab, key_vocab);
  DecodeCounters counters;
  ctx.counters = &counters;

  const TableMemory mem = encode_table(ctx, inst.records);
  EditSequence start;
  if (use_gold_plan) {
    start = gold_plan_sequence(inst, vocab);
  } else {
    const PlanMode mode = cfg.rethinking ? PlanMode::rethink : PlanMode::off;
    start = plan(ctx, mem, mode).plan;
  }

  DecodeOutput out;
  out.plan_decoder_passes = counters.decoder_passes;
  out.plan_tokens = start.interior_texts();
  auto [final_seq, trace] = seam(ctx, start, mem, max_iter);
  out.hypothesis = final_seq.interior_texts();
  out.trace = std::move(trace);
  out.trace.decoder_passes = counters.decoder_passes;  // planning + seaming
  out.trace.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace pts
