// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "pts/encoder.hpp"
#include "pts/model.hpp"

namespace pts {

// rethink: full calibration pass (default).
// off: first pointer head decides (the ablation configuration).
// echo_first: run the calibration pass but keep the first head's choices;
// output must match `off` exactly, which the tests assert.
enum class PlanMode { rethink, off, echo_first };

template <typename Real>
struct PlanResult {
  EditSequence plan;           // final content plan, framed
  EditSequence before_delete;  // sequence the deleter saw
  EditSequence first_draft;    // first pointer head's choices
  Mat<Real> count_dist;        // 1 x (L+1)
  Mat<Real> pointer_dists;     // placeholders x K, final head
  std::vector<Real> delete_probs;
  int chosen_count = 0;
};

// Predict how many plan tokens to insert between <bos> and </eos>. Returns
// the distribution over 0..L and the argmax count.
template <typename Real>
std::pair<Mat<Real>, int> predict_placeholder_count(ModelContext<Real>& ctx,
                                                    const TableMemory& mem) {
  const EditSequence boot = EditSequence::empty_frame();
  const int states = decoder_pass(ctx, boot.vocab_ids(), mem.states);
  if (ctx.counters) ++ctx.counters->placeholder_passes;
  const int dist = ctx.g.softmax_rows(insert_count_logits(ctx, states));
  Mat<Real> d = ctx.g.val(dist);
  return {d, argmax_row(d, 0)};
}

// Replace every placeholder with the record the pointer head selects.
// Returns the filled sequence, the per-placeholder distributions over
// records, and the decoder states of the pass (the rethinking input).
template <typename Real>
struct PointerPass {
  EditSequence filled;
  Mat<Real> dists;  // placeholders x K
  std::vector<int> selections;
  int states = -1;  // node id
};

template <typename Real>
PointerPass<Real> point_records(ModelContext<Real>& ctx, const EditSequence& skeleton,
                                const TableMemory& mem) {
  auto& g = ctx.g;
  const int states = decoder_pass(ctx, skeleton.vocab_ids(), mem.states);
  if (ctx.counters) ++ctx.counters->pointer_passes;
  const auto plh = placeholder_positions(skeleton);
  PointerPass<Real> out;
  out.states = states;
  out.filled = skeleton;
  const int n = static_cast<int>(plh.size());
  const int queries = g.gather_rows(states, plh);
  const int dists = g.softmax_rows(pointer_logits(ctx, "head.pointer_a", queries, mem.states));
  out.dists = g.val(dists);
  for (int i = 0; i < n; ++i) {
    const int rec = argmax_row(out.dists, i);
    out.selections.push_back(rec);
    out.filled.tokens[plh[i]] = copied_token(mem.value_tokens[rec], rec, ctx.vocab);
  }
  return out;
}

// Calibrate a first-pass plan: fuse each state with the embedding of the
// record it picked, run one decoder block over the result, and re-point.
template <typename Real>
PointerPass<Real> rethink(ModelContext<Real>& ctx, const PointerPass<Real>& first,
                          const std::vector<int>& plh_positions, const TableMemory& mem,
                          bool echo_first) {
  auto& g = ctx.g;
  std::vector<int> selected(g.rows(first.states), -1);
  for (size_t i = 0; i < plh_positions.size(); ++i) selected[plh_positions[i]] = first.selections[i];
  const int states =
      rethink_states(ctx, first.states, selected, mem.record_embeddings, mem.states);
  if (ctx.counters) ++ctx.counters->pointer_passes;
  PointerPass<Real> out;
  out.states = states;
  out.filled = first.filled;
  const int queries = g.gather_rows(states, plh_positions);
  const int dists = g.softmax_rows(pointer_logits(ctx, "head.pointer_b", queries, mem.states));
  out.dists = g.val(dists);
  for (size_t i = 0; i < plh_positions.size(); ++i) {
    const int rec = echo_first ? first.selections[i] : argmax_row(out.dists, static_cast<int>(i));
    out.selections.push_back(rec);
    out.filled.tokens[plh_positions[i]] =
        copied_token(mem.value_tokens[rec], rec, ctx.vocab);
  }
  return out;
}

// Threshold rule shared by planning and seaming: a token goes when its
// delete probability strictly exceeds 0.5; the frame never goes.
inline EditSequence apply_deletions(const EditSequence& seq, const std::vector<double>& delete_probs) {
  if (static_cast<int>(delete_probs.size()) != seq.interior_length())
    throw std::runtime_error("apply_deletions: probability count mismatch");
  EditSequence out;
  out.tokens.push_back(seq.tokens.front());
  for (int i = 1; i + 1 < seq.length(); ++i)
    if (!(delete_probs[i - 1] > 0.5)) out.tokens.push_back(seq.tokens[i]);
  out.tokens.push_back(seq.tokens.back());
  return out;
}

// Run the deletion head over a sequence and prune it.
template <typename Real>
std::pair<EditSequence, std::vector<Real>> delete_tokens(ModelContext<Real>& ctx,
                                                         const EditSequence& seq,
                                                         const TableMemory& mem) {
  auto& g = ctx.g;
  const int states = decoder_pass(ctx, seq.vocab_ids(), mem.states);
  if (ctx.counters) ++ctx.counters->deletion_passes;
  std::vector<Real> probs(seq.interior_length(), Real(0));
  if (seq.interior_length() > 0) {
    const int interior = g.slice_rows(states, 1, seq.length() - 1);
    const int p = g.softmax_rows(delete_logits(ctx, interior));
    const auto& pv = g.val(p);
    for (int i = 0; i < pv.rows; ++i) probs[i] = pv(i, 1);
  }
  std::vector<double> pd(probs.begin(), probs.end());
  return {apply_deletions(seq, pd), probs};
}

// The whole planning pass: one placeholder pass, two pointer passes (unless
// rethinking is off), one deletion pass, independent of the predicted count.
template <typename Real>
PlanResult<Real> plan(ModelContext<Real>& ctx, const TableMemory& mem,
                      PlanMode mode = PlanMode::rethink) {
  PlanResult<Real> result;
  auto [count_dist, count] = predict_placeholder_count(ctx, mem);
  result.count_dist = std::move(count_dist);
  result.chosen_count = count;

  EditSequence skeleton = EditSequence::empty_frame();
  for (int i = 0; i < count; ++i) skeleton.tokens.insert(skeleton.tokens.begin() + 1, make_placeholder());
  const auto plh = placeholder_positions(skeleton);

  PointerPass<Real> first = point_records(ctx, skeleton, mem);
  result.first_draft = first.filled;

  PointerPass<Real> final_pass = first;
  if (mode != PlanMode::off)
    final_pass = rethink(ctx, first, plh, mem, mode == PlanMode::echo_first);
  result.pointer_dists = final_pass.dists;
  result.before_delete = final_pass.filled;

  auto [pruned, probs] = delete_tokens(ctx, final_pass.filled, mem);
  result.delete_probs = std::move(probs);
  result.plan = std::move(pruned);
  return result;
}

template <typename Real>
PlanResult<Real> plan(ModelContext<Real>& ctx, const std::vector<Record>& records,
                      PlanMode mode = PlanMode::rethink) {
  const TableMemory mem = encode_table(ctx, records);
  return plan(ctx, mem, mode);
}

}  // namespace pts
