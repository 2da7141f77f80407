// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pts/metrics.hpp"
#include "pts/planner.hpp"
#include "pts/seamer.hpp"

namespace pts {

// ---- edit-target algorithms ----

// Longest common subsequence; among maximal-length candidates, the one whose
// match positions in `b` are lexicographically smallest. Reconstruction is
// greedy over the suffix-length table: at each step take the earliest usable
// position in b, then the earliest usable position in a (a shorter remaining
// a-suffix can never admit more than a longer one).
inline std::vector<std::string> lcs(const std::vector<std::string>& a,
                                    const std::vector<std::string>& b) {
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (int i = n - 1; i >= 0; --i)
    for (int j = m - 1; j >= 0; --j)
      dp[i][j] = a[i] == b[j] ? 1 + dp[i + 1][j + 1] : std::max(dp[i + 1][j], dp[i][j + 1]);
  std::vector<std::string> out;
  int i = 0, j = 0;
  while (dp[i][j] > 0) {
    bool advanced = false;
    for (int j2 = j; j2 < m && !advanced; ++j2) {
      for (int i2 = i; i2 < n; ++i2) {
        if (a[i2] == b[j2] && 1 + dp[i2 + 1][j2 + 1] == dp[i][j]) {
          out.push_back(b[j2]);
          i = i2 + 1;
          j = j2 + 1;
          advanced = true;
          break;
        }
      }
    }
    if (!advanced) break;  // unreachable; keeps the loop total
  }
  return out;
}

// Leftmost alignment positions of `sub` inside `full` (greedy two-pointer).
inline std::optional<std::vector<int>> leftmost_alignment(const std::vector<std::string>& sub,
                                                          const std::vector<std::string>& full) {
  std::vector<int> pos;
  pos.reserve(sub.size());
  size_t j = 0;
  for (const auto& tok : sub) {
    while (j < full.size() && full[j] != tok) ++j;
    if (j == full.size()) return std::nullopt;
    pos.push_back(static_cast<int>(j));
    ++j;
  }
  return pos;
}

// Random deletion over the reference with a fixed protected alignment; each
// unprotected token goes independently with probability `ratio`.
inline std::vector<std::string> corrupt_with_ratio(const std::vector<std::string>& reference,
                                                   const std::vector<std::string>& protected_sub,
                                                   double ratio, Rng& rng) {
  const auto align = leftmost_alignment(protected_sub, reference);
  if (!align) throw std::runtime_error("corrupt_with_ratio: protected sequence is not a subsequence");
  std::vector<char> keep(reference.size(), 0);
  for (int p : *align) keep[p] = 1;
  std::vector<std::string> out;
  for (size_t i = 0; i < reference.size(); ++i) {
    if (keep[i] || rng.uniform() >= ratio)
      out.push_back(reference[i]);
  }
  return out;
}

// The deletion ratio is drawn once per instance, uniformly, so training sees
// every corruption severity from intact to plan-only.
inline std::vector<std::string> corrupt_reference(const std::vector<std::string>& reference,
                                                  const std::vector<std::string>& protected_sub,
                                                  Rng& rng) {
  const double ratio = rng.uniform();
  return corrupt_with_ratio(reference, protected_sub, ratio, rng);
}

// How many reference tokens to insert in each gap of the corrupted sequence
// (gaps include both frame boundaries, so the result has |sub| + 1 entries).
inline std::vector<int> gap_insertion_targets(const std::vector<std::string>& sub,
                                              const std::vector<std::string>& full) {
  const auto align = leftmost_alignment(sub, full);
  if (!align) throw std::runtime_error("gap_insertion_targets: not a subsequence");
  std::vector<int> gaps(sub.size() + 1, 0);
  int prev = -1;
  for (size_t i = 0; i < align->size(); ++i) {
    gaps[i] = (*align)[i] - prev - 1;
    prev = (*align)[i];
  }
  gaps[sub.size()] = static_cast<int>(full.size()) - prev - 1;
  return gaps;
}

// ---- supervision targets ----

struct PlanTargets {
  int count_target = 0;              // |gold plan|
  std::vector<int> pointer_targets;  // record index per plan position
};

inline PlanTargets build_plan_targets(const TableInstance& inst) {
  if (!inst.has_plan) throw std::runtime_error("instance missing plan annotation");
  PlanTargets t;
  t.count_target = static_cast<int>(inst.plan_tokens.size());
  t.pointer_targets = inst.plan_pointers;
  return t;
}

struct SeamTargets {
  std::vector<std::string> corrupted;  // surviving reference tokens
  std::vector<int> gap_counts;         // |corrupted| + 1, framed gaps
  std::vector<char> kept;              // per reference position: survived?
};

inline SeamTargets build_seam_targets(const TableInstance& inst, Rng& rng) {
  if (!inst.has_plan) throw std::runtime_error("instance missing plan annotation");
  SeamTargets t;
  const auto protected_sub = lcs(inst.plan_tokens, inst.description);
  t.corrupted = corrupt_reference(inst.description, protected_sub, rng);
  t.gap_counts = gap_insertion_targets(t.corrupted, inst.description);
  const auto align = leftmost_alignment(t.corrupted, inst.description);
  t.kept.assign(inst.description.size(), 0);
  for (int p : *align) t.kept[p] = 1;
  return t;
}

// ---- loss ----

template <typename Real>
struct LossParts {
  Real plan_count = 0, plan_pointer = 0, plan_delete = 0;
  Real seam_count = 0, seam_token = 0, seam_delete = 0;
  Real total = 0;
  int total_node = -1;
};

// The draft sequences inside the loss are produced by argmax; for gradient
// checking they can be recorded once and replayed so the loss stays smooth
// around the evaluation point.
struct TeacherChoices {
  bool replay = false;
  std::vector<int> first_selections;
  std::vector<int> final_selections;
  std::vector<int> slot_token_ids;
};

template <typename Real>
LossParts<Real> compute_loss(ModelContext<Real>& ctx, const TableInstance& inst,
                             const PlanTargets& pt, const SeamTargets& st, double lambda_plan,
                             TeacherChoices* choices = nullptr) {
  auto& g = ctx.g;
  const RunConfig& cfg = ctx.cfg;
  const int L = cfg.max_placeholders;
  const TableMemory mem = encode_table(ctx, inst.records);
  const auto zero = [&g]() { return g.leaf(Mat<Real>(1, 1)); };

  // planning: insertion count over the empty frame
  const EditSequence boot = EditSequence::empty_frame();
  const int boot_states = decoder_pass(ctx, boot.vocab_ids(), mem.states);
  const int count_logp = g.log_softmax_rows(insert_count_logits(ctx, boot_states));
  const int plan_count_node = g.nll_pick(count_logp, {std::min(pt.count_target, L)});

  // planning: pointers over the all-placeholder skeleton
  const int l_star = pt.count_target;
  EditSequence skeleton = EditSequence::empty_frame();
  for (int i = 0; i < l_star; ++i) skeleton.tokens.insert(skeleton.tokens.begin() + 1, make_placeholder());
  const auto plh = placeholder_positions(skeleton);
  const int skel_states = decoder_pass(ctx, skeleton.vocab_ids(), mem.states);
  int plan_pointer_node = zero();
  std::vector<int> final_sel;
  if (l_star > 0) {
    const int queries = g.gather_rows(skel_states, plh);
    const int logits_a = pointer_logits(ctx, "head.pointer_a", queries, mem.states);
    const int nll_a = g.nll_pick(g.log_softmax_rows(logits_a), pt.pointer_targets);
    std::vector<int> sel_a(l_star);
    if (choices && choices->replay) {
      sel_a = choices->first_selections;
    } else {
      for (int i = 0; i < l_star; ++i) sel_a[i] = argmax_row(g.val(logits_a), i);
      if (choices) choices->first_selections = sel_a;
    }
    if (cfg.rethinking) {
      std::vector<int> selected(skeleton.length(), -1);
      for (int i = 0; i < l_star; ++i) selected[plh[i]] = sel_a[i];
      const int re_states = rethink_states(ctx, skel_states, selected, mem.record_embeddings, mem.states);
      const int re_queries = g.gather_rows(re_states, plh);
      const int logits_b = pointer_logits(ctx, "head.pointer_b", re_queries, mem.states);
      const int nll_b = g.nll_pick(g.log_softmax_rows(logits_b), pt.pointer_targets);
      // both heads are supervised by the gold plan; report their mean
      plan_pointer_node = g.scale(g.add(nll_a, nll_b), Real(0.5));
      final_sel.resize(l_star);
      if (choices && choices->replay) {
        final_sel = choices->final_selections;
      } else {
        for (int i = 0; i < l_star; ++i) final_sel[i] = argmax_row(g.val(logits_b), i);
        if (choices) choices->final_selections = final_sel;
      }
    } else {
      plan_pointer_node = nll_a;
      final_sel = sel_a;
      if (choices && !choices->replay) choices->final_selections = final_sel;
    }
  }

  // planning: deletion labels on the drafted plan (1 = drafted token differs
  // from the gold plan token at that position, i.e. delete it)
  int plan_delete_node = zero();
  if (l_star > 0) {
    EditSequence draft = skeleton;
    std::vector<int> del_labels(l_star);
    for (int i = 0; i < l_star; ++i) {
      const std::string& tok = inst.records[final_sel[i]].value_token;
      draft.tokens[plh[i]] = copied_token(tok, final_sel[i], ctx.vocab);
      del_labels[i] = tok == inst.plan_tokens[i] ? 0 : 1;
    }
    const int draft_states = decoder_pass(ctx, draft.vocab_ids(), mem.states);
    const int interior = g.slice_rows(draft_states, 1, draft.length() - 1);
    const int del_logp = g.log_softmax_rows(delete_logits(ctx, interior));
    plan_delete_node = g.nll_pick(del_logp, del_labels);
  }

  // seaming: insertion counts over the corrupted reference
  const EditSequence corrupted = frame_tokens(st.corrupted, ctx.vocab);
  const int cor_states = decoder_pass(ctx, corrupted.vocab_ids(), mem.states);
  const int gap_logp = g.log_softmax_rows(insert_count_logits(ctx, cor_states));
  std::vector<int> gap_targets(st.gap_counts.size());
  for (size_t i = 0; i < st.gap_counts.size(); ++i) gap_targets[i] = std::min(st.gap_counts[i], L);
  const int seam_count_node = g.nll_pick(gap_logp, gap_targets);

  // seaming: token prediction at the slots of the reference-shaped skeleton
  const int ref_len = static_cast<int>(inst.description.size());
  EditSequence seam_skel = EditSequence::empty_frame();
  std::vector<int> slot_positions;  // framed coordinates
  std::vector<int> slot_targets;
  for (int i = 0; i < ref_len; ++i) {
    if (st.kept[i]) {
      seam_skel.tokens.insert(seam_skel.tokens.end() - 1,
                              generated_token(inst.description[i], ctx.vocab));
    } else {
      seam_skel.tokens.insert(seam_skel.tokens.end() - 1, make_placeholder());
      slot_positions.push_back(i + 1);
      slot_targets.push_back(ctx.vocab.id(inst.description[i]));
    }
  }
  int seam_token_node = zero();
  std::vector<int> slot_choice_ids;
  const int seam_states = decoder_pass(ctx, seam_skel.vocab_ids(), mem.states);
  if (!slot_positions.empty()) {
    const int slots = g.gather_rows(seam_states, slot_positions);
    const int tok_logits = token_logits(ctx, slots);
    const int tok_logp = g.log_softmax_rows(tok_logits);
    seam_token_node = g.nll_pick(tok_logp, slot_targets);
    slot_choice_ids.resize(slot_positions.size());
    if (choices && choices->replay) {
      slot_choice_ids = choices->slot_token_ids;
    } else {
      for (size_t i = 0; i < slot_positions.size(); ++i)
        slot_choice_ids[i] = argmax_row(g.val(tok_logits), static_cast<int>(i), ctx.vocab.size());
      if (choices) choices->slot_token_ids = slot_choice_ids;
    }
  }

  // seaming: deletion labels on the token head's output sequence
  EditSequence seam_draft = seam_skel;
  std::vector<int> seam_del_labels(ref_len);
  {
    size_t s = 0;
    for (int i = 0; i < ref_len; ++i) {
      if (st.kept[i]) {
        seam_del_labels[i] = 0;
      } else {
        const std::string tok = ctx.vocab.token(slot_choice_ids[s]);
        seam_draft.tokens[i + 1] = generated_token(tok, ctx.vocab);
        seam_del_labels[i] = tok == inst.description[i] ? 0 : 1;
        ++s;
      }
    }
  }
  int seam_delete_node = zero();
  if (ref_len > 0) {
    const int draft_states = decoder_pass(ctx, seam_draft.vocab_ids(), mem.states);
    const int interior = g.slice_rows(draft_states, 1, seam_draft.length() - 1);
    const int del_logp = g.log_softmax_rows(delete_logits(ctx, interior));
    seam_delete_node = g.nll_pick(del_logp, seam_del_labels);
  }

  const int plan_sum = g.add(g.add(plan_count_node, plan_pointer_node), plan_delete_node);
  const int seam_sum = g.add(g.add(seam_count_node, seam_token_node), seam_delete_node);
  const int total = g.add(g.scale(plan_sum, Real(lambda_plan)), seam_sum);

  LossParts<Real> parts;
  parts.plan_count = g.val(plan_count_node)(0, 0);
  parts.plan_pointer = g.val(plan_pointer_node)(0, 0);
  parts.plan_delete = g.val(plan_delete_node)(0, 0);
  parts.seam_count = g.val(seam_count_node)(0, 0);
  parts.seam_token = g.val(seam_token_node)(0, 0);
  parts.seam_delete = g.val(seam_delete_node)(0, 0);
  parts.total = g.val(total)(0, 0);
  parts.total_node = total;
  return parts;
}

// ---- optimizer ----

inline double lr_at(long long step, double peak, long long warmup) {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

template <typename Real>
struct AdamState {
  std::unordered_map<std::string, std::pair<Mat<Real>, Mat<Real>>> moments;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

template <typename Real>
void adam_step(ParamStore<Real>& params, const Gradients<Real>& grads, AdamState<Real>& state,
               double lr) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t pi = 0; pi < params.names.size(); ++pi) {
    const auto& name = params.names[pi];
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat<Real>& grad = git->second;
    auto mit = state.moments.find(name);
    if (mit == state.moments.end()) {
      mit = state.moments
                .emplace(name, std::make_pair(Mat<Real>::zeros(grad.rows, grad.cols),
                                              Mat<Real>::zeros(grad.rows, grad.cols)))
                .first;
    }
    Mat<Real>& m = mit->second.first;
    Mat<Real>& v = mit->second.second;
    Mat<Real>& theta = params.tensors[pi];
    for (size_t i = 0; i < grad.size(); ++i) {
      const double gi = static_cast<double>(grad.a[i]);
      const double mi = state.beta1 * static_cast<double>(m.a[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v.a[i]) + (1.0 - state.beta2) * gi * gi;
      m.a[i] = static_cast<Real>(mi);
      v.a[i] = static_cast<Real>(vi);
      theta.a[i] -= static_cast<Real>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps));
    }
  }
}

// ---- training loop ----

struct TrainResult {
  ParamStore<float> params;
  std::vector<std::string> log_lines;
  double best_valid_bleu = -1.0;
  int steps_run = 0;
};

inline double corpus_bleu_of_decodes(const ParamStore<float>& params, const RunConfig& cfg,
                                     const Vocab& vocab, const Vocab& key_vocab,
                                     const std::vector<TableInstance>& data, int max_iter) {
  std::vector<std::vector<std::string>> hyps, refs;
  for (const auto& inst : data) {
    hyps.push_back(decode_instance(params, cfg, vocab, key_vocab, inst, max_iter).hypothesis);
    refs.push_back(inst.description);
  }
  return bleu(hyps, refs);
}

inline TrainResult train(const std::vector<TableInstance>& corpus,
                         const std::vector<TableInstance>& valid, const RunConfig& cfg,
                         const Vocab& vocab, const Vocab& key_vocab,
                         std::ostream* echo = nullptr) {
  validate_train_config(cfg);
  if (corpus.empty()) throw std::runtime_error("training corpus is empty");
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& inst = corpus[i];
    const std::string where = " (instance " + std::to_string(i) + ")";
    if (!inst.has_plan) throw std::runtime_error("instance missing plan annotation");
    if (static_cast<int>(inst.records.size()) > cfg.max_records)
      throw std::runtime_error("table too large" + where);
    if (static_cast<int>(inst.description.size()) + 2 > cfg.max_seq)
      throw std::runtime_error("description exceeds max_seq" + where);
    if (static_cast<int>(inst.plan_tokens.size()) > cfg.max_placeholders)
      throw std::runtime_error("plan exceeds max_placeholders" + where);
  }

  Rng init_rng(cfg.seed);
  ParamStore<float> params = init_params<float>(cfg, init_rng);
  Rng order_rng(init_rng.fork_seed());
  Rng corruption_rng(init_rng.fork_seed());
  Rng dropout_rng(init_rng.fork_seed());

  std::vector<PlanTargets> plan_targets;
  plan_targets.reserve(corpus.size());
  for (const auto& inst : corpus) plan_targets.push_back(build_plan_targets(inst));

  TrainResult result;
  auto log = [&](const std::string& line) {
    result.log_lines.push_back(line);
    if (echo) (*echo) << line << '\n';
  };

  std::vector<int> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // trigger shuffle on first use
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  AdamState<float> adam;
  std::optional<ParamStore<float>> best_params;
  int evals_without_improvement = 0;
  bool stopped_early = false;

  for (int step = 1; step <= cfg.max_steps && !stopped_early; ++step) {
    Gradients<float> grads;
    LossParts<float> mean{};
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int idx = next_index();
      const TableInstance& inst = corpus[idx];
      Graph<float> g;
      ModelContext<float> ctx(cfg, g, params, vocab, key_vocab);
      if (cfg.dropout > 0) ctx.dropout_rng = &dropout_rng;
      const SeamTargets st = build_seam_targets(inst, corruption_rng);
      const LossParts<float> parts = compute_loss(ctx, inst, plan_targets[idx], st, cfg.lambda_plan);
      if (!std::isfinite(parts.total))
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
      g.backward(parts.total_node);
      ctx.bind.collect(grads);
      mean.plan_count += parts.plan_count;
      mean.plan_pointer += parts.plan_pointer;
      mean.plan_delete += parts.plan_delete;
      mean.seam_count += parts.seam_count;
      mean.seam_token += parts.seam_token;
      mean.seam_delete += parts.seam_delete;
      mean.total += parts.total;
    }
    const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
    for (auto& [name, gmat] : grads)
      for (auto& v : gmat.a) v *= inv_b;
    mean.plan_count *= inv_b;
    mean.plan_pointer *= inv_b;
    mean.plan_delete *= inv_b;
    mean.seam_count *= inv_b;
    mean.seam_token *= inv_b;
    mean.seam_delete *= inv_b;
    mean.total *= inv_b;

    const double lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps);
    adam_step(params, grads, adam, lr);
    result.steps_run = step;

    char line[512];
    std::snprintf(line, sizeof(line),
                  "step=%d lr=%.6g loss=%.6f plan_count=%.6f plan_pointer=%.6f plan_delete=%.6f "
                  "seam_count=%.6f seam_token=%.6f seam_delete=%.6f",
                  step, lr, mean.total, mean.plan_count, mean.plan_pointer, mean.plan_delete,
                  mean.seam_count, mean.seam_token, mean.seam_delete);
    if (step % cfg.log_interval == 0 || step == 1 || step == cfg.max_steps) log(line);

    if (cfg.eval_interval > 0 && !valid.empty() && step % cfg.eval_interval == 0) {
      const double vb = corpus_bleu_of_decodes(params, cfg, vocab, key_vocab, valid, cfg.max_iter);
      char vline[160];
      std::snprintf(vline, sizeof(vline), "step=%d valid_bleu=%.4f", step, vb);
      log(vline);
      if (vb > result.best_valid_bleu) {
        result.best_valid_bleu = vb;
        best_params = params;
        evals_without_improvement = 0;
      } else if (++evals_without_improvement >= cfg.patience) {
        char sline[160];
        std::snprintf(sline, sizeof(sline), "step=%d early stop (no improvement in %d evals)", step,
                      cfg.patience);
        log(sline);
        stopped_early = true;
      }
    }
  }

  result.params = best_params ? std::move(*best_params) : std::move(params);
  return result;
}

}  // namespace pts
