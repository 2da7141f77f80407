// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "pts/seamer.hpp"

namespace pts {

// Corpus-level BLEU-4 with brevity penalty. Zero counts are smoothed with a
// small epsilon on both numerator and denominator, so identical corpora score
// exactly 100 and degenerate short segments stay defined.
inline double bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw std::runtime_error("bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw std::runtime_error("bleu: hypothesis/reference count mismatch");
  constexpr int kMaxN = 4;
  constexpr double kEps = 1e-9;
  long long matches[kMaxN] = {0, 0, 0, 0};
  long long totals[kMaxN] = {0, 0, 0, 0};
  long long hyp_len = 0, ref_len = 0;

  const auto ngram_counts = [](const std::vector<std::string>& toks, int n) {
    std::unordered_map<std::string, long long> counts;
    for (int i = 0; i + n <= static_cast<int>(toks.size()); ++i) {
      std::string key = toks[i];
      for (int k = 1; k < n; ++k) {
        key += '\x1f';
        key += toks[i + k];
      }
      ++counts[key];
    }
    return counts;
  };

  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= kMaxN; ++n) {
      const auto hc = ngram_counts(hyp, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [key, cnt] : hc) {
        totals[n - 1] += cnt;
        auto it = rc.find(key);
        if (it != rc.end()) matches[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < kMaxN; ++n)
    log_p += 0.25 * std::log((static_cast<double>(matches[n]) + kEps) /
                             (static_cast<double>(totals[n]) + kEps));
  const double bp =
      hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_p);
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

constexpr double kRougeBeta = 1.2;

// LCS-based F per pair, macro-averaged over the corpus (beta = 1.2).
inline double rouge_l(const std::vector<std::vector<std::string>>& hypotheses,
                      const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw std::runtime_error("rouge_l: empty corpus");
  if (hypotheses.size() != references.size())
    throw std::runtime_error("rouge_l: hypothesis/reference count mismatch");
  double sum_f = 0.0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    if (hyp.empty() && ref.empty()) {
      sum_f += 1.0;
      continue;
    }
    if (hyp.empty() || ref.empty()) continue;
    const double l = lcs_length(hyp, ref);
    const double p = l / static_cast<double>(hyp.size());
    const double r = l / static_cast<double>(ref.size());
    if (l == 0.0) continue;
    const double b2 = kRougeBeta * kRougeBeta;
    sum_f += (1.0 + b2) * r * p / (r + b2 * p);
  }
  return sum_f / static_cast<double>(hypotheses.size());
}

// Which tokens the seaming stage contributes: drop every token that occurs in
// the instance's plan, pool the rest across the corpus, and report each
// surviving token's share (percent) of that pool, most frequent first.
inline std::vector<std::pair<std::string, double>> seam_token_frequencies(
    const std::vector<std::vector<std::string>>& hypotheses,
    const std::vector<std::vector<std::string>>& plans) {
  if (hypotheses.size() != plans.size())
    throw std::runtime_error("seam_token_frequencies: hypothesis/plan count mismatch");
  std::unordered_map<std::string, long long> counts;
  long long total = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const std::unordered_set<std::string> planned(plans[i].begin(), plans[i].end());
    for (const auto& tok : hypotheses[i]) {
      if (planned.count(tok)) continue;
      ++counts[tok];
      ++total;
    }
  }
  std::vector<std::pair<std::string, double>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, v] : out) v = total == 0 ? 0.0 : 100.0 * v / static_cast<double>(total);
  return out;
}

struct DiversityStats {
  double repetition_pct = 0.0;  // mean per-sentence fraction of repeat tokens, in percent
  double distinct1 = 0.0;       // unique unigrams / total unigrams over the corpus
  double distinct2 = 0.0;
};

inline DiversityStats repetition_and_distinct(const std::vector<std::vector<std::string>>& hypotheses) {
  if (hypotheses.empty()) throw std::runtime_error("repetition_and_distinct: empty corpus");
  double rep_sum = 0.0;
  long long uni_total = 0, bi_total = 0;
  std::unordered_set<std::string> uni_set, bi_set;
  for (const auto& hyp : hypotheses) {
    if (!hyp.empty()) {
      std::unordered_set<std::string> seen(hyp.begin(), hyp.end());
      rep_sum += static_cast<double>(hyp.size() - seen.size()) / static_cast<double>(hyp.size());
    }
    uni_total += static_cast<long long>(hyp.size());
    for (const auto& t : hyp) uni_set.insert(t);
    for (size_t i = 0; i + 1 < hyp.size(); ++i) {
      bi_set.insert(hyp[i] + '\x1f' + hyp[i + 1]);
      ++bi_total;
    }
  }
  DiversityStats d;
  d.repetition_pct = 100.0 * rep_sum / static_cast<double>(hypotheses.size());
  d.distinct1 = uni_total == 0 ? 0.0 : static_cast<double>(uni_set.size()) / static_cast<double>(uni_total);
  d.distinct2 = bi_total == 0 ? 0.0 : static_cast<double>(bi_set.size()) / static_cast<double>(bi_total);
  return d;
}

// ---- report ----

struct EvalReport {
  double bleu_score = 0.0;
  double rouge_l_f = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  double repetition_pct = 0.0;
  double latency_ms_per_batch = -1.0;  // negative = not measured
  double mean_decoder_passes = -1.0;

  std::string to_text() const {
    std::ostringstream out;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "bleu: %.4f\n", bleu_score);
    out << buf;
    std::snprintf(buf, sizeof(buf), "rouge_l (beta=%.1f): %.6f\n", kRougeBeta, rouge_l_f);
    out << buf;
    std::snprintf(buf, sizeof(buf), "distinct_1: %.6f\n", distinct1);
    out << buf;
    std::snprintf(buf, sizeof(buf), "distinct_2: %.6f\n", distinct2);
    out << buf;
    std::snprintf(buf, sizeof(buf), "repetition_pct: %.6f\n", repetition_pct);
    out << buf;
    if (latency_ms_per_batch >= 0) {
      std::snprintf(buf, sizeof(buf), "latency_ms_per_batch: %.3f\n", latency_ms_per_batch);
      out << buf;
    }
    if (mean_decoder_passes >= 0) {
      std::snprintf(buf, sizeof(buf), "mean_decoder_passes: %.4f\n", mean_decoder_passes);
      out << buf;
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bleu"] = bleu_score;
    j["rouge_l"] = rouge_l_f;
    j["rouge_l_beta"] = kRougeBeta;
    j["distinct_1"] = distinct1;
    j["distinct_2"] = distinct2;
    j["repetition_pct"] = repetition_pct;
    if (latency_ms_per_batch >= 0) j["latency_ms_per_batch"] = latency_ms_per_batch;
    if (mean_decoder_passes >= 0) j["mean_decoder_passes"] = mean_decoder_passes;
    return j;
  }
};

inline EvalReport evaluate_corpus(const std::vector<std::vector<std::string>>& hyps,
                                  const std::vector<std::vector<std::string>>& refs) {
  EvalReport r;
  r.bleu_score = bleu(hyps, refs);
  r.rouge_l_f = rouge_l(hyps, refs);
  const DiversityStats d = repetition_and_distinct(hyps);
  r.distinct1 = d.distinct1;
  r.distinct2 = d.distinct2;
  r.repetition_pct = d.repetition_pct;
  return r;
}

// ---- decode measurement ----

struct DecodeRun {
  std::vector<std::vector<std::string>> hypotheses;
  std::vector<DecodeOutput> outputs;
  double latency_ms_per_batch = 0.0;
  double mean_decoder_passes = 0.0;
};

// Decode a dataset in batches of `batch_size`, timing wall-clock per batch.
// Batch elements are independent; they run serially on one worker.
template <typename Real>
DecodeRun measure_decode(const ParamStore<Real>& params, const RunConfig& cfg, const Vocab& vocab,
                         const Vocab& key_vocab, const std::vector<TableInstance>& data,
                         int batch_size, int max_iter, bool use_gold_plan = false) {
  if (data.empty()) throw std::runtime_error("measure_decode: empty dataset");
  if (batch_size < 1) throw std::runtime_error("measure_decode: batch_size must be >= 1");
  DecodeRun run;
  long long total_passes = 0;
  int batches = 0;
  double total_ms = 0.0;
  for (size_t start = 0; start < data.size(); start += batch_size) {
    const size_t end = std::min(data.size(), start + batch_size);
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t i = start; i < end; ++i) {
      DecodeOutput out =
          decode_instance(params, cfg, vocab, key_vocab, data[i], max_iter, use_gold_plan);
      total_passes += out.trace.decoder_passes;
      run.hypotheses.push_back(out.hypothesis);
      run.outputs.push_back(std::move(out));
    }
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ++batches;
  }
  run.latency_ms_per_batch = total_ms / batches;
  run.mean_decoder_passes = static_cast<double>(total_passes) / static_cast<double>(data.size());
  return run;
}

}  // namespace pts
