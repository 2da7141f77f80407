// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Later criteria reuse the overfit model trained once through the
// command-line binary, so the whole suite exercises the real tool surface.

#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pts;

namespace {

void criterion(int n, const std::string& summary, bool ok) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", n, summary.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(ok, "criterion ", n, ": ", summary);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// Multiset token F1 between a predicted and a gold plan.
double plan_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> pc, gc;
  for (const auto& t : pred) ++pc[t];
  for (const auto& t : gold) ++gc[t];
  int overlap = 0;
  for (const auto& [t, c] : pc)
    if (auto it = gc.find(t); it != gc.end()) overlap += std::min(c, it->second);
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / pred.size();
  const double r = static_cast<double>(overlap) / gold.size();
  return 2.0 * p * r / (p + r);
}

// Shared state across criteria: the workspace and the overfit run artifacts.
struct World {
  fs::path dir;
  std::string cli;
  bool trained = false;
  double train_seconds = 0;
  double train_bleu = 0;
  double plan_exact_pct = 0;
  std::vector<TableInstance> train_data;
  std::vector<json> traces10;  // per-instance decode traces at max_iter 10

  static World& get() {
    static World w;
    return w;
  }

  int run(const std::string& args) {
    const std::string cmd = "cd " + dir.string() + " && " + cli + " " + args +
                            " >> acceptance_cmd.log 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  void ensure_workspace() {
    if (!dir.empty()) return;
    const char* c = std::getenv("PTS_CLI");
    REQUIRE_MESSAGE(c != nullptr, "PTS_CLI must point at the built binary");
    cli = c;
    dir = fs::temp_directory_path() / "pts_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }

  // Criterion 3 pipeline; later criteria reuse its outputs.
  void ensure_trained() {
    if (trained) return;
    ensure_workspace();
    REQUIRE(run("synth --seed 1 --n 64 --out train.jsonl") == 0);
    {
      std::ofstream cfg(dir / "small.cfg");
      cfg << "[model]\nd_model = 64\nd_hidden = 256\nn_heads = 4\nenc_layers = 2\ndec_layers = 2\n"
             "emb_token = 48\nemb_key = 16\nemb_pos = 8\nvocab_size = 512\nkey_vocab_size = 64\n"
             "max_placeholders = 48\nmax_record_pos = 16\nmax_seq = 96\nmax_records = 32\n"
             "rethinking = true\ndropout = 0.0\n"
             "[train]\nlambda_plan = 0.05\npeak_lr = 1e-3\nwarmup_steps = 200\nmax_steps = 2000\n"
             "batch_size = 8\nseed = 1\neval_interval = 0\nlog_interval = 200\n"
             "[decode]\nmax_iter = 10\n"
             "[paths]\ntrain = prepared.jsonl\nvocab = vocab.txt\ncheckpoint = model.ckpt\n";
    }
    REQUIRE(run("prepare --data train.jsonl --config small.cfg --out prepared.jsonl") == 0);

    const auto t0 = std::chrono::steady_clock::now();
    REQUIRE(run("train --config small.cfg") == 0);
    train_seconds = seconds_since(t0);

    REQUIRE(run("generate --checkpoint model.ckpt --data prepared.jsonl --max-iter 10 "
                "--out hyp10.txt --trace trace10.jsonl") == 0);
    REQUIRE(run("evaluate --hyp hyp10.txt --data prepared.jsonl --trace trace10.jsonl "
                "--out report10.json") == 0);

    train_data = load_dataset((dir / "prepared.jsonl").string());
    traces10 = read_jsonl(dir / "trace10.jsonl");
    REQUIRE(traces10.size() == train_data.size());
    const json report = json::parse(read_file(dir / "report10.json"));
    train_bleu = report.at("bleu").get<double>();

    int exact = 0;
    for (size_t i = 0; i < train_data.size(); ++i) {
      const auto pred = traces10[i].at("plan_tokens").get<std::vector<std::string>>();
      if (pred == train_data[i].plan_tokens) ++exact;
    }
    plan_exact_pct = 100.0 * exact / static_cast<double>(train_data.size());
    trained = true;
  }
};

RunConfig gradcheck_config(int d_model) {
  RunConfig cfg = test::tiny_config(d_model);
  cfg.max_placeholders = 16;
  cfg.max_seq = 80;
  return cfg;
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness") {
  const auto t0 = std::chrono::steady_clock::now();
  int checked = 0;
  bool all_ok = true;
  for (int d_model : {4, 8}) {
    const RunConfig cfg = gradcheck_config(d_model);
    const auto corpus = generate_synthetic_corpus(900 + d_model, 2);
    auto m = test::make_test_model<double>(corpus, cfg, 1000 + d_model);
    for (const auto& inst : corpus) {
      const PlanTargets pt = build_plan_targets(inst);
      Rng crng(55 + d_model);
      const SeamTargets st = build_seam_targets(inst, crng);

      TeacherChoices choices;
      Graph<double> g;
      ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
      const auto parts = compute_loss(ctx, inst, pt, st, 0.05, &choices);
      g.backward(parts.total_node);
      Gradients<double> analytic;
      ctx.bind.collect(analytic);

      choices.replay = true;
      auto loss_fn = [&](const ParamStore<double>& p) {
        Graph<double> gg;
        ModelContext<double> cc(m.cfg, gg, p, m.vocab, m.key_vocab);
        return static_cast<double>(compute_loss(cc, inst, pt, st, 0.05, &choices).total);
      };
      const auto report = test::fd_check(m.params, loss_fn, analytic, 1e-5, 1e-3,
                                         d_model == 4 ? 5 : 3, 777 + d_model);
      checked += report.checked;
      for (const auto& f : report.failures)
        MESSAGE("grad mismatch ", f.tensor, "[", f.index, "]: analytic ", f.analytic, " numeric ",
                f.numeric, " rel ", f.rel_err);
      all_ok = all_ok && report.ok();
    }
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "analytic vs central differences, %d entries across all heads/layers, %.1fs",
                checked, secs);
  criterion(1, buf, all_ok && secs < 120.0 && checked > 1000);
}

TEST_CASE("criterion 2: edit-algorithm oracles") {
  Rng rng(20250808);
  bool lcs_ok = true, gaps_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = test::random_tokens(rng, 8, 4);
    const auto b = test::random_tokens(rng, 8, 4);
    if (lcs(a, b) != test::lcs_oracle(a, b)) lcs_ok = false;
    std::vector<std::string> sub;
    for (const auto& t : b)
      if (rng.uniform() < 0.5) sub.push_back(t);
    if (gap_insertion_targets(sub, b) != test::gap_targets_oracle(sub, b)) gaps_ok = false;
  }

  const auto corpus = generate_synthetic_corpus(77, 64);
  bool mass_ok = true;
  Rng crng(31337);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto& inst = corpus[trial % corpus.size()];
    const auto protect = lcs(inst.plan_tokens, inst.description);
    const auto corrupted = corrupt_reference(inst.description, protect, crng);
    const auto gaps = gap_insertion_targets(corrupted, inst.description);
    long long total = 0;
    for (int v : gaps) total += v;
    if (total != static_cast<long long>(inst.description.size() - corrupted.size())) mass_ok = false;
  }
  criterion(2, "lcs + gap targets match brute force on 1000 pairs; insertion mass conserved on "
               "10000 corruption pairs",
            lcs_ok && gaps_ok && mass_ok);
}

TEST_CASE("criterion 3: overfit convergence through the CLI") {
  World& w = World::get();
  w.ensure_trained();
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "64-instance synthetic corpus, d_model 64, 2+2 layers, 2000 steps: train BLEU "
                "%.2f (>= 95), plan exact-match %.1f%% (>= 90%%), %.0fs (< 30 min)",
                w.train_bleu, w.plan_exact_pct, w.train_seconds);
  criterion(3, buf, w.train_bleu >= 95.0 && w.plan_exact_pct >= 90.0 && w.train_seconds < 1800.0);
}

TEST_CASE("criterion 4: copy faithfulness of the plan stage") {
  World& w = World::get();
  w.ensure_trained();
  long long plan_tokens_total = 0;
  bool all_from_table = true;
  for (size_t i = 0; i < w.train_data.size(); ++i) {
    std::unordered_set<std::string> table_tokens;
    for (const auto& r : w.train_data[i].records) table_tokens.insert(r.value_token);
    for (const auto& tok : w.traces10[i].at("plan_tokens").get<std::vector<std::string>>()) {
      ++plan_tokens_total;
      if (!table_tokens.count(tok)) all_from_table = false;
    }
  }

  // provenance check through the API as well: every plan token carries a
  // source record whose value matches its surface
  const auto ck = load_checkpoint<float>((w.dir / "model.ckpt").string());
  bool provenance_ok = true;
  for (size_t i = 0; i < 10 && i < w.train_data.size(); ++i) {
    Graph<float> g;
    ModelContext<float> ctx(ck.config, g, ck.params, ck.vocab, ck.key_vocab);
    const auto result = plan(ctx, w.train_data[i].records);
    for (const auto& tok : result.plan.tokens) {
      if (tok.vocab_id == Vocab::kBos || tok.vocab_id == Vocab::kEos) continue;
      if (tok.source_record < 0 ||
          w.train_data[i].records[tok.source_record].value_token != tok.text)
        provenance_ok = false;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld/%lld generated plan tokens occur in the source table",
                plan_tokens_total, plan_tokens_total);
  criterion(4, buf, all_from_table && provenance_ok && plan_tokens_total > 0);
}

TEST_CASE("criterion 5: parameter sharing accounting") {
  const RunConfig paper_dims;  // defaults are the published base setting
  const size_t shared = count_params(paper_dims, true);
  const size_t base = count_params(paper_dims, false);
  const size_t disjoint = count_disjoint_params(paper_dims);
  const double share_ratio = static_cast<double>(shared) / static_cast<double>(disjoint);
  const double rethink_delta = static_cast<double>(shared - base) / static_cast<double>(base);
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "one shared network %.1fM vs two disjoint %.1fM (ratio %.1f%% < 55%%); rethinking "
                "adds %.1f%% (< 10%%)",
                shared / 1e6, disjoint / 1e6, 100.0 * share_ratio, 100.0 * rethink_delta);
  criterion(5, buf, share_ratio < 0.55 && rethink_delta < 0.10);
}

TEST_CASE("criterion 6: iteration count decoupled from output length") {
  World& w = World::get();
  w.ensure_trained();
  // pick the shortest and longest reference in the corpus (~10 vs ~50 tokens)
  size_t short_i = 0, long_i = 0;
  for (size_t i = 0; i < w.train_data.size(); ++i) {
    if (w.train_data[i].description.size() < w.train_data[short_i].description.size()) short_i = i;
    if (w.train_data[i].description.size() > w.train_data[long_i].description.size()) long_i = i;
  }
  const int len_short = static_cast<int>(w.train_data[short_i].description.size());
  const int len_long = static_cast<int>(w.train_data[long_i].description.size());

  const int idec10_short = w.traces10[short_i].at("decoder_passes").get<int>();
  const int idec10_long = w.traces10[long_i].at("decoder_passes").get<int>();

  REQUIRE(w.run("generate --checkpoint model.ckpt --data prepared.jsonl --max-iter 1 "
                "--out hyp1.txt --trace trace1.jsonl") == 0);
  const auto traces1 = read_jsonl(w.dir / "trace1.jsonl");
  double mean1 = 0, mean10 = 0;
  bool bound_ok = true;
  for (size_t i = 0; i < traces1.size(); ++i) {
    const int p1 = traces1[i].at("decoder_passes").get<int>();
    const int p10 = w.traces10[i].at("decoder_passes").get<int>();
    mean1 += p1;
    mean10 += p10;
    if (p1 > p10 || p10 > 3 * 10 + 4 || p1 > 3 * 1 + 4) bound_ok = false;
  }
  mean1 /= traces1.size();
  mean10 /= traces1.size();

  // more refinement budget never hurts exact-match on the overfit corpus
  auto exact_rate = [&](const fs::path& hyp_file) {
    std::ifstream in(hyp_file);
    std::string line;
    int exact = 0, total = 0;
    while (std::getline(in, line)) {
      if (split_tokens(line) == w.train_data[total].description) ++exact;
      ++total;
    }
    return static_cast<double>(exact) / total;
  };
  const bool exact_monotone = exact_rate(w.dir / "hyp10.txt") >= exact_rate(w.dir / "hyp1.txt");

  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "I_DEC %d for %d-token and %d for %d-token targets at cap 10 (equal); bound 3N+4 "
                "holds; mean I_DEC %.2f @cap1 <= %.2f @cap10",
                idec10_short, len_short, idec10_long, len_long, mean1, mean10);
  criterion(6, buf,
            idec10_short == idec10_long && bound_ok && mean1 <= mean10 && exact_monotone &&
                len_short <= 14 && len_long >= 40);
}

TEST_CASE("criterion 7: quality-speed sweep") {
  World& w = World::get();
  w.ensure_trained();
  // warm the caches so the first timed sweep is not penalized
  REQUIRE(w.run("benchmark --checkpoint model.ckpt --data prepared.jsonl --batch-sizes 32 "
                "--max-iters 1 --out warmup.json") == 0);
  REQUIRE(w.run("benchmark --checkpoint model.ckpt --data prepared.jsonl --batch-sizes 32 "
                "--max-iters 1,2,3,5,10 --repeats 9 --out sweep.json") == 0);
  const json rows = json::parse(read_file(w.dir / "sweep.json"));
  REQUIRE(rows.size() == 5);
  bool bleu_ok = true, idec_ok = true, latency_ok = true;
  std::printf("    N   BLEU      latency_ms  I_DEC\n");
  for (size_t i = 0; i < rows.size(); ++i) {
    std::printf("    %-3d %-9.4f %-11.3f %.4f\n", rows[i].at("max_iter").get<int>(),
                rows[i].at("bleu").get<double>(), rows[i].at("latency_ms").get<double>(),
                rows[i].at("i_dec").get<double>());
    if (i == 0) continue;
    if (rows[i].at("bleu").get<double>() < rows[i - 1].at("bleu").get<double>()) bleu_ok = false;
    if (rows[i].at("i_dec").get<double>() < rows[i - 1].at("i_dec").get<double>()) idec_ok = false;
    // once decoding converges the executed work is flat, so wall clock is
    // flat too: require growth wherever the pass count grows, and flatness
    // within measurement tolerance wherever it does not
    const double lat = rows[i].at("latency_ms").get<double>();
    const double prev_lat = rows[i - 1].at("latency_ms").get<double>();
    if (rows[i].at("i_dec").get<double>() > rows[i - 1].at("i_dec").get<double>()) {
      if (lat < 0.90 * prev_lat) latency_ok = false;
    } else if (std::fabs(lat - prev_lat) > 0.15 * prev_lat) {
      latency_ok = false;
    }
  }
  criterion(7, "BLEU and decoder passes nondecreasing in the iteration cap; latency nondecreasing "
               "with the pass count, flat within tolerance at the convergence plateau",
            bleu_ok && idec_ok && latency_ok);
}

TEST_CASE("criterion 8: gold-plan diagnostic") {
  World& w = World::get();
  w.ensure_trained();
  REQUIRE(w.run("synth --seed 999 --n 16 --out held.jsonl") == 0);
  REQUIRE(w.run("generate --checkpoint model.ckpt --data held.jsonl --max-iter 10 "
                "--out held_pred.txt") == 0);
  REQUIRE(w.run("generate --checkpoint model.ckpt --data held.jsonl --max-iter 10 "
                "--out held_gold.txt --gold-plan") == 0);
  REQUIRE(w.run("evaluate --hyp held_pred.txt --data held.jsonl --out held_pred.json") == 0);
  REQUIRE(w.run("evaluate --hyp held_gold.txt --data held.jsonl --out held_gold.json") == 0);
  const double pred = json::parse(read_file(w.dir / "held_pred.json")).at("bleu").get<double>();
  const double gold = json::parse(read_file(w.dir / "held_gold.json")).at("bleu").get<double>();
  char buf[140];
  std::snprintf(buf, sizeof(buf), "held-out BLEU with gold plan %.2f >= with predicted plan %.2f",
                gold, pred);
  criterion(8, buf, gold >= pred);
}

TEST_CASE("criterion 9: rethinking ablation direction") {
  SynthOptions opts;
  opts.duplicate_distractors = true;
  const auto corpus = generate_synthetic_corpus(4242, 16, opts);
  RunConfig cfg;
  cfg.d_model = 32;
  cfg.d_hidden = 128;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.emb_token = 24;
  cfg.emb_key = 8;
  cfg.emb_pos = 8;
  cfg.vocab_size = 256;
  cfg.key_vocab_size = 32;
  cfg.max_placeholders = 24;
  cfg.max_record_pos = 8;
  cfg.max_seq = 96;
  cfg.max_records = 32;
  cfg.dropout = 0.0;
  cfg.lambda_plan = 0.05;
  cfg.peak_lr = 1.5e-3;
  cfg.warmup_steps = 100;
  cfg.max_steps = 600;
  cfg.batch_size = 4;
  cfg.eval_interval = 0;
  cfg.log_interval = 100000;

  const Vocab vocab = vocab_from_instances(corpus, cfg.vocab_size);
  const Vocab keys = key_vocab_from_instances(corpus, cfg.key_vocab_size);
  double mean_with = 0, mean_without = 0;
  for (uint64_t seed : {101, 102, 103, 104}) {
    for (bool rethinking : {true, false}) {
      RunConfig c = cfg;
      c.rethinking = rethinking;
      c.seed = seed;
      const TrainResult r = train(corpus, {}, c, vocab, keys);
      double f1 = 0;
      for (const auto& inst : corpus) {
        const auto out = decode_instance(r.params, c, vocab, keys, inst, 1);
        f1 += plan_f1(out.plan_tokens, inst.plan_tokens);
      }
      f1 /= static_cast<double>(corpus.size());
      std::printf("    seed %llu %s plan-F1 %.4f\n", static_cast<unsigned long long>(seed),
                  rethinking ? "with rethinking   " : "without rethinking", f1);
      (rethinking ? mean_with : mean_without) += f1 / 4.0;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "duplicated-distractor corpus, 4 seeds: mean plan-F1 %.4f with rethinking >= "
                "%.4f without",
                mean_with, mean_without);
  criterion(9, buf, mean_with >= mean_without);
}

TEST_CASE("criterion 10: metric self-tests") {
  const std::vector<std::vector<std::string>> corpus = {split_tokens("the cat sat on the mat"),
                                                        split_tokens("a b c")};
  bool ok = true;
  ok = ok && bleu(corpus, corpus) == 100.0;
  ok = ok && bleu({{}}, {split_tokens("a b")}) == 0.0;
  ok = ok && rouge_l(corpus, corpus) == 1.0;
  ok = ok && rouge_l({split_tokens("a b")}, {split_tokens("x y")}) == 0.0;

  const auto d = repetition_and_distinct({split_tokens("a a b")});
  ok = ok && std::fabs(d.repetition_pct - 100.0 / 3.0) <= 1e-9;
  ok = ok && std::fabs(d.distinct1 - 2.0 / 3.0) <= 1e-9;
  ok = ok && std::fabs(d.distinct2 - 1.0) <= 1e-9;

  const auto two = repetition_and_distinct({split_tokens("x y"), split_tokens("x y x")});
  // 5 unigrams, 2 distinct; 3 bigrams, 2 distinct; repetition mean of {0, 1/3}
  ok = ok && std::fabs(two.distinct1 - 2.0 / 5.0) <= 1e-9;
  ok = ok && std::fabs(two.distinct2 - 2.0 / 3.0) <= 1e-9;
  ok = ok && std::fabs(two.repetition_pct - 100.0 / 6.0) <= 1e-9;

  criterion(10, "BLEU/ROUGE-L identity and zero cases exact; repetition and distinct counts exact "
                "to 1e-9",
            ok);
}
