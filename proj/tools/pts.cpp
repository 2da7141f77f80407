// SPDX-License-Identifier: Apache-2.0
//
// pts — train, run, and evaluate the plan-then-seam table-to-text model.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pts/pts.hpp"

namespace {

using nlohmann::json;

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::runtime_error("missing required path for " + what);
  if (!std::filesystem::exists(path)) throw std::runtime_error("cannot open " + path);
}

pts::RunConfig load_run_config(const std::string& config_path) {
  pts::RunConfig cfg;
  if (!config_path.empty()) cfg = pts::parse_config_file(config_path);
  pts::apply_env_path_overrides(cfg);
  return cfg;
}

std::unordered_set<std::string> stopwords_or_default(const std::string& path) {
  if (path.empty()) return pts::default_stopwords();
  return pts::load_stopwords(path);
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::runtime_error("invalid " + what + " list: " + csv);
    }
  }
  if (out.empty()) throw std::runtime_error("empty " + what + " list");
  return out;
}

void write_lines(const std::string& path, const std::vector<std::vector<std::string>>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& toks : lines) out << pts::join_tokens(toks) << '\n';
}

std::vector<std::vector<std::string>> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(pts::split_tokens(line));
  return out;
}

void write_traces(const std::string& path, const std::vector<pts::DecodeOutput>& outputs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& o : outputs) {
    json j;
    j["plan_tokens"] = o.plan_tokens;
    j["iterations"] = o.trace.iterations;
    j["decoder_passes"] = o.trace.decoder_passes;
    out << j.dump() << '\n';
  }
}

// ---- subcommand bodies ----

int cmd_synth(uint64_t seed, int n, const std::string& out_path, bool distractors) {
  pts::SynthOptions opts;
  opts.duplicate_distractors = distractors;
  const auto corpus = pts::generate_synthetic_corpus(seed, n, opts);
  pts::save_dataset(corpus, out_path);
  std::cout << "wrote " << corpus.size() << " instances to " << out_path << "\n";
  return 0;
}

int cmd_annotate(const std::string& data_path, const std::string& stopwords_path,
                 const std::string& out_path) {
  require_file(data_path, "dataset");
  if (!stopwords_path.empty()) require_file(stopwords_path, "stopwords");
  const auto stop = stopwords_or_default(stopwords_path);
  auto corpus = pts::load_dataset(data_path);
  for (auto& inst : corpus) {
    auto [toks, ptrs] = pts::annotate_plan(inst.records, inst.description, stop);
    inst.plan_tokens = std::move(toks);
    inst.plan_pointers = std::move(ptrs);
    inst.has_plan = true;
  }
  pts::save_dataset(corpus, out_path);
  std::cout << "annotated " << corpus.size() << " instances to " << out_path << "\n";
  return 0;
}

int cmd_prepare(const std::string& data_path, const std::string& config_path,
                const std::string& out_path) {
  pts::RunConfig cfg = load_run_config(config_path);
  pts::validate_model_config(cfg);
  require_file(data_path, "dataset");
  if (cfg.vocab_path.empty()) throw std::runtime_error("config: paths.vocab is required for prepare");
  if (!cfg.stopwords_path.empty()) require_file(cfg.stopwords_path, "stopwords");

  auto corpus = pts::load_dataset(data_path);
  if (corpus.empty()) throw std::runtime_error("dataset is empty: " + data_path);
  const auto stop = stopwords_or_default(cfg.stopwords_path);
  for (auto& inst : corpus) {
    if (inst.has_plan) continue;
    auto [toks, ptrs] = pts::annotate_plan(inst.records, inst.description, stop);
    inst.plan_tokens = std::move(toks);
    inst.plan_pointers = std::move(ptrs);
    inst.has_plan = true;
  }
  const pts::Vocab vocab = pts::vocab_from_instances(corpus, cfg.vocab_size);
  const pts::Vocab keys = pts::key_vocab_from_instances(corpus, cfg.key_vocab_size);
  pts::save_vocab_file(vocab, keys, cfg.vocab_path);
  pts::save_dataset(corpus, out_path);
  std::cout << "prepared " << corpus.size() << " instances; vocab " << vocab.size() << " tokens, "
            << keys.size() << " keys\n";
  return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed_override, bool has_seed,
              const std::string& out_override) {
  pts::RunConfig cfg = load_run_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.checkpoint_path = out_override;
  pts::validate_train_config(cfg);
  require_file(cfg.train_path, "training data");
  require_file(cfg.vocab_path, "vocab");
  if (cfg.checkpoint_path.empty()) throw std::runtime_error("config: paths.checkpoint is required for train");
  if (cfg.eval_interval > 0) require_file(cfg.valid_path, "validation data");

  const auto [vocab, keys] = pts::load_vocab_file(cfg.vocab_path);
  const auto corpus = pts::load_dataset(cfg.train_path);
  std::vector<pts::TableInstance> valid;
  if (!cfg.valid_path.empty() && std::filesystem::exists(cfg.valid_path))
    valid = pts::load_dataset(cfg.valid_path);

  pts::TrainResult result = pts::train(corpus, valid, cfg, vocab, keys, &std::cout);
  pts::save_checkpoint(result.params, cfg, vocab, keys, cfg.checkpoint_path);
  std::ofstream log(cfg.checkpoint_path + ".log");
  if (!log) throw std::runtime_error("cannot open " + cfg.checkpoint_path + ".log");
  for (const auto& line : result.log_lines) log << line << '\n';
  std::cout << "saved checkpoint to " << cfg.checkpoint_path << " after " << result.steps_run
            << " steps\n";
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& data_path, int max_iter,
                 const std::string& out_path, bool gold_plan, const std::string& trace_path) {
  require_file(ckpt_path, "checkpoint");
  require_file(data_path, "dataset");
  if (max_iter < 1) throw std::runtime_error("--max-iter must be >= 1");
  const auto ck = pts::load_checkpoint<float>(ckpt_path);
  const auto data = pts::load_dataset(data_path);
  if (data.empty()) throw std::runtime_error("dataset is empty: " + data_path);

  const pts::DecodeRun run =
      pts::measure_decode(ck.params, ck.config, ck.vocab, ck.key_vocab, data, 32, max_iter, gold_plan);
  write_lines(out_path, run.hypotheses);
  const std::string traces = trace_path.empty() ? out_path + ".trace.jsonl" : trace_path;
  write_traces(traces, run.outputs);
  std::cout << "decoded " << data.size() << " instances to " << out_path << " (traces: " << traces
            << ", mean decoder passes " << run.mean_decoder_passes << ")\n";
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& data_path,
                 const std::string& trace_path, const std::string& out_path) {
  require_file(hyp_path, "hypotheses");
  require_file(data_path, "dataset");
  const auto hyps = read_lines(hyp_path);
  const auto data = pts::load_dataset(data_path);
  if (hyps.size() != data.size())
    throw std::runtime_error("hypothesis count does not match dataset size");
  std::vector<std::vector<std::string>> refs;
  refs.reserve(data.size());
  for (const auto& inst : data) refs.push_back(inst.description);

  pts::EvalReport report = pts::evaluate_corpus(hyps, refs);
  std::vector<std::pair<std::string, double>> seam_freqs;
  if (!trace_path.empty()) {
    require_file(trace_path, "traces");
    std::ifstream in(trace_path);
    std::string line;
    long long passes = 0, count = 0;
    std::vector<std::vector<std::string>> plans;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      passes += j.at("decoder_passes").get<long long>();
      plans.push_back(j.at("plan_tokens").get<std::vector<std::string>>());
      ++count;
    }
    if (count > 0) report.mean_decoder_passes = static_cast<double>(passes) / count;
    if (plans.size() == hyps.size()) seam_freqs = pts::seam_token_frequencies(hyps, plans);
  }
  std::cout << report.to_text();
  if (!seam_freqs.empty()) {
    std::cout << "top seam-stage tokens:\n";
    for (size_t i = 0; i < seam_freqs.size() && i < 15; ++i)
      std::printf("  %-12s %6.2f%%\n", seam_freqs[i].first.c_str(), seam_freqs[i].second);
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    json j = report.to_json();
    if (!seam_freqs.empty()) {
      json freq = json::array();
      for (const auto& [tok, pct] : seam_freqs)
        freq.push_back(json::array({tok, pct}));
      j["seam_token_frequencies_pct"] = std::move(freq);
    }
    out << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_benchmark(const std::string& ckpt_path, const std::string& data_path,
                  const std::string& batch_csv, const std::string& iter_csv, int repeats,
                  const std::string& out_path) {
  require_file(ckpt_path, "checkpoint");
  require_file(data_path, "dataset");
  if (repeats < 1) throw std::runtime_error("--repeats must be >= 1");
  const auto batch_sizes = parse_int_list(batch_csv, "batch size");
  const auto iter_caps = parse_int_list(iter_csv, "iteration cap");
  const auto ck = pts::load_checkpoint<float>(ckpt_path);
  const auto data = pts::load_dataset(data_path);
  if (data.empty()) throw std::runtime_error("dataset is empty: " + data_path);
  std::vector<std::vector<std::string>> refs;
  for (const auto& inst : data) refs.push_back(inst.description);

  struct Cell {
    int bs = 0, cap = 0;
    pts::DecodeRun run;
    double best_latency = 0;
  };
  std::vector<Cell> cells;
  for (int bs : batch_sizes)
    for (int cap : iter_caps) cells.push_back({bs, cap, {}, 0});

  // Decoding is deterministic, so repeats only refine the timing: rounds are
  // interleaved across cells (a load spike hits every cell equally) and the
  // per-cell minimum is kept, the usual noise-robust runtime estimate.
  for (int r = 0; r < repeats; ++r) {
    for (auto& cell : cells) {
      pts::DecodeRun this_run = pts::measure_decode(ck.params, ck.config, ck.vocab, ck.key_vocab,
                                                    data, cell.bs, cell.cap);
      if (r == 0) {
        cell.best_latency = this_run.latency_ms_per_batch;
        cell.run = std::move(this_run);
      } else {
        if (this_run.hypotheses != cell.run.hypotheses)
          throw std::runtime_error("nondeterministic decode detected during benchmark");
        cell.best_latency = std::min(cell.best_latency, this_run.latency_ms_per_batch);
      }
    }
  }

  json rows = json::array();
  std::printf("%-12s %-10s %-10s %-14s %-8s\n", "batch_size", "max_iter", "bleu", "latency_ms", "i_dec");
  for (const auto& cell : cells) {
    const double b = pts::bleu(cell.run.hypotheses, refs);
    std::printf("%-12d %-10d %-10.4f %-14.3f %-8.4f\n", cell.bs, cell.cap, b, cell.best_latency,
                cell.run.mean_decoder_passes);
    json row;
    row["batch_size"] = cell.bs;
    row["max_iter"] = cell.cap;
    row["bleu"] = b;
    row["latency_ms"] = cell.best_latency;
    row["i_dec"] = cell.run.mean_decoder_passes;
    rows.push_back(std::move(row));
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out << rows.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plan-then-seam table-to-text: data prep, training, generation, evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic biography corpus");
  uint64_t synth_seed = 1;
  int synth_n = 64;
  std::string synth_out;
  bool synth_distractors = false;
  synth->add_option("--seed", synth_seed, "corpus seed");
  synth->add_option("--n", synth_n, "instance count")->required();
  synth->add_option("--out", synth_out, "output dataset (jsonl)")->required();
  synth->add_flag("--distractors", synth_distractors, "add duplicated name records");

  // annotate
  auto* annotate = app.add_subcommand("annotate", "add content-plan annotations to a dataset");
  std::string ann_data, ann_stop, ann_out;
  annotate->add_option("--data", ann_data, "dataset (jsonl)")->required();
  annotate->add_option("--stopwords", ann_stop, "stopword file (one token per line)");
  annotate->add_option("--out", ann_out, "output dataset")->required();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build vocab and a training-ready dataset");
  std::string prep_data, prep_config, prep_out;
  prepare->add_option("--data", prep_data, "raw dataset (jsonl)")->required();
  prepare->add_option("--config", prep_config, "run config file")->required();
  prepare->add_option("--out", prep_out, "prepared dataset path")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model from a config");
  std::string train_config, train_out;
  uint64_t train_seed = 0;
  train->add_option("--config", train_config, "run config file")->required();
  auto* train_seed_opt = train->add_option("--seed", train_seed, "override train.seed");
  train->add_option("--out", train_out, "override paths.checkpoint");

  // generate
  auto* generate = app.add_subcommand("generate", "decode a dataset with a checkpoint");
  std::string gen_ckpt, gen_data, gen_out, gen_trace;
  int gen_max_iter = 10;
  bool gen_gold = false;
  generate->add_option("--checkpoint", gen_ckpt, "checkpoint file")->required();
  generate->add_option("--data", gen_data, "dataset (jsonl)")->required();
  generate->add_option("--max-iter", gen_max_iter, "maximum seaming iterations");
  generate->add_option("--out", gen_out, "hypotheses output (one per line)")->required();
  generate->add_option("--trace", gen_trace, "sidecar trace output (jsonl)");
  generate->add_flag("--gold-plan", gen_gold, "seam from the annotated plan instead of planning");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score hypotheses against a dataset");
  std::string eval_hyp, eval_data, eval_trace, eval_out;
  evaluate->add_option("--hyp", eval_hyp, "hypotheses file")->required();
  evaluate->add_option("--data", eval_data, "dataset with references")->required();
  evaluate->add_option("--trace", eval_trace, "trace sidecar (adds decoder-pass stats)");
  evaluate->add_option("--out", eval_out, "write the report as json");

  // benchmark
  auto* benchmark = app.add_subcommand("benchmark", "quality/speed sweep over iteration caps");
  std::string bm_ckpt, bm_data, bm_batches = "32", bm_iters = "1,2,3,5,10", bm_out;
  int bm_repeats = 1;
  benchmark->add_option("--checkpoint", bm_ckpt, "checkpoint file")->required();
  benchmark->add_option("--data", bm_data, "dataset (jsonl)")->required();
  benchmark->add_option("--batch-sizes", bm_batches, "comma-separated batch sizes");
  benchmark->add_option("--max-iters", bm_iters, "comma-separated iteration caps");
  benchmark->add_option("--repeats", bm_repeats, "interleaved timing rounds (best per cell reported)");
  benchmark->add_option("--out", bm_out, "write the sweep as json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_seed, synth_n, synth_out, synth_distractors);
    if (annotate->parsed()) return cmd_annotate(ann_data, ann_stop, ann_out);
    if (prepare->parsed()) return cmd_prepare(prep_data, prep_config, prep_out);
    if (train->parsed()) return cmd_train(train_config, train_seed, train_seed_opt->count() > 0, train_out);
    if (generate->parsed())
      return cmd_generate(gen_ckpt, gen_data, gen_max_iter, gen_out, gen_gold, gen_trace);
    if (evaluate->parsed()) return cmd_evaluate(eval_hyp, eval_data, eval_trace, eval_out);
    if (benchmark->parsed())
      return cmd_benchmark(bm_ckpt, bm_data, bm_batches, bm_iters, bm_repeats, bm_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
