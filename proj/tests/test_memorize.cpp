// SPDX-License-Identifier: Apache-2.0
//
// Single-instance memorization runs: train a tiny model on one biography and
// check that every stage of the pipeline reproduces it.

#include <doctest.h>

#include "test_util.hpp"

using namespace pts;

namespace {

RunConfig memorize_config() {
  RunConfig cfg;
  cfg.d_model = 32;
  cfg.d_hidden = 128;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.emb_token = 24;
  cfg.emb_key = 8;
  cfg.emb_pos = 8;
  cfg.vocab_size = 128;
  cfg.key_vocab_size = 32;
  cfg.max_placeholders = 24;
  cfg.max_record_pos = 8;
  cfg.max_seq = 64;
  cfg.max_records = 24;
  cfg.rethinking = true;
  cfg.dropout = 0.0;
  cfg.lambda_plan = 0.05;
  cfg.peak_lr = 2e-3;
  cfg.warmup_steps = 100;
  cfg.max_steps = 900;
  cfg.batch_size = 1;
  cfg.seed = 3;
  cfg.eval_interval = 0;
  cfg.log_interval = 300;
  return cfg;
}

struct Memorized {
  RunConfig cfg;
  Vocab vocab;
  Vocab keys;
  ParamStore<float> params;
  TableInstance inst;
};

Memorized memorize(const TableInstance& inst, RunConfig cfg) {
  Memorized m;
  m.cfg = cfg;
  m.inst = inst;
  m.vocab = vocab_from_instances({inst}, cfg.vocab_size);
  m.keys = key_vocab_from_instances({inst}, cfg.key_vocab_size);
  TrainResult r = train({inst}, {}, cfg, m.vocab, m.keys);
  m.params = std::move(r.params);
  return m;
}

}  // namespace

TEST_CASE("overfit two-field biography: count, plan, and seam insertions") {
  const TableInstance inst = test::simple_instance();
  REQUIRE(inst.plan_tokens == std::vector<std::string>{"thaila", "ayalia", "actress", "model"});
  const Memorized m = memorize(inst, memorize_config());

  Graph<float> g;
  ModelContext<float> ctx(m.cfg, g, m.params, m.vocab, m.keys);
  const auto mem = encode_table(ctx, inst.records);

  // the placeholder predictor recalls the gold plan length over one gap
  const auto [dist, count] = predict_placeholder_count(ctx, mem);
  CHECK(count == 4);

  const auto planned = plan(ctx, mem);
  CHECK(planned.plan.interior_texts() ==
        std::vector<std::string>{"thaila", "ayalia", "actress", "model"});

  const auto [final_seq, trace] = seam(ctx, planned.plan, mem, 10);
  CHECK(final_seq.interior_texts() == inst.description);
  CHECK(trace.iterations <= 3);

  // first refinement seams "is an" between "ayalia" and "actress"
  REQUIRE(trace.iterates.size() >= 2);
  const auto& first_iterate = trace.iterates[1];
  const std::string joined = join_tokens(first_iterate);
  CHECK(joined.find("ayalia is an actress") != std::string::npos);
}

TEST_CASE("overfit long biography converges within three refinements") {
  TableInstance inst;
  inst.table = {
      {"name", {"dave", "green"}},
      {"position", {"punter", "placekicker"}},
      {"number", {"4"}},
      {"birth_date", {"21", "september", "1949"}},
      {"college", {"ohio", "university"}},
      {"birth_place", {"mason", "city", "iowa"}},
      {"article_title", {"dave", "green", "-lrb-", "american", "football", "-rrb-"}},
  };
  inst.records = linearize_table(inst.table);
  inst.description = split_tokens(
      "dave green -lrb- born september 21 , 1949 in mason city , iowa -rrb- is a former american "
      "football punter and placekicker in the national football league .");
  auto [toks, ptrs] = annotate_plan(inst.records, inst.description, default_stopwords());
  inst.plan_tokens = toks;
  inst.plan_pointers = ptrs;
  inst.has_plan = true;

  // the heuristic plan matches the published pointer-predictor output
  CHECK(inst.plan_tokens ==
        std::vector<std::string>{"dave", "green", "september", "21", "1949", "mason", "city",
                                 "iowa", "american", "football", "punter", "placekicker",
                                 "football"});

  RunConfig cfg = memorize_config();
  cfg.max_steps = 1400;
  cfg.seed = 5;
  const Memorized m = memorize(inst, cfg);

  const auto out = decode_instance(m.params, m.cfg, m.vocab, m.keys, inst, 10);
  CHECK(out.plan_tokens == inst.plan_tokens);
  CHECK(out.hypothesis == inst.description);
  CHECK(out.trace.iterations <= 3);
}
