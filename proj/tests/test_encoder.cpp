// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "test_util.hpp"

using namespace pts;

namespace {

std::vector<TableInstance> fixture_corpus() { return generate_synthetic_corpus(21, 6); }

}  // namespace

TEST_CASE("record embeddings are nonnegative and deterministic") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(8));
  const Record rec{"thaila", "name", 1, 2};

  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const Mat<double> e1 = g.val(embed_record(ctx, rec));
  CHECK(e1.rows == 1);
  CHECK(e1.cols == m.cfg.d_model);
  for (double v : e1.a) CHECK(v >= 0.0);

  Graph<double> g2;
  ModelContext<double> ctx2(m.cfg, g2, m.params, m.vocab, m.key_vocab);
  const Mat<double> e2 = g2.val(embed_record(ctx2, rec));
  for (size_t i = 0; i < e1.size(); ++i) CHECK(e1.a[i] == e2.a[i]);

  // identical records embed identically inside one call too
  Graph<double> g3;
  ModelContext<double> ctx3(m.cfg, g3, m.params, m.vocab, m.key_vocab);
  const Mat<double> both = g3.val(embed_records(ctx3, {rec, rec}));
  for (int c = 0; c < both.cols; ++c) CHECK(both(0, c) == both(1, c));
}

TEST_CASE("zero projection gives zero record embedding") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(8));
  for (auto& v : m.params.get("rec_proj.W").a) v = 0;
  for (auto& v : m.params.get("rec_proj.b").a) v = 0;
  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const Mat<double> e = g.val(embed_record(ctx, Record{"thaila", "name", 1, 2}));
  for (double v : e.a) CHECK(v == 0.0);
}

TEST_CASE("encode_table shapes and limits") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(8));

  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const auto mem = encode_table(ctx, {Record{"solo", "k", 1, 1}});
  CHECK(g.rows(mem.states) == 1);
  CHECK(g.cols(mem.states) == m.cfg.d_model);
  CHECK(mem.num_records == 1);

  const auto& records = corpus[0].records;
  Graph<double> g2;
  ModelContext<double> ctx2(m.cfg, g2, m.params, m.vocab, m.key_vocab);
  auto swapped = records;
  std::swap(swapped[0], swapped[1]);
  const auto mem_a = encode_table(ctx2, records);
  const auto mem_b = encode_table(ctx2, swapped);
  CHECK(g2.rows(mem_a.states) == g2.rows(mem_b.states));

  std::vector<Record> too_many(m.cfg.max_records + 1, Record{"x", "k", 1, 1});
  Graph<double> g3;
  ModelContext<double> ctx3(m.cfg, g3, m.params, m.vocab, m.key_vocab);
  CHECK_THROWS_WITH(encode_table(ctx3, too_many), "table too large");
  CHECK_THROWS_WITH(encode_table(ctx3, {}), "empty input table");
}

TEST_CASE("position clamp keeps long values embeddable") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(8));
  std::vector<std::string> long_value;
  for (int i = 0; i < m.cfg.max_record_pos + 4; ++i) long_value.push_back("t" + std::to_string(i));
  const auto records = linearize_table({{"k", long_value}});
  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const auto mem = encode_table(ctx, records);  // must not throw
  CHECK(g.rows(mem.states) == static_cast<int>(long_value.size()));
}

TEST_CASE("batch-of-one equals the corresponding batched row") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(8));
  std::vector<std::vector<Record>> batch = {corpus[0].records, corpus[1].records,
                                            corpus[2].records};
  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const auto mems = encode_tables(ctx, batch);
  REQUIRE(mems.size() == 3);
  for (size_t i = 0; i < batch.size(); ++i) {
    Graph<double> gi;
    ModelContext<double> ctxi(m.cfg, gi, m.params, m.vocab, m.key_vocab);
    const auto solo = encode_table(ctxi, batch[i]);
    const Mat<double> a = gi.val(solo.states);
    const Mat<double> b = g.val(mems[i].states);
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) CHECK(a.a[k] == b.a[k]);
  }
}

TEST_CASE("encoder states gradient matches finite differences through the projection") {
  const auto corpus = fixture_corpus();
  auto m = test::make_test_model<double>(corpus, test::tiny_config(4), 99);
  const auto& records = corpus[0].records;

  auto probe = [&](const ParamStore<double>& p) {
    Graph<double> g;
    ModelContext<double> ctx(m.cfg, g, p, m.vocab, m.key_vocab);
    const auto mem = encode_table(ctx, records);
    return g.val(g.sum_all(mem.states))(0, 0);
  };

  Graph<double> g;
  ModelContext<double> ctx(m.cfg, g, m.params, m.vocab, m.key_vocab);
  const auto mem = encode_table(ctx, records);
  g.backward(g.sum_all(mem.states));
  Gradients<double> analytic;
  ctx.bind.collect(analytic);

  ParamStore<double> only_proj;
  only_proj.add("rec_proj.W", m.params.get("rec_proj.W"));
  auto full_probe = [&](const ParamStore<double>& partial) {
    ParamStore<double> copy = m.params;
    copy.get("rec_proj.W") = partial.get("rec_proj.W");
    return probe(copy);
  };
  const auto report = test::fd_check(only_proj, full_probe, analytic, 1e-6, 1e-3, 16);
  for (const auto& f : report.failures)
    MESSAGE("mismatch at ", f.tensor, "[", f.index, "]: analytic ", f.analytic, " numeric ", f.numeric);
  CHECK(report.ok());
}
