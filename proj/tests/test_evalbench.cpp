#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "daicl/common.hpp"
#include "daicl/metrics.hpp"
#include "daicl/run_matrix.hpp"
#include "daicl/stats.hpp"
#include "daicl/synth.hpp"
#include "daicl/text.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace daicl;
using corpus::SpanSet;

TEST_CASE("span F1 examples") {
  const std::vector<SpanSet> g1{{{0, 2}}}, p1{{{0, 2}}};
  CHECK(metrics::span_f1(g1, p1).f1 == 1.0);
  const std::vector<SpanSet> none{{}};
  CHECK(metrics::span_f1(g1, none).f1 == 0.0);
  const std::vector<SpanSet> g{{{0, 2}, {3, 4}}}, p{{{0, 2}, {5, 6}}};
  const auto r = metrics::span_f1(g, p);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
  CHECK_THROWS_AS(metrics::span_f1(g, std::vector<SpanSet>{}), Error);
}

TEST_CASE("span F1 symmetry and permutation invariance", "[property]") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SpanSet> gold(1 + rng() % 6), pred(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
      for (std::size_t s = 0; s < 8; s += 2) {
        if (rng() % 2) gold[i].insert({s, s + 1 + rng() % 2});
        if (rng() % 2) pred[i].insert({s, s + 1 + rng() % 2});
      }
    }
    const auto a = metrics::span_f1(gold, pred);
    const auto b = metrics::span_f1(pred, gold);
    REQUIRE(a.precision == b.recall);
    REQUIRE(a.recall == b.precision);
    REQUIRE((a.f1 >= 0.0 && a.f1 <= 1.0));
    if (a.precision + a.recall > 0.0) {
      REQUIRE(std::abs(a.f1 - 2.0 * a.precision * a.recall / (a.precision + a.recall)) < 1e-15);
    }
    std::vector<std::size_t> perm(gold.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SpanSet> pg, pp;
    for (auto i : perm) {
      pg.push_back(gold[i]);
      pp.push_back(pred[i]);
    }
    REQUIRE(metrics::span_f1(pg, pp).f1 == a.f1);
  }
}

TEST_CASE("entities to spans") {
  const std::vector<std::string> sent{"the", "human", "MHC", "and"};
  CHECK(metrics::entities_to_spans({{"human MHC"}, false}, sent) == SpanSet{{1, 3}});
  CHECK(metrics::entities_to_spans({{}, false}, sent).empty());
  const std::vector<std::string> twice{"p53", "binds", "p53", "."};
  CHECK(metrics::entities_to_spans({{"p53"}, false}, twice) == SpanSet{{0, 1}, {2, 3}});
  const auto missing = metrics::entities_to_spans({{"absent"}, false}, sent);
  REQUIRE(missing.size() == 1);
  CHECK(missing.begin()->start >= sent.size());
}

TEST_CASE("generative grading round trip reproduces gold spans", "[property]") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> sent;
    for (std::size_t i = 0; i < 3 + rng() % 8; ++i) sent.push_back("t" + std::to_string(i));
    SpanSet gold;
    for (std::size_t s = 0; s + 1 < sent.size(); s += 3) {
      if (rng() % 2) gold.insert({s, s + 1 + rng() % 2});
    }
    const auto rendered = prompt::join_entities(metrics::spans_to_entities(gold, sent));
    REQUIRE(metrics::entities_to_spans(prompt::parse_entity_response(rendered), sent) == gold);
  }
}

TEST_CASE("accuracy") {
  CHECK(metrics::accuracy(std::vector<int>{1, 2}, std::vector<int>{1, 2}).accuracy == 1.0);
  CHECK(metrics::accuracy(std::vector<int>{1, 2}, std::vector<int>{0, 0}).accuracy == 0.0);
  CHECK(metrics::accuracy(std::vector<int>{1, 2, 0, 1}, std::vector<int>{1, 2, 0, 2}).accuracy == 0.75);
  CHECK_THROWS_AS(metrics::accuracy(std::vector<int>{1}, std::vector<int>{}), Error);
}

TEST_CASE("Welch test against a quadrature oracle", "[oracle]") {
  const std::vector<std::vector<double>> samples{
      {0.61, 0.64, 0.59, 0.66, 0.62}, {0.70, 0.73, 0.69, 0.75, 0.71}, {0.5, 0.9, 0.2, 0.7, 0.4},
      {0.41, 0.43}, {0.3, 0.35, 0.31, 0.36, 0.29, 0.33, 0.38}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (i == j) continue;
      const auto r = stats::welch_t_test(samples[i], samples[j]);
      const auto o = daicl::testing::welch_oracle(samples[i], samples[j]);
      CHECK(std::abs(r.t - o.t) < 1e-9);
      CHECK(std::abs(r.df - o.df) < 1e-9);
      CHECK(std::abs(r.p - o.p) < 1e-4);
    }
  }
}

TEST_CASE("Welch degenerate cases") {
  const std::vector<double> a{0.3, 0.5, 0.4}, zeros(5, 0.0), ones(5, 1.0);
  CHECK(stats::welch_t_test(a, a).p == 1.0);
  CHECK(stats::welch_t_test(zeros, ones).p < 1e-6);
  CHECK(stats::welch_t_test(zeros, zeros).p == 1.0);
  try {
    stats::welch_t_test(std::vector<double>{1.0}, a);
    FAIL("expected TooFewSeeds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewSeeds);
  }
  CHECK(stats::sample_std(std::vector<double>{1, 2, 3, 4}) == Catch::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("synthetic benchmark invariants") {
  synth::SyntheticShiftSpec s;
  s.label_noise = 0.0;
  s.source_train = 300;
  s.target_unlabeled = 100;
  s.target_test = 50;
  s.seed = 12;
  const auto b = synth::gen_synthetic_shift(s);
  CHECK(b.source_train.size() == 300);
  CHECK(b.target_unlabeled.size() == 100);

  std::set<std::string> src, tgt;
  std::map<std::string, int> cls;
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    for (const auto& w : b.lexicon.source_polarity[c]) {
      src.insert(w);
      cls[w] = static_cast<int>(c);
    }
    for (const auto& w : b.lexicon.target_polarity[c]) tgt.insert(w);
  }
  std::vector<std::string> both;
  std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(both));
  CHECK(both.empty());

  for (const auto& ex : b.source_train) {
    for (const auto& w : text::tokenize(ex.text)) {
      if (cls.count(w)) REQUIRE(cls[w] == static_cast<int>(ex.label));
    }
  }
  for (const auto& t : b.target_unlabeled) {
    for (const auto& w : t) REQUIRE(src.count(w) == 0);
  }

  const auto again = synth::gen_synthetic_shift(s);
  for (std::size_t i = 0; i < b.source_train.size(); ++i) CHECK(again.source_train[i].text == b.source_train[i].text);
  s.situation_consistency = 1.5;
  CHECK_THROWS_AS(synth::gen_synthetic_shift(s), Error);
}

TEST_CASE("synthetic benchmark files round trip") {
  synth::SyntheticShiftSpec s;
  s.source_train = 40;
  s.source_dev = 10;
  s.target_unlabeled = 40;
  s.target_test = 10;
  const auto b = synth::gen_synthetic_shift(s);
  const auto dir = std::filesystem::temp_directory_path() / "daicl-synth-rt";
  std::filesystem::remove_all(dir);
  synth::write_benchmark(b, dir.string());
  const auto back = synth::read_benchmark(dir.string());
  CHECK(back.source_train.size() == 40);
  CHECK(back.target_unlabeled == b.target_unlabeled);
  CHECK(back.lexicon.target_polarity == b.lexicon.target_polarity);
  std::filesystem::remove_all(dir);
  CHECK(synth::synth_spec_from_json(synth::to_json(s)).source_dev == 10);
  CHECK_THROWS_AS(synth::synth_spec_from_json({{"bogus", 1}}), Error);
}

TEST_CASE("run matrix aggregation and rendering") {
  bench::RunMatrix m;
  const std::vector<double> base{0.40, 0.42, 0.41, 0.39, 0.43}, treat{0.60, 0.62, 0.58, 0.61, 0.63};
  for (std::uint64_t s = 0; s < 5; ++s) {
    m.add({Variant::NoIcl, "toy", s, base[s]});
    m.add({Variant::Daicl, "toy", s, treat[s]});
  }
  m.add({Variant::IclRand, "toy", 0, 0.0, true, "boom"});
  CHECK(m.cells().size() == 11);
  const auto aggs = m.aggregates();
  for (const auto& a : aggs) {
    const auto raw = m.metrics(a.variant, a.scenario);
    CHECK(a.n == raw.size());
    if (raw.empty()) continue;
    CHECK(std::abs(a.mean - stats::mean(raw)) < 1e-12);
    CHECK(std::abs(a.std - stats::sample_std(raw)) < 1e-12);
    if (a.variant == Variant::NoIcl) {
      CHECK_FALSE(a.significant);
      CHECK_FALSE(a.p_vs_baseline.has_value());
    }
    if (a.variant == Variant::Daicl) CHECK(a.significant);
  }
  const auto csv = bench::render_csv(m);
  CHECK(csv.starts_with("variant,scenario,seed,metric\n"));
  const auto table = bench::render_table(m);
  CHECK(table.find("†") != std::string::npos);
  CHECK(table.find("Ave.") != std::string::npos);
  const auto j = bench::render_json(m);
  CHECK(j["cells"].size() == 11);
}

TEST_CASE("run matrix cardinality and recorded failures") {
  synth::SyntheticShiftSpec s;
  s.source_train = 24;
  s.source_dev = 0;
  s.target_unlabeled = 24;
  s.target_test = 10;
  const std::vector<bench::Scenario> scen{{"tiny", train::sa_task_data(synth::gen_synthetic_shift(s))}};
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.k = 2;
  cfg.embedder.dim = 16;
  const std::vector<Variant> variants{Variant::NoIcl, Variant::Daicl};
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto m = bench::run_matrix(scen, variants, seeds, ModelKind::Encoder, cfg);
  CHECK(m.cells().size() == 10);

  auto broken = scen;
  broken[0].data.target_unlabeled.clear();
  const auto f = bench::run_matrix(broken, variants, std::vector<std::uint64_t>{0}, ModelKind::Encoder, cfg);
  REQUIRE(f.cells().size() == 2);
  CHECK_FALSE(f.cells()[0].failed);
  CHECK(f.cells()[1].failed);
}
