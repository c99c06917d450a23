#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "daicl/common.hpp"
#include "daicl/metrics.hpp"
#include "daicl/prompt.hpp"
#include "daicl/text.hpp"
#include "golden_prompts.hpp"
#include "support.hpp"

using namespace daicl;
using namespace daicl::prompt;

namespace {

Tokens words(std::size_t n, const std::string& stem) {
  Tokens t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(stem + std::to_string(i));
  return t;
}

text::Vocabulary vocab_for(const std::vector<Tokens>& seqs) { return text::Vocabulary::build(seqs); }

std::vector<std::string> strings(const nlohmann::json& j) { return j.get<std::vector<std::string>>(); }

}  // namespace

TEST_CASE("encoder layout") {
  const Tokens src = words(4, "s"), c1 = words(3, "a"), c2 = words(3, "b");
  const auto v = vocab_for({src, c1, c2});
  const auto inst = build_encoder_instance(SourceInput{src, 1, {}}, std::vector<Tokens>{c1, c2}, v);
  REQUIRE(inst.size() == 12);
  const std::vector<Region> expect{Region::Source, Region::Source, Region::Source, Region::Source, Region::Sep,
                                   Region::Context, Region::Context, Region::Context, Region::Sep,
                                   Region::Context, Region::Context, Region::Context};
  CHECK(inst.region == expect);
  CHECK(inst.label_class == 1);

  const auto bare = build_encoder_instance(SourceInput{src, 0, {}}, {}, v);
  CHECK(bare.ids == v.encode(src));
  CHECK(bare.count(Region::Sep) == 0);
  CHECK_THROWS_AS(build_encoder_instance(SourceInput{{}, 0, {}}, {}, v), Error);
}

TEST_CASE("encoder truncation drops far contexts, never the source") {
  const Tokens src = words(5, "s");
  const std::vector<Tokens> ctx{words(4, "a"), words(4, "b"), words(4, "c")};
  const auto v = vocab_for({src, ctx[0], ctx[1], ctx[2]});
  const auto inst = build_encoder_instance(SourceInput{src, 0, {}}, ctx, v, 15);
  CHECK(inst.contexts_kept == 2);
  CHECK(inst.size() == 15);
  CHECK(inst.count(Region::Source) == 5);
}

TEST_CASE("mask counts follow round-half-up") {
  CHECK(mask_count(20, 0.15) == 3);
  CHECK(mask_count(7, 0.15) == 1);
  CHECK(mask_count(0, 0.15) == 0);
  CHECK(mask_count(10, 0.15) == 2);  // 1.5 rounds up
}

TEST_CASE("masking touches only contexts and round-trips", "[property]") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 2000; ++trial) {
    const Tokens src = words(1 + rng() % 8, "s");
    std::vector<Tokens> ctx(rng() % 6);
    for (auto& c : ctx) c = words(1 + rng() % 12, "c");
    std::vector<Tokens> all = ctx;
    all.push_back(src);
    const auto v = vocab_for(all);
    const auto inst = build_encoder_instance(SourceInput{src, 0, {}}, ctx, v);
    std::mt19937_64 mrng(derive_seed(9, static_cast<std::uint64_t>(trial)));
    const auto m = apply_mlm_mask(inst, 0.15, mrng);
    REQUIRE(m.mask_positions.size() == mask_count(inst.count(Region::Context), 0.15));
    REQUIRE(m.mask_targets.size() == m.mask_positions.size());
    REQUIRE(std::is_sorted(m.mask_positions.begin(), m.mask_positions.end()));
    for (std::size_t i = 0; i < m.mask_positions.size(); ++i) {
      const auto p = m.mask_positions[i];
      REQUIRE(m.region[p] == Region::Context);
      REQUIRE(m.ids[p] == text::kMask);
      REQUIRE(m.mask_targets[i] == inst.ids[p]);
    }
    REQUIRE(restore_masked(m).ids == inst.ids);
  }
}

TEST_CASE("masking twice is rejected") {
  const Tokens src = words(3, "s"), c = words(10, "c");
  const auto v = vocab_for({src, c});
  std::mt19937_64 rng(0);
  const auto m = apply_mlm_mask(build_encoder_instance(SourceInput{src, 0, {}}, std::vector<Tokens>{c}, v), 0.15, rng);
  try {
    apply_mlm_mask(m, 0.15, rng);
    FAIL("expected AlreadyMasked");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlreadyMasked);
  }
}

TEST_CASE("decoder instances keep the region grammar") {
  const auto tmpl = alpaca_template(Task::Sa);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tokens src = words(1 + rng() % 6, "s");
    std::vector<Tokens> ctx(rng() % 4);
    for (auto& c : ctx) c = words(1 + rng() % 5, "c");
    std::vector<Tokens> all = ctx;
    all.push_back(src);
    all.push_back(text::tokenize(tmpl.instruction + " " + tmpl.layout + " negative"));
    const auto v = vocab_for(all);
    const auto inst = build_decoder_instance(src, ctx, Tokens{"negative"}, tmpl, v);
    REQUIRE(decoder_layout_ok(inst.region, true));
    REQUIRE((ctx.empty() == (std::count(inst.region.begin(), inst.region.end(), Region::Context) == 0)));
    std::size_t last_source = 0, first_response = inst.size();
    for (std::size_t i = 0; i < inst.size(); ++i) {
      if (inst.region[i] == Region::Source) last_source = i;
      if (inst.region[i] == Region::Response) first_response = std::min(first_response, i);
    }
    REQUIRE(first_response > last_source);
    REQUIRE(inst.ids.front() == text::kBos);
    REQUIRE(inst.ids.back() == text::kEos);

    const auto all_mask = loss_mask_for_variant(inst, Variant::Daicl);
    const auto sup = loss_mask_for_variant(inst, Variant::IclSup);
    REQUIRE(std::count(all_mask.begin(), all_mask.end(), true) == static_cast<long>(inst.size()));
    for (std::size_t i = 0; i < inst.size(); ++i) REQUIRE(sup[i] == (inst.region[i] == Region::Response));
  }
}

TEST_CASE("decoder inference prefix has no response") {
  const auto tmpl = alpaca_template(Task::Ner);
  const Tokens src = words(3, "s");
  const auto v = vocab_for({src, text::tokenize(tmpl.instruction + " " + tmpl.layout)});
  const auto inst = build_decoder_instance(src, {}, std::nullopt, tmpl, v);
  CHECK(decoder_layout_ok(inst.region, false));
  CHECK(std::count(inst.region.begin(), inst.region.end(), Region::Response) == 0);
  CHECK(inst.ids.back() != text::kEos);
}

TEST_CASE("bad template layout") {
  auto tmpl = alpaca_template(Task::Sa);
  tmpl.layout = "{instruction} {input}";
  const Tokens src = words(2, "s");
  const auto v = vocab_for({src});
  try {
    build_decoder_instance(src, {}, Tokens{"x"}, tmpl, v);
    FAIL("expected TemplateMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TemplateMismatch);
  }
}

TEST_CASE("golden prompt fixtures render byte-identically", "[golden]") {
  for (const auto& [name, rendered] : daicl::testing::render_golden_prompts()) {
    INFO(name);
    CHECK(rendered == daicl::testing::slurp(daicl::testing::fixture("golden/" + name)));
  }
  CHECK(ner_instruction() ==
        "Please identify all entities from the input sentence. If there is no entity, please output None.");
}

TEST_CASE("inference prompt shapes") {
  const std::vector<Demo> five(5, Demo{"x y", "None"});
  const auto p = render_inference_prompt("q", five, Task::Ner, DemoMode::Retrieved);
  std::size_t n = 0;
  for (std::size_t pos = p.find("Sentence: x y\nEntity: None\n"); pos != std::string::npos;
       pos = p.find("Sentence: x y\nEntity: None\n", pos + 1)) {
    ++n;
  }
  CHECK(n == 5);
  CHECK(render_inference_prompt("q", {}, Task::Ner, DemoMode::None) == ner_instruction() + "\nSentence: q\nEntity:");
  try {
    render_inference_prompt("q", {}, Task::Ner, DemoMode::Random);
    FAIL("expected EmptyDemos");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDemos);
  }
}

TEST_CASE("entity response parsing") {
  using V = std::vector<std::string>;
  CHECK(parse_entity_response("- Physical mapping\n- human MHC").entities == V{"Physical mapping", "human MHC"});
  CHECK(parse_entity_response("None.").entities.empty());
  CHECK_FALSE(parse_entity_response("None.").flagged);
  const auto list = parse_entity_response("IAPs, ch-IAP1, baculovirus IAP repeats, RING finger motifs.");
  REQUIRE(list.entities.size() == 4);
  CHECK(list.entities.back() == "RING finger motifs");
  CHECK(parse_entity_response("1. alpha\n2. beta\n3. alpha").entities == V{"alpha", "beta"});
  CHECK(parse_entity_response("Entity: p53").entities == V{"p53"});
  const auto empty = parse_entity_response("   ");
  CHECK(empty.entities.empty());
  CHECK(empty.flagged);
}

TEST_CASE("entity parsing is idempotent on its joined rendering", "[property]") {
  for (const std::string raw : {"- Physical mapping\n- human MHC", "a, b, c", "None", "1. x, y\n2. z",
                                "IAPs, ch-IAP1, baculovirus IAP repeats"}) {
    const auto once = parse_entity_response(raw).entities;
    CHECK(parse_entity_response(join_entities(once)).entities == once);
  }
}

TEST_CASE("sentiment response parsing") {
  CHECK(parse_sentiment_response("Sentiment: Positive") == corpus::Sentiment::Positive);
  CHECK(parse_sentiment_response("it is negative, not positive") == corpus::Sentiment::Negative);
  try {
    parse_sentiment_response("great product");
    FAIL("expected NoLabelFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoLabelFound);
  }
}

TEST_CASE("generative outputs grade to the hand-computed counts", "[fixture]") {
  const auto j = nlohmann::json::parse(daicl::testing::slurp(daicl::testing::fixture("generative_outputs.json")));
  std::vector<corpus::SpanSet> gold, pred;
  for (const auto& c : j["cases"]) {
    const auto tokens = strings(c["tokens"]);
    const auto parsed = parse_entity_response(c["response"].get<std::string>());
    CHECK(parsed.entities == strings(c["entities"]));
    gold.push_back(corpus::tags_to_spans(strings(c["tags"])));
    pred.push_back(metrics::entities_to_spans(parsed, tokens));
    const auto one = metrics::span_f1(std::span(&gold.back(), 1), std::span(&pred.back(), 1));
    CHECK(one.tp == c["tp"].get<std::size_t>());
    CHECK(one.fp == c["fp"].get<std::size_t>());
    CHECK(one.fn == c["fn"].get<std::size_t>());
  }
  const auto r = metrics::span_f1(gold, pred);
  const auto& t = j["total"];
  CHECK(r.tp == t["tp"].get<std::size_t>());
  CHECK(r.fp == t["fp"].get<std::size_t>());
  CHECK(r.fn == t["fn"].get<std::size_t>());
  CHECK(r.f1 == t["f1_num"].get<double>() / t["f1_den"].get<double>());
}
