#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "daicl/common.hpp"
#include "daicl/gradcheck_suite.hpp"
#include "daicl/nn/checkpoint.hpp"
#include "daicl/nn/crf.hpp"
#include "daicl/nn/gradcheck.hpp"
#include "daicl/nn/losses.hpp"
#include "daicl/nn/model.hpp"
#include "daicl/optim.hpp"
#include "daicl/prompt.hpp"
#include "oracles.hpp"

using namespace daicl;
using namespace daicl::nn;

namespace {

CRFParams random_crf(std::size_t k, std::mt19937_64& rng) {
  CRFParams c;
  c.transition = gaussian(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k), 1.0, rng());
  c.start = gaussian(1, static_cast<Eigen::Index>(k), 1.0, rng());
  c.end = gaussian(1, static_cast<Eigen::Index>(k), 1.0, rng());
  return c;
}

ModelConfig tiny(std::size_t vocab, Attention attn) {
  ModelConfig c;
  c.vocab = vocab;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_len = 64;
  c.attention = attn;
  c.init_std = 0.2;
  return c;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids(n);
  for (auto& i : ids) i = static_cast<int>(6 + rng() % (vocab - 6));
  return ids;
}

Matrix logits(const Model& m, std::span<const int> ids, const ForwardOptions& opts = {}) {
  Tape tape(false);
  return forward_decoder(m, tape, ids, opts).value();
}

}  // namespace

TEST_CASE("CRF forward and Viterbi agree with enumeration", "[oracle]") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 6, k = 1 + rng() % 4;
    const auto crf = random_crf(k, rng);
    Matrix e = gaussian(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k), 1.5, rng());
    if (trial % 10 == 0) e.setZero();  // many exact ties
    const auto oracle = daicl::testing::enumerate_crf(e, crf);
    std::vector<int> gold(n);
    for (auto& g : gold) g = static_cast<int>(rng() % k);
    REQUIRE(std::abs(crf_log_partition(e, crf) - oracle.log_partition) <= 1e-10);
    REQUIRE(std::abs(crf_nll(e, gold, crf) - (oracle.log_partition - daicl::testing::enumerate_score(e, gold, crf))) <= 1e-10);
    if (trial % 10 != 0) REQUIRE(crf_decode(e, crf) == oracle.best);
  }
}

TEST_CASE("CRF decode breaks ties lexicographically") {
  const auto crf = zero_crf(3);
  const Matrix e = Matrix::Zero(4, 3);
  CHECK(crf_decode(e, crf) == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("CRF with one tag has zero loss") {
  const auto crf = zero_crf(1);
  const Matrix e = gaussian(5, 1, 1.0, 3);
  CHECK(crf_nll(e, std::vector<int>(5, 0), crf) == 0.0);
}

TEST_CASE("CRF errors") {
  const auto crf = zero_crf(3);
  const Matrix e = Matrix::Zero(2, 3);
  try {
    crf_nll(e, std::vector<int>{0, 3}, crf);
    FAIL("expected BadTag");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::BadTag);
  }
  CHECK_THROWS_AS(crf_nll(e, std::vector<int>{0}, crf), Error);
  CHECK_THROWS_AS(crf_log_partition(Matrix::Zero(2, 4), crf), Error);
  CHECK_THROWS_AS(crf_log_partition(Matrix::Zero(0, 3), crf), Error);
}

TEST_CASE("tape rejects reuse") {
  ParamStore store;
  store.add("w", gaussian(2, 2, 1.0, 0));
  Tape tape;
  const Var w = tape.param(store, "w");
  const Var loss = sum_all(matmul(w, w));
  Gradients g = tape.backward(loss);
  CHECK(g.g[0].norm() > 0);
  CHECK_THROWS_AS(tape.backward(loss), Error);
  Tape off(false);
  const Var w2 = off.param(store, "w");
  CHECK_THROWS_AS(off.backward(sum_all(w2)), Error);
}

TEST_CASE("frozen parameters get no gradient") {
  ParamStore store;
  store.add("a", gaussian(2, 2, 1.0, 1));
  store.add("b", gaussian(2, 2, 1.0, 2), false);
  Tape tape;
  const Gradients g = tape.backward(sum_all(matmul(tape.param(store, "a"), tape.param(store, "b"))));
  CHECK(g.g[0].norm() > 0);
  CHECK(g.g[1].norm() == 0);
}

TEST_CASE("finite-difference suite passes", "[gradcheck]") {
  for (const auto& c : run_gradcheck_suite(0)) {
    INFO(c.name << " " << c.max_rel_error << " at " << c.worst);
    CHECK(c.pass);
    CHECK(c.coords > 0);
  }
}

TEST_CASE("decoder is causal") {
  const Model m = init_model(tiny(40, Attention::Causal), 3);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto ids = random_ids(rng, 3 + rng() % 10, 40);
    const Matrix base = logits(m, ids);
    const std::size_t cut = rng() % ids.size();
    for (std::size_t i = cut + 1; i < ids.size(); ++i) ids[i] = static_cast<int>(6 + rng() % 34);
    const Matrix changed = logits(m, ids);
    for (std::size_t r = 0; r <= cut; ++r) {
      REQUIRE((base.row(static_cast<Eigen::Index>(r)).array() == changed.row(static_cast<Eigen::Index>(r)).array()).all());
    }
  }
}

TEST_CASE("encoder is bidirectional") {
  ModelConfig c = tiny(40, Attention::Bidirectional);
  c.mlm_head = true;
  const Model m = init_model(c, 3);
  std::vector<int> ids{7, 8, 9, 10};
  Tape t1(false), t2(false);
  const Matrix a = forward_encoder(m, t1, ids).value();
  ids[3] = 11;
  const Matrix b = forward_encoder(m, t2, ids).value();
  CHECK((a.row(0) - b.row(0)).norm() > 0);
}

TEST_CASE("adapters start as an exact identity", "[adapter]") {
  Model m = init_model(tiny(50, Attention::Causal), 5);
  std::mt19937_64 rng(2);
  const auto ids = random_ids(rng, 12, 50);
  const Matrix before = logits(m, ids);
  const ParamStore base = m.params;
  attach_adapters(m, AdapterConfig{16, 16.0, 0.0}, 9);
  CHECK(has_adapters(m));
  const Matrix after = logits(m, ids, ForwardOptions{true, 1});
  CHECK((before.array() == after.array()).all());
  for (const auto& p : m.params) {
    CHECK(p.trainable == (p.name.find("lora_") != std::string::npos));
  }
  CHECK_THROWS_AS(attach_adapters(m, AdapterConfig{}, 1), Error);
  CHECK_THROWS_AS(attach_adapters(m, AdapterConfig{0, 1.0, 0.0}, 1), Error);
}

TEST_CASE("adapter training leaves base weights untouched and folds exactly", "[adapter]") {
  Model m = init_model(tiny(50, Attention::Causal), 5);
  attach_adapters(m, AdapterConfig{4, 8.0, 0.0}, 9);
  const ParamStore snapshot = m.params;
  std::mt19937_64 rng(3);
  auto state = optim::init_adam(m.params);
  for (int step = 0; step < 5; ++step) {
    const auto ids = random_ids(rng, 10, 50);
    Tape tape;
    Var logp = log_softmax_rows(forward_decoder(m, tape, ids));
    std::vector<std::size_t> rows(ids.size() - 1);
    std::vector<int> next(ids.size() - 1);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      rows[i] = i;
      next[i] = ids[i + 1];
    }
    const Gradients g = tape.backward(pick_nll(gather_rows(logp, rows), next));
    optim::adamw_step(m.params, g, state, 1e-2, 0.0);
  }
  bool adapters_moved = false;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& p = m.params[i];
    const bool same = (p.value.array() == snapshot[i].value.array()).all();
    if (p.trainable) adapters_moved = adapters_moved || !same;
    else REQUIRE(same);
  }
  CHECK(adapters_moved);

  Model folded;
  folded.config = m.config;
  folded.config.adapter.reset();
  folded.params = effective_weights(m);
  const auto ids = random_ids(rng, 9, 50);
  CHECK((logits(m, ids) - logits(folded, ids)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("causal loss partitions by region", "[property]") {
  const auto tmpl = prompt::alpaca_template(Task::Sa);
  std::vector<text::Tokens> corpus{text::tokenize(tmpl.instruction + " " + tmpl.layout + " negative positive"),
                                   {"a", "b", "c", "d", "e"}};
  const auto vocab = text::Vocabulary::build(corpus);
  ModelConfig c = tiny(vocab.size(), Attention::Causal);
  c.max_len = 128;
  const Model m = init_model(c, 1);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    text::Tokens src;
    for (std::size_t i = 0; i < 1 + rng() % 5; ++i) src.push_back(corpus[1][rng() % 5]);
    std::vector<text::Tokens> ctx(rng() % 3, text::Tokens{"c", "d"});
    auto inst = prompt::build_decoder_instance(src, ctx, text::Tokens{"positive"}, tmpl, vocab);
    for (Variant v : {Variant::Daicl, Variant::IclSup}) {
      inst.loss_mask = prompt::loss_mask_for_variant(inst, v);
      Tape tape(false);
      const auto loss = causal_lm_loss(m, tape, inst);
      double sum = 0.0;
      for (double r : loss.region) sum += r;
      REQUIRE(std::abs(sum - loss.total) <= 1e-9);
      if (v == Variant::IclSup) REQUIRE(std::abs(loss.total - loss.region_sum(prompt::Region::Response)) <= 1e-9);
    }
  }
}

TEST_CASE("joint loss collapses to the task loss at lambda zero") {
  const std::vector<text::Tokens> corpus{{"a", "b", "c", "d", "e", "f"}};
  const auto vocab = text::Vocabulary::build(corpus);
  ModelConfig c = tiny(vocab.size(), Attention::Bidirectional);
  c.mlm_head = true;
  c.num_classes = 3;
  const Model m = init_model(c, 2);
  auto inst = prompt::build_encoder_instance(prompt::SourceInput{{"a", "b"}, 2, {}},
                                             std::vector<text::Tokens>{{"c", "d", "e", "f", "a", "b", "c"}}, vocab);
  std::mt19937_64 rng(0);
  inst = prompt::apply_mlm_mask(inst, 0.3, rng);
  Tape t0(false), t1(false);
  const auto zero = encoder_joint_loss(m, t0, inst, 0.0);
  const auto half = encoder_joint_loss(m, t1, inst, 0.5);
  CHECK(zero.masked > 0);
  CHECK(zero.total == zero.task);
  CHECK(std::abs(half.total - (half.task + 0.5 * half.mlm)) < 1e-12);
  CHECK(combine_joint(half.task, half.mlm, 0.5) == half.total);
}

TEST_CASE("model input validation") {
  const Model m = init_model(tiny(20, Attention::Causal), 0);
  Tape t(false);
  CHECK_THROWS_AS(forward_decoder(m, t, std::vector<int>{}), Error);
  CHECK_THROWS_AS(forward_decoder(m, t, std::vector<int>(65, 7)), Error);
  CHECK_THROWS_AS(forward_decoder(m, t, std::vector<int>{7, 25}), Error);
  ModelConfig bad = tiny(20, Attention::Causal);
  bad.heads = 3;
  CHECK_THROWS_AS(init_model(bad, 0), Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelConfig c = tiny(30, Attention::Causal);
  Model m = init_model(c, 4);
  attach_adapters(m, AdapterConfig{4, 8.0, 0.1}, 2);
  Checkpoint ck{m, 17, {{"variant", "DAICL"}}};
  std::stringstream a;
  save_checkpoint(a, ck);
  const auto back = load_checkpoint(a);
  CHECK(back.model.params == m.params);
  CHECK(back.step == 17);
  CHECK(back.meta["variant"] == "DAICL");
  CHECK(back.model.config.adapter.has_value());
  for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(back.model.params[i].trainable == m.params[i].trainable);
  std::stringstream b;
  save_checkpoint(b, back);
  std::stringstream a2;
  save_checkpoint(a2, ck);
  CHECK(a2.str() == b.str());

  std::string bytes = a2.str();
  bytes.resize(bytes.size() - 16);
  std::istringstream truncated(bytes);
  try {
    load_checkpoint(truncated);
    FAIL("expected CorruptCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptCheckpoint);
  }
}

TEST_CASE("gradcheck relative error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.1) > 0.0);
  ParamStore store;
  store.add("x", gaussian(3, 3, 1.0, 7));
  const auto rep = finite_diff_check(store, [](const ParamStore& p, Gradients* g) {
    const Matrix& x = p[0].value;
    if (g) {
      *g = Gradients::zeros_like(p);
      g->g[0] = 3.0 * x.array().square();
    }
    return x.array().cube().sum();
  });
  CHECK(rep.max_rel_error < 1e-8);
  CHECK(rep.coords == 9);
}
