#include "daicl/gradcheck_suite.hpp"

#include <random>

#include "daicl/common.hpp"
#include "daicl/nn/crf.hpp"
#include "daicl/nn/gradcheck.hpp"
#include "daicl/nn/losses.hpp"
#include "daicl/prompt.hpp"

namespace daicl {

namespace {

constexpr double kModelThreshold = 1e-5;
constexpr double kCrfThreshold = 1e-6;
constexpr double kInitStd = 0.3;

text::Vocabulary toy_vocab() {
  std::vector<text::Tokens> corpus{text::tokenize("the staff was friendly and the room was clean"),
                                   text::tokenize("battery life is poor but the screen is bright"),
                                   text::tokenize("human mhc class genes were mapped")};
  std::vector<text::Tokens> extra{text::tokenize("negative neutral positive none , instruction input response")};
  return text::Vocabulary::build(corpus, extra);
}

nn::ModelConfig tiny(std::size_t vocab, bool causal) {
  nn::ModelConfig c;
  c.vocab = vocab;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_len = 64;
  c.init_std = kInitStd;
  c.attention = causal ? nn::Attention::Causal : nn::Attention::Bidirectional;
  return c;
}

// Non-default values for parameters that start at constants, so their gradients are generic.
void jitter(nn::ParamStore& ps, std::uint64_t seed) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (!p.trainable) continue;
    const bool constant_init = p.name.find("ln") != std::string::npos || p.name.ends_with("_b") ||
                               p.name.find(".b") != std::string::npos || p.name.starts_with("crf.") ||
                               p.name.ends_with("bias") || p.name.ends_with("lora_b");
    if (constant_init) p.value += nn::gaussian(p.value.rows(), p.value.cols(), 0.2, derive_seed(seed, i));
  }
}

GradCheckCase check(const std::string& name, nn::ParamStore& ps, const nn::LossFn& fn, double threshold,
                    double eps, std::uint64_t seed) {
  nn::GradCheckOptions opts;
  opts.eps = eps;
  opts.seed = seed;
  opts.max_coords_per_param = 48;
  const auto rep = nn::finite_diff_check(ps, fn, opts);
  return {name, rep.max_rel_error, threshold, rep.coords, rep.worst_param, rep.max_rel_error <= threshold};
}

prompt::SourceInput source_sa() {
  prompt::SourceInput s;
  s.tokens = text::tokenize("the room was clean");
  s.label_class = 2;
  return s;
}

prompt::SourceInput source_ner() {
  prompt::SourceInput s;
  s.tokens = text::tokenize("human mhc class genes");
  s.tags = {corpus::kTagB, corpus::kTagI, corpus::kTagO, corpus::kTagB};
  return s;
}

std::vector<text::Tokens> contexts() {
  return {text::tokenize("battery life is poor"), text::tokenize("the screen is bright and clean")};
}

nn::LossFn encoder_fn(const nn::Model& base, const prompt::EncoderInstance& inst) {
  return [&base, inst](const nn::ParamStore& ps, nn::Gradients* g) {
    nn::Model m = base;
    m.params = ps;
    nn::Tape tape(g != nullptr);
    auto jl = nn::encoder_joint_loss(m, tape, inst, 0.2);
    if (g) tape.backward(jl.loss, *g);
    return jl.loss.scalar();
  };
}

nn::LossFn decoder_fn(const nn::Model& base, const prompt::DecoderInstance& inst, bool dropout) {
  return [&base, inst, dropout](const nn::ParamStore& ps, nn::Gradients* g) {
    nn::Model m = base;
    m.params = ps;
    nn::Tape tape(g != nullptr);
    auto cl = nn::causal_lm_loss(m, tape, inst, {dropout, 17});
    if (g) tape.backward(cl.sum, *g);
    return cl.sum.scalar();
  };
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, double eps) {
  std::vector<GradCheckCase> out;
  const auto vocab = toy_vocab();
  const auto ctx = contexts();

  {
    auto cfg = tiny(vocab.size(), false);
    cfg.mlm_head = true;
    cfg.num_classes = 3;
    nn::Model m = nn::init_model(cfg, seed);
    jitter(m.params, seed);
    std::mt19937_64 rng(seed);
    auto inst = prompt::apply_mlm_mask(prompt::build_encoder_instance(source_sa(), ctx, vocab), 0.3, rng);
    auto ps = m.params;
    out.push_back(check("encoder_joint_classifier", ps, encoder_fn(m, inst), kModelThreshold, eps, seed));
  }
  {
    auto cfg = tiny(vocab.size(), false);
    cfg.mlm_head = true;
    cfg.num_tags = corpus::kNumBioTags;
    nn::Model m = nn::init_model(cfg, seed + 1);
    jitter(m.params, seed + 1);
    std::mt19937_64 rng(seed + 1);
    auto inst = prompt::apply_mlm_mask(prompt::build_encoder_instance(source_ner(), ctx, vocab), 0.3, rng);
    auto ps = m.params;
    out.push_back(check("encoder_joint_crf", ps, encoder_fn(m, inst), kModelThreshold, eps, seed + 1));
  }

  const auto tmpl = prompt::PromptTemplate{"toy", "instruction", "", "{instruction}\n{contexts}input {input}\nresponse {response}"};
  auto dec_inst = prompt::build_decoder_instance(source_sa().tokens, ctx, text::tokenize("positive"), tmpl, vocab);
  {
    nn::Model m = nn::init_model(tiny(vocab.size(), true), seed + 2);
    jitter(m.params, seed + 2);
    auto full = dec_inst;
    full.loss_mask = prompt::loss_mask_for_variant(full, Variant::Daicl);
    auto resp = dec_inst;
    resp.loss_mask = prompt::loss_mask_for_variant(resp, Variant::IclSup);
    auto ps = m.params;
    out.push_back(check("causal_full_token", ps, decoder_fn(m, full, false), kModelThreshold, eps, seed + 2));
    ps = m.params;
    out.push_back(check("causal_response_only", ps, decoder_fn(m, resp, false), kModelThreshold, eps, seed + 3));
  }
  {
    nn::Model m = nn::init_model(tiny(vocab.size(), true), seed + 4);
    jitter(m.params, seed + 4);
    nn::attach_adapters(m, {4, 8.0, 0.05}, seed + 4);
    jitter(m.params, seed + 5);  // B away from zero so A receives gradient
    for (auto& p : m.params)
      if (p.name.ends_with("lora_b")) p.value = nn::gaussian(p.value.rows(), p.value.cols(), 0.3, seed + 6);
    auto full = dec_inst;
    full.loss_mask = prompt::loss_mask_for_variant(full, Variant::Daicl);
    auto ps = m.params;
    out.push_back(check("causal_adapters", ps, decoder_fn(m, full, false), kModelThreshold, eps, seed + 4));
    ps = m.params;
    out.push_back(check("causal_adapters_dropout", ps, decoder_fn(m, full, true), kModelThreshold, eps, seed + 5));
  }
  {
    std::mt19937_64 rng(seed + 7);
    std::normal_distribution<double> nd(0.0, 1.0);
    nn::ParamStore ps;
    ps.add("emissions", nn::gaussian(5, 4, 1.0, seed + 7));
    ps.add("transition", nn::gaussian(4, 4, 1.0, seed + 8));
    ps.add("start", nn::gaussian(1, 4, 1.0, seed + 9));
    ps.add("end", nn::gaussian(1, 4, 1.0, seed + 10));
    const std::vector<int> tags{0, 3, 1, 1, 2};
    nn::LossFn fn = [tags](const nn::ParamStore& p, nn::Gradients* g) {
      nn::Tape tape(g != nullptr);
      nn::Var loss = nn::crf_nll(tape.param(p, 0), tape.param(p, 1), tape.param(p, 2), tape.param(p, 3), tags);
      if (g) tape.backward(loss, *g);
      return loss.scalar();
    };
    out.push_back(check("crf_nll", ps, fn, kCrfThreshold, eps, seed + 7));
  }
  return out;
}

}  // namespace daicl
