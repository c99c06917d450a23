#include "daicl/nn/model.hpp"

#include <cmath>
#include <random>

#include "daicl/common.hpp"

namespace daicl::nn {

namespace {

constexpr const char* kAdapted[] = {"attn.wq", "attn.wv"};

std::string lora_a(std::size_t layer, const char* leaf) {
  return layer_param(layer, std::string(leaf) + ".lora_a");
}
std::string lora_b(std::size_t layer, const char* leaf) {
  return layer_param(layer, std::string(leaf) + ".lora_b");
}

std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
  return derive_seed(seed, fnv1a(name));
}

void add_gaussian(ParamStore& ps, const std::string& name, Eigen::Index r, Eigen::Index c,
                  double std, std::uint64_t seed) {
  ps.add(name, gaussian(r, c, std, param_seed(seed, name)));
}

void check_ids(const Model& model, std::span<const int> ids) {
  if (ids.empty()) throw Error(ErrorCode::EmptySequence, "empty input");
  if (ids.size() > model.config.max_len) {
    throw Error(ErrorCode::TooLong, std::to_string(ids.size()) + " tokens exceed max_len " +
                                        std::to_string(model.config.max_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.config.vocab) {
      throw Error(ErrorCode::OutOfRange, "token id " + std::to_string(id));
    }
  }
}

Var linear(const Model& m, Tape& t, Var x, const std::string& w, const std::string& b) {
  return add_row(matmul(x, t.param(m.params, w)), t.param(m.params, b));
}

Var projection(const Model& m, Tape& t, Var x, std::size_t layer, const char* leaf,
               const ForwardOptions& opts, std::uint64_t slot) {
  Var y = linear(m, t, x, layer_param(layer, leaf), layer_param(layer, std::string(leaf) + "_b"));
  const std::string a_name = lora_a(layer, leaf);
  if (!m.params.contains(a_name)) return y;
  const AdapterConfig& ac = *m.config.adapter;
  Var xin = x;
  if (opts.train && ac.dropout > 0.0) {
    std::mt19937_64 rng(derive_seed(opts.dropout_seed, slot));
    std::bernoulli_distribution keep(1.0 - ac.dropout);
    Matrix mask(x.rows(), x.cols());
    const double s = 1.0 / (1.0 - ac.dropout);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
    xin = mul_const(x, mask);
  }
  Var low = matmul_nt(matmul_nt(xin, t.param(m.params, a_name)),
                      t.param(m.params, lora_b(layer, leaf)));
  return add_scaled(y, low, ac.alpha / static_cast<double>(ac.rank));
}

Var transformer(const Model& m, Tape& t, std::span<const int> ids, const ForwardOptions& opts) {
  const auto& cfg = m.config;
  const auto n = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto dh = d / static_cast<Eigen::Index>(cfg.heads);
  const bool causal = cfg.causal();

  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  Var x = add(gather_rows(t.param(m.params, "tok_emb"), ids),
              gather_rows(t.param(m.params, "pos_emb"), std::span<const int>(pos)));

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Var h = layer_norm(x, t.param(m.params, layer_param(l, "ln1.g")),
                       t.param(m.params, layer_param(l, "ln1.b")));
    Var q = projection(m, t, h, l, "attn.wq", opts, 2 * l);
    Var k = matmul(h, t.param(m.params, layer_param(l, "attn.wk")));
    Var v = projection(m, t, h, l, "attn.wv", opts, 2 * l + 1);
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * dh;
      Var s = scale(matmul_nt(slice_cols(q, c0, dh), slice_cols(k, c0, dh)), inv_sqrt);
      heads.push_back(matmul(softmax_rows(s, causal), slice_cols(v, c0, dh)));
    }
    Var att = linear(m, t, cfg.heads == 1 ? heads.front() : concat_cols(heads),
                     layer_param(l, "attn.wo"), layer_param(l, "attn.wo_b"));
    x = add(x, att);
    Var h2 = layer_norm(x, t.param(m.params, layer_param(l, "ln2.g")),
                        t.param(m.params, layer_param(l, "ln2.b")));
    Var mid = gelu(linear(m, t, h2, layer_param(l, "mlp.w1"), layer_param(l, "mlp.b1")));
    x = add(x, linear(m, t, mid, layer_param(l, "mlp.w2"), layer_param(l, "mlp.b2")));
  }
  (void)n;
  return layer_norm(x, t.param(m.params, "ln_f.g"), t.param(m.params, "ln_f.b"));
}

}  // namespace

std::string layer_param(std::size_t layer, const std::string& leaf) {
  return "L" + std::to_string(layer) + "." + leaf;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (vocab == 0) fail("vocab must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
  if (max_len == 0) fail("max_len must be positive");
  if (mlp_mult == 0) fail("mlp_mult must be positive");
  if (causal() && mlm_head) fail("causal models cannot enable the MLM head");
  if (adapter && adapter->rank == 0) fail("adapter rank must be >= 1");
  if (adapter && (adapter->dropout < 0.0 || adapter->dropout >= 1.0)) fail("adapter dropout in [0,1)");
  if (!(init_std >= 0.0)) fail("init_std must be >= 0");
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"vocab", c.vocab},
                   {"dim", c.dim},
                   {"layers", c.layers},
                   {"heads", c.heads},
                   {"max_len", c.max_len},
                   {"mlp_mult", c.mlp_mult},
                   {"attention", c.causal() ? "causal" : "bidirectional"},
                   {"mlm_head", c.mlm_head},
                   {"num_classes", c.num_classes},
                   {"num_tags", c.num_tags},
                   {"init_std", c.init_std}};
  if (c.adapter) {
    j["adapter"] = {{"rank", c.adapter->rank}, {"alpha", c.adapter->alpha},
                    {"dropout", c.adapter->dropout}};
  } else {
    j["adapter"] = nullptr;
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab = j.at("vocab").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.mlp_mult = j.value("mlp_mult", std::size_t{4});
    const auto att = j.at("attention").get<std::string>();
    if (att == "causal") c.attention = Attention::Causal;
    else if (att == "bidirectional") c.attention = Attention::Bidirectional;
    else throw Error(ErrorCode::ConfigInvalid, "attention must be causal or bidirectional");
    c.mlm_head = j.value("mlm_head", false);
    c.num_classes = j.value("num_classes", std::size_t{0});
    c.num_tags = j.value("num_tags", std::size_t{0});
    c.init_std = j.value("init_std", 0.02);
    if (j.contains("adapter") && !j["adapter"].is_null()) {
      const auto& a = j["adapter"];
      c.adapter = AdapterConfig{a.at("rank").get<std::size_t>(), a.at("alpha").get<double>(),
                                a.at("dropout").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

HeadCounters& HeadCounters::operator=(const HeadCounters& o) {
  mlm = o.mlm.load();
  classifier = o.classifier.load();
  emission = o.emission.load();
  lm = o.lm.load();
  return *this;
}

void HeadCounters::reset() { mlm = classifier = emission = lm = 0; }

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.config.adapter.reset();
  m.seed = seed;
  auto& ps = m.params;
  const auto V = static_cast<Eigen::Index>(cfg.vocab);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto f = static_cast<Eigen::Index>(cfg.dim * cfg.mlp_mult);
  const double s = cfg.init_std;

  add_gaussian(ps, "tok_emb", V, d, s, seed);
  add_gaussian(ps, "pos_emb", static_cast<Eigen::Index>(cfg.max_len), d, s, seed);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    ps.add(layer_param(l, "ln1.g"), Matrix::Ones(1, d));
    ps.add(layer_param(l, "ln1.b"), Matrix::Zero(1, d));
    // No key bias: it shifts every score in a query row equally and cancels in softmax.
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      add_gaussian(ps, layer_param(l, w), d, d, s, seed);
      if (std::string_view(w) != "attn.wk") ps.add(layer_param(l, std::string(w) + "_b"), Matrix::Zero(1, d));
    }
    ps.add(layer_param(l, "ln2.g"), Matrix::Ones(1, d));
    ps.add(layer_param(l, "ln2.b"), Matrix::Zero(1, d));
    add_gaussian(ps, layer_param(l, "mlp.w1"), d, f, s, seed);
    ps.add(layer_param(l, "mlp.b1"), Matrix::Zero(1, f));
    add_gaussian(ps, layer_param(l, "mlp.w2"), f, d, s, seed);
    ps.add(layer_param(l, "mlp.b2"), Matrix::Zero(1, d));
  }
  ps.add("ln_f.g", Matrix::Ones(1, d));
  ps.add("ln_f.b", Matrix::Zero(1, d));
  if (cfg.causal()) ps.add("lm.bias", Matrix::Zero(1, V));
  if (cfg.mlm_head) ps.add("mlm.bias", Matrix::Zero(1, V));
  if (cfg.num_classes > 0) {
    const auto C = static_cast<Eigen::Index>(cfg.num_classes);
    add_gaussian(ps, "cls.w", d, C, s, seed);
    ps.add("cls.b", Matrix::Zero(1, C));
  }
  if (cfg.num_tags > 0) {
    const auto K = static_cast<Eigen::Index>(cfg.num_tags);
    add_gaussian(ps, "emit.w", d, K, s, seed);
    ps.add("emit.b", Matrix::Zero(1, K));
    ps.add("crf.trans", Matrix::Zero(K, K));
    ps.add("crf.start", Matrix::Zero(1, K));
    ps.add("crf.end", Matrix::Zero(1, K));
  }
  if (cfg.adapter) attach_adapters(m, *cfg.adapter, seed);
  return m;
}

bool has_adapters(const Model& model) {
  return model.config.layers > 0 && model.params.contains(lora_a(0, kAdapted[0]));
}

void attach_adapters(Model& model, const AdapterConfig& cfg, std::uint64_t seed) {
  if (cfg.rank == 0) throw Error(ErrorCode::ConfigInvalid, "adapter rank must be >= 1");
  if (has_adapters(model)) throw Error(ErrorCode::ShapeMismatch, "adapters already attached");
  for (auto& p : model.params) p.trainable = false;
  const auto r = static_cast<Eigen::Index>(cfg.rank);
  const std::uint64_t aseed = derive_seed(seed, fnv1a("adapters"));
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    for (const char* leaf : kAdapted) {
      const Matrix& w = model.params.at(layer_param(l, leaf)).value;
      const Eigen::Index d_in = w.rows(), d_out = w.cols();
      const std::string an = lora_a(l, leaf);
      model.params.add(an, gaussian(r, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)),
                                    param_seed(aseed, an)));
      model.params.add(lora_b(l, leaf), Matrix::Zero(d_out, r));
    }
  }
  model.config.adapter = cfg;
}

ParamStore effective_weights(const Model& model) {
  ParamStore out;
  const bool adapted = has_adapters(model);
  const double s = adapted ? model.config.adapter->alpha / static_cast<double>(model.config.adapter->rank)
                           : 0.0;
  for (const auto& p : model.params) {
    if (p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b")) continue;
    Matrix v = p.value;
    if (adapted) {
      for (std::size_t l = 0; l < model.config.layers; ++l) {
        for (const char* leaf : kAdapted) {
          if (p.name != layer_param(l, leaf)) continue;
          const Matrix& A = model.params.at(lora_a(l, leaf)).value;
          const Matrix& B = model.params.at(lora_b(l, leaf)).value;
          v += s * (B * A).transpose();
        }
      }
    }
    out.add(p.name, std::move(v), true);
  }
  return out;
}

Var forward_encoder(const Model& model, Tape& tape, std::span<const int> ids,
                    const ForwardOptions& opts) {
  if (model.config.causal()) throw Error(ErrorCode::ConfigInvalid, "forward_encoder on a causal model");
  check_ids(model, ids);
  return transformer(model, tape, ids, opts);
}

Var decoder_hidden(const Model& model, Tape& tape, std::span<const int> ids,
                   const ForwardOptions& opts) {
  if (!model.config.causal()) {
    throw Error(ErrorCode::ConfigInvalid, "forward_decoder on a bidirectional model");
  }
  check_ids(model, ids);
  return transformer(model, tape, ids, opts);
}

Var forward_decoder(const Model& model, Tape& tape, std::span<const int> ids,
                    const ForwardOptions& opts) {
  Var h = decoder_hidden(model, tape, ids, opts);
  ++model.calls.lm;
  return add_row(matmul_nt(h, tape.param(model.params, "tok_emb")),
                 tape.param(model.params, "lm.bias"));
}

Var mlm_log_probs(const Model& model, Tape& tape, Var hidden,
                  std::span<const std::size_t> positions) {
  if (positions.empty()) throw Error(ErrorCode::EmptyMaskSet, "no masked positions");
  if (!model.config.mlm_head) throw Error(ErrorCode::ConfigInvalid, "model has no MLM head");
  ++model.calls.mlm;
  Var rows = gather_rows(hidden, positions);
  Var logits = add_row(matmul_nt(rows, tape.param(model.params, "tok_emb")),
                       tape.param(model.params, "mlm.bias"));
  return log_softmax_rows(logits);
}

Var pooled_class_log_probs(const Model& model, Tape& tape, Var hidden,
                           std::span<const std::size_t> source_positions) {
  if (source_positions.empty()) throw Error(ErrorCode::EmptySource, "no source positions");
  if (model.config.num_classes == 0) {
    throw Error(ErrorCode::ConfigInvalid, "model has no classifier head");
  }
  ++model.calls.classifier;
  Var pooled = mean_rows(hidden, source_positions);
  Var logits = add_row(matmul(pooled, tape.param(model.params, "cls.w")),
                       tape.param(model.params, "cls.b"));
  return log_softmax_rows(logits);
}

Var emission_scores(const Model& model, Tape& tape, Var hidden,
                    std::span<const std::size_t> positions) {
  if (positions.empty()) throw Error(ErrorCode::EmptySource, "no source positions");
  if (model.config.num_tags == 0) throw Error(ErrorCode::ConfigInvalid, "model has no emission head");
  ++model.calls.emission;
  Var rows = gather_rows(hidden, positions);
  return add_row(matmul(rows, tape.param(model.params, "emit.w")),
                 tape.param(model.params, "emit.b"));
}

}  // namespace daicl::nn
