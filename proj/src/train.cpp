#include "daicl/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <regex>
#include <sstream>

#include "daicl/common.hpp"
#include "daicl/metrics.hpp"
#include "daicl/nn/crf.hpp"
#include "daicl/nn/losses.hpp"

namespace daicl::train {

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kContextStream = 4;
constexpr std::uint64_t kPretrainStream = 5;

std::vector<Tokens> tokens_of(std::span<const prompt::SourceInput> xs) {
  std::vector<Tokens> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.tokens);
  return out;
}

std::uint64_t hash_tokens(std::span<const Tokens> seqs, std::uint64_t h) {
  for (const auto& s : seqs) {
    for (const auto& t : s) h = fnv1a(t + '\x1f', h);
    h = fnv1a("\x1e", h);
  }
  return h;
}

std::mutex g_cache_mu;
std::map<std::uint64_t, std::vector<std::vector<std::size_t>>> g_context_cache;

struct Session {
  text::Vocabulary vocab;
  std::vector<Tokens> source_pool;
  std::optional<retrieval::RetrievalIndex> target_index;
  std::optional<retrieval::RetrievalIndex> source_index;

  Indices indices() const {
    return {target_index ? &*target_index : nullptr, source_index ? &*source_index : nullptr};
  }
};

Session make_session(const TaskData& data, ModelKind kind, Variant variant, const TrainConfig& cfg,
                     const text::Vocabulary* vocab = nullptr) {
  Session s;
  s.vocab = vocab ? *vocab : build_vocabulary(data, kind);
  s.source_pool = tokens_of(data.source_train);
  switch (context_source(variant)) {
    case ContextSource::TargetRetrieved:
    case ContextSource::TargetRandom:
      if (data.target_unlabeled.empty()) {
        throw Error(ErrorCode::MissingIndex, "variant needs a target corpus");
      }
      s.target_index = retrieval::build_index(data.target_unlabeled, cfg.embedder, cfg.metric);
      break;
    case ContextSource::SourceRetrieved:
      if (s.source_pool.empty()) throw Error(ErrorCode::MissingIndex, "variant needs source data");
      s.source_index = retrieval::build_index(s.source_pool, cfg.embedder, cfg.metric);
      break;
    case ContextSource::None: break;
  }
  return s;
}

nn::ModelConfig model_config(ModelKind kind, Task task, std::size_t vocab, const TrainConfig& cfg) {
  nn::ModelConfig mc;
  mc.vocab = vocab;
  mc.dim = cfg.dim;
  mc.layers = cfg.layers;
  mc.heads = cfg.heads;
  mc.max_len = cfg.max_len;
  mc.init_std = cfg.init_std;
  if (kind == ModelKind::Encoder) {
    mc.attention = nn::Attention::Bidirectional;
    mc.mlm_head = true;
    if (task == Task::Sa) mc.num_classes = 3;
    else mc.num_tags = corpus::kNumBioTags;
  } else {
    mc.attention = nn::Attention::Causal;
    mc.adapter = cfg.adapter;
  }
  return mc;
}

nn::Model initial_model(ModelKind kind, Task task, const text::Vocabulary& vocab, const TrainConfig& cfg) {
  if (!cfg.init_checkpoint) return nn::init_model(model_config(kind, task, vocab.size(), cfg), cfg.seed);
  nn::Model m = nn::load_checkpoint_file(*cfg.init_checkpoint).model;
  if (m.config.vocab != vocab.size()) {
    throw Error(ErrorCode::ConfigInvalid, "init checkpoint vocabulary size differs from the data");
  }
  if ((kind == ModelKind::Decoder) != m.config.causal()) {
    throw Error(ErrorCode::ConfigInvalid, "init checkpoint has the wrong architecture");
  }
  if (kind == ModelKind::Decoder && cfg.adapter && !nn::has_adapters(m)) {
    nn::attach_adapters(m, *cfg.adapter, cfg.seed);
  }
  return m;
}

struct InstanceLoss {
  nn::Gradients grads;
  double total = 0.0, task = 0.0, lm = 0.0;
};

struct StepOutcome {
  nn::Gradients grads;
  double total = 0.0, task = 0.0, lm = 0.0;
};

// Per-instance losses may run on worker threads; reduction is always in index order.
StepOutcome accumulate(std::size_t n, const std::function<InstanceLoss(std::size_t)>& job,
                       std::size_t threads) {
  std::vector<InstanceLoss> parts(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) parts[i] = job(i);
  } else {
    std::vector<std::future<void>> futs;
    const std::size_t w = std::min(threads, n);
    for (std::size_t t = 0; t < w; ++t) {
      futs.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = t; i < n; i += w) parts[i] = job(i);
      }));
    }
    for (auto& f : futs) f.get();
  }
  StepOutcome out;
  out.grads = std::move(parts[0].grads);
  out.total = parts[0].total;
  out.task = parts[0].task;
  out.lm = parts[0].lm;
  for (std::size_t i = 1; i < n; ++i) {
    out.grads.add(parts[i].grads);
    out.total += parts[i].total;
    out.task += parts[i].task;
    out.lm += parts[i].lm;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.grads.scale(inv);
  out.total *= inv;
  out.task *= inv;
  out.lm *= inv;
  return out;
}

InstanceLoss encoder_loss(const nn::Model& m, const prompt::EncoderInstance& inst, double lambda) {
  nn::Tape tape;
  auto jl = nn::encoder_joint_loss(m, tape, inst, lambda);
  InstanceLoss out;
  out.grads = tape.backward(jl.loss);
  out.total = jl.total;
  out.task = jl.task;
  out.lm = jl.mlm;
  return out;
}

InstanceLoss mlm_only_loss(const nn::Model& m, const prompt::EncoderInstance& inst) {
  nn::Tape tape;
  nn::Var h = nn::forward_encoder(m, tape, inst.ids);
  nn::Var lp = nn::mlm_log_probs(m, tape, h, inst.mask_positions);
  nn::Var loss = nn::scale(nn::pick_nll(lp, inst.mask_targets),
                           1.0 / static_cast<double>(inst.mask_positions.size()));
  InstanceLoss out;
  out.grads = tape.backward(loss);
  out.total = out.lm = loss.scalar();
  return out;
}

InstanceLoss decoder_loss(const nn::Model& m, const prompt::DecoderInstance& inst,
                          const nn::ForwardOptions& opts) {
  nn::Tape tape;
  auto cl = nn::causal_lm_loss(m, tape, inst, opts);
  InstanceLoss out;
  out.grads = tape.backward(cl.mean);
  const double n = static_cast<double>(cl.count);
  out.total = cl.total / n;
  out.task = cl.region_sum(prompt::Region::Response) / n;
  out.lm = out.total - out.task;
  return out;
}

struct Optimizer {
  optim::AdamState state;
  std::vector<double> lr_scale;
  std::unique_ptr<bool[]> decay;

  Optimizer(const nn::ParamStore& ps, const TrainConfig& cfg)
      : state(optim::init_adam(ps)), decay(new bool[ps.size()]) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto& p = ps[i];
      const bool crf = p.name.starts_with("crf.");
      lr_scale.push_back(crf ? cfg.crf_lr / cfg.lr : 1.0);
      decay[i] = !crf && p.value.rows() > 1 && p.value.cols() > 1;
    }
  }

  std::span<const bool> decay_mask() const { return {decay.get(), lr_scale.size()}; }
};

class Loop {
 public:
  Loop(nn::Model& model, const TrainConfig& cfg, std::size_t total_steps)
      : model_(model), cfg_(cfg), opt_(model.params, cfg), total_(total_steps) {}

  StepRecord step(StepOutcome o) {
    if (!std::isfinite(o.total)) {
      throw Error(ErrorCode::DivergenceDetected, "non-finite loss at step " + std::to_string(step_));
    }
    StepRecord rec;
    rec.step = step_;
    rec.lr = optim::lr_at(step_, total_, cfg_.lr, cfg_.warmup_frac);
    rec.grad_norm = optim::clip_global_norm(o.grads, cfg_.clip_norm);
    optim::adamw_step(model_.params, o.grads, opt_.state, rec.lr, cfg_.weight_decay, cfg_.adam,
                      opt_.lr_scale, opt_.decay_mask());
    rec.loss_total = o.total;
    rec.loss_task = o.task;
    rec.loss_lm = o.lm;
    ++step_;
    return rec;
  }

  std::size_t steps_done() const { return step_; }
  bool exhausted() const { return step_ >= total_; }

 private:
  nn::Model& model_;
  const TrainConfig& cfg_;
  Optimizer opt_;
  std::size_t total_;
  std::size_t step_ = 0;
};

std::size_t total_steps(std::size_t n, const TrainConfig& cfg, std::size_t epochs) {
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = per_epoch * epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  return total;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kShuffleStream), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

int argmax(const nn::Matrix& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.cols(); ++j)
    if (row(0, j) > row(0, best)) best = j;
  return static_cast<int>(best);
}

corpus::SpanSet gold_spans(const prompt::SourceInput& x) {
  std::vector<std::string> tags;
  for (int t : x.tags) tags.emplace_back(corpus::id_to_bio(t));
  return corpus::tags_to_spans(tags);
}

ContextSet split_contexts(Variant variant, std::span<const prompt::SourceInput> split,
                          const Session& s, const TrainConfig& cfg) {
  return select_contexts(variant, tokens_of(split), s.indices(), cfg.k,
                         derive_seed(cfg.seed, kContextStream), cfg.cache_dir);
}

EvalResult evaluate_with(const nn::Model& model, const Session& s, Variant variant, ModelKind kind,
                         Task task, std::span<const prompt::SourceInput> split,
                         const TrainConfig& cfg) {
  EvalResult out;
  if (split.empty()) return out;
  const ContextSet ctx = split_contexts(variant, split, s, cfg);
  std::vector<corpus::SpanSet> gold;
  std::vector<int> gold_cls;
  const auto tmpl = prompt::alpaca_template(task);

  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& x = split[i];
    const auto contexts = ctx.contexts(i);
    nn::Tape tape(false);
    if (kind == ModelKind::Encoder) {
      auto inst = prompt::build_encoder_instance(x, contexts, s.vocab, cfg.max_len);
      nn::Var h = nn::forward_encoder(model, tape, inst.ids);
      const auto src = inst.positions(prompt::Region::Source);
      if (task == Task::Sa) {
        out.predicted_classes.push_back(argmax(nn::pooled_class_log_probs(model, tape, h, src).value()));
      } else {
        nn::Var em = nn::emission_scores(model, tape, h, src);
        auto path = nn::crf_decode(em.value(), nn::crf_params(model));
        std::vector<std::string> tags;
        for (int t : path) tags.emplace_back(corpus::id_to_bio(t));
        out.predicted_spans.push_back(corpus::tags_to_spans(tags));
      }
    } else if (task == Task::Sa) {
      double best = INFINITY;
      int best_c = 0;
      for (int c = 0; c < 3; ++c) {
        auto resp = prompt::response_tokens_sa(static_cast<corpus::Sentiment>(c));
        auto inst = prompt::build_decoder_instance(x.tokens, contexts, resp, tmpl, s.vocab, cfg.max_len);
        inst.loss_mask = prompt::loss_mask_for_variant(inst, Variant::IclSup);
        nn::Tape t(false);
        const double nll = nn::causal_lm_loss(model, t, inst).total;
        if (nll < best) best = nll, best_c = c;
      }
      out.predicted_classes.push_back(best_c);
    } else {
      auto inst = prompt::build_decoder_instance(x.tokens, contexts, std::nullopt, tmpl, s.vocab, cfg.max_len);
      std::vector<int> ids = inst.ids;
      std::vector<int> gen;
      while (gen.size() < cfg.max_new_tokens && ids.size() < cfg.max_len) {
        nn::Tape t(false);
        nn::Var logits = nn::forward_decoder(model, t, ids);
        const int next = argmax(logits.value().bottomRows(1));
        if (next == text::kEos) break;
        gen.push_back(next);
        ids.push_back(next);
      }
      const auto words = s.vocab.decode(gen);
      const auto parsed = prompt::parse_entity_response(text::join(words));
      out.predicted_spans.push_back(metrics::entities_to_spans(parsed, x.tokens));
    }
    if (task == Task::Sa) gold_cls.push_back(x.label_class);
    else gold.push_back(gold_spans(x));
  }
  out.metric = task == Task::Sa ? metrics::accuracy(gold_cls, out.predicted_classes).accuracy
                                : metrics::span_f1(gold, out.predicted_spans).f1;
  return out;
}

TrainResult supervised(Variant variant, ModelKind kind, const TaskData& data, const TrainConfig& cfg,
                       nn::Model model, Session session) {
  cfg.validate();
  if (data.source_train.empty()) throw Error(ErrorCode::ConfigInvalid, "no source training data");
  const ContextSet train_ctx = split_contexts(variant, data.source_train, session, cfg);
  const auto tmpl = prompt::alpaca_template(data.task);
  const std::size_t n = data.source_train.size();
  const std::size_t total = total_steps(n, cfg, cfg.epochs);

  TrainResult res;
  Loop loop(model, cfg, total);
  std::optional<nn::Model> best;
  std::size_t bad = 0;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !loop.exhausted(); ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    EpochRecord er;
    er.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n && !loop.exhausted(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                   order.begin() + static_cast<std::ptrdiff_t>(b1));
      std::vector<prompt::SourceInput> batch;
      for (auto id : ids) batch.push_back(data.source_train[id]);
      const std::size_t step = loop.steps_done();
      StepOutcome o;
      if (kind == ModelKind::Encoder) {
        std::mt19937_64 rng(derive_seed(derive_seed(cfg.seed, kMaskStream), step));
        auto insts = assemble_encoder_batch(variant, batch, ids, train_ctx, session.vocab, cfg, rng);
        o = accumulate(insts.size(), [&](std::size_t i) { return encoder_loss(model, insts[i], cfg.lambda); },
                       cfg.threads);
      } else {
        auto insts = assemble_decoder_batch(variant, data.task, batch, ids, train_ctx, session.vocab, cfg);
        const std::uint64_t dseed = derive_seed(derive_seed(cfg.seed, kDropoutStream), step);
        o = accumulate(insts.size(), [&](std::size_t i) {
              return decoder_loss(model, insts[i], {true, derive_seed(dseed, i)});
            }, cfg.threads);
      }
      auto rec = loop.step(std::move(o));
      er.train_loss += rec.loss_total;
      er.train_task += rec.loss_task;
      er.train_lm += rec.loss_lm;
      ++batches;
      res.steps.push_back(rec);
    }
    if (batches) {
      er.train_loss /= static_cast<double>(batches);
      er.train_task /= static_cast<double>(batches);
      er.train_lm /= static_cast<double>(batches);
    }
    if (!data.source_dev.empty()) {
      er.dev_metric = evaluate_with(model, session, variant, kind, data.task, data.source_dev, cfg).metric;
    }
    res.epochs.push_back(er);
    if (data.source_dev.empty()) continue;
    if (!have_best || er.dev_metric > res.best_dev) {
      have_best = true;
      res.best_dev = er.dev_metric;
      res.best_epoch = epoch;
      best = model;
      res.checkpoint.step = loop.steps_done();
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  if (!best) {
    best = model;
    res.checkpoint.step = loop.steps_done();
    res.best_epoch = res.epochs.empty() ? 0 : res.epochs.back().epoch;
  }
  res.checkpoint.model = std::move(*best);
  res.vocab = std::move(session.vocab);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : res.epochs) hist.push_back(e.dev_metric);
  res.checkpoint.meta = {{"variant", std::string(to_string(variant))},
                         {"task", std::string(to_string(data.task))},
                         {"kind", std::string(to_string(kind))},
                         {"best_epoch", res.best_epoch},
                         {"validation", hist},
                         {"vocab", res.vocab.to_json()},
                         {"train_config", to_json(cfg)}};
  return res;
}

}  // namespace

prompt::SourceInput sa_input(const corpus::SentimentExample& ex) {
  prompt::SourceInput x;
  x.tokens = text::tokenize(ex.text);
  x.label_class = static_cast<int>(ex.label);
  return x;
}

prompt::SourceInput ner_input(const corpus::TaggedSentence& s) {
  prompt::SourceInput x;
  x.tokens = s.tokens;
  for (const auto& t : corpus::strip_types(s.tags)) x.tags.push_back(corpus::bio_to_id(t));
  return x;
}

TaskData sa_task_data(const synth::ShiftBenchmark& b) {
  TaskData d;
  d.task = Task::Sa;
  for (const auto& e : b.source_train) d.source_train.push_back(sa_input(e));
  for (const auto& e : b.source_dev) d.source_dev.push_back(sa_input(e));
  d.target_unlabeled = b.target_unlabeled;
  for (const auto& e : b.target_test) d.target_test.push_back(sa_input(e));
  return d;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (!(lr > 0.0) || !(crf_lr > 0.0)) fail("learning rates must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) fail("warmup_frac must lie in [0,1)");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) fail("mask_rate must lie in [0,1]");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
    fail("adam betas must lie in [0,1) and eps > 0");
  if (k == 0) fail("k must be >= 1");
  if (embedder.kind != retrieval::EmbedderKind::NgramProjection) {
    fail("training retrieval supports the ngram_projection embedder only");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"lr", c.lr},
                   {"crf_lr", c.crf_lr},
                   {"weight_decay", c.weight_decay},
                   {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
                   {"batch_size", c.batch_size},
                   {"epochs", c.epochs},
                   {"warmup_frac", c.warmup_frac},
                   {"clip_norm", c.clip_norm},
                   {"seed", c.seed},
                   {"lambda", c.lambda},
                   {"k", c.k},
                   {"mask_rate", c.mask_rate},
                   {"mask_contexts", c.mask_contexts},
                   {"patience", c.patience},
                   {"pretrain_epochs", c.pretrain_epochs},
                   {"max_steps", c.max_steps},
                   {"dim", c.dim},
                   {"layers", c.layers},
                   {"heads", c.heads},
                   {"max_len", c.max_len},
                   {"init_std", c.init_std},
                   {"metric", retrieval::to_string(c.metric)},
                   {"embedder", {{"dim", c.embedder.dim}, {"seed", c.embedder.seed},
                                 {"kind", retrieval::to_string(c.embedder.kind)}}},
                   {"max_new_tokens", c.max_new_tokens}};
  if (c.adapter) {
    j["adapter"] = {{"rank", c.adapter->rank}, {"alpha", c.adapter->alpha}, {"dropout", c.adapter->dropout}};
  }
  return j;
}

std::vector<Tokens> ContextSet::contexts(std::size_t query) const {
  std::vector<Tokens> out;
  if (!pool || query >= ids.size()) return out;
  for (auto id : ids[query]) out.push_back((*pool)[id]);
  return out;
}

ContextSet select_contexts(Variant variant, std::span<const Tokens> queries, const Indices& indices,
                           std::size_t k, std::uint64_t seed, const std::optional<std::string>& cache_dir) {
  ContextSet out;
  out.ids.assign(queries.size(), {});
  const ContextSource src = context_source(variant);
  if (src == ContextSource::None) return out;
  const retrieval::RetrievalIndex* index =
      src == ContextSource::SourceRetrieved ? indices.source : indices.target;
  if (!index) throw Error(ErrorCode::MissingIndex, "no index for " + std::string(to_string(variant)));
  if (k == 0) throw Error(ErrorCode::OutOfRange, "k must be >= 1");
  out.pool = &index->sentences;

  std::uint64_t key = fnv1a(retrieval::to_string(index->metric));
  key = fnv1a(std::to_string(static_cast<int>(src)) + ":" + std::to_string(k) + ":" +
                  std::to_string(index->spec.dim) + ":" + std::to_string(index->spec.seed),
              key);
  if (src == ContextSource::TargetRandom) key = fnv1a(std::to_string(seed), key);
  key = hash_tokens(index->sentences, key);
  key = hash_tokens(queries, key);
  {
    std::lock_guard lock(g_cache_mu);
    if (auto it = g_context_cache.find(key); it != g_context_cache.end()) {
      out.ids = it->second;
      return out;
    }
  }
  std::string cache_path;
  if (cache_dir) {
    std::ostringstream name;
    name << *cache_dir << "/contexts-" << std::hex << key << ".json";
    cache_path = name.str();
    std::ifstream in(cache_path);
    if (in) {
      try {
        out.ids = nlohmann::json::parse(in).get<std::vector<std::vector<std::size_t>>>();
        if (out.ids.size() == queries.size()) {
          std::lock_guard lock(g_cache_mu);
          g_context_cache[key] = out.ids;
          return out;
        }
      } catch (const nlohmann::json::exception&) {
      }
      out.ids.assign(queries.size(), {});
    }
  }

  if (src == ContextSource::TargetRandom) {
    for (std::size_t q = 0; q < queries.size(); ++q) {
      out.ids[q] = retrieval::random_k(index->size(), std::min(k, index->size()), derive_seed(seed, q));
    }
  } else {
    retrieval::Embedder embedder(index->spec);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto query = retrieval::make_query(queries[q], *index, embedder);
      retrieval::Exclude exclude;
      if (src == ContextSource::SourceRetrieved) {
        const Tokens& self = queries[q];
        exclude = [&](std::size_t id) { return index->sentences[id] == self; };
      }
      for (const auto& hit : retrieval::top_k(query, *index, k, exclude)) out.ids[q].push_back(hit.corpus_id);
    }
  }
  {
    std::lock_guard lock(g_cache_mu);
    g_context_cache[key] = out.ids;
  }
  if (!cache_path.empty()) {
    std::filesystem::create_directories(*cache_dir);
    std::ofstream o(cache_path);
    if (o) o << nlohmann::json(out.ids).dump();
  }
  return out;
}

std::vector<prompt::EncoderInstance> assemble_encoder_batch(
    Variant variant, std::span<const prompt::SourceInput> batch, std::span<const std::size_t> ids,
    const ContextSet& contexts, const text::Vocabulary& vocab, const TrainConfig& cfg,
    std::mt19937_64& rng) {
  std::vector<prompt::EncoderInstance> out;
  const bool mask = uses_mlm(variant) && cfg.mask_contexts;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto inst = prompt::build_encoder_instance(batch[i], contexts.contexts(ids[i]), vocab, cfg.max_len);
    if (mask) inst = prompt::apply_mlm_mask(inst, cfg.mask_rate, rng);
    out.push_back(std::move(inst));
  }
  return out;
}

Tokens response_tokens(Task task, const prompt::SourceInput& input) {
  if (task == Task::Sa) return prompt::response_tokens_sa(static_cast<corpus::Sentiment>(input.label_class));
  const auto ents = metrics::spans_to_entities(gold_spans(input), input.tokens);
  return prompt::response_tokens_ner(ents);
}

std::vector<prompt::DecoderInstance> assemble_decoder_batch(
    Variant variant, Task task, std::span<const prompt::SourceInput> batch,
    std::span<const std::size_t> ids, const ContextSet& contexts, const text::Vocabulary& vocab,
    const TrainConfig& cfg) {
  const auto tmpl = prompt::alpaca_template(task);
  std::vector<prompt::DecoderInstance> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto inst = prompt::build_decoder_instance(batch[i].tokens, contexts.contexts(ids[i]),
                                               response_tokens(task, batch[i]), tmpl, vocab, cfg.max_len);
    inst.loss_mask = prompt::loss_mask_for_variant(inst, variant);
    out.push_back(std::move(inst));
  }
  return out;
}

Tokens template_tokens(const prompt::PromptTemplate& tmpl) {
  static const std::regex placeholder(R"(\{[a-z]+\})");
  const std::string literal = std::regex_replace(tmpl.layout, placeholder, " ");
  Tokens out = text::tokenize(literal + " " + tmpl.instruction + " " + tmpl.context_prefix);
  return out;
}

text::Vocabulary build_vocabulary(const TaskData& data, ModelKind kind) {
  std::vector<Tokens> corpus;
  for (const auto& x : data.source_train) corpus.push_back(x.tokens);
  for (const auto& x : data.source_dev) corpus.push_back(x.tokens);
  for (const auto& t : data.target_unlabeled) corpus.push_back(t);
  std::vector<Tokens> extra;
  if (kind == ModelKind::Decoder) {
    extra.push_back(template_tokens(prompt::alpaca_template(data.task)));
    extra.push_back(text::tokenize("negative neutral positive none , - ."));
  }
  return text::Vocabulary::build(corpus, extra);
}

void write_history_jsonl(std::ostream& out, const TrainResult& r) {
  for (const auto& s : r.steps) {
    out << nlohmann::json{{"step", s.step}, {"lr", s.lr}, {"loss_total", s.loss_total},
                          {"loss_task", s.loss_task}, {"loss_lm", s.loss_lm}}
               .dump()
        << '\n';
  }
  for (const auto& e : r.epochs) {
    out << nlohmann::json{{"epoch", e.epoch}, {"dev_metric", e.dev_metric}, {"train_loss", e.train_loss}}
               .dump()
        << '\n';
  }
}

TrainResult train(Variant variant, ModelKind kind, const TaskData& data, const TrainConfig& cfg) {
  if (variant == Variant::AdaptivePretrain) return adaptive_pretrain(kind, data, cfg).stage2;
  cfg.validate();
  Session s = make_session(data, kind, variant, cfg);
  nn::Model model = initial_model(kind, data.task, s.vocab, cfg);
  return supervised(variant, kind, data, cfg, std::move(model), std::move(s));
}

PretrainResult adaptive_pretrain(ModelKind kind, const TaskData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.target_unlabeled.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "adaptive pre-training needs target text");
  }
  Session s = make_session(data, kind, Variant::NoIcl, cfg);
  PretrainResult out;
  nn::Model model = initial_model(kind, data.task, s.vocab, cfg);
  const std::size_t n = data.target_unlabeled.size();
  const std::size_t total = total_steps(n, cfg, cfg.pretrain_epochs);
  const std::uint64_t seed = derive_seed(cfg.seed, kPretrainStream);
  Loop loop(model, cfg, total);
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs && !loop.exhausted(); ++epoch) {
    const auto order = epoch_order(n, seed, epoch);
    for (std::size_t b0 = 0; b0 < n && !loop.exhausted(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      const std::size_t step = loop.steps_done();
      StepOutcome o;
      if (kind == ModelKind::Encoder) {
        std::mt19937_64 rng(derive_seed(derive_seed(seed, kMaskStream), step));
        std::vector<prompt::EncoderInstance> insts;
        for (std::size_t i = b0; i < b1; ++i) {
          auto inst = prompt::build_lm_instance(data.target_unlabeled[order[i]], s.vocab, cfg.max_len);
          if (prompt::mask_count(inst.size(), cfg.mask_rate) == 0) continue;
          insts.push_back(prompt::apply_mlm_mask(inst, cfg.mask_rate, rng));
        }
        if (insts.empty()) continue;
        o = accumulate(insts.size(), [&](std::size_t i) { return mlm_only_loss(model, insts[i]); }, cfg.threads);
      } else {
        std::vector<prompt::DecoderInstance> insts;
        for (std::size_t i = b0; i < b1; ++i) {
          const auto& toks = data.target_unlabeled[order[i]];
          prompt::DecoderInstance inst;
          inst.ids.push_back(text::kBos);
          for (int id : s.vocab.encode(toks)) inst.ids.push_back(id);
          inst.ids.push_back(text::kEos);
          if (inst.ids.size() > cfg.max_len) inst.ids.resize(cfg.max_len);
          inst.region.assign(inst.ids.size(), prompt::Region::Context);
          inst.loss_mask.assign(inst.ids.size(), true);
          insts.push_back(std::move(inst));
        }
        const std::uint64_t dseed = derive_seed(derive_seed(seed, kDropoutStream), step);
        o = accumulate(insts.size(), [&](std::size_t i) {
              return decoder_loss(model, insts[i], {true, derive_seed(dseed, i)});
            }, cfg.threads);
      }
      out.stage1_steps.push_back(loop.step(std::move(o)));
    }
  }
  out.stage1 = model;
  out.stage2 = supervised(Variant::NoIcl, kind, data, cfg, std::move(model), std::move(s));
  out.stage2.checkpoint.meta["variant"] = std::string(to_string(Variant::AdaptivePretrain));
  out.stage2.checkpoint.meta["pretrain_steps"] = out.stage1_steps.size();
  return out;
}

EvalResult evaluate(const TrainResult& trained, Variant variant, ModelKind kind, const TaskData& data,
                    std::span<const prompt::SourceInput> split, const TrainConfig& cfg) {
  const Variant policy = variant == Variant::AdaptivePretrain ? Variant::NoIcl : variant;
  Session s = make_session(data, kind, policy, cfg, &trained.vocab);
  return evaluate_with(trained.checkpoint.model, s, policy, kind, data.task, split, cfg);
}

}  // namespace daicl::train
