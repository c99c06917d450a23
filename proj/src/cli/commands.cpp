#include "daicl/cli/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "daicl/cli/remote.hpp"
#include "daicl/cli/run_spec.hpp"
#include "daicl/common.hpp"
#include "daicl/corpus.hpp"
#include "daicl/gradcheck_suite.hpp"
#include "daicl/nn/checkpoint.hpp"
#include "daicl/retrieval.hpp"
#include "daicl/run_matrix.hpp"
#include "daicl/synth.hpp"
#include "daicl/text.hpp"
#include "daicl/train.hpp"

namespace daicl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<std::size_t> k;
  std::optional<double> lambda;
};

struct Flags {
  // ingest
  std::string input;
  std::string format = "conll";
  std::optional<std::string> name;
  // index / retrieve
  std::string corpus = "target";
  std::optional<std::string> index;
  std::vector<std::string> queries;
  std::optional<std::string> queries_file;
  // prompts / infer
  std::size_t limit = 0;
  std::optional<std::string> split;
  std::optional<std::string> mode;
  std::optional<std::size_t> concurrency;
  std::string delimiter = "-----";
  // eval
  std::optional<std::string> checkpoint;
  // gradcheck
  double eps = 1e-5;
};

RunSpec resolve(const Globals& g) {
  RunSpec spec = g.config ? load_run_spec(*g.config) : parse_run_spec(json::object());
  if (g.seed) {
    spec.seeds = {*g.seed};
    spec.train.seed = *g.seed;
    if (spec.synthetic) spec.synthetic->seed = *g.seed;
  }
  if (g.out) spec.output_dir = *g.out;
  if (g.variant) {
    spec.variant = variant_from_string(*g.variant);
    spec.variants = {spec.variant};
  }
  if (g.k) {
    spec.train.k = *g.k;
    spec.inference.k = *g.k;
  }
  if (g.lambda) spec.train.lambda = *g.lambda;
  if (const char* cache = std::getenv("DAICL_CACHE_DIR"); cache && *cache) spec.train.cache_dir = cache;
  spec.train.validate();
  return spec;
}

fs::path out_path(const RunSpec& spec, const std::string& file) {
  fs::create_directories(spec.output_dir);
  return fs::path(spec.output_dir) / file;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << body;
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<text::Tokens> source_tokens(const train::TaskData& d) {
  std::vector<text::Tokens> out;
  out.reserve(d.source_train.size());
  for (const auto& s : d.source_train) out.push_back(s.tokens);
  return out;
}

const std::vector<prompt::SourceInput>& pick_split(const train::TaskData& d, const std::string& name) {
  if (name == "source_train") return d.source_train;
  if (name == "source_dev") return d.source_dev;
  if (name == "target_test") return d.target_test;
  throw Error(ErrorCode::ConfigInvalid, "--split: expected source_train, source_dev or target_test");
}

int cmd_ingest(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const std::string name = f.name.value_or(fs::path(f.input).stem().string());
  std::ostringstream body;
  json report = {{"input", f.input}, {"format", f.format}};
  if (f.format == "conll") {
    corpus::ParseReport r;
    const auto sents = corpus::parse_conll_file(f.input, &r);
    corpus::write_tagged_jsonl(body, sents);
    report["sentences"] = r.sentences;
    report["tokens"] = r.tokens;
    report["docstart_dropped"] = r.docstart_dropped;
    std::size_t spans = 0;
    for (const auto& s : sents) spans += corpus::tags_to_spans(s.tags).size();
    report["spans"] = spans;
  } else if (f.format == "reviews" || f.format == "sentiment") {
    std::ifstream in(f.input);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + f.input);
    const auto ex = f.format == "reviews" ? corpus::parse_reviews(in) : corpus::read_sentiment_jsonl(in);
    corpus::write_sentiment_jsonl(body, ex);
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& e : ex) ++counts[static_cast<int>(e.label)];
    report["examples"] = ex.size();
    report["labels"] = {{"negative", counts[0]}, {"neutral", counts[1]}, {"positive", counts[2]}};
  } else {
    throw Error(ErrorCode::ConfigInvalid, "--format: expected conll, reviews or sentiment");
  }
  write_text(out_path(spec, name + ".jsonl"), body.str());
  write_text(out_path(spec, name + ".report.json"), dump(report));
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_index(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const auto data = load_task_data(spec);
  std::vector<text::Tokens> corpus;
  if (f.corpus == "target") corpus = data.target_unlabeled;
  else if (f.corpus == "source") corpus = source_tokens(data);
  else throw Error(ErrorCode::ConfigInvalid, "--corpus: expected target or source");
  const auto idx = retrieval::build_index(corpus, spec.train.embedder, spec.train.metric);
  const fs::path path = f.index ? fs::path(*f.index) : out_path(spec, "index-" + f.corpus + ".bin");
  retrieval::save_index_file(idx, path.string());
  out << json({{"index", path.string()}, {"size", idx.size()}, {"metric", retrieval::to_string(idx.metric)}}).dump()
      << "\n";
  return kExitOk;
}

int cmd_retrieve(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const fs::path path = f.index ? fs::path(*f.index) : fs::path(spec.output_dir) / ("index-" + f.corpus + ".bin");
  if (!fs::exists(path)) throw Error(ErrorCode::MissingIndex, path.string() + " not found; run `index` first");
  const auto idx = retrieval::load_index_file(path.string());
  const retrieval::Embedder embedder(idx.spec);

  std::vector<std::string> queries = f.queries;
  if (f.queries_file) {
    std::ifstream in(*f.queries_file);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + *f.queries_file);
    for (std::string line; std::getline(in, line);) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) queries.push_back(line);
    }
  }
  if (queries.empty()) throw Error(ErrorCode::ConfigInvalid, "give --query or --queries");

  std::ostringstream body;
  for (const auto& q : queries) {
    const auto toks = text::tokenize(q);
    const auto hits = retrieval::top_k(retrieval::make_query(toks, idx, embedder), idx, spec.train.k);
    json row = {{"query", q}, {"hits", json::array()}};
    for (const auto& h : hits) {
      row["hits"].push_back({{"id", h.corpus_id}, {"score", h.score}, {"text", text::join(idx.sentences[h.corpus_id])}});
    }
    body << row.dump() << "\n";
  }
  write_text(out_path(spec, "retrieved.jsonl"), body.str());
  out << body.str();
  return kExitOk;
}

int cmd_prompts(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const auto data = load_task_data(spec);
  const auto& split = pick_split(data, f.split.value_or("source_train"));
  const std::size_t n = f.limit == 0 ? split.size() : std::min(f.limit, split.size());
  const std::span<const prompt::SourceInput> batch(split.data(), n);

  const auto vocab = train::build_vocabulary(data, spec.model_kind);
  std::optional<retrieval::RetrievalIndex> target, source;
  const auto policy = context_source(spec.variant);
  if (policy == ContextSource::TargetRetrieved || policy == ContextSource::TargetRandom) {
    target = retrieval::build_index(data.target_unlabeled, spec.train.embedder, spec.train.metric);
  } else if (policy == ContextSource::SourceRetrieved) {
    source = retrieval::build_index(source_tokens(data), spec.train.embedder, spec.train.metric);
  }
  std::vector<text::Tokens> queries;
  for (const auto& s : batch) queries.push_back(s.tokens);
  const train::Indices indices{target ? &*target : nullptr, source ? &*source : nullptr};
  const auto ctx = train::select_contexts(spec.variant, queries, indices, spec.train.k,
                                          derive_seed(spec.train.seed, 4), spec.train.cache_dir);
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;

  std::ostringstream body, rendered;
  auto record = [&](const std::string& text) {
    if (rendered.tellp() > 0) rendered << f.delimiter << "\n";
    rendered << text << "\n";
  };
  if (spec.model_kind == ModelKind::Encoder) {
    std::mt19937_64 rng(derive_seed(spec.train.seed, 2));
    for (const auto& inst : train::assemble_encoder_batch(spec.variant, batch, ids, ctx, vocab, spec.train, rng)) {
      body << prompt::encoder_instance_json(inst).dump() << "\n";
      record(text::join(vocab.decode(inst.ids)));
    }
  } else {
    for (const auto& inst : train::assemble_decoder_batch(spec.variant, spec.task, batch, ids, ctx, vocab, spec.train)) {
      json j = prompt::decoder_instance_json(inst);
      const auto mask = prompt::loss_mask_for_variant(inst, spec.variant);
      j["loss_mask"] = mask;
      body << j.dump() << "\n";
      record(inst.text);
    }
  }
  const auto path = out_path(spec, "prompts.jsonl");
  write_text(path, body.str());
  write_text(out_path(spec, "prompts.txt"), rendered.str());
  out << json({{"prompts", path.string()}, {"count", n}, {"variant", std::string(to_string(spec.variant))}}).dump()
      << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, const Flags&, std::ostream& out) {
  RunSpec spec = resolve(g);
  const auto data = load_task_data(spec);
  const auto res = train::train(spec.variant, spec.model_kind, data, spec.train);
  nn::save_checkpoint_file(out_path(spec, "model.ckpt").string(), res.checkpoint);
  std::ostringstream hist;
  train::write_history_jsonl(hist, res);
  write_text(out_path(spec, "history.jsonl"), hist.str());
  const json summary = {{"variant", std::string(to_string(spec.variant))},
                        {"model_kind", std::string(to_string(spec.model_kind))},
                        {"steps", res.steps.size()},
                        {"best_epoch", res.best_epoch},
                        {"best_dev", res.best_dev},
                        {"config", train::to_json(spec.train)}};
  write_text(out_path(spec, "train_summary.json"), dump(summary));
  out << json({{"checkpoint", out_path(spec, "model.ckpt").string()}, {"steps", res.steps.size()},
               {"best_epoch", res.best_epoch}})
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const auto data = load_task_data(spec);
  const std::string path = f.checkpoint.value_or((fs::path(spec.output_dir) / "model.ckpt").string());
  train::TrainResult trained;
  trained.checkpoint = nn::load_checkpoint_file(path);
  const auto& meta = trained.checkpoint.meta;
  if (!meta.contains("vocab")) throw Error(ErrorCode::CorruptCheckpoint, path + ": no vocabulary in metadata");
  trained.vocab = text::Vocabulary::from_json(meta.at("vocab"));
  Variant variant = spec.variant;
  if (!g.variant && meta.contains("variant")) variant = variant_from_string(meta.at("variant").get<std::string>());
  const ModelKind kind = trained.checkpoint.model.config.causal() ? ModelKind::Decoder : ModelKind::Encoder;
  const auto& split = pick_split(data, f.split.value_or("target_test"));
  const auto r = train::evaluate(trained, variant, kind, data, split, spec.train);

  json report = {{"checkpoint", path},
                 {"variant", std::string(to_string(variant))},
                 {"split", f.split.value_or("target_test")},
                 {"n", split.size()},
                 {"metric_name", spec.task == Task::Sa ? "accuracy" : "span_f1"},
                 {"metric", r.metric}};
  if (spec.task == Task::Sa) {
    report["predictions"] = r.predicted_classes;
  } else {
    json preds = json::array();
    for (const auto& s : r.predicted_spans) {
      json row = json::array();
      for (const auto& sp : s) row.push_back({sp.start, sp.end});
      preds.push_back(row);
    }
    report["predictions"] = preds;
  }
  write_text(out_path(spec, "eval.json"), dump(report));
  out << json({{"metric", r.metric}, {"n", split.size()}}).dump() << "\n";
  return kExitOk;
}

int cmd_matrix(const Globals& g, const Flags&, std::ostream& out, std::ostream& err) {
  RunSpec spec = resolve(g);
  std::vector<bench::Scenario> scenarios{{spec.scenario, load_task_data(spec)}};
  auto progress = [&](const bench::Cell& c) {
    err << to_string(c.variant) << " " << c.scenario << " seed=" << c.seed << " "
        << (c.failed ? "FAILED " + c.error : std::to_string(c.metric)) << "\n";
  };
  const auto m = bench::run_matrix(scenarios, spec.variants, spec.seeds, spec.model_kind, spec.train, progress);
  write_text(out_path(spec, "matrix.csv"), bench::render_csv(m));
  write_text(out_path(spec, "matrix.json"), dump(bench::render_json(m)));
  const auto table = bench::render_table(m);
  write_text(out_path(spec, "matrix.md"), table);
  out << table;
  for (const auto& c : m.cells()) {
    if (c.failed) return kExitRuntime;
  }
  return kExitOk;
}

int cmd_gradcheck(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  const auto cases = run_gradcheck_suite(spec.train.seed, f.eps);
  json report = json::array();
  bool ok = true;
  for (const auto& c : cases) {
    ok = ok && c.pass;
    out << (c.pass ? "PASS " : "FAIL ") << c.name << " max_rel_error=" << c.max_rel_error
        << " threshold=" << c.threshold << " coords=" << c.coords << "\n";
    report.push_back({{"name", c.name},
                      {"max_rel_error", c.max_rel_error},
                      {"threshold", c.threshold},
                      {"coords", c.coords},
                      {"worst", c.worst},
                      {"pass", c.pass}});
  }
  write_text(out_path(spec, "gradcheck.json"), dump(report));
  return ok ? kExitOk : kExitRuntime;
}

int cmd_synth(const Globals& g, const Flags&, std::ostream& out) {
  RunSpec spec = resolve(g);
  synth::SyntheticShiftSpec s = spec.synthetic.value_or(synth::SyntheticShiftSpec{});
  if (g.seed) s.seed = *g.seed;
  s.validate();
  const auto b = synth::gen_synthetic_shift(s);
  fs::create_directories(spec.output_dir);
  synth::write_benchmark(b, spec.output_dir);
  write_text(out_path(spec, "synth_spec.json"), dump(synth::to_json(s)));
  out << json({{"dir", spec.output_dir}, {"seed", s.seed}}).dump() << "\n";
  return kExitOk;
}

int cmd_infer(const Globals& g, const Flags& f, std::ostream& out) {
  RunSpec spec = resolve(g);
  if (f.mode) spec.inference.mode = prompt::demo_mode_from_string(*f.mode);
  if (f.concurrency) spec.inference.concurrency = std::max<std::size_t>(1, *f.concurrency);
  if (f.limit) spec.inference.limit = f.limit;
  const CompletionEndpoint ep = spec.endpoint.value_or(CompletionEndpoint{});
  const auto data = load_task_data(spec);
  const auto report = inference_eval(
      spec.task, spec.inference.mode, spec.inference.k, data,
      [&](const std::string& p) { return complete_remote(p, ep); }, spec.train, spec.inference.concurrency,
      spec.inference.limit);
  std::ostringstream trace;
  for (const auto& row : report.trace) trace << row.dump() << "\n";
  write_text(out_path(spec, "inference_trace.jsonl"), trace.str());
  write_text(out_path(spec, "inference_summary.json"), dump(report.summary));
  out << report.summary.dump() << "\n";
  return kExitOk;
}

bool is_validation(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidSpec:
    case ErrorCode::UnknownVariant:
      return true;
    default:
      return false;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-adaptive in-context learning toolkit", "daicl"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Globals g;
  Flags f;
  app.add_option("--config", g.config, "Run spec (JSON)");
  app.add_option("--seed", g.seed, "Override the seed list with a single seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--variant", g.variant, "NO_ICL, ICL_RAND, ICL_SOURCE, ICL_SUP, DAICL, ADAPTIVE_PRETRAIN");
  app.add_option("--k", g.k, "Contexts / demonstrations per input");
  app.add_option("--lambda", g.lambda, "Weight of the language-modelling loss");

  auto* ingest = app.add_subcommand("ingest", "Normalize a corpus file to JSONL and report counts");
  ingest->add_option("--input", f.input, "CoNLL file or review JSONL")->required();
  ingest->add_option("--format", f.format, "conll | reviews | sentiment")->capture_default_str();
  ingest->add_option("--name", f.name, "Artifact base name (default: input stem)");

  auto* index = app.add_subcommand("index", "Build a retrieval index over target or source sentences");
  index->add_option("--corpus", f.corpus, "target | source")->capture_default_str();
  index->add_option("--index", f.index, "Index path (default: OUT/index-CORPUS.bin)");

  auto* retrieve = app.add_subcommand("retrieve", "Top-k neighbours for queries from a saved index");
  retrieve->add_option("--corpus", f.corpus, "Index to read when --index is not given")->capture_default_str();
  retrieve->add_option("--index", f.index, "Index path");
  retrieve->add_option("--query", f.queries, "Query text (repeatable)");
  retrieve->add_option("--queries", f.queries_file, "File with one query per line");

  auto* prompts = app.add_subcommand("prompts", "Render training instances for the variant as JSONL");
  prompts->add_option("--split", f.split, "source_train | source_dev | target_test");
  prompts->add_option("--limit", f.limit, "Number of examples (0 = all)");
  prompts->add_option("--delimiter", f.delimiter, "Line separating rendered prompts")->capture_default_str();

  auto* trn = app.add_subcommand("train", "Train one variant; writes model.ckpt and history.jsonl");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes eval.json");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint (default: OUT/model.ckpt)");
  eval->add_option("--split", f.split, "source_dev | target_test");

  auto* matrix = app.add_subcommand("matrix", "Variants x seeds; writes matrix.csv, matrix.json, matrix.md");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--eps", f.eps, "Central-difference step")->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic domain-shift benchmark");

  auto* infer = app.add_subcommand("infer", "Few-shot inference against a completion endpoint");
  infer->add_option("--mode", f.mode, "none | random | retrieved");
  infer->add_option("--concurrency", f.concurrency, "Parallel requests");
  infer->add_option("--limit", f.limit, "Number of test examples (0 = all)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(g, f, out);
    if (index->parsed()) return cmd_index(g, f, out);
    if (retrieve->parsed()) return cmd_retrieve(g, f, out);
    if (prompts->parsed()) return cmd_prompts(g, f, out);
    if (trn->parsed()) return cmd_train(g, f, out);
    if (eval->parsed()) return cmd_eval(g, f, out);
    if (matrix->parsed()) return cmd_matrix(g, f, out, err);
    if (gradcheck->parsed()) return cmd_gradcheck(g, f, out);
    if (synth_cmd->parsed()) return cmd_synth(g, f, out);
    if (infer->parsed()) return cmd_infer(g, f, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_validation(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace daicl::cli
