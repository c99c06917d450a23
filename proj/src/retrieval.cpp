#include "daicl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <set>

#include <json.hpp>

#include "daicl/common.hpp"

namespace daicl::retrieval {

namespace {

constexpr char kIndexMagic[8] = {'D', 'A', 'I', 'C', 'L', 'I', 'D', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
constexpr double kNormTolerance = 1e-9;

bool better(const ScoredHit& a, const ScoredHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.corpus_id < b.corpus_id;
}

void normalize_rows(RowMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) {
      m.row(r) /= n;
    } else {
      m.row(r).setZero();
      m(r, 0) = 1.0;
    }
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::CorruptIndex, "truncated index file");
  return v;
}

void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw Error(ErrorCode::CorruptIndex, "truncated index payload");
}

void check_unit(double norm, const std::string& where) {
  if (std::abs(norm - 1.0) > kNormTolerance) {
    throw Error(ErrorCode::CorruptIndex, where + " has norm " + std::to_string(norm));
  }
}

}  // namespace

std::string to_string(Metric m) { return m == Metric::Cosine ? "cosine" : "token_match"; }

Metric metric_from_string(const std::string& s) {
  if (s == "cosine") return Metric::Cosine;
  if (s == "token_match") return Metric::TokenMatch;
  throw Error(ErrorCode::InvalidSpec, "unknown metric '" + s + "'");
}

std::string to_string(EmbedderKind k) {
  return k == EmbedderKind::NgramProjection ? "ngram_projection" : "model_encoder";
}

EmbedderKind embedder_kind_from_string(const std::string& s) {
  if (s == "ngram_projection") return EmbedderKind::NgramProjection;
  if (s == "model_encoder") return EmbedderKind::ModelEncoder;
  throw Error(ErrorCode::InvalidSpec, "unknown embedder kind '" + s + "'");
}

void validate(const EmbedderSpec& spec) {
  if (spec.dim < 8) throw Error(ErrorCode::InvalidSpec, "embedder dim must be >= 8");
}

Embedder::Embedder(EmbedderSpec spec, TokenEncoderFn encoder)
    : spec_(spec), hash_basis_(0), encoder_(std::move(encoder)) {
  validate(spec_);
  if (spec_.kind == EmbedderKind::ModelEncoder && !encoder_) {
    throw Error(ErrorCode::InvalidSpec, "model_encoder embedder needs an encoder");
  }
  const auto d = static_cast<Eigen::Index>(spec_.dim);
  projection_.resize(d, d);
  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) projection_(r, c) = normal(rng);
  hash_basis_ = fnv1a("trigram-basis") ^ mix_seed(spec_.seed);
}

void Embedder::add_trigrams(std::string_view token, Vector& counts) const {
  std::string padded = "^" + text::lowercase(token) + "$";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const auto h = fnv1a(std::string_view(padded).substr(i, 3), hash_basis_);
    counts[static_cast<Eigen::Index>(h % spec_.dim)] += 1.0;
  }
}

Vector Embedder::project_counts(const Vector& counts, bool* fallback) const {
  Vector v = projection_ * counts;
  const double n = v.norm();
  if (fallback) *fallback = !(n > 0.0);
  if (!(n > 0.0)) {
    Vector e0 = Vector::Zero(static_cast<Eigen::Index>(spec_.dim));
    e0[0] = 1.0;
    return e0;
  }
  return v / n;
}

Vector Embedder::embed_tokens(const Tokens& tokens, bool* fallback) const {
  if (spec_.kind == EmbedderKind::ModelEncoder) {
    if (tokens.empty()) return project_counts(Vector::Zero(projection_.rows()), fallback);
    RowMatrix rows = embed_token_rows(tokens);
    Vector mean = rows.colwise().mean().transpose();
    const double n = mean.norm();
    if (fallback) *fallback = !(n > 0.0);
    if (!(n > 0.0)) return project_counts(Vector::Zero(projection_.rows()), nullptr);
    return mean / n;
  }
  Vector counts = Vector::Zero(static_cast<Eigen::Index>(spec_.dim));
  for (const auto& t : tokens) add_trigrams(t, counts);
  return project_counts(counts, fallback);
}

Vector Embedder::embed_sentence(std::string_view text, bool* fallback) const {
  return embed_tokens(text::tokenize(text), fallback);
}

RowMatrix Embedder::embed_token_rows(const Tokens& tokens) const {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  RowMatrix rows;
  if (spec_.kind == EmbedderKind::ModelEncoder) {
    rows = encoder_(tokens);
    if (rows.rows() != n || rows.cols() != static_cast<Eigen::Index>(spec_.dim)) {
      throw Error(ErrorCode::DimensionMismatch, "encoder output shape does not match spec");
    }
    normalize_rows(rows);
    return rows;
  }
  rows.resize(n, static_cast<Eigen::Index>(spec_.dim));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector counts = Vector::Zero(static_cast<Eigen::Index>(spec_.dim));
    add_trigrams(tokens[static_cast<std::size_t>(i)], counts);
    rows.row(i) = project_counts(counts, nullptr).transpose();
  }
  return rows;
}

Vector embed_sentence(std::string_view text, const EmbedderSpec& spec, bool* fallback) {
  return Embedder(spec).embed_sentence(text, fallback);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorCode::ZeroNorm, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

double cosine(const Vector& u, const Vector& v) {
  return cosine(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
                std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

double IdfTable::operator()(const std::string& token) const {
  auto it = values_.find(text::lowercase(token));
  return it == values_.end() ? unseen() : it->second;
}

double IdfTable::unseen() const { return std::log(static_cast<double>(num_docs_) + 1.0); }

IdfTable idf_table(std::span<const Tokens> corpus) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "idf over an empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& sentence : corpus) {
    std::set<std::string> seen;
    for (const auto& t : sentence) seen.insert(text::lowercase(t));
    for (const auto& t : seen) ++df[t];
  }
  const double n1 = static_cast<double>(corpus.size()) + 1.0;
  std::map<std::string, double> values;
  for (const auto& [t, count] : df) values[t] = std::log(n1 / (static_cast<double>(count) + 1.0));
  return IdfTable(std::move(values), corpus.size());
}

MatchScore token_match_score(const RowMatrix& cand, std::span<const double> cand_weights,
                             const RowMatrix& ref, std::span<const double> ref_weights,
                             const MatchOptions& options) {
  if (cand.rows() == 0 || ref.rows() == 0) {
    throw Error(ErrorCode::EmptySequence, "token match over an empty sequence");
  }
  if (cand.cols() != ref.cols()) throw Error(ErrorCode::DimensionMismatch, "token vector width");
  if (cand_weights.size() != static_cast<std::size_t>(cand.rows()) ||
      ref_weights.size() != static_cast<std::size_t>(ref.rows())) {
    throw Error(ErrorCode::DimensionMismatch, "weights do not match token count");
  }
  const RowMatrix sim = cand * ref.transpose();

  // Zero total weight (every token in every document) falls back to uniform weights.
  auto weighted = [&](std::span<const double> w, auto&& best, Eigen::Index n) {
    double num = 0.0, den = 0.0;
    if (options.use_idf) {
      for (Eigen::Index i = 0; i < n; ++i) {
        num += w[static_cast<std::size_t>(i)] * best(i);
        den += w[static_cast<std::size_t>(i)];
      }
    }
    if (!options.use_idf || den <= 0.0) {
      num = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) num += best(i);
      den = static_cast<double>(n);
    }
    return num / den;
  };

  MatchScore s;
  s.precision = weighted(cand_weights, [&](Eigen::Index i) { return sim.row(i).maxCoeff(); },
                         cand.rows());
  s.recall = weighted(ref_weights, [&](Eigen::Index j) { return sim.col(j).maxCoeff(); },
                      ref.rows());
  if (options.rescale_baseline) {
    const double b = *options.rescale_baseline;
    s.precision = (s.precision - b) / (1.0 - b);
    s.recall = (s.recall - b) / (1.0 - b);
  }
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

void RetrievalIndex::refresh_weights() {
  tok_weights.assign(sentences.size(), {});
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    tok_weights[i].reserve(sentences[i].size());
    for (const auto& t : sentences[i]) tok_weights[i].push_back(idf(t));
  }
}

RetrievalIndex build_index(std::span<const Tokens> corpus, const EmbedderSpec& spec, Metric metric,
                           TokenEncoderFn encoder) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "index over an empty corpus");
  Embedder embedder(spec, std::move(encoder));
  RetrievalIndex index;
  index.spec = spec;
  index.metric = metric;
  index.sentences.assign(corpus.begin(), corpus.end());
  index.idf = idf_table(corpus);
  index.sent_emb.reserve(corpus.size());
  index.tok_emb.reserve(corpus.size());
  for (const auto& sentence : corpus) {
    index.sent_emb.push_back(embedder.embed_tokens(sentence));
    index.tok_emb.push_back(embedder.embed_token_rows(sentence));
  }
  index.refresh_weights();
  return index;
}

Query make_query(const Tokens& query, const RetrievalIndex& index, const Embedder& embedder) {
  Query q;
  q.sent = embedder.embed_tokens(query);
  if (index.metric == Metric::TokenMatch) {
    q.tokens = embedder.embed_token_rows(query);
    q.weights.reserve(query.size());
    for (const auto& t : query) q.weights.push_back(index.idf(t));
  }
  return q;
}

double score_item(const Query& q, const RetrievalIndex& index, std::size_t id) {
  if (index.metric == Metric::Cosine) return q.sent.dot(index.sent_emb[id]);
  const auto& cand = index.tok_emb[id];
  if (cand.rows() == 0 || q.tokens.rows() == 0) return 0.0;
  return token_match_score(cand, index.tok_weights[id], q.tokens, q.weights, index.match).f1;
}

std::vector<double> score_all(const Query& q, const RetrievalIndex& index) {
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) scores[i] = score_item(q, index, i);
  return scores;
}

std::vector<ScoredHit> top_k(const Query& q, const RetrievalIndex& index, std::size_t k,
                             const Exclude& exclude) {
  if (index.size() == 0) throw Error(ErrorCode::EmptyIndex, "top_k over an empty index");
  if (k == 0) throw Error(ErrorCode::OutOfRange, "k must be >= 1");
  // Worst retained hit on top.
  auto cmp = [](const ScoredHit& a, const ScoredHit& b) { return better(a, b); };
  std::priority_queue<ScoredHit, std::vector<ScoredHit>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude && exclude(i)) continue;
    ScoredHit hit{i, score_item(q, index, i)};
    if (heap.size() < k) {
      heap.push(hit);
    } else if (better(hit, heap.top())) {
      heap.pop();
      heap.push(hit);
    }
  }
  std::vector<ScoredHit> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<ScoredHit> top_k(const Tokens& query, const RetrievalIndex& index, std::size_t k,
                             const Exclude& exclude) {
  if (index.size() == 0) throw Error(ErrorCode::EmptyIndex, "top_k over an empty index");
  Embedder embedder(index.spec);
  return top_k(make_query(query, index, embedder), index, k, exclude);
}

std::vector<std::size_t> random_k(std::size_t index_size, std::size_t k, std::uint64_t seed) {
  if (k > index_size) {
    throw Error(ErrorCode::KTooLarge,
                "k=" + std::to_string(k) + " exceeds index size " + std::to_string(index_size));
  }
  std::vector<std::size_t> ids(index_size);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, index_size - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

void save_index(const RetrievalIndex& index, std::ostream& out) {
  nlohmann::json header;
  header["dim"] = index.spec.dim;
  header["seed"] = index.spec.seed;
  header["kind"] = to_string(index.spec.kind);
  header["metric"] = to_string(index.metric);
  header["count"] = index.size();
  header["use_idf"] = index.match.use_idf;
  header["rescale_baseline"] =
      index.match.rescale_baseline ? nlohmann::json(*index.match.rescale_baseline) : nlohmann::json();
  header["sentences"] = index.sentences;
  header["idf"] = index.idf.values();
  header["idf_docs"] = index.idf.num_docs();
  const std::string h = header.dump();

  out.write(kIndexMagic, sizeof(kIndexMagic));
  write_pod(out, kIndexVersion);
  write_pod(out, static_cast<std::uint64_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& v : index.sent_emb) write_doubles(out, v.data(), static_cast<std::size_t>(v.size()));
  for (const auto& m : index.tok_emb) write_doubles(out, m.data(), static_cast<std::size_t>(m.size()));
}

RetrievalIndex load_index(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kIndexMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::CorruptIndex, "bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kIndexVersion) {
    throw Error(ErrorCode::CorruptIndex, "unsupported version");
  }
  const auto hlen = read_pod<std::uint64_t>(in);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw Error(ErrorCode::CorruptIndex, "truncated header");

  RetrievalIndex index;
  try {
    auto header = nlohmann::json::parse(h);
    index.spec.dim = header.at("dim").get<std::size_t>();
    index.spec.seed = header.at("seed").get<std::uint64_t>();
    index.spec.kind = embedder_kind_from_string(header.at("kind").get<std::string>());
    index.metric = metric_from_string(header.at("metric").get<std::string>());
    index.match.use_idf = header.at("use_idf").get<bool>();
    if (!header.at("rescale_baseline").is_null()) {
      index.match.rescale_baseline = header["rescale_baseline"].get<double>();
    }
    index.sentences = header.at("sentences").get<std::vector<Tokens>>();
    index.idf = IdfTable(header.at("idf").get<std::map<std::string, double>>(),
                         header.at("idf_docs").get<std::size_t>());
    if (header.at("count").get<std::size_t>() != index.sentences.size()) {
      throw Error(ErrorCode::CorruptIndex, "count does not match sentences");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptIndex, e.what());
  }
  validate(index.spec);

  const auto d = static_cast<Eigen::Index>(index.spec.dim);
  index.sent_emb.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    index.sent_emb[i].resize(d);
    read_doubles(in, index.sent_emb[i].data(), index.spec.dim);
    check_unit(index.sent_emb[i].norm(), "sentence " + std::to_string(i));
  }
  index.tok_emb.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto& m = index.tok_emb[i];
    m.resize(static_cast<Eigen::Index>(index.sentences[i].size()), d);
    read_doubles(in, m.data(), static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      check_unit(m.row(r).norm(), "token " + std::to_string(r) + " of sentence " + std::to_string(i));
    }
  }
  index.refresh_weights();
  return index;
}

void save_index_file(const RetrievalIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  save_index(index, out);
}

RetrievalIndex load_index_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return load_index(in);
}

}  // namespace daicl::retrieval
