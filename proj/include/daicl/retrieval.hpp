#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "daicl/text.hpp"

namespace daicl::retrieval {

using text::Tokens;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class EmbedderKind { NgramProjection, ModelEncoder };
enum class Metric { Cosine, TokenMatch };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);
std::string to_string(EmbedderKind k);
EmbedderKind embedder_kind_from_string(const std::string& s);

struct EmbedderSpec {
  std::size_t dim = 256;
  std::uint64_t seed = 0;
  EmbedderKind kind = EmbedderKind::NgramProjection;
};

void validate(const EmbedderSpec& spec);

// Contextual token vectors for the model-encoder embedder: one row per token.
using TokenEncoderFn = std::function<RowMatrix(const Tokens&)>;

// Character-trigram hashing (per token, with ^/$ boundary marks) into `dim` buckets,
// followed by a seeded dim x dim Gaussian projection and L2 normalization.
class Embedder {
 public:
  explicit Embedder(EmbedderSpec spec, TokenEncoderFn encoder = {});

  const EmbedderSpec& spec() const { return spec_; }

  // Returns e_0 and sets *fallback when the text has no trigram content.
  Vector embed_sentence(std::string_view text, bool* fallback = nullptr) const;
  Vector embed_tokens(const Tokens& tokens, bool* fallback = nullptr) const;
  // One unit-norm row per token.
  RowMatrix embed_token_rows(const Tokens& tokens) const;

 private:
  Vector project_counts(const Vector& counts, bool* fallback) const;
  void add_trigrams(std::string_view token, Vector& counts) const;

  EmbedderSpec spec_;
  RowMatrix projection_;
  std::uint64_t hash_basis_;
  TokenEncoderFn encoder_;
};

Vector embed_sentence(std::string_view text, const EmbedderSpec& spec, bool* fallback = nullptr);

double cosine(std::span<const double> u, std::span<const double> v);
double cosine(const Vector& u, const Vector& v);

class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::map<std::string, double> values, std::size_t num_docs)
      : values_(std::move(values)), num_docs_(num_docs) {}

  double operator()(const std::string& token) const;
  double unseen() const;
  std::size_t num_docs() const { return num_docs_; }
  const std::map<std::string, double>& values() const { return values_; }

  bool operator==(const IdfTable&) const = default;

 private:
  std::map<std::string, double> values_;
  std::size_t num_docs_ = 0;
};

// idf(t) = ln((N+1)/(df(t)+1)); keys are lowercased.
IdfTable idf_table(std::span<const Tokens> corpus);

struct MatchScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MatchOptions {
  bool use_idf = true;
  std::optional<double> rescale_baseline;
};

// Greedy max-cosine matching; rows must be unit norm, weights are per-row idf.
MatchScore token_match_score(const RowMatrix& cand, std::span<const double> cand_weights,
                             const RowMatrix& ref, std::span<const double> ref_weights,
                             const MatchOptions& options = {});

struct ScoredHit {
  std::size_t corpus_id = 0;
  double score = 0.0;
  bool operator==(const ScoredHit&) const = default;
};

struct RetrievalIndex {
  EmbedderSpec spec;
  Metric metric = Metric::Cosine;
  MatchOptions match;
  std::vector<Tokens> sentences;
  std::vector<Vector> sent_emb;
  std::vector<RowMatrix> tok_emb;
  IdfTable idf;
  // Derived from `idf`; not serialized.
  std::vector<std::vector<double>> tok_weights;

  std::size_t size() const { return sentences.size(); }
  void refresh_weights();
};

RetrievalIndex build_index(std::span<const Tokens> corpus, const EmbedderSpec& spec, Metric metric,
                           TokenEncoderFn encoder = {});

// Query-side representation, reusable across scoring calls.
struct Query {
  Vector sent;
  RowMatrix tokens;
  std::vector<double> weights;
};

Query make_query(const Tokens& query, const RetrievalIndex& index, const Embedder& embedder);

double score_item(const Query& q, const RetrievalIndex& index, std::size_t id);
std::vector<double> score_all(const Query& q, const RetrievalIndex& index);

using Exclude = std::function<bool(std::size_t)>;

// Exact scan; sorted by (score desc, corpus_id asc).
std::vector<ScoredHit> top_k(const Query& q, const RetrievalIndex& index, std::size_t k,
                             const Exclude& exclude = {});
std::vector<ScoredHit> top_k(const Tokens& query, const RetrievalIndex& index, std::size_t k,
                             const Exclude& exclude = {});

// k distinct ids drawn uniformly without replacement.
std::vector<std::size_t> random_k(std::size_t index_size, std::size_t k, std::uint64_t seed);

void save_index(const RetrievalIndex& index, std::ostream& out);
RetrievalIndex load_index(std::istream& in);
void save_index_file(const RetrievalIndex& index, const std::string& path);
RetrievalIndex load_index_file(const std::string& path);

}  // namespace daicl::retrieval
