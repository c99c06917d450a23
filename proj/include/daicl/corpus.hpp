#pragma once

#include <compare>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace daicl::corpus {

using Tokens = std::vector<std::string>;

struct TaggedSentence {
  Tokens tokens;
  std::vector<std::string> tags;
};

enum class Sentiment { Negative = 0, Neutral = 1, Positive = 2 };

std::string_view to_string(Sentiment s);
Sentiment sentiment_from_string(std::string_view s);

struct SentimentExample {
  std::string text;
  std::optional<int> stars;
  Sentiment label = Sentiment::Neutral;
};

struct EntitySpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  auto operator<=>(const EntitySpan&) const = default;
};

using SpanSet = std::set<EntitySpan>;

enum class Split { Train, Dev, Test };

// A corpus acting as the target-domain datastore keeps `unlabeled` only.
struct DomainCorpus {
  std::string name;
  Split split = Split::Train;
  std::vector<TaggedSentence> tagged;
  std::vector<SentimentExample> reviews;
  std::vector<Tokens> unlabeled;
};

struct ParseReport {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t docstart_dropped = 0;
};

// Blank-line separated blocks; last whitespace column is the tag.
// Lines whose first column starts with -DOCSTART- are dropped and counted.
std::vector<TaggedSentence> parse_conll(std::istream& in, ParseReport* report = nullptr);
std::vector<TaggedSentence> parse_conll_file(const std::string& path, ParseReport* report = nullptr);

bool is_valid_tag(std::string_view tag);

// B-X -> B, I-X -> I, O -> O.
std::vector<std::string> strip_types(std::span<const std::string> tags);

Sentiment rating_to_label(int stars);

// A stray I (not preceded by B or I) opens a new chunk.
SpanSet tags_to_spans(std::span<const std::string> tags);
std::vector<std::string> spans_to_tags(const SpanSet& spans, std::size_t n);

// Tag ids used by the emission/CRF head.
inline constexpr int kTagO = 0;
inline constexpr int kTagB = 1;
inline constexpr int kTagI = 2;
inline constexpr int kNumBioTags = 3;

int bio_to_id(std::string_view tag);
std::string_view id_to_bio(int id);

// JSON lines {"text": ..., "stars": n}; label derived from stars.
std::vector<SentimentExample> parse_reviews(std::istream& in);
std::vector<SentimentExample> parse_reviews_file(const std::string& path);

// Normalized dumps: {"tokens": [...], "tags": [...]} / {"text": ..., "label": ...}.
void write_tagged_jsonl(std::ostream& out, std::span<const TaggedSentence> sentences);
void write_sentiment_jsonl(std::ostream& out, std::span<const SentimentExample> examples);
std::vector<TaggedSentence> read_tagged_jsonl(std::istream& in);
std::vector<SentimentExample> read_sentiment_jsonl(std::istream& in);

// Drops labels from a labeled corpus to form the target datastore.
DomainCorpus as_unlabeled_target(const DomainCorpus& labeled);

}  // namespace daicl::corpus
