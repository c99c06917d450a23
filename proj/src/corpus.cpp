#include "daicl/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "daicl/common.hpp"
#include "daicl/text.hpp"

namespace daicl::corpus {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> cols;
  std::istringstream ss(line);
  std::string col;
  while (ss >> col) cols.push_back(col);
  return cols;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return in;
}

}  // namespace

std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::Negative: return "negative";
    case Sentiment::Neutral: return "neutral";
    case Sentiment::Positive: return "positive";
  }
  return "neutral";
}

Sentiment sentiment_from_string(std::string_view s) {
  if (s == "negative") return Sentiment::Negative;
  if (s == "neutral") return Sentiment::Neutral;
  if (s == "positive") return Sentiment::Positive;
  throw Error(ErrorCode::MalformedRecord, "unknown sentiment label '" + std::string(s) + "'");
}

bool is_valid_tag(std::string_view tag) {
  if (tag == "O" || tag == "B" || tag == "I") return true;
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return true;
  return false;
}

std::vector<TaggedSentence> parse_conll(std::istream& in, ParseReport* report) {
  std::vector<TaggedSentence> out;
  ParseReport local;
  TaggedSentence current;
  std::string line;
  std::size_t line_no = 0;

  auto flush = [&] {
    if (!current.tokens.empty()) {
      local.tokens += current.tokens.size();
      out.push_back(std::move(current));
      current = {};
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) {
      flush();
      continue;
    }
    auto cols = split_ws(line);
    if (cols.front().starts_with("-DOCSTART-")) {
      ++local.docstart_dropped;
      continue;
    }
    if (cols.size() < 2) {
      throw Error(ErrorCode::MalformedLine,
                  "line " + std::to_string(line_no) + ": expected >= 2 columns");
    }
    const std::string& tag = cols.back();
    if (!is_valid_tag(tag)) {
      throw Error(ErrorCode::UnknownTag, "line " + std::to_string(line_no) + ": '" + tag + "'");
    }
    current.tokens.push_back(cols.front());
    current.tags.push_back(tag);
  }
  flush();
  local.sentences = out.size();
  if (report) *report = local;
  return out;
}

std::vector<TaggedSentence> parse_conll_file(const std::string& path, ParseReport* report) {
  auto in = open_or_throw(path);
  return parse_conll(in, report);
}

std::vector<std::string> strip_types(std::span<const std::string> tags) {
  std::vector<std::string> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.emplace_back(t.substr(0, 1));
  return out;
}

Sentiment rating_to_label(int stars) {
  if (stars < 1 || stars > 5) {
    throw Error(ErrorCode::OutOfRange, "stars must be in [1,5], got " + std::to_string(stars));
  }
  if (stars < 3) return Sentiment::Negative;
  if (stars == 3) return Sentiment::Neutral;
  return Sentiment::Positive;
}

SpanSet tags_to_spans(std::span<const std::string> tags) {
  SpanSet spans;
  std::size_t start = 0;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const char c = tags[i].empty() ? 'O' : tags[i][0];
    if (c == 'B' || (c == 'I' && !open)) {
      if (open) spans.insert({start, i});
      start = i;
      open = true;
    } else if (c != 'I') {
      if (open) spans.insert({start, i});
      open = false;
    }
  }
  if (open) spans.insert({start, tags.size()});
  return spans;
}

std::vector<std::string> spans_to_tags(const SpanSet& spans, std::size_t n) {
  std::vector<std::string> tags(n, "O");
  std::size_t prev_end = 0;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > n) {
      throw Error(ErrorCode::SpanOutOfBounds, "span [" + std::to_string(s.start) + "," +
                                                  std::to_string(s.end) + ") outside length " +
                                                  std::to_string(n));
    }
    if (s.start < prev_end) {
      throw Error(ErrorCode::OverlappingSpans, "span starting at " + std::to_string(s.start));
    }
    tags[s.start] = "B";
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = "I";
    prev_end = s.end;
  }
  return tags;
}

int bio_to_id(std::string_view tag) {
  switch (tag.empty() ? 'O' : tag[0]) {
    case 'B': return kTagB;
    case 'I': return kTagI;
    case 'O': return kTagO;
    default: throw Error(ErrorCode::UnknownTag, std::string(tag));
  }
}

std::string_view id_to_bio(int id) {
  switch (id) {
    case kTagB: return "B";
    case kTagI: return "I";
    case kTagO: return "O";
    default: throw Error(ErrorCode::BadTag, std::to_string(id));
  }
}

std::vector<SentimentExample> parse_reviews(std::istream& in) {
  std::vector<SentimentExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("stars") ||
        !j["stars"].is_number_integer()) {
      throw Error(ErrorCode::MalformedRecord,
                  "line " + std::to_string(line_no) + ": need string 'text' and integer 'stars'");
    }
    SentimentExample ex;
    ex.text = j["text"].get<std::string>();
    ex.stars = j["stars"].get<int>();
    ex.label = rating_to_label(*ex.stars);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SentimentExample> parse_reviews_file(const std::string& path) {
  auto in = open_or_throw(path);
  return parse_reviews(in);
}

void write_tagged_jsonl(std::ostream& out, std::span<const TaggedSentence> sentences) {
  for (const auto& s : sentences) {
    nlohmann::json j;
    j["tokens"] = s.tokens;
    j["tags"] = s.tags;
    out << j.dump() << '\n';
  }
}

void write_sentiment_jsonl(std::ostream& out, std::span<const SentimentExample> examples) {
  for (const auto& e : examples) {
    nlohmann::json j;
    j["text"] = e.text;
    j["label"] = std::string(to_string(e.label));
    out << j.dump() << '\n';
  }
}

std::vector<TaggedSentence> read_tagged_jsonl(std::istream& in) {
  std::vector<TaggedSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TaggedSentence s;
      s.tokens = j.at("tokens").get<Tokens>();
      s.tags = j.at("tags").get<std::vector<std::string>>();
      if (s.tokens.size() != s.tags.size()) {
        throw Error(ErrorCode::MalformedRecord,
                    "line " + std::to_string(line_no) + ": tokens/tags length differ");
      }
      for (const auto& t : s.tags) {
        if (!is_valid_tag(t)) {
          throw Error(ErrorCode::UnknownTag, "line " + std::to_string(line_no) + ": '" + t + "'");
        }
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SentimentExample> read_sentiment_jsonl(std::istream& in) {
  std::vector<SentimentExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SentimentExample e;
      e.text = j.at("text").get<std::string>();
      if (j.contains("stars")) {
        e.stars = j["stars"].get<int>();
        e.label = rating_to_label(*e.stars);
      }
      if (j.contains("label")) {
        const auto label = sentiment_from_string(j["label"].get<std::string>());
        if (e.stars && label != e.label) {
          throw Error(ErrorCode::MalformedRecord,
                      "line " + std::to_string(line_no) + ": label disagrees with stars");
        }
        e.label = label;
      } else if (!e.stars) {
        throw Error(ErrorCode::MalformedRecord,
                    "line " + std::to_string(line_no) + ": need 'label' or 'stars'");
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

DomainCorpus as_unlabeled_target(const DomainCorpus& labeled) {
  DomainCorpus target;
  target.name = labeled.name;
  target.split = labeled.split;
  target.unlabeled = labeled.unlabeled;
  for (const auto& s : labeled.tagged) target.unlabeled.push_back(s.tokens);
  for (const auto& r : labeled.reviews) target.unlabeled.push_back(text::tokenize(r.text));
  return target;
}

}  // namespace daicl::corpus
