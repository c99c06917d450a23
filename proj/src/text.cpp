#include "daicl/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "daicl/common.hpp"

namespace daicl::text {

namespace {

const char* const kReservedTokens[kNumReserved] = {"[PAD]", "[UNK]", "[MASK]",
                                                   "[SEP]", "[BOS]", "[EOS]"};

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }

}  // namespace

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 128) ch = static_cast<char>(std::tolower(c));
  }
  return out;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumReserved; ++i) {
    tokens_.emplace_back(kReservedTokens[i]);
    ids_.emplace(kReservedTokens[i], i);
  }
}

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, std::span<const Tokens> extra) {
  std::set<std::string> forms;
  for (const auto& seq : corpus)
    for (const auto& t : seq) forms.insert(lowercase(t));
  for (const auto& seq : extra)
    for (const auto& t : seq) forms.insert(lowercase(t));
  Vocabulary v;
  for (const auto& f : forms) v.add(f);
  return v;
}

int Vocabulary::add(std::string_view token) {
  auto form = lowercase(token);
  if (auto it = ids_.find(form); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(form);
  ids_.emplace(std::move(form), id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(lowercase(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.contains(lowercase(token));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::OutOfRange, "token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(std::span<const int> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"tokens", std::vector<std::string>(tokens_.begin() + kNumReserved,
                                                            tokens_.end())}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  for (const auto& t : j.at("tokens")) v.add(t.get<std::string>());
  return v;
}

}  // namespace daicl::text
