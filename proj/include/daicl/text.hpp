#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace daicl::text {

using Tokens = std::vector<std::string>;

// Lowercase, split on whitespace, every ASCII punctuation char is its own token.
Tokens tokenize(std::string_view text);

std::string lowercase(std::string_view s);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kMask = 2;
inline constexpr int kSep = 3;
inline constexpr int kBos = 4;
inline constexpr int kEos = 5;
inline constexpr int kNumReserved = 6;

// Case-insensitive token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  Vocabulary();

  // Non-reserved ids are assigned in lexicographic order of the lowercased forms.
  static Vocabulary build(std::span<const Tokens> corpus, std::span<const Tokens> extra = {});

  int add(std::string_view token);
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  Tokens decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace daicl::text
