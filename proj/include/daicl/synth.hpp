#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "daicl/corpus.hpp"

namespace daicl::synth {

// Sentences mix shared topic words, shared filler words and domain-specific polarity
// words. Each sentence belongs to a latent situation (a fixed topic set with a preferred
// polarity), so retrieving by topic overlap surfaces same-polarity sentences.
struct SyntheticShiftSpec {
  std::size_t topic_vocab = 150;
  std::size_t filler_vocab = 20;
  std::size_t polarity_per_class = 10;  // per domain
  std::size_t num_classes = 3;
  std::size_t num_situations = 60;
  std::size_t topics_per_situation = 5;
  std::size_t topics_per_sentence = 3;
  std::size_t polarity_per_sentence = 2;
  std::size_t min_len = 6;
  std::size_t max_len = 10;
  double situation_consistency = 0.7;  // P(sentence polarity = situation polarity)
  double label_noise = 0.05;
  std::size_t source_train = 2000;
  std::size_t source_dev = 200;
  std::size_t target_unlabeled = 2000;
  std::size_t target_test = 500;
  std::uint64_t seed = 0;

  void validate() const;  // InvalidSpec
};

nlohmann::json to_json(const SyntheticShiftSpec& s);
SyntheticShiftSpec synth_spec_from_json(const nlohmann::json& j);

struct Lexicon {
  std::vector<std::string> topics;
  std::vector<std::string> fillers;
  std::vector<std::vector<std::string>> source_polarity;  // [class][word]
  std::vector<std::vector<std::string>> target_polarity;
};

struct ShiftBenchmark {
  Lexicon lexicon;
  std::vector<corpus::SentimentExample> source_train;
  std::vector<corpus::SentimentExample> source_dev;
  std::vector<corpus::Tokens> target_unlabeled;
  std::vector<corpus::SentimentExample> target_test;
};

ShiftBenchmark gen_synthetic_shift(const SyntheticShiftSpec& spec);

// Writes source_train.jsonl, source_dev.jsonl, target_unlabeled.txt, target_test.jsonl
// and lexicon.json into dir.
void write_benchmark(const ShiftBenchmark& b, const std::string& dir);
ShiftBenchmark read_benchmark(const std::string& dir);

}  // namespace daicl::synth
