#include "daicl/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "daicl/common.hpp"
#include "daicl/text.hpp"

namespace daicl::synth {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

class WordMaker {
 public:
  explicit WordMaker(std::uint64_t seed) : rng_(seed) {}

  std::string next() {
    for (;;) {
      std::uniform_int_distribution<int> syl(2, 3);
      std::uniform_int_distribution<std::size_t> c(0, kConsonants.size() - 1), v(0, kVowels.size() - 1);
      std::string w;
      for (int i = syl(rng_); i > 0; --i) {
        w += kConsonants[c(rng_)];
        w += kVowels[v(rng_)];
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> many(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

struct Situation {
  std::vector<std::size_t> topics;
  int polarity = 0;
};

template <class T>
std::vector<T> sample_distinct(const std::vector<T>& pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  std::vector<T> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
  return out;
}

struct Generator {
  const SyntheticShiftSpec& spec;
  const Lexicon& lex;
  const std::vector<Situation>& situations;

  // Returns tokens and the pre-noise polarity.
  std::pair<corpus::Tokens, int> sentence(bool target, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick_sit(0, situations.size() - 1);
    const Situation& s = situations[pick_sit(rng)];
    std::bernoulli_distribution consistent(spec.situation_consistency);
    std::uniform_int_distribution<int> any_class(0, static_cast<int>(spec.num_classes) - 1);
    const int polarity = consistent(rng) ? s.polarity : any_class(rng);

    corpus::Tokens toks;
    for (auto t : sample_distinct(s.topics, spec.topics_per_sentence, rng)) toks.push_back(lex.topics[t]);
    const auto& pol = (target ? lex.target_polarity : lex.source_polarity)[static_cast<std::size_t>(polarity)];
    std::uniform_int_distribution<std::size_t> pick_pol(0, pol.size() - 1);
    for (std::size_t i = 0; i < spec.polarity_per_sentence; ++i) toks.push_back(pol[pick_pol(rng)]);
    std::uniform_int_distribution<std::size_t> len(std::max(spec.min_len, toks.size()),
                                                   std::max(spec.max_len, toks.size()));
    const std::size_t n = len(rng);
    std::uniform_int_distribution<std::size_t> pick_fill(0, lex.fillers.size() - 1);
    while (toks.size() < n) toks.push_back(lex.fillers[pick_fill(rng)]);
    std::shuffle(toks.begin(), toks.end(), rng);
    return {toks, polarity};
  }

  int noisy(int label, std::mt19937_64& rng) const {
    std::bernoulli_distribution flip(spec.label_noise);
    if (!flip(rng)) return label;
    std::uniform_int_distribution<int> other(1, static_cast<int>(spec.num_classes) - 1);
    return (label + other(rng)) % static_cast<int>(spec.num_classes);
  }

  std::vector<corpus::SentimentExample> labeled(std::size_t n, bool target, std::mt19937_64& rng) const {
    std::vector<corpus::SentimentExample> out;
    for (std::size_t i = 0; i < n; ++i) {
      auto [toks, pol] = sentence(target, rng);
      corpus::SentimentExample ex;
      ex.text = text::join(toks);
      ex.label = static_cast<corpus::Sentiment>(noisy(pol, rng));
      out.push_back(std::move(ex));
    }
    return out;
  }
};

void write_examples(const std::string& path, const std::vector<corpus::SentimentExample>& ex) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  corpus::write_sentiment_jsonl(out, ex);
}

std::vector<corpus::SentimentExample> read_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return corpus::read_sentiment_jsonl(in);
}

}  // namespace

void SyntheticShiftSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidSpec, m); };
  if (num_classes != 3) fail("num_classes must be 3 (negative/neutral/positive)");
  if (topic_vocab == 0 || filler_vocab == 0 || polarity_per_class == 0) fail("empty lexicon");
  if (num_situations == 0) fail("num_situations must be positive");
  if (topics_per_situation == 0 || topics_per_situation > topic_vocab) fail("topics_per_situation");
  if (topics_per_sentence == 0 || topics_per_sentence > topics_per_situation) fail("topics_per_sentence");
  if (min_len > max_len) fail("min_len > max_len");
  if (!(situation_consistency >= 0.0 && situation_consistency <= 1.0)) fail("situation_consistency");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) fail("label_noise must lie in [0,1)");
  if (source_train == 0 || target_unlabeled == 0 || target_test == 0) fail("empty corpus size");
}

nlohmann::json to_json(const SyntheticShiftSpec& s) {
  return {{"topic_vocab", s.topic_vocab},
          {"filler_vocab", s.filler_vocab},
          {"polarity_per_class", s.polarity_per_class},
          {"num_classes", s.num_classes},
          {"num_situations", s.num_situations},
          {"topics_per_situation", s.topics_per_situation},
          {"topics_per_sentence", s.topics_per_sentence},
          {"polarity_per_sentence", s.polarity_per_sentence},
          {"min_len", s.min_len},
          {"max_len", s.max_len},
          {"situation_consistency", s.situation_consistency},
          {"label_noise", s.label_noise},
          {"source_train", s.source_train},
          {"source_dev", s.source_dev},
          {"target_unlabeled", s.target_unlabeled},
          {"target_test", s.target_test},
          {"seed", s.seed}};
}

SyntheticShiftSpec synth_spec_from_json(const nlohmann::json& j) {
  SyntheticShiftSpec s;
  const nlohmann::json defaults = to_json(s);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(ErrorCode::InvalidSpec, "unknown field '" + key + "'");
  }
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("topic_vocab", s.topic_vocab);
    get("filler_vocab", s.filler_vocab);
    get("polarity_per_class", s.polarity_per_class);
    get("num_classes", s.num_classes);
    get("num_situations", s.num_situations);
    get("topics_per_situation", s.topics_per_situation);
    get("topics_per_sentence", s.topics_per_sentence);
    get("polarity_per_sentence", s.polarity_per_sentence);
    get("min_len", s.min_len);
    get("max_len", s.max_len);
    get("situation_consistency", s.situation_consistency);
    get("label_noise", s.label_noise);
    get("source_train", s.source_train);
    get("source_dev", s.source_dev);
    get("target_unlabeled", s.target_unlabeled);
    get("target_test", s.target_test);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, e.what());
  }
  s.validate();
  return s;
}

ShiftBenchmark gen_synthetic_shift(const SyntheticShiftSpec& spec) {
  spec.validate();
  ShiftBenchmark b;
  WordMaker words(derive_seed(spec.seed, 1));
  b.lexicon.topics = words.many(spec.topic_vocab);
  b.lexicon.fillers = words.many(spec.filler_vocab);
  for (std::size_t c = 0; c < spec.num_classes; ++c) b.lexicon.source_polarity.push_back(words.many(spec.polarity_per_class));
  for (std::size_t c = 0; c < spec.num_classes; ++c) b.lexicon.target_polarity.push_back(words.many(spec.polarity_per_class));

  std::mt19937_64 srng(derive_seed(spec.seed, 2));
  std::vector<std::size_t> topic_ids(spec.topic_vocab);
  for (std::size_t i = 0; i < topic_ids.size(); ++i) topic_ids[i] = i;
  std::vector<Situation> situations(spec.num_situations);
  for (std::size_t i = 0; i < situations.size(); ++i) {
    situations[i].topics = sample_distinct(topic_ids, spec.topics_per_situation, srng);
    situations[i].polarity = static_cast<int>(i % spec.num_classes);
  }

  const Generator gen{spec, b.lexicon, situations};
  std::mt19937_64 r_src(derive_seed(spec.seed, 3)), r_dev(derive_seed(spec.seed, 4)),
      r_tgt(derive_seed(spec.seed, 5)), r_test(derive_seed(spec.seed, 6));
  b.source_train = gen.labeled(spec.source_train, false, r_src);
  b.source_dev = gen.labeled(spec.source_dev, false, r_dev);
  for (std::size_t i = 0; i < spec.target_unlabeled; ++i) b.target_unlabeled.push_back(gen.sentence(true, r_tgt).first);
  b.target_test = gen.labeled(spec.target_test, true, r_test);
  return b;
}

void write_benchmark(const ShiftBenchmark& b, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_examples(dir + "/source_train.jsonl", b.source_train);
  write_examples(dir + "/source_dev.jsonl", b.source_dev);
  write_examples(dir + "/target_test.jsonl", b.target_test);
  {
    std::ofstream out(dir + "/target_unlabeled.txt");
    if (!out) throw Error(ErrorCode::Io, "cannot write " + dir + "/target_unlabeled.txt");
    for (const auto& t : b.target_unlabeled) out << text::join(t) << '\n';
  }
  std::ofstream lex(dir + "/lexicon.json");
  if (!lex) throw Error(ErrorCode::Io, "cannot write " + dir + "/lexicon.json");
  nlohmann::json j{{"topics", b.lexicon.topics},
                   {"fillers", b.lexicon.fillers},
                   {"source_polarity", b.lexicon.source_polarity},
                   {"target_polarity", b.lexicon.target_polarity}};
  lex << j.dump(1) << '\n';
}

ShiftBenchmark read_benchmark(const std::string& dir) {
  ShiftBenchmark b;
  b.source_train = read_examples(dir + "/source_train.jsonl");
  b.source_dev = read_examples(dir + "/source_dev.jsonl");
  b.target_test = read_examples(dir + "/target_test.jsonl");
  std::ifstream in(dir + "/target_unlabeled.txt");
  if (!in) throw Error(ErrorCode::Io, "cannot open " + dir + "/target_unlabeled.txt");
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::tokenize(line);
    if (!t.empty()) b.target_unlabeled.push_back(std::move(t));
  }
  std::ifstream lex(dir + "/lexicon.json");
  if (lex) {
    auto j = nlohmann::json::parse(lex);
    b.lexicon.topics = j.at("topics").get<std::vector<std::string>>();
    b.lexicon.fillers = j.at("fillers").get<std::vector<std::string>>();
    b.lexicon.source_polarity = j.at("source_polarity").get<std::vector<std::vector<std::string>>>();
    b.lexicon.target_polarity = j.at("target_polarity").get<std::vector<std::vector<std::string>>>();
  }
  return b;
}

}  // namespace daicl::synth
