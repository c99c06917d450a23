#include "daicl/metrics.hpp"

#include "daicl/common.hpp"
#include "daicl/text.hpp"

namespace daicl::metrics {

SpanReport span_report(std::size_t tp, std::size_t fp, std::size_t fn) {
  SpanReport r{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp > 0) r.f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
  return r;
}

SpanReport span_f1(std::span<const corpus::SpanSet> gold, std::span<const corpus::SpanSet> pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(gold.size()) + " gold vs " +
                                               std::to_string(pred.size()) + " predicted sentences");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (const auto& s : pred[i]) (gold[i].count(s) ? tp : fp)++;
    for (const auto& s : gold[i])
      if (!pred[i].count(s)) ++fn;
  }
  return span_report(tp, fp, fn);
}

AccReport accuracy(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(gold.size()) + " gold vs " +
                                               std::to_string(pred.size()) + " predicted labels");
  }
  AccReport r;
  r.total = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) r.correct += gold[i] == pred[i];
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

corpus::SpanSet entities_to_spans(const prompt::ParsedEntities& entities,
                                  std::span<const std::string> sentence) {
  // Sub-tokenize the sentence the same way as entity strings, remembering owners.
  std::vector<std::string> sub;
  std::vector<std::size_t> owner;
  std::vector<bool> first, last;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    auto parts = text::tokenize(sentence[i]);
    for (std::size_t j = 0; j < parts.size(); ++j) {
      sub.push_back(parts[j]);
      owner.push_back(i);
      first.push_back(j == 0);
      last.push_back(j + 1 == parts.size());
    }
  }
  corpus::SpanSet spans;
  std::vector<bool> claimed(sentence.size(), false);
  std::size_t unmatched = 0;
  for (const auto& ent : entities.entities) {
    const auto et = text::tokenize(ent);
    bool found = false;
    if (!et.empty() && et.size() <= sub.size()) {
      for (std::size_t s = 0; s + et.size() <= sub.size(); ++s) {
        const std::size_t e = s + et.size() - 1;
        if (!first[s] || !last[e]) continue;
        bool match = true;
        for (std::size_t k = 0; k < et.size() && match; ++k) match = sub[s + k] == et[k];
        if (!match) continue;
        const std::size_t a = owner[s], b = owner[e] + 1;
        bool free = true;
        for (std::size_t t = a; t < b && free; ++t) free = !claimed[t];
        if (!free) continue;
        for (std::size_t t = a; t < b; ++t) claimed[t] = true;
        spans.insert({a, b});
        found = true;
        s = e;
      }
    }
    if (!found) {
      const std::size_t pos = sentence.size() + unmatched++;
      spans.insert({pos, pos + 1});
    }
  }
  return spans;
}

std::vector<std::string> spans_to_entities(const corpus::SpanSet& spans,
                                           std::span<const std::string> sentence) {
  std::vector<std::string> out;
  for (const auto& s : spans) {
    if (s.end > sentence.size()) continue;
    std::string e;
    for (std::size_t i = s.start; i < s.end; ++i) {
      if (i > s.start) e += ' ';
      e += sentence[i];
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace daicl::metrics
