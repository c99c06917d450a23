#pragma once

#include <span>
#include <vector>

#include "daicl/corpus.hpp"
#include "daicl/prompt.hpp"

namespace daicl::metrics {

struct SpanReport {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Micro-averaged exact-boundary span scoring; precision/recall are 0 on empty denominators.
SpanReport span_f1(std::span<const corpus::SpanSet> gold, std::span<const corpus::SpanSet> pred);
SpanReport span_report(std::size_t tp, std::size_t fp, std::size_t fn);

struct AccReport {
  std::size_t correct = 0, total = 0;
  double accuracy = 0.0;
};

AccReport accuracy(std::span<const int> gold, std::span<const int> pred);

// Case-folded, left-to-right, non-overlapping matching in entity order. Each entity with
// no occurrence yields a sentinel span past the sentence end (always a false positive).
corpus::SpanSet entities_to_spans(const prompt::ParsedEntities& entities,
                                  std::span<const std::string> sentence);

// Surface strings of the given spans, tokens joined by single spaces.
std::vector<std::string> spans_to_entities(const corpus::SpanSet& spans,
                                           std::span<const std::string> sentence);

}  // namespace daicl::metrics
