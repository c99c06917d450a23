#pragma once

#include <span>
#include <vector>

#include "daicl/nn/params.hpp"
#include "daicl/nn/tape.hpp"

namespace daicl::nn {

struct CRFParams {
  Matrix transition;  // K x K, transition(i, j) scores tag i followed by tag j
  RowVector start;
  RowVector end;

  std::size_t num_tags() const { return static_cast<std::size_t>(start.size()); }
  void validate() const;  // ShapeMismatch / ConfigInvalid on non-finite entries
};

CRFParams zero_crf(std::size_t k);

double crf_path_score(const Matrix& emissions, std::span<const int> tags, const CRFParams& crf);
double crf_log_partition(const Matrix& emissions, const CRFParams& crf);
double crf_nll(const Matrix& emissions, std::span<const int> tags, const CRFParams& crf);
// Viterbi; among equal-score paths the lexicographically smallest wins.
std::vector<int> crf_decode(const Matrix& emissions, const CRFParams& crf);

// Differentiable NLL (1x1) w.r.t. emissions (n x K), transition, start and end (1 x K).
Var crf_nll(Var emissions, Var transition, Var start, Var end, std::span<const int> tags);

}  // namespace daicl::nn
