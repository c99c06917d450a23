#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace daicl {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t coords = 0;
  std::string worst;
  bool pass = false;
};

// Finite-difference checks of every loss on tiny double-precision models: encoder joint
// loss (classifier, CRF), causal LM (full-token, response-only), adapters, bare CRF.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, double eps = 1e-5);

}  // namespace daicl
