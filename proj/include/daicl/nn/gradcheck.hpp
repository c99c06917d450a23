#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "daicl/nn/params.hpp"

namespace daicl::nn {

// Returns the loss; when `grads` is non-null it also fills analytic gradients.
using LossFn = std::function<double(const ParamStore&, Gradients*)>;

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords_per_param = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

double relative_error(double analytic, double numeric);

// Central differences over trainable parameters only; `params` is restored on return.
GradCheckReport finite_diff_check(ParamStore& params, const LossFn& loss_fn,
                                  const GradCheckOptions& opts = {});

}  // namespace daicl::nn
