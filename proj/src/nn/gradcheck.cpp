#include "daicl/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "daicl/common.hpp"

namespace daicl::nn {

double relative_error(double a, double n) { return std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-12); }

GradCheckReport finite_diff_check(ParamStore& params, const LossFn& loss_fn,
                                  const GradCheckOptions& opts) {
  Gradients analytic = Gradients::zeros_like(params);
  loss_fn(params, &analytic);
  GradCheckReport rep;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    Matrix& w = params[p].value;
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(w.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (opts.max_coords_per_param > 0 && coords.size() > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
    }
    for (auto c : coords) {
      const double orig = w.data()[c];
      w.data()[c] = orig + opts.eps;
      const double up = loss_fn(params, nullptr);
      w.data()[c] = orig - opts.eps;
      const double down = loss_fn(params, nullptr);
      w.data()[c] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic.g[p].data()[c];
      const double err = relative_error(a, numeric);
      ++rep.coords;
      if (err > rep.max_rel_error || rep.worst_param.empty()) {
        if (err >= rep.max_rel_error) {
          rep.max_rel_error = err;
          rep.worst_param = params[p].name + "[" + std::to_string(c) + "]";
          rep.worst_analytic = a;
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  return rep;
}

}  // namespace daicl::nn
