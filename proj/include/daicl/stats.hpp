#pragma once

#include <span>

namespace daicl::stats {

double mean(std::span<const double> x);
double sample_std(std::span<const double> x);  // n-1 denominator; 0 for n < 2

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

// Two-sample unequal-variance t-test. TooFewSeeds when either side has < 2 values.
WelchResult welch_t_test(std::span<const double> base, std::span<const double> treat);

}  // namespace daicl::stats
