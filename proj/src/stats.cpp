#include "daicl/stats.hpp"

#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "daicl/common.hpp"

namespace daicl::stats {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

WelchResult welch_t_test(std::span<const double> base, std::span<const double> treat) {
  if (base.size() < 2 || treat.size() < 2) {
    throw Error(ErrorCode::TooFewSeeds, "Welch test needs >= 2 values per side");
  }
  const double n1 = static_cast<double>(base.size()), n2 = static_cast<double>(treat.size());
  const double m1 = mean(base), m2 = mean(treat);
  const double v1 = std::pow(sample_std(base), 2) / n1;
  const double v2 = std::pow(sample_std(treat), 2) / n2;
  WelchResult r;
  if (v1 + v2 == 0.0) {
    r.t = m1 == m2 ? 0.0 : std::copysign(INFINITY, m2 - m1);
    r.df = n1 + n2 - 2.0;
    r.p = m1 == m2 ? 1.0 : 0.0;
    return r;
  }
  r.t = (m2 - m1) / std::sqrt(v1 + v2);
  r.df = (v1 + v2) * (v1 + v2) / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
  boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace daicl::stats
