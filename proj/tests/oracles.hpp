#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "daicl/nn/crf.hpp"

namespace daicl::testing {

struct CrfEnumeration {
  double log_partition = 0.0;
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
};

inline double enumerate_score(const nn::Matrix& e, const std::vector<int>& y, const nn::CRFParams& crf) {
  double s = crf.start(y[0]) + crf.end(y.back());
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += e(static_cast<Eigen::Index>(i), y[i]);
    if (i > 0) s += crf.transition(y[i - 1], y[i]);
  }
  return s;
}

// Brute force over all K^n paths in lexicographic order.
inline CrfEnumeration enumerate_crf(const nn::Matrix& e, const nn::CRFParams& crf) {
  const auto n = static_cast<std::size_t>(e.rows());
  const int k = static_cast<int>(e.cols());
  CrfEnumeration out;
  std::vector<double> scores;
  std::vector<int> y(n, 0);
  while (true) {
    const double s = enumerate_score(e, y, crf);
    scores.push_back(s);
    if (s > out.best_score) {
      out.best_score = s;
      out.best = y;
    }
    std::size_t pos = n;
    while (pos > 0 && y[pos - 1] == k - 1) y[--pos] = 0;
    if (pos == 0) break;
    ++y[pos - 1];
  }
  double m = out.best_score, acc = 0.0;
  for (double s : scores) acc += std::exp(s - m);
  out.log_partition = m + std::log(acc);
  return out;
}

// Two-sided Student-t tail by Simpson quadrature of the density on [0, |t|].
inline double t_two_sided_p(double t, double df) {
  const double a = std::abs(t);
  if (a == 0.0) return 1.0;
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto f = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = a / n;
  double s = f(0) + f(a);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

struct WelchOracle {
  double t, df, p;
};

inline WelchOracle welch_oracle(std::span<const double> a, std::span<const double> b) {
  auto moments = [](std::span<const double> x, double& m, double& v) {
    m = 0;
    for (double xi : x) m += xi;
    m /= static_cast<double>(x.size());
    v = 0;
    for (double xi : x) v += (xi - m) * (xi - m);
    v /= static_cast<double>(x.size() - 1);
  };
  double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  const double t = (mb - ma) / std::sqrt(sa + sb);
  const double df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
  return {t, df, t_two_sided_p(t, df)};
}

}  // namespace daicl::testing
