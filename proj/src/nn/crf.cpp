#include "daicl/nn/crf.hpp"

#include <cmath>
#include <limits>

#include "daicl/common.hpp"

namespace daicl::nn {

namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

void check_inputs(const Matrix& e, std::span<const int> tags, const CRFParams& crf) {
  const auto K = static_cast<Eigen::Index>(crf.num_tags());
  if (e.rows() == 0) throw Error(ErrorCode::EmptySequence, "CRF over an empty sequence");
  if (e.cols() != K) throw Error(ErrorCode::ShapeMismatch, "emission width != number of tags");
  if (!tags.empty() && static_cast<Eigen::Index>(tags.size()) != e.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "one tag per position required");
  }
  for (int t : tags) {
    if (t < 0 || t >= K) throw Error(ErrorCode::BadTag, "tag " + std::to_string(t));
  }
}

// alpha(t, j): log-sum of prefix paths ending in j at t, emissions included.
Matrix forward_alpha(const Matrix& e, const CRFParams& crf) {
  const Eigen::Index n = e.rows(), K = e.cols();
  Matrix alpha(n, K);
  alpha.row(0) = crf.start + e.row(0);
  Eigen::RowVectorXd tmp(K);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < K; ++j) {
      tmp = alpha.row(t - 1) + crf.transition.col(j).transpose();
      alpha(t, j) = log_sum_exp(tmp) + e(t, j);
    }
  }
  return alpha;
}

// beta(t, i): log-sum of suffix paths after t given tag i at t, end score included.
Matrix backward_beta(const Matrix& e, const CRFParams& crf) {
  const Eigen::Index n = e.rows(), K = e.cols();
  Matrix beta(n, K);
  beta.row(n - 1) = crf.end;
  Eigen::RowVectorXd tmp(K);
  for (Eigen::Index t = n - 1; t-- > 0;) {
    for (Eigen::Index i = 0; i < K; ++i) {
      tmp = crf.transition.row(i) + e.row(t + 1) + beta.row(t + 1);
      beta(t, i) = log_sum_exp(tmp);
    }
  }
  return beta;
}

}  // namespace

void CRFParams::validate() const {
  const auto K = start.size();
  if (K == 0 || end.size() != K || transition.rows() != K || transition.cols() != K) {
    throw Error(ErrorCode::ShapeMismatch, "CRF parameter shapes disagree");
  }
  if (!transition.allFinite() || !start.allFinite() || !end.allFinite()) {
    throw Error(ErrorCode::ConfigInvalid, "CRF parameters must be finite");
  }
}

CRFParams zero_crf(std::size_t k) {
  const auto K = static_cast<Eigen::Index>(k);
  return {Matrix::Zero(K, K), RowVector::Zero(K), RowVector::Zero(K)};
}

double crf_path_score(const Matrix& e, std::span<const int> tags, const CRFParams& crf) {
  check_inputs(e, tags, crf);
  double s = crf.start(tags[0]) + e(0, tags[0]);
  for (std::size_t t = 1; t < tags.size(); ++t) {
    s = s + crf.transition(tags[t - 1], tags[t]) + e(static_cast<Eigen::Index>(t), tags[t]);
  }
  return s + crf.end(tags.back());
}

double crf_log_partition(const Matrix& e, const CRFParams& crf) {
  check_inputs(e, {}, crf);
  Matrix alpha = forward_alpha(e, crf);
  Eigen::RowVectorXd last = alpha.row(e.rows() - 1) + crf.end;
  return log_sum_exp(last);
}

double crf_nll(const Matrix& e, std::span<const int> tags, const CRFParams& crf) {
  if (tags.empty()) throw Error(ErrorCode::ShapeMismatch, "CRF NLL needs tags");
  return crf_log_partition(e, crf) - crf_path_score(e, tags, crf);
}

std::vector<int> crf_decode(const Matrix& e, const CRFParams& crf) {
  check_inputs(e, {}, crf);
  const Eigen::Index n = e.rows(), K = e.cols();
  // best(t, i): max suffix score after t given tag i at t (end included).
  Matrix best(n, K);
  best.row(n - 1) = crf.end;
  for (Eigen::Index t = n - 1; t-- > 0;) {
    for (Eigen::Index i = 0; i < K; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < K; ++j) {
        m = std::max(m, crf.transition(i, j) + e(t + 1, j) + best(t + 1, j));
      }
      best(t, i) = m;
    }
  }
  // Walking forward and taking the smallest maximizer at each step yields the
  // lexicographically smallest optimal path.
  std::vector<int> path(static_cast<std::size_t>(n));
  auto argmax_first = [K](auto&& score) {
    Eigen::Index arg = 0;
    double m = score(0);
    for (Eigen::Index j = 1; j < K; ++j) {
      const double s = score(j);
      if (s > m) m = s, arg = j;
    }
    return static_cast<int>(arg);
  };
  path[0] = argmax_first([&](Eigen::Index j) { return crf.start(j) + e(0, j) + best(0, j); });
  for (Eigen::Index t = 1; t < n; ++t) {
    const int prev = path[static_cast<std::size_t>(t - 1)];
    path[static_cast<std::size_t>(t)] = argmax_first(
        [&](Eigen::Index j) { return crf.transition(prev, j) + e(t, j) + best(t, j); });
  }
  return path;
}

Var crf_nll(Var emissions, Var transition, Var start, Var end, std::span<const int> tags) {
  Tape& t = *emissions.tape();
  CRFParams crf{transition.value(), start.value(), end.value()};
  crf.validate();
  const Matrix& e = emissions.value();
  if (tags.empty()) throw Error(ErrorCode::ShapeMismatch, "CRF NLL needs tags");
  check_inputs(e, tags, crf);
  Matrix alpha = forward_alpha(e, crf);
  Matrix beta = backward_beta(e, crf);
  Eigen::RowVectorXd last = alpha.row(e.rows() - 1) + crf.end;
  const double logz = log_sum_exp(last);
  Matrix y(1, 1);
  y(0, 0) = logz - crf_path_score(e, tags, crf);

  std::vector<int> tg(tags.begin(), tags.end());
  const Var parents[] = {emissions, transition, start, end};
  const std::size_t ie = emissions.index(), it = transition.index(), is = start.index(),
                    iend = end.index();
  return t.make(std::move(y), parents,
                [=, alpha = std::move(alpha), beta = std::move(beta), crf = std::move(crf),
                 tg = std::move(tg)](Tape& tp, std::size_t self) {
                  const double g = tp.grad(self)(0, 0);
                  const Matrix& e = tp.value(ie);
                  const Eigen::Index n = e.rows(), K = e.cols();
                  Matrix unary = ((alpha + beta).array() - logz).exp();
                  if (tp.requires_grad(ie)) {
                    Matrix ge = unary;
                    for (Eigen::Index i = 0; i < n; ++i) ge(i, tg[i]) -= 1.0;
                    tp.grad(ie) += g * ge;
                  }
                  if (tp.requires_grad(is)) {
                    Matrix gs = unary.row(0);
                    gs(0, tg[0]) -= 1.0;
                    tp.grad(is) += g * gs;
                  }
                  if (tp.requires_grad(iend)) {
                    Matrix gend = unary.row(n - 1);
                    gend(0, tg[n - 1]) -= 1.0;
                    tp.grad(iend) += g * gend;
                  }
                  if (tp.requires_grad(it)) {
                    Matrix gt = Matrix::Zero(K, K);
                    for (Eigen::Index s = 1; s < n; ++s) {
                      for (Eigen::Index i = 0; i < K; ++i)
                        for (Eigen::Index j = 0; j < K; ++j)
                          gt(i, j) += std::exp(alpha(s - 1, i) + crf.transition(i, j) + e(s, j) +
                                               beta(s, j) - logz);
                      gt(tg[s - 1], tg[s]) -= 1.0;
                    }
                    tp.grad(it) += g * gt;
                  }
                });
}

}  // namespace daicl::nn
