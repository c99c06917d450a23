#include "daicl/nn/params.hpp"

#include <cstring>
#include <random>

#include "daicl/common.hpp"

namespace daicl::nn {

std::size_t ParamStore::add(std::string name, Matrix value, bool trainable) {
  if (by_name_.count(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter " + name);
  by_name_[name] = params_.size();
  params_.push_back({std::move(name), std::move(value), trainable});
  return params_.size() - 1;
}

std::size_t ParamStore::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error(ErrorCode::ShapeMismatch, "no parameter named " + name);
  return it->second;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::size_t ParamStore::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.trainable != b.trainable || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0)
      return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const ParamStore& store) {
  Gradients out;
  out.g.reserve(store.size());
  for (const auto& p : store) out.g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return out;
}

void Gradients::add(const Gradients& other) {
  if (other.g.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "gradient sets differ");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
}

void Gradients::scale(double s) {
  for (auto& m : g) m *= s;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return s;
}

bool Gradients::all_finite() const {
  for (const auto& m : g)
    if (!m.allFinite()) return false;
  return true;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace daicl::nn
