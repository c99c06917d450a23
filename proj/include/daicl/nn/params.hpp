#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace daicl::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value, bool trainable = true);
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  std::size_t index(const std::string& name) const;  // ShapeMismatch if absent

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name) { return params_[index(name)]; }
  const Parameter& at(const std::string& name) const { return params_[index(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t trainable_count() const;  // scalar entries
  std::size_t total_count() const;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Shape-congruent with a ParamStore, indexed identically.
struct Gradients {
  std::vector<Matrix> g;

  static Gradients zeros_like(const ParamStore& store);
  void add(const Gradients& other);
  void scale(double s);
  double squared_norm() const;
  bool all_finite() const;
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, std::uint64_t seed);

}  // namespace daicl::nn
