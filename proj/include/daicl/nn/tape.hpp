#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "daicl/nn/params.hpp"

namespace daicl::nn {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  std::size_t index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Reverse-mode tape. Nodes are appended in topological order; backward walks them
// in reverse. A tape built with record=false keeps values only (inference).
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf bound to a stored parameter; one node per parameter per tape.
  Var param(const ParamStore& store, std::size_t index);
  Var param(const ParamStore& store, const std::string& name);

  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var make(Matrix value, std::span<const Var> parents, BackwardFn backward);

  const Matrix& value(std::size_t i) const;
  Matrix& grad(std::size_t i);  // zero-initialized on first access
  bool has_grad(std::size_t i) const { return nodes_[i].grad.size() != 0; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  bool recording() const { return record_; }

  // Seeds d(loss)=1 for a 1x1 loss and accumulates parameter gradients into `out`.
  // Frozen parameters receive nothing. Throws GraphReuse on a second call.
  void backward(Var loss, Gradients& out);
  Gradients backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    int param = -1;
    BackwardFn backward;
  };

  bool record_;
  bool consumed_ = false;
  const ParamStore* store_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

// ---- differentiable ops -------------------------------------------------

Var matmul(Var a, Var b);             // a * b
Var matmul_nt(Var a, Var b);          // a * b^T
Var add(Var a, Var b);                // same shape
Var add_row(Var a, Var row);          // broadcast 1 x m row over rows of a
Var scale(Var a, double s);
Var mul_const(Var a, const Matrix& m);  // elementwise by a constant
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var x, bool causal = false);
Var log_softmax_rows(Var x);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var gather_rows(Var x, std::span<const int> rows);
Var mean_rows(Var x, std::span<const std::size_t> rows);
Var slice_cols(Var x, Eigen::Index begin, Eigen::Index width);
Var concat_cols(std::span<const Var> parts);
// Sum over i of -x(i, targets[i]); result is 1x1.
Var pick_nll(Var log_probs, std::span<const int> targets);
Var sum_all(Var x);
Var add_scaled(Var a, Var b, double b_scale);  // a + s*b, both 1x1 or same shape

}  // namespace daicl::nn
