#include "daicl/nn/tape.hpp"

#include <cmath>

#include "daicl/common.hpp"

namespace daicl::nn {

const Matrix& Var::value() const { return tape_->value(index_); }

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, std::size_t index) {
  if (store_ && store_ != &store) {
    throw Error(ErrorCode::ShapeMismatch, "tape already bound to another parameter store");
  }
  store_ = &store;
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.external = &store[index].value;
  n.param = static_cast<int>(index);
  n.requires_grad = record_ && store[index].trainable;
  nodes_.push_back(std::move(n));
  param_nodes_[index] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  return param(store, store.index(name));
}

Var Tape::make(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const auto& p : parents) n.requires_grad = n.requires_grad || nodes_[p.index()].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::value(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.external ? *n.external : n.own;
}

Matrix& Tape::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (n.grad.size() == 0) {
    const Matrix& v = value(i);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss, Gradients& out) {
  if (!record_) throw Error(ErrorCode::GraphReuse, "tape was built without recording");
  if (consumed_) throw Error(ErrorCode::GraphReuse, "backward already ran on this tape");
  if (loss.tape() != this) throw Error(ErrorCode::ShapeMismatch, "loss belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "backward needs a 1x1 loss");
  }
  consumed_ = true;
  if (store_ && out.g.empty()) out = Gradients::zeros_like(*store_);

  grad(loss.index())(0, 0) += 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param >= 0) out.g[static_cast<std::size_t>(n.param)] += n.grad;
  }
}

Gradients Tape::backward(Var loss) {
  Gradients out;
  backward(loss, out);
  return out;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error(ErrorCode::ShapeMismatch, "operands on different tapes");
  return *a.tape();
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, op);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const Var parents[] = {a, b};
  const std::size_t ia = a.index(), ib = b.index();
  return t.make(a.value() * b.value(), parents, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_shape(a.cols() == b.cols(), "matmul_nt: column counts differ");
  const Var parents[] = {a, b};
  const std::size_t ia = a.index(), ib = b.index();
  return t.make(a.value() * b.value().transpose(), parents, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  const Var parents[] = {a, b};
  const std::size_t ia = a.index(), ib = b.index();
  return t.make(a.value() + b.value(), parents, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

Var add_scaled(Var a, Var b, double s) {
  Tape& t = same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add_scaled: shapes differ");
  const Var parents[] = {a, b};
  const std::size_t ia = a.index(), ib = b.index();
  return t.make(a.value() + s * b.value(), parents, [ia, ib, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += s * g;
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row: bad row shape");
  const Var parents[] = {a, row};
  const std::size_t ia = a.index(), ir = row.index();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.make(std::move(out), parents, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const Var parents[] = {a};
  const std::size_t ia = a.index();
  return t.make(s * a.value(), parents, [ia, s](Tape& t, std::size_t self) {
    t.grad(ia) += s * t.grad(self);
  });
}

Var mul_const(Var a, const Matrix& m) {
  Tape& t = *a.tape();
  check_shape(a.rows() == m.rows() && a.cols() == m.cols(), "mul_const: shapes differ");
  const Var parents[] = {a};
  const std::size_t ia = a.index();
  return t.make(a.value().cwiseProduct(m), parents, [ia, m](Tape& t, std::size_t self) {
    t.grad(ia) += t.grad(self).cwiseProduct(m);
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape();
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    y.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  const Var parents[] = {a};
  const std::size_t ia = a.index();
  return t.make(std::move(y), parents, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ia);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double th = std::tanh(c * (v + k * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * k * v * v);
      gx.data()[i] += g.data()[i] * d;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain);
  const Eigen::Index n = x.rows(), d = x.cols();
  check_shape(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
              "layer_norm: gain/bias shape");
  const Matrix& xv = x.value();
  Matrix xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * rstd(i);
  }
  Matrix y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const Var parents[] = {x, gain, bias};
  const std::size_t ix = x.index(), ig = gain.index(), ib = bias.index();
  return t.make(std::move(y), parents,
                [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
                  if (t.requires_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (!t.requires_grad(ix)) return;
                  Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
                  Matrix& gx = t.grad(ix);
                  for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                    const double m1 = dxhat.row(i).mean();
                    const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                    gx.row(i).array() +=
                        rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                  }
                });
}

Var softmax_rows(Var x, bool causal) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  check_shape(!causal || xv.rows() <= xv.cols(), "softmax_rows: causal needs rows <= cols");
  Matrix y = Matrix::Zero(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Eigen::Index w = causal ? i + 1 : xv.cols();
    const double mx = xv.row(i).head(w).maxCoeff();
    auto e = (xv.row(i).head(w).array() - mx).exp();
    y.row(i).head(w) = e / e.sum();
  }
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  const std::size_t iy = t.size();
  return t.make(std::move(y), parents, [ix, iy](Tape& t, std::size_t self) {
    const Matrix& y = t.value(iy);
    const Matrix& g = t.grad(self);
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = g;
    dx.colwise() -= dot;
    t.grad(ix) += dx.cwiseProduct(y);
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mx = xv.row(i).maxCoeff();
    const double lse = mx + std::log((xv.row(i).array() - mx).exp().sum());
    y.row(i) = xv.row(i).array() - lse;
  }
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  const std::size_t iy = t.size();
  return t.make(std::move(y), parents, [ix, iy](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix p = t.value(iy).array().exp();
    Eigen::VectorXd gs = g.rowwise().sum();
    Matrix dx = g;
    dx -= (p.array().colwise() * gs.array()).matrix();
    t.grad(ix) += dx;
  });
}

namespace {

template <class Index>
Var gather_impl(Var x, std::span<const Index> rows) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  std::vector<Eigen::Index> idx;
  idx.reserve(rows.size());
  for (auto r : rows) {
    const auto ri = static_cast<Eigen::Index>(r);
    if (ri < 0 || ri >= xv.rows()) throw Error(ErrorCode::OutOfRange, "gather_rows index");
    idx.push_back(ri);
  }
  Matrix y(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  return t.make(std::move(y), parents, [ix, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ix);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

}  // namespace

Var gather_rows(Var x, std::span<const std::size_t> rows) { return gather_impl(x, rows); }
Var gather_rows(Var x, std::span<const int> rows) { return gather_impl(x, rows); }

Var mean_rows(Var x, std::span<const std::size_t> rows) {
  Tape& t = *x.tape();
  if (rows.empty()) throw Error(ErrorCode::EmptySource, "mean_rows over no rows");
  const Matrix& xv = x.value();
  Matrix y = Matrix::Zero(1, xv.cols());
  std::vector<Eigen::Index> idx;
  for (auto r : rows) {
    const auto ri = static_cast<Eigen::Index>(r);
    if (ri >= xv.rows()) throw Error(ErrorCode::OutOfRange, "mean_rows index");
    idx.push_back(ri);
    y += xv.row(ri);
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  y *= inv;
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  return t.make(std::move(y), parents, [ix, idx = std::move(idx), inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ix);
    for (auto r : idx) gx.row(r) += inv * g.row(0);
  });
}

Var slice_cols(Var x, Eigen::Index begin, Eigen::Index width) {
  Tape& t = *x.tape();
  check_shape(begin >= 0 && width >= 0 && begin + width <= x.cols(), "slice_cols range");
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  return t.make(x.value().middleCols(begin, width), parents,
                [ix, begin, width](Tape& t, std::size_t self) {
                  t.grad(ix).middleCols(begin, width) += t.grad(self);
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    check_shape(p.rows() == rows && p.tape() == &t, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.index(), c);
    c += p.cols();
  }
  return t.make(std::move(y), parts, [layout = std::move(layout)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (const auto& [ip, c0] : layout) {
      if (!t.requires_grad(ip)) continue;
      Matrix& gp = t.grad(ip);
      gp += g.middleCols(c0, gp.cols());
    }
  });
}

Var pick_nll(Var log_probs, std::span<const int> targets) {
  Tape& t = *log_probs.tape();
  const Matrix& lp = log_probs.value();
  check_shape(static_cast<Eigen::Index>(targets.size()) == lp.rows(), "pick_nll: one target per row");
  std::vector<int> tg(targets.begin(), targets.end());
  double s = 0.0;
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (tg[i] < 0 || tg[i] >= lp.cols()) throw Error(ErrorCode::OutOfRange, "pick_nll target");
    s -= lp(static_cast<Eigen::Index>(i), tg[i]);
  }
  Matrix y(1, 1);
  y(0, 0) = s;
  const Var parents[] = {log_probs};
  const std::size_t ix = log_probs.index();
  return t.make(std::move(y), parents, [ix, tg = std::move(tg)](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Matrix& gx = t.grad(ix);
    for (std::size_t i = 0; i < tg.size(); ++i) gx(static_cast<Eigen::Index>(i), tg[i]) -= g;
  });
}

Var sum_all(Var x) {
  Tape& t = *x.tape();
  Matrix y(1, 1);
  y(0, 0) = x.value().sum();
  const Var parents[] = {x};
  const std::size_t ix = x.index();
  return t.make(std::move(y), parents, [ix](Tape& t, std::size_t self) {
    t.grad(ix).array() += t.grad(self)(0, 0);
  });
}

}  // namespace daicl::nn
