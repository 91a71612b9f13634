#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A TapeT records every intermediate value of a forward pass as a node;
// backward() sweeps the tape in reverse, accumulating gradients into each
// node. Graphs are dynamic: ops may branch on computed values while the
// tape is being built. Node ids are topologically ordered by construction,
// so a single reverse sweep suffices.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "dsattr/types.hpp"

namespace dsattr::ad {

template <class Scalar>
class TapeT {
 public:
  using M = MatT<Scalar>;

  struct Node {
    M value;
    M grad;  // allocated by backward()
    std::function<void(TapeT&, int)> back;
  };

  int push(M value, std::function<void(TapeT&, int)> back = {}) {
    nodes_.push_back(Node{std::move(value), M(), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const M& value(int i) const { return nodes_[i].value; }
  M& grad(int i) { return nodes_[i].grad; }

  /// Seeds d(result)=1 for a 1x1 result node and sweeps the tape in reverse.
  void backward(int result) {
    if (value(result).size() != 1)
      throw std::invalid_argument("backward: result must be a scalar node");
    for (auto& n : nodes_) n.grad = M::Zero(n.value.rows(), n.value.cols());
    nodes_[result].grad(0, 0) = Scalar(1);
    for (int i = result; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this, i);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  std::vector<Node> nodes_;
};

template <class Scalar>
struct VarT {
  TapeT<Scalar>* tape = nullptr;
  int id = -1;

  const MatT<Scalar>& value() const { return tape->value(id); }
  const MatT<Scalar>& grad() const { return tape->grad(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <class S>
VarT<S> leaf(TapeT<S>& t, std::type_identity_t<MatT<S>> v) {
  return {&t, t.push(std::move(v))};
}

// ---- arithmetic ----

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  auto& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(t.value(ia) + t.value(ib), [ia, ib](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) += t.grad(self);
  });
  return {&t, id};
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
  auto& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(t.value(ia) - t.value(ib), [ia, ib](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) -= t.grad(self);
  });
  return {&t, id};
}

template <class S>
VarT<S> neg(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(-t.value(ia), [ia](TapeT<S>& t, int self) { t.grad(ia) -= t.grad(self); });
  return {&t, id};
}

template <class S>
VarT<S> scale(S s, VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(s * t.value(ia), [ia, s](TapeT<S>& t, int self) { t.grad(ia) += s * t.grad(self); });
  return {&t, id};
}

/// Matrix product.
template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
  auto& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(t.value(ia) * t.value(ib), [ia, ib](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self) * t.value(ib).transpose();
    t.grad(ib) += t.value(ia).transpose() * t.grad(self);
  });
  return {&t, id};
}

/// Elementwise (Hadamard) product.
template <class S>
VarT<S> cmul(VarT<S> a, VarT<S> b) {
  auto& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(t.value(ia).cwiseProduct(t.value(ib)), [ia, ib](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(t.value(ib));
    t.grad(ib) += t.grad(self).cwiseProduct(t.value(ia));
  });
  return {&t, id};
}

template <class S>
VarT<S> transpose(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).transpose(),
                  [ia](TapeT<S>& t, int self) { t.grad(ia) += t.grad(self).transpose(); });
  return {&t, id};
}

// ---- elementwise nonlinearities ----

template <class S>
VarT<S> tanh(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).array().tanh().matrix(), [ia](TapeT<S>& t, int self) {
    const auto& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct((1 - y.array().square()).matrix());
  });
  return {&t, id};
}

template <class S>
VarT<S> sigmoid(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  MatT<S> y = (1 / (1 + (-t.value(ia)).array().exp())).matrix();
  int id = t.push(std::move(y), [ia](TapeT<S>& t, int self) {
    const auto& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct((y.array() * (1 - y.array())).matrix());
  });
  return {&t, id};
}

template <class S>
VarT<S> exp(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).array().exp().matrix(), [ia](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(t.value(self));
  });
  return {&t, id};
}

/// Elementwise natural log; inputs must be strictly positive.
template <class S>
VarT<S> log(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).array().log().matrix(), [ia](TapeT<S>& t, int self) {
    t.grad(ia) += t.grad(self).cwiseQuotient(t.value(ia));
  });
  return {&t, id};
}

template <class S>
VarT<S> clamp(VarT<S> a, S lo, S hi) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).cwiseMax(lo).cwiseMin(hi), [ia, lo, hi](TapeT<S>& t, int self) {
    const auto& x = t.value(ia);
    MatT<S> mask = ((x.array() > lo) && (x.array() < hi)).template cast<S>().matrix();
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
  return {&t, id};
}

/// max(x, 0), used as a numerical zero floor.
template <class S>
VarT<S> relu0(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).cwiseMax(S(0)), [ia](TapeT<S>& t, int self) {
    MatT<S> mask = (t.value(ia).array() > S(0)).template cast<S>().matrix();
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
  return {&t, id};
}

// ---- softmax family (column vectors / matrix rows) ----

template <class S>
VecT<S> softmax_vec(const VecT<S>& x) {
  VecT<S> y = (x.array() - x.maxCoeff()).exp().matrix();
  return y / y.sum();
}

/// Softmax over a column vector.
template <class S>
VarT<S> softmax(VarT<S> a) {
  auto& t = *a.tape;
  if (t.value(a.id).cols() != 1) throw std::invalid_argument("softmax: column vector expected");
  int ia = a.id;
  VecT<S> y = softmax_vec<S>(t.value(ia));
  int id = t.push(MatT<S>(y), [ia](TapeT<S>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    S dot = (y.array() * g.array()).sum();
    t.grad(ia) += (y.array() * (g.array() - dot)).matrix();
  });
  return {&t, id};
}

/// Log-softmax over a column vector.
template <class S>
VarT<S> log_softmax(VarT<S> a) {
  auto& t = *a.tape;
  if (t.value(a.id).cols() != 1) throw std::invalid_argument("log_softmax: column vector expected");
  int ia = a.id;
  const auto& x = t.value(ia);
  S m = x.maxCoeff();
  S lse = m + std::log((x.array() - m).exp().sum());
  MatT<S> y = (x.array() - lse).matrix();
  int id = t.push(std::move(y), [ia](TapeT<S>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    S gsum = g.sum();
    t.grad(ia) += g - (y.array().exp() * gsum).matrix();
  });
  return {&t, id};
}

/// Row-wise softmax of a matrix (each row becomes a distribution).
template <class S>
VarT<S> softmax_rows(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  const auto& x = t.value(ia);
  MatT<S> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    VecT<S> row = x.row(r).transpose();
    y.row(r) = softmax_vec<S>(row).transpose();
  }
  int id = t.push(std::move(y), [ia](TapeT<S>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      S dot = (y.row(r).array() * g.row(r).array()).sum();
      t.grad(ia).row(r) += (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
  });
  return {&t, id};
}

// ---- reductions / indexing / shaping ----

template <class S>
VarT<S> sum(VarT<S> a) {
  auto& t = *a.tape;
  int ia = a.id;
  MatT<S> v(1, 1);
  v(0, 0) = t.value(ia).sum();
  int id = t.push(std::move(v), [ia](TapeT<S>& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
  return {&t, id};
}

template <class S>
VarT<S> mean(VarT<S> a) {
  S inv = S(1) / S(a.value().size());
  return scale(inv, sum(a));
}

/// Elementwise division of an array by a 1x1 scalar node.
template <class S>
VarT<S> div_scalar(VarT<S> a, VarT<S> s) {
  auto& t = *a.tape;
  if (t.value(s.id).size() != 1) throw std::invalid_argument("div_scalar: scalar node expected");
  int ia = a.id, is = s.id;
  int id = t.push(t.value(ia) / t.value(is)(0, 0), [ia, is](TapeT<S>& t, int self) {
    S sv = t.value(is)(0, 0);
    t.grad(ia) += t.grad(self) / sv;
    t.grad(is)(0, 0) -= t.grad(self).cwiseProduct(t.value(ia)).sum() / (sv * sv);
  });
  return {&t, id};
}

/// Inner product of two same-shaped arrays, as a 1x1 node.
template <class S>
VarT<S> dot(VarT<S> a, VarT<S> b) {
  auto& t = *a.tape;
  int ia = a.id, ib = b.id;
  MatT<S> v(1, 1);
  v(0, 0) = t.value(ia).cwiseProduct(t.value(ib)).sum();
  int id = t.push(std::move(v), [ia, ib](TapeT<S>& t, int self) {
    S g = t.grad(self)(0, 0);
    t.grad(ia) += g * t.value(ib);
    t.grad(ib) += g * t.value(ia);
  });
  return {&t, id};
}

/// Single entry as a 1x1 node.
template <class S>
VarT<S> pick(VarT<S> a, Eigen::Index r, Eigen::Index c = 0) {
  auto& t = *a.tape;
  int ia = a.id;
  MatT<S> v(1, 1);
  v(0, 0) = t.value(ia)(r, c);
  int id = t.push(std::move(v), [ia, r, c](TapeT<S>& t, int self) {
    t.grad(ia)(r, c) += t.grad(self)(0, 0);
  });
  return {&t, id};
}

/// Rows [off, off+n) of a single-column vector.
template <class S>
VarT<S> segment(VarT<S> a, Eigen::Index off, Eigen::Index n) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).middleRows(off, n), [ia, off, n](TapeT<S>& t, int self) {
    t.grad(ia).middleRows(off, n) += t.grad(self);
  });
  return {&t, id};
}

/// Column j of a matrix node (used for embedding lookups).
template <class S>
VarT<S> col(VarT<S> a, Eigen::Index j) {
  auto& t = *a.tape;
  int ia = a.id;
  int id = t.push(t.value(ia).col(j), [ia, j](TapeT<S>& t, int self) {
    t.grad(ia).col(j) += t.grad(self);
  });
  return {&t, id};
}

/// Vertical concatenation of column vectors.
template <class S>
VarT<S> concat(const std::vector<VarT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty");
  auto& t = *parts[0].tape;
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rows();
  MatT<S> v(total, 1);
  std::vector<int> ids;
  ids.reserve(parts.size());
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id);
  }
  int id = t.push(std::move(v), [ids](TapeT<S>& t, int self) {
    Eigen::Index off = 0;
    for (int pid : ids) {
      Eigen::Index n = t.value(pid).rows();
      t.grad(pid) += t.grad(self).middleRows(off, n);
      off += n;
    }
  });
  return {&t, id};
}

/// Horizontal stack of column vectors into a matrix.
template <class S>
VarT<S> hstack(const std::vector<VarT<S>>& cols) {
  if (cols.empty()) throw std::invalid_argument("hstack: empty");
  auto& t = *cols[0].tape;
  Eigen::Index r = cols[0].rows();
  MatT<S> v(r, static_cast<Eigen::Index>(cols.size()));
  std::vector<int> ids;
  ids.reserve(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    v.col(static_cast<Eigen::Index>(j)) = cols[j].value();
    ids.push_back(cols[j].id);
  }
  int id = t.push(std::move(v), [ids](TapeT<S>& t, int self) {
    for (std::size_t j = 0; j < ids.size(); ++j)
      t.grad(ids[j]) += t.grad(self).col(static_cast<Eigen::Index>(j));
  });
  return {&t, id};
}

/// Column vector built from 1x1 nodes.
template <class S>
VarT<S> stack_scalars(const std::vector<VarT<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_scalars: empty");
  auto& t = *xs[0].tape;
  MatT<S> v(static_cast<Eigen::Index>(xs.size()), 1);
  std::vector<int> ids;
  ids.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    v(static_cast<Eigen::Index>(i), 0) = xs[i].value()(0, 0);
    ids.push_back(xs[i].id);
  }
  int id = t.push(std::move(v), [ids](TapeT<S>& t, int self) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      t.grad(ids[i])(0, 0) += t.grad(self)(static_cast<Eigen::Index>(i), 0);
  });
  return {&t, id};
}

// ---- composite losses ----

/// -log softmax(logits)[target]
template <class S>
VarT<S> cross_entropy_logits(VarT<S> logits, Eigen::Index target) {
  return neg(pick(log_softmax(logits), target));
}

/// KL(p || q) with a constant target q; both sides smoothed by eps before log.
/// Floored at zero so the regularizer is always non-negative.
template <class S>
VarT<S> kl_to_const(VarT<S> p, const VecT<S>& q, S eps) {
  auto& t = *p.tape;
  int ip = p.id;
  const auto& pv = t.value(ip);
  if (pv.cols() != 1 || pv.rows() != q.rows())
    throw std::invalid_argument("kl_to_const: shape mismatch");
  MatT<S> v(1, 1);
  VecT<S> logratio = ((pv.array() + eps).log() - (q.array() + eps).log()).matrix();
  v(0, 0) = (pv.array() * logratio.array()).sum();
  VecT<S> qc = q;
  int id = t.push(std::move(v), [ip, qc, eps](TapeT<S>& t, int self) {
    const auto& pv = t.value(ip);
    S g = t.grad(self)(0, 0);
    auto lr = (pv.array() + eps).log() - (qc.array() + eps).log();
    t.grad(ip) += (g * (lr + pv.array() / (pv.array() + eps))).matrix();
  });
  return relu0(VarT<S>{&t, id});
}

template <class S>
VarT<S> operator+(VarT<S> a, VarT<S> b) {
  return add(a, b);
}
template <class S>
VarT<S> operator-(VarT<S> a, VarT<S> b) {
  return sub(a, b);
}
template <class S>
VarT<S> operator*(VarT<S> a, VarT<S> b) {
  return matmul(a, b);
}
template <class S>
VarT<S> operator*(S s, VarT<S> a) {
  return scale(s, a);
}

using Tape = TapeT<Real>;
using Var = VarT<Real>;

}  // namespace dsattr::ad
