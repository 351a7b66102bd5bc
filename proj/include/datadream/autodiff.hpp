// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/types.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

// Reverse-mode automatic differentiation over dense Eigen matrices.
// Graphs are built dynamically by free functions; backward() walks the
// tape once in reverse topological order. Batches are handled by
// stacking per-item token rows into one matrix and using the block_*
// operations, so a whole batch step costs a handful of large matmuls.
namespace datadream::ag {

inline thread_local bool grad_mode = true;

// Disables tape recording in a scope (inference / sampling paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode) { grad_mode = false; }
  ~NoGradGuard() { grad_mode = prev; }
};

template <class S>
struct Node {
  MatX<S> value;
  MatX<S> grad;
  bool has_grad = false;
  bool requires_grad = false;  // leaves: user flag; interior: any parent requires
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward;

  void accumulate(const MatX<S>& g) {
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad += g;
    }
  }
};

template <class S>
class Variable {
 public:
  Variable() = default;
  explicit Variable(MatX<S> v, bool requires_grad = false) : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }

  bool valid() const { return node_ != nullptr; }
  const MatX<S>& value() const { return node_->value; }
  MatX<S>& value() { return node_->value; }
  const MatX<S>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    node_->has_grad = false;
    node_->grad.resize(0, 0);
  }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }

  std::shared_ptr<Node<S>> node() const { return node_; }
  static Variable wrap(std::shared_ptr<Node<S>> n) {
    Variable v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

template <class S>
Variable<S> constant(MatX<S> v) {
  return Variable<S>(std::move(v), false);
}

template <class S>
Variable<S> param(MatX<S> v) {
  return Variable<S>(std::move(v), true);
}

namespace detail {

template <class S>
bool any_requires(std::initializer_list<const Variable<S>*> vars) {
  for (const auto* v : vars)
    if (v->requires_grad()) return true;
  return false;
}

template <class S>
Variable<S> make_op(MatX<S> value, std::vector<std::shared_ptr<Node<S>>> parents,
                    std::function<void(Node<S>&)> backward, bool needs) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  if (grad_mode && needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Variable<S>::wrap(std::move(n));
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// out = x * w^T  (rows of x are samples/tokens, w is d_out x d_in)
template <class S>
Variable<S> linear(const Variable<S>& x, const Variable<S>& w) {
  detail::check(x.cols() == w.cols(), "linear: inner dimensions differ");
  MatX<S> out = x.value() * w.value().transpose();
  return detail::make_op<S>(
      std::move(out), {x.node(), w.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        auto& wp = *self.parents[1];
        if (xp.requires_grad) xp.accumulate(self.grad * wp.value);
        if (wp.requires_grad) wp.accumulate(self.grad.transpose() * xp.value);
      },
      detail::any_requires<S>({&x, &w}));
}

template <class S>
Variable<S> matmul(const Variable<S>& a, const Variable<S>& b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  MatX<S> out = a.value() * b.value();
  return detail::make_op<S>(
      std::move(out), {a.node(), b.node()},
      [](Node<S>& self) {
        auto& ap = *self.parents[0];
        auto& bp = *self.parents[1];
        if (ap.requires_grad) ap.accumulate(self.grad * bp.value.transpose());
        if (bp.requires_grad) bp.accumulate(ap.value.transpose() * self.grad);
      },
      detail::any_requires<S>({&a, &b}));
}

template <class S>
Variable<S> add(const Variable<S>& a, const Variable<S>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  MatX<S> out = a.value() + b.value();
  return detail::make_op<S>(
      std::move(out), {a.node(), b.node()},
      [](Node<S>& self) {
        for (auto& p : self.parents)
          if (p->requires_grad) p->accumulate(self.grad);
      },
      detail::any_requires<S>({&a, &b}));
}

template <class S>
Variable<S> sub(const Variable<S>& a, const Variable<S>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  MatX<S> out = a.value() - b.value();
  return detail::make_op<S>(
      std::move(out), {a.node(), b.node()},
      [](Node<S>& self) {
        auto& ap = *self.parents[0];
        auto& bp = *self.parents[1];
        if (ap.requires_grad) ap.accumulate(self.grad);
        if (bp.requires_grad) bp.accumulate(-self.grad);
      },
      detail::any_requires<S>({&a, &b}));
}

// broadcast-add a 1 x d row vector to every row of x
template <class S>
Variable<S> add_rowvec(const Variable<S>& x, const Variable<S>& b) {
  detail::check(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: bias must be 1 x cols(x)");
  MatX<S> out = x.value().rowwise() + b.value().row(0);
  return detail::make_op<S>(
      std::move(out), {x.node(), b.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        auto& bp = *self.parents[1];
        if (xp.requires_grad) xp.accumulate(self.grad);
        if (bp.requires_grad) bp.accumulate(self.grad.colwise().sum());
      },
      detail::any_requires<S>({&x, &b}));
}

template <class S>
Variable<S> scale(const Variable<S>& x, double s) {
  MatX<S> out = x.value() * static_cast<S>(s);
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [s](Node<S>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad * static_cast<S>(s));
      },
      x.requires_grad());
}

// multiply a matrix by a learnable 1x1 scalar
template <class S>
Variable<S> smul(const Variable<S>& s, const Variable<S>& x) {
  detail::check(s.rows() == 1 && s.cols() == 1, "smul: scalar must be 1x1");
  MatX<S> out = x.value() * s.value()(0, 0);
  return detail::make_op<S>(
      std::move(out), {s.node(), x.node()},
      [](Node<S>& self) {
        auto& sp = *self.parents[0];
        auto& xp = *self.parents[1];
        if (sp.requires_grad) {
          MatX<S> g(1, 1);
          g(0, 0) = (self.grad.array() * xp.value.array()).sum();
          sp.accumulate(g);
        }
        if (xp.requires_grad) xp.accumulate(self.grad * sp.value(0, 0));
      },
      detail::any_requires<S>({&s, &x}));
}

template <class S>
Variable<S> transpose(const Variable<S>& x) {
  MatX<S> out = x.value().transpose();
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [](Node<S>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.transpose());
      },
      x.requires_grad());
}

template <class S>
Variable<S> row_softmax(const Variable<S>& x) {
  MatX<S> out = x.value();
  for (Index i = 0; i < out.rows(); ++i) {
    const S mx = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        MatX<S> gx(self.grad.rows(), self.grad.cols());
        for (Index i = 0; i < gx.rows(); ++i) {
          const auto y = self.value.row(i).array();
          const auto g = self.grad.row(i).array();
          const S dot = (g * y).sum();
          gx.row(i) = ((g - dot) * y).matrix();
        }
        xp.accumulate(gx);
      },
      x.requires_grad());
}

// row-wise layer norm with learnable gain/bias (1 x d each)
template <class S>
Variable<S> layer_norm(const Variable<S>& x, const Variable<S>& gain, const Variable<S>& bias,
                       double eps = 1e-5) {
  const Index d = x.cols();
  detail::check(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
                "layer_norm: gain/bias must be 1 x cols(x)");
  MatX<S> xhat(x.rows(), d);
  VecX<S> inv_sigma(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const S mu = x.value().row(i).mean();
    const S var = (x.value().row(i).array() - mu).square().mean();
    const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_sigma(i) = is;
    xhat.row(i) = (x.value().row(i).array() - mu) * is;
  }
  MatX<S> out =
      (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  auto xhat_p = std::make_shared<MatX<S>>(std::move(xhat));
  auto is_p = std::make_shared<VecX<S>>(std::move(inv_sigma));
  return detail::make_op<S>(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat_p, is_p](Node<S>& self) {
        auto& xp = *self.parents[0];
        auto& gp = *self.parents[1];
        auto& bp = *self.parents[2];
        const MatX<S>& xh = *xhat_p;
        if (gp.requires_grad) gp.accumulate((self.grad.array() * xh.array()).colwise().sum().matrix());
        if (bp.requires_grad) bp.accumulate(self.grad.colwise().sum());
        if (xp.requires_grad) {
          MatX<S> gx(xh.rows(), xh.cols());
          for (Index i = 0; i < xh.rows(); ++i) {
            const auto dxhat = (self.grad.row(i).array() * gp.value.row(0).array()).eval();
            const S m1 = dxhat.mean();
            const S m2 = (dxhat * xh.row(i).array()).mean();
            gx.row(i) = ((dxhat - m1 - xh.row(i).array() * m2) * (*is_p)(i)).matrix();
          }
          xp.accumulate(gx);
        }
      },
      detail::any_requires<S>({&x, &gain, &bias}));
}

template <class S>
Variable<S> silu(const Variable<S>& x) {
  MatX<S> sig = (S(1) / (S(1) + (-x.value().array()).exp())).matrix();
  MatX<S> out = x.value().array() * sig.array();
  auto sig_p = std::make_shared<MatX<S>>(std::move(sig));
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [sig_p](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        const auto s = sig_p->array();
        const auto xv = xp.value.array();
        xp.accumulate((self.grad.array() * (s + xv * s * (S(1) - s))).matrix());
      },
      x.requires_grad());
}

template <class S>
Variable<S> exp_elem(const Variable<S>& x) {
  MatX<S> out = x.value().array().exp().matrix();
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (xp.requires_grad) xp.accumulate((self.grad.array() * self.value.array()).matrix());
      },
      x.requires_grad());
}

// y_i = x_i / sqrt(|x_i|^2 + eps), row-wise
template <class S>
Variable<S> l2_normalize_rows(const Variable<S>& x, double eps = 1e-12) {
  MatX<S> out(x.rows(), x.cols());
  VecX<S> inv_r(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const S r = std::sqrt(x.value().row(i).squaredNorm() + static_cast<S>(eps));
    inv_r(i) = S(1) / r;
    out.row(i) = x.value().row(i) * inv_r(i);
  }
  auto inv_p = std::make_shared<VecX<S>>(std::move(inv_r));
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [inv_p](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        MatX<S> gx(self.grad.rows(), self.grad.cols());
        for (Index i = 0; i < gx.rows(); ++i) {
          const auto y = self.value.row(i);
          const S dot = self.grad.row(i).dot(y);
          gx.row(i) = (self.grad.row(i) - dot * y) * (*inv_p)(i);
        }
        xp.accumulate(gx);
      },
      x.requires_grad());
}

template <class S>
Variable<S> sum_sq(const Variable<S>& x) {
  MatX<S> out(1, 1);
  out(0, 0) = x.value().squaredNorm();
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (xp.requires_grad) xp.accumulate(S(2) * self.grad(0, 0) * xp.value);
      },
      x.requires_grad());
}

template <class S>
Variable<S> mean_all(const Variable<S>& x) {
  MatX<S> out(1, 1);
  out(0, 0) = x.value().mean();
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        const S g = self.grad(0, 0) / static_cast<S>(xp.value.size());
        xp.accumulate(MatX<S>::Constant(xp.value.rows(), xp.value.cols(), g));
      },
      x.requires_grad());
}

// mean over rows of -log softmax(logits)[label]
template <class S>
Variable<S> cross_entropy(const Variable<S>& logits, const std::vector<int>& labels) {
  detail::check(static_cast<Index>(labels.size()) == logits.rows(),
                "cross_entropy: one label per logits row required");
  const Index n = logits.rows();
  MatX<S> probs(n, logits.cols());
  S loss = 0;
  for (Index i = 0; i < n; ++i) {
    detail::check(labels[i] >= 0 && labels[i] < logits.cols(), "cross_entropy: label out of range");
    const S mx = logits.value().row(i).maxCoeff();
    RowX<S> e = (logits.value().row(i).array() - mx).exp();
    const S z = e.sum();
    probs.row(i) = e / z;
    loss -= std::log(probs(i, labels[i]));
  }
  MatX<S> out(1, 1);
  out(0, 0) = loss / static_cast<S>(n);
  auto probs_p = std::make_shared<MatX<S>>(std::move(probs));
  auto labels_p = std::make_shared<std::vector<int>>(labels);
  return detail::make_op<S>(
      std::move(out), {logits.node()},
      [probs_p, labels_p](Node<S>& self) {
        auto& lp = *self.parents[0];
        if (!lp.requires_grad) return;
        MatX<S> g = *probs_p;
        const Index n = g.rows();
        for (Index i = 0; i < n; ++i) g(i, (*labels_p)[static_cast<size_t>(i)]) -= S(1);
        lp.accumulate(g * (self.grad(0, 0) / static_cast<S>(n)));
      },
      logits.requires_grad());
}

// out row g = concatenation of x rows listed in groups[g] (all equal size)
template <class S>
Variable<S> gather_concat_rows(const Variable<S>& x, const std::vector<std::vector<Index>>& groups) {
  detail::check(!groups.empty(), "gather_concat_rows: empty groups");
  const size_t m = groups[0].size();
  const Index d = x.cols();
  MatX<S> out(static_cast<Index>(groups.size()), static_cast<Index>(m) * d);
  for (size_t g = 0; g < groups.size(); ++g) {
    detail::check(groups[g].size() == m, "gather_concat_rows: ragged groups");
    for (size_t j = 0; j < m; ++j)
      out.block(static_cast<Index>(g), static_cast<Index>(j) * d, 1, d) = x.value().row(groups[g][j]);
  }
  auto groups_p = std::make_shared<std::vector<std::vector<Index>>>(groups);
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [groups_p, m, d](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        MatX<S> gx = MatX<S>::Zero(xp.value.rows(), xp.value.cols());
        for (size_t g = 0; g < groups_p->size(); ++g)
          for (size_t j = 0; j < m; ++j)
            gx.row((*groups_p)[g][j]) += self.grad.block(static_cast<Index>(g), static_cast<Index>(j) * d, 1, d);
        xp.accumulate(gx);
      },
      x.requires_grad());
}

// out row i = x row map[i]
template <class S>
Variable<S> replicate_rows(const Variable<S>& x, const std::vector<Index>& map) {
  MatX<S> out(static_cast<Index>(map.size()), x.cols());
  for (size_t i = 0; i < map.size(); ++i) out.row(static_cast<Index>(i)) = x.value().row(map[i]);
  auto map_p = std::make_shared<std::vector<Index>>(map);
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [map_p](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        MatX<S> gx = MatX<S>::Zero(xp.value.rows(), xp.value.cols());
        for (size_t i = 0; i < map_p->size(); ++i) gx.row((*map_p)[i]) += self.grad.row(static_cast<Index>(i));
        xp.accumulate(gx);
      },
      x.requires_grad());
}

template <class S>
Variable<S> concat_cols(const Variable<S>& a, const Variable<S>& b) {
  detail::check(a.rows() == b.rows(), "concat_cols: row counts differ");
  MatX<S> out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const Index ca = a.cols();
  return detail::make_op<S>(
      std::move(out), {a.node(), b.node()},
      [ca](Node<S>& self) {
        auto& ap = *self.parents[0];
        auto& bp = *self.parents[1];
        if (ap.requires_grad) ap.accumulate(self.grad.leftCols(ca));
        if (bp.requires_grad) bp.accumulate(self.grad.rightCols(self.grad.cols() - ca));
      },
      detail::any_requires<S>({&a, &b}));
}

// Per-block attention scores: q is (B*n) x d, k is (B*m) x d; block b of the
// output holds Q_b * K_b^T, so a plain row_softmax afterwards is per-item.
template <class S>
Variable<S> batched_scores(const Variable<S>& q, const Variable<S>& k, Index batch) {
  detail::check(batch > 0 && q.rows() % batch == 0 && k.rows() % batch == 0,
                "batched_scores: rows not divisible by batch");
  detail::check(q.cols() == k.cols(), "batched_scores: key/query dims differ");
  const Index n = q.rows() / batch, m = k.rows() / batch;
  MatX<S> out(q.rows(), m);
  for (Index b = 0; b < batch; ++b)
    out.middleRows(b * n, n).noalias() =
        q.value().middleRows(b * n, n) * k.value().middleRows(b * m, m).transpose();
  return detail::make_op<S>(
      std::move(out), {q.node(), k.node()},
      [batch, n, m](Node<S>& self) {
        auto& qp = *self.parents[0];
        auto& kp = *self.parents[1];
        if (qp.requires_grad) {
          MatX<S> gq(qp.value.rows(), qp.value.cols());
          for (Index b = 0; b < batch; ++b)
            gq.middleRows(b * n, n).noalias() = self.grad.middleRows(b * n, n) * kp.value.middleRows(b * m, m);
          qp.accumulate(gq);
        }
        if (kp.requires_grad) {
          MatX<S> gk(kp.value.rows(), kp.value.cols());
          for (Index b = 0; b < batch; ++b)
            gk.middleRows(b * m, m).noalias() =
                self.grad.middleRows(b * n, n).transpose() * qp.value.middleRows(b * n, n);
          kp.accumulate(gk);
        }
      },
      detail::any_requires<S>({&q, &k}));
}

// Per-block attention application: p is (B*n) x m, v is (B*m) x d.
template <class S>
Variable<S> batched_attend(const Variable<S>& p, const Variable<S>& v, Index batch) {
  detail::check(batch > 0 && p.rows() % batch == 0 && v.rows() % batch == 0,
                "batched_attend: rows not divisible by batch");
  const Index n = p.rows() / batch, m = v.rows() / batch;
  detail::check(p.cols() == m, "batched_attend: attention width mismatch");
  MatX<S> out(p.rows(), v.cols());
  for (Index b = 0; b < batch; ++b)
    out.middleRows(b * n, n).noalias() = p.value().middleRows(b * n, n) * v.value().middleRows(b * m, m);
  return detail::make_op<S>(
      std::move(out), {p.node(), v.node()},
      [batch, n, m](Node<S>& self) {
        auto& pp = *self.parents[0];
        auto& vp = *self.parents[1];
        if (pp.requires_grad) {
          MatX<S> gp(pp.value.rows(), pp.value.cols());
          for (Index b = 0; b < batch; ++b)
            gp.middleRows(b * n, n).noalias() =
                self.grad.middleRows(b * n, n) * vp.value.middleRows(b * m, m).transpose();
          pp.accumulate(gp);
        }
        if (vp.requires_grad) {
          MatX<S> gv(vp.value.rows(), vp.value.cols());
          for (Index b = 0; b < batch; ++b)
            gv.middleRows(b * m, m).noalias() =
                pp.value.middleRows(b * n, n).transpose() * self.grad.middleRows(b * n, n);
          vp.accumulate(gv);
        }
      },
      detail::any_requires<S>({&p, &v}));
}

// Adds t row b to every row of block b of x; x is (B*n) x d, t is B x d.
template <class S>
Variable<S> add_block_rows(const Variable<S>& x, const Variable<S>& t, Index batch) {
  detail::check(batch > 0 && x.rows() % batch == 0 && t.rows() == batch && t.cols() == x.cols(),
                "add_block_rows: shape mismatch");
  const Index n = x.rows() / batch;
  MatX<S> out = x.value();
  for (Index b = 0; b < batch; ++b) out.middleRows(b * n, n).rowwise() += t.value().row(b);
  return detail::make_op<S>(
      std::move(out), {x.node(), t.node()},
      [batch, n](Node<S>& self) {
        auto& xp = *self.parents[0];
        auto& tp = *self.parents[1];
        if (xp.requires_grad) xp.accumulate(self.grad);
        if (tp.requires_grad) {
          MatX<S> gt(batch, tp.value.cols());
          for (Index b = 0; b < batch; ++b) gt.row(b) = self.grad.middleRows(b * n, n).colwise().sum();
          tp.accumulate(gt);
        }
      },
      detail::any_requires<S>({&x, &t}));
}

// Per-block mean over rows: x is (B*n) x d, out is B x d.
template <class S>
Variable<S> block_mean_rows(const Variable<S>& x, Index batch) {
  detail::check(batch > 0 && x.rows() % batch == 0, "block_mean_rows: rows not divisible by batch");
  const Index n = x.rows() / batch;
  MatX<S> out(batch, x.cols());
  for (Index b = 0; b < batch; ++b) out.row(b) = x.value().middleRows(b * n, n).colwise().mean();
  return detail::make_op<S>(
      std::move(out), {x.node()},
      [batch, n](Node<S>& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        MatX<S> gx(xp.value.rows(), xp.value.cols());
        for (Index b = 0; b < batch; ++b)
          gx.middleRows(b * n, n) = (self.grad.row(b) / static_cast<S>(n)).replicate(n, 1);
        xp.accumulate(gx);
      },
      x.requires_grad());
}

// Backpropagates from a 1x1 root through the recorded tape.
template <class S>
void backward(const Variable<S>& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  auto r = root.node();
  if (!r->requires_grad) return;

  // iterative post-order DFS
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({r.get(), 0});
  visited.insert(r.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  r->accumulate(MatX<S>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && n->has_grad) n->backward(*n);
  }
  // release interior grads and the tape itself; leaves keep their grads
  for (Node<S>* n : order) {
    if (n->backward) {
      n->grad.resize(0, 0);
      n->has_grad = false;
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace datadream::ag
