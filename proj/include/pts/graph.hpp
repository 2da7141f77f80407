// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "pts/mat.hpp"

namespace pts {

// Reverse-mode autodiff over a tape of matrix nodes. Nodes are appended in
// forward order, so walking the tape backwards is a valid topological order.
// Handles are plain ints; backward lambdas capture ids, never pointers into
// the node vector (it reallocates while the forward pass grows).
template <typename Real>
class Graph {
 public:
  using BackFn = std::function<void(Graph&)>;

  struct Node {
    Mat<Real> val;
    Mat<Real> grad;  // allocated lazily
    BackFn back;
  };

  int add_node(Mat<Real> v) {
    nodes_.push_back(Node{std::move(v), Mat<Real>(), BackFn{}});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_back(int id, BackFn fn) { nodes_[id].back = std::move(fn); }

  int leaf(Mat<Real> v) { return add_node(std::move(v)); }

  const Mat<Real>& val(int id) const { return nodes_[id].val; }
  Mat<Real>& val(int id) { return nodes_[id].val; }

  Mat<Real>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.rows == 0 && n.grad.cols == 0) n.grad = Mat<Real>::zeros(n.val.rows, n.val.cols);
    return n.grad;
  }

  int rows(int id) const { return nodes_[id].val.rows; }
  int cols(int id) const { return nodes_[id].val.cols; }
  size_t node_count() const { return nodes_.size(); }

  void backward(int loss) {
    if (val(loss).rows != 1 || val(loss).cols != 1)
      throw std::runtime_error("backward: loss must be a scalar node");
    grad(loss)(0, 0) = Real(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && n.grad.size() > 0) n.back(*this);
    }
  }

  void check_finite(int id, const char* what) const {
    if (!nodes_[id].val.all_finite())
      throw std::runtime_error(std::string("numerical overflow in ") + what);
  }

  // ---- ops ----

  int matmul(int a, int b) {
    Mat<Real> out(rows(a), cols(b));
    gemm_nn_acc(val(a), val(b), out);
    const int id = add_node(std::move(out));
    set_back(id, [a, b, id](Graph& g) {
      gemm_nt_acc(g.grad(id), g.val(b), g.grad(a));
      gemm_tn_acc(g.val(a), g.grad(id), g.grad(b));
    });
    return id;
  }

  int add(int a, int b) {
    if (!val(a).same_shape(val(b))) throw std::runtime_error("dimension mismatch in add");
    Mat<Real> out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += val(b).a[i];
    const int id = add_node(std::move(out));
    set_back(id, [a, b, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      auto& db = g.grad(b);
      for (size_t i = 0; i < d.size(); ++i) {
        da.a[i] += d.a[i];
        db.a[i] += d.a[i];
      }
    });
    return id;
  }

  // a: (n x d), b: (1 x d) broadcast over rows
  int add_rowvec(int a, int b) {
    if (val(b).rows != 1 || val(b).cols != cols(a))
      throw std::runtime_error("dimension mismatch in add_rowvec");
    Mat<Real> out = val(a);
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) += val(b)(0, c);
    const int id = add_node(std::move(out));
    set_back(id, [a, b, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      auto& db = g.grad(b);
      for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) {
          da(r, c) += d(r, c);
          db(0, c) += d(r, c);
        }
    });
    return id;
  }

  int scale(int a, Real k) {
    Mat<Real> out = val(a);
    for (auto& v : out.a) v *= k;
    const int id = add_node(std::move(out));
    set_back(id, [a, k, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (size_t i = 0; i < d.size(); ++i) da.a[i] += k * d.a[i];
    });
    return id;
  }

  int relu(int a) {
    Mat<Real> out = val(a);
    for (auto& v : out.a) v = v > Real(0) ? v : Real(0);
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      const auto& x = g.val(a);
      for (size_t i = 0; i < d.size(); ++i)
        if (x.a[i] > Real(0)) da.a[i] += d.a[i];
    });
    return id;
  }

  int tanh_act(int a) {
    Mat<Real> out = val(a);
    for (auto& v : out.a) v = std::tanh(v);
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      const auto& y = g.val(id);
      for (size_t i = 0; i < d.size(); ++i) da.a[i] += d.a[i] * (Real(1) - y.a[i] * y.a[i]);
    });
    return id;
  }

  int softmax_rows(int a) {
    Mat<Real> out = val(a);
    for (int r = 0; r < out.rows; ++r) {
      Real* p = out.row_ptr(r);
      Real mx = p[0];
      for (int c = 1; c < out.cols; ++c) mx = std::max(mx, p[c]);
      Real s = 0;
      for (int c = 0; c < out.cols; ++c) {
        p[c] = std::exp(p[c] - mx);
        s += p[c];
      }
      for (int c = 0; c < out.cols; ++c) p[c] /= s;
    }
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      const auto& y = g.val(id);
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (int r = 0; r < y.rows; ++r) {
        Real dot = 0;
        for (int c = 0; c < y.cols; ++c) dot += d(r, c) * y(r, c);
        for (int c = 0; c < y.cols; ++c) da(r, c) += y(r, c) * (d(r, c) - dot);
      }
    });
    return id;
  }

  int log_softmax_rows(int a) {
    Mat<Real> out = val(a);
    for (int r = 0; r < out.rows; ++r) {
      Real* p = out.row_ptr(r);
      Real mx = p[0];
      for (int c = 1; c < out.cols; ++c) mx = std::max(mx, p[c]);
      Real s = 0;
      for (int c = 0; c < out.cols; ++c) s += std::exp(p[c] - mx);
      const Real lse = mx + std::log(s);
      for (int c = 0; c < out.cols; ++c) p[c] -= lse;
    }
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      const auto& y = g.val(id);
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (int r = 0; r < y.rows; ++r) {
        Real sum = 0;
        for (int c = 0; c < y.cols; ++c) sum += d(r, c);
        for (int c = 0; c < y.cols; ++c) da(r, c) += d(r, c) - std::exp(y(r, c)) * sum;
      }
    });
    return id;
  }

  // Row-wise layer norm with learnable gain/bias (1 x d each).
  int layer_norm_rows(int x, int gain, int bias, Real eps) {
    const auto& xv = val(x);
    const int n = xv.rows, d = xv.cols;
    if (val(gain).cols != d || val(bias).cols != d)
      throw std::runtime_error("dimension mismatch in layer_norm");
    Mat<Real> out(n, d);
    auto xhat = std::make_shared<Mat<Real>>(n, d);
    auto inv_std = std::make_shared<std::vector<Real>>(n);
    for (int r = 0; r < n; ++r) {
      const Real* p = xv.row_ptr(r);
      Real mean = 0;
      for (int c = 0; c < d; ++c) mean += p[c];
      mean /= d;
      Real var = 0;
      for (int c = 0; c < d; ++c) {
        const Real t = p[c] - mean;
        var += t * t;
      }
      var /= d;
      const Real istd = Real(1) / std::sqrt(var + eps);
      (*inv_std)[r] = istd;
      for (int c = 0; c < d; ++c) {
        const Real h = (p[c] - mean) * istd;
        (*xhat)(r, c) = h;
        out(r, c) = val(gain)(0, c) * h + val(bias)(0, c);
      }
    }
    const int id = add_node(std::move(out));
    set_back(id, [x, gain, bias, xhat, inv_std, id](Graph& g) {
      auto& d_out = g.grad(id);
      auto& dx = g.grad(x);
      auto& dg = g.grad(gain);
      auto& db = g.grad(bias);
      const auto& gn = g.val(gain);
      const int n = d_out.rows, d = d_out.cols;
      for (int r = 0; r < n; ++r) {
        Real mean_dh = 0, mean_dh_h = 0;
        for (int c = 0; c < d; ++c) {
          const Real dh = d_out(r, c) * gn(0, c);
          dg(0, c) += d_out(r, c) * (*xhat)(r, c);
          db(0, c) += d_out(r, c);
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)(r, c);
        }
        mean_dh /= d;
        mean_dh_h /= d;
        for (int c = 0; c < d; ++c) {
          const Real dh = d_out(r, c) * gn(0, c);
          dx(r, c) += (*inv_std)[r] * (dh - mean_dh - (*xhat)(r, c) * mean_dh_h);
        }
      }
    });
    return id;
  }

  int concat_cols(const std::vector<int>& xs) {
    const int n = rows(xs[0]);
    int total = 0;
    for (int x : xs) {
      if (rows(x) != n) throw std::runtime_error("dimension mismatch in concat_cols");
      total += cols(x);
    }
    Mat<Real> out(n, total);
    int off = 0;
    for (int x : xs) {
      const auto& v = val(x);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < v.cols; ++c) out(r, off + c) = v(r, c);
      off += v.cols;
    }
    const int id = add_node(std::move(out));
    set_back(id, [xs, id](Graph& g) {
      auto& d = g.grad(id);
      int off = 0;
      for (int x : xs) {
        auto& dx = g.grad(x);
        for (int r = 0; r < dx.rows; ++r)
          for (int c = 0; c < dx.cols; ++c) dx(r, c) += d(r, off + c);
        off += dx.cols;
      }
    });
    return id;
  }

  int concat_rows(const std::vector<int>& xs) {
    const int d = cols(xs[0]);
    int total = 0;
    for (int x : xs) {
      if (cols(x) != d) throw std::runtime_error("dimension mismatch in concat_rows");
      total += rows(x);
    }
    Mat<Real> out(total, d);
    int off = 0;
    for (int x : xs) {
      const auto& v = val(x);
      for (int r = 0; r < v.rows; ++r)
        for (int c = 0; c < d; ++c) out(off + r, c) = v(r, c);
      off += v.rows;
    }
    const int id = add_node(std::move(out));
    set_back(id, [xs, id](Graph& g) {
      auto& dd = g.grad(id);
      int off = 0;
      for (int x : xs) {
        auto& dx = g.grad(x);
        for (int r = 0; r < dx.rows; ++r)
          for (int c = 0; c < dx.cols; ++c) dx(r, c) += dd(off + r, c);
        off += dx.rows;
      }
    });
    return id;
  }

  int slice_cols(int a, int c0, int c1) {
    Mat<Real> out(rows(a), c1 - c0);
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) = val(a)(r, c0 + c);
    const int id = add_node(std::move(out));
    set_back(id, [a, c0, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) da(r, c0 + c) += d(r, c);
    });
    return id;
  }

  int slice_rows(int a, int r0, int r1) {
    Mat<Real> out(r1 - r0, cols(a));
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) = val(a)(r0 + r, c);
    const int id = add_node(std::move(out));
    set_back(id, [a, r0, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) da(r0 + r, c) += d(r, c);
    });
    return id;
  }

  int transpose(int a) {
    Mat<Real> out(cols(a), rows(a));
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out(r, c) = val(a)(c, r);
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) da(c, r) += d(r, c);
    });
    return id;
  }

  // Gather rows from a table node. Negative indices yield zero rows and
  // receive no gradient (used for positions with no source record).
  int gather_rows(int table, std::vector<int> idx) {
    Mat<Real> out(static_cast<int>(idx.size()), cols(table));
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      if (idx[i] >= rows(table)) throw std::runtime_error("gather_rows: index out of range");
      for (int c = 0; c < out.cols; ++c) out(static_cast<int>(i), c) = val(table)(idx[i], c);
    }
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    const int id = add_node(std::move(out));
    set_back(id, [table, ix, id](Graph& g) {
      auto& d = g.grad(id);
      auto& dt = g.grad(table);
      for (size_t i = 0; i < ix->size(); ++i) {
        if ((*ix)[i] < 0) continue;
        for (int c = 0; c < d.cols; ++c) dt((*ix)[i], c) += d(static_cast<int>(i), c);
      }
    });
    return id;
  }

  // a: (n x d), b: (k x d) -> (n*k x d); row i*k+j = a_i + b_j.
  int outer_add_rows(int a, int b) {
    if (cols(a) != cols(b)) throw std::runtime_error("dimension mismatch in outer_add_rows");
    const int n = rows(a), k = rows(b), d = cols(a);
    Mat<Real> out(n * k, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j)
        for (int c = 0; c < d; ++c) out(i * k + j, c) = val(a)(i, c) + val(b)(j, c);
    const int id = add_node(std::move(out));
    set_back(id, [a, b, n, k, id](Graph& g) {
      auto& dd = g.grad(id);
      auto& da = g.grad(a);
      auto& db = g.grad(b);
      const int d = dd.cols;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
          for (int c = 0; c < d; ++c) {
            da(i, c) += dd(i * k + j, c);
            db(j, c) += dd(i * k + j, c);
          }
    });
    return id;
  }

  int reshape(int a, int r, int c) {
    if (static_cast<size_t>(r) * c != val(a).size()) throw std::runtime_error("reshape: size mismatch");
    Mat<Real> out(r, c, val(a).a);
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (size_t i = 0; i < d.size(); ++i) da.a[i] += d.a[i];
    });
    return id;
  }

  int sum_all(int a) {
    Mat<Real> out(1, 1);
    for (Real v : val(a).a) out(0, 0) += v;
    const int id = add_node(std::move(out));
    set_back(id, [a, id](Graph& g) {
      const Real d = g.grad(id)(0, 0);
      auto& da = g.grad(a);
      for (auto& v : da.a) v += d;
    });
    return id;
  }

  // -sum_i logp(i, targets[i]); logp from log_softmax_rows.
  int nll_pick(int logp, std::vector<int> targets) {
    if (static_cast<int>(targets.size()) != rows(logp))
      throw std::runtime_error("nll_pick: target count mismatch");
    Mat<Real> out(1, 1);
    for (size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] < 0 || targets[i] >= cols(logp)) throw std::runtime_error("nll_pick: target out of range");
      out(0, 0) -= val(logp)(static_cast<int>(i), targets[i]);
    }
    auto tg = std::make_shared<std::vector<int>>(std::move(targets));
    const int id = add_node(std::move(out));
    set_back(id, [logp, tg, id](Graph& g) {
      const Real d = g.grad(id)(0, 0);
      auto& dl = g.grad(logp);
      for (size_t i = 0; i < tg->size(); ++i) dl(static_cast<int>(i), (*tg)[i]) -= d;
    });
    return id;
  }

  // Inverted dropout; identity when rate == 0.
  int dropout(int a, Real rate, Rng& rng) {
    if (rate <= Real(0)) return a;
    Mat<Real> out = val(a);
    auto mask = std::make_shared<std::vector<Real>>(out.size());
    const Real keep = Real(1) - rate;
    for (size_t i = 0; i < out.size(); ++i) {
      const bool kept = rng.uniform() >= static_cast<double>(rate);
      (*mask)[i] = kept ? Real(1) / keep : Real(0);
      out.a[i] *= (*mask)[i];
    }
    const int id = add_node(std::move(out));
    set_back(id, [a, mask, id](Graph& g) {
      auto& d = g.grad(id);
      auto& da = g.grad(a);
      for (size_t i = 0; i < d.size(); ++i) da.a[i] += d.a[i] * (*mask)[i];
    });
    return id;
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace pts
