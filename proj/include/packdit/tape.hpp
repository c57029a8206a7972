#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace packdit {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct ParamStore;

// Reverse-mode tape over dense matrices. Values are computed eagerly as the
// graph is built; backward() replays the recorded closures in reverse.
// Gradients for parameter leaves are accumulated into an external sink so a
// fresh tape can be built per batch item while gradients pool across items.
template <typename S>
class Tape {
 public:
  using M = Mat<S>;

  explicit Tape(std::vector<M>* param_grad_sink = nullptr)
      : sink_(param_grad_sink) {
    nodes_.reserve(512);
  }

  const M& val(int id) const { return nodes_[id].val; }
  M& grad(int id) { return nodes_[id].grad; }

  int input(M v) { return push(std::move(v), nullptr); }

  // Leaf bound to parameter `idx` in the store; backward adds into the sink.
  int param(const ParamStore<S>& store, int idx);

  int add(int a, int b) {
    M v = nodes_[a].val + nodes_[b].val;
    return push(std::move(v), [this, a, b](const M& g) {
      acc(a, g);
      acc(b, g);
    });
  }

  int sub(int a, int b) {
    M v = nodes_[a].val - nodes_[b].val;
    return push(std::move(v), [this, a, b](const M& g) {
      acc(a, g);
      accn(b, g);
    });
  }

  int mul(int a, int b) {
    M v = nodes_[a].val.cwiseProduct(nodes_[b].val);
    return push(std::move(v), [this, a, b](const M& g) {
      acc(a, g.cwiseProduct(nodes_[b].val));
      acc(b, g.cwiseProduct(nodes_[a].val));
    });
  }

  int scale(int a, S c) {
    M v = nodes_[a].val * c;
    return push(std::move(v), [this, a, c](const M& g) { acc(a, g * c); });
  }

  int matmul(int a, int b) {
    M v = nodes_[a].val * nodes_[b].val;
    return push(std::move(v), [this, a, b](const M& g) {
      acc(a, g * nodes_[b].val.transpose());
      acc(b, nodes_[a].val.transpose() * g);
    });
  }

  // a * b^T
  int matmul_nt(int a, int b) {
    M v = nodes_[a].val * nodes_[b].val.transpose();
    return push(std::move(v), [this, a, b](const M& g) {
      acc(a, g * nodes_[b].val);
      acc(b, g.transpose() * nodes_[a].val);
    });
  }

  // Broadcast a 1 x c row over every row of a.
  int add_rowvec(int a, int v) {
    M out = nodes_[a].val.rowwise() + nodes_[v].val.row(0);
    return push(std::move(out), [this, a, v](const M& g) {
      acc(a, g);
      acc(v, g.colwise().sum());
    });
  }

  int mul_rowvec(int a, int v) {
    M out =
        (nodes_[a].val.array().rowwise() * nodes_[v].val.row(0).array())
            .matrix();
    return push(std::move(out), [this, a, v](const M& g) {
      acc(a, (g.array().rowwise() * nodes_[v].val.row(0).array()).matrix());
      acc(v, (g.cwiseProduct(nodes_[a].val)).colwise().sum());
    });
  }

  // x .* (1 + scale) + shift, scale/shift broadcast 1 x c rows.
  int modulate(int x, int scale_row, int shift_row) {
    const auto& sc = nodes_[scale_row].val.row(0).array();
    const auto& sh = nodes_[shift_row].val.row(0).array();
    M out =
        ((nodes_[x].val.array().rowwise() * (sc + S(1))).rowwise() + sh)
            .matrix();
    return push(std::move(out), [this, x, scale_row, shift_row](const M& g) {
      const auto& s2 = nodes_[scale_row].val.row(0).array();
      acc(x, (g.array().rowwise() * (s2 + S(1))).matrix());
      acc(scale_row, g.cwiseProduct(nodes_[x].val).colwise().sum());
      acc(shift_row, g.colwise().sum());
    });
  }

  int softmax_rows(int a) {
    M v = nodes_[a].val;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const S m = v.row(i).maxCoeff();
      v.row(i) = (v.row(i).array() - m).exp();
      v.row(i) /= v.row(i).sum();
    }
    int id = push(std::move(v), nullptr);
    nodes_[id].back = [this, a, id](const M& g) {
      const M& p = nodes_[id].val;
      M gp = g.cwiseProduct(p);
      Eigen::Matrix<S, Eigen::Dynamic, 1> rs = gp.rowwise().sum();
      acc(a, gp - (p.array().colwise() * rs.array()).matrix());
    };
    return id;
  }

  // Per-row layer norm, no affine part.
  int layernorm_rows(int a, S eps = S(1e-5)) {
    const M& x = nodes_[a].val;
    const Eigen::Index n = x.cols();
    Eigen::Matrix<S, Eigen::Dynamic, 1> mu = x.rowwise().mean();
    M xc = (x.array().colwise() - mu.array()).matrix();
    Eigen::Matrix<S, Eigen::Dynamic, 1> var =
        xc.array().square().rowwise().mean();
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv =
        (var.array() + eps).rsqrt().matrix();
    M y = (xc.array().colwise() * inv.array()).matrix();
    int id = push(std::move(y), nullptr);
    nodes_[id].back = [this, a, id, inv, n](const M& g) {
      const M& yv = nodes_[id].val;
      Eigen::Matrix<S, Eigen::Dynamic, 1> gmean = g.rowwise().mean();
      Eigen::Matrix<S, Eigen::Dynamic, 1> gymean =
          g.cwiseProduct(yv).rowwise().mean();
      M dx = (((g.array().colwise() - gmean.array()) -
               (yv.array().colwise() * gymean.array()))
                  .colwise() *
              inv.array())
                 .matrix();
      (void)n;
      acc(a, dx);
    };
    return id;
  }

  int silu(int a) {
    const M& x = nodes_[a].val;
    M s = (S(1) / (S(1) + (-x.array()).exp())).matrix();
    M v = x.cwiseProduct(s);
    return push(std::move(v), [this, a, s](const M& g) {
      const M& x2 = nodes_[a].val;
      M d = (s.array() * (S(1) + x2.array() * (S(1) - s.array()))).matrix();
      acc(a, g.cwiseProduct(d));
    });
  }

  int gelu(int a) {
    const M& x = nodes_[a].val;
    M cdf = x.unaryExpr([](S v) {
      return S(0.5) * (S(1) + S(std::erf(static_cast<double>(v) *
                                         0.7071067811865476)));
    });
    M v = x.cwiseProduct(cdf);
    return push(std::move(v), [this, a, cdf](const M& g) {
      const M& x2 = nodes_[a].val;
      const S c = S(0.3989422804014327);  // 1/sqrt(2*pi)
      M pdf = (c * (-S(0.5) * x2.array().square()).exp()).matrix();
      M d = (cdf.array() + x2.array() * pdf.array()).matrix();
      acc(a, g.cwiseProduct(d));
    });
  }

  int tanh_op(int a) {
    M v = nodes_[a].val.array().tanh();
    int id = push(std::move(v), nullptr);
    nodes_[id].back = [this, a, id](const M& g) {
      const M& t = nodes_[id].val;
      acc(a, (g.array() * (S(1) - t.array().square())).matrix());
    };
    return id;
  }

  int slice_cols(int a, int j0, int n) {
    M v = nodes_[a].val.middleCols(j0, n);
    return push(std::move(v), [this, a, j0, n](const M& g) {
      ensure(a);
      nodes_[a].grad.middleCols(j0, n) += g;
    });
  }

  int slice_rows(int a, int i0, int n) {
    M v = nodes_[a].val.middleRows(i0, n);
    return push(std::move(v), [this, a, i0, n](const M& g) {
      ensure(a);
      nodes_[a].grad.middleRows(i0, n) += g;
    });
  }

  int hstack(const std::vector<int>& parts) {
    Eigen::Index rows = nodes_[parts[0]].val.rows(), cols = 0;
    for (int p : parts) cols += nodes_[p].val.cols();
    M v(rows, cols);
    Eigen::Index j = 0;
    for (int p : parts) {
      v.middleCols(j, nodes_[p].val.cols()) = nodes_[p].val;
      j += nodes_[p].val.cols();
    }
    return push(std::move(v), [this, parts](const M& g) {
      Eigen::Index jj = 0;
      for (int p : parts) {
        const Eigen::Index c = nodes_[p].val.cols();
        acc(p, g.middleCols(jj, c));
        jj += c;
      }
    });
  }

  int vstack(const std::vector<int>& parts) {
    Eigen::Index cols = nodes_[parts[0]].val.cols(), rows = 0;
    for (int p : parts) rows += nodes_[p].val.rows();
    M v(rows, cols);
    Eigen::Index i = 0;
    for (int p : parts) {
      v.middleRows(i, nodes_[p].val.rows()) = nodes_[p].val;
      i += nodes_[p].val.rows();
    }
    return push(std::move(v), [this, parts](const M& g) {
      Eigen::Index ii = 0;
      for (int p : parts) {
        const Eigen::Index r = nodes_[p].val.rows();
        acc(p, g.middleRows(ii, r));
        ii += r;
      }
    });
  }

  // Row gather (embedding lookup); backward scatter-adds.
  int gather_rows(int a, std::vector<int> ids) {
    M v(static_cast<Eigen::Index>(ids.size()), nodes_[a].val.cols());
    for (size_t i = 0; i < ids.size(); ++i) v.row(i) = nodes_[a].val.row(ids[i]);
    return push(std::move(v), [this, a, ids = std::move(ids)](const M& g) {
      ensure(a);
      for (size_t i = 0; i < ids.size(); ++i)
        nodes_[a].grad.row(ids[i]) += g.row(i);
    });
  }

  // mean((a-b)^2) over all entries -> 1x1.
  int mean_sq_diff(int a, int b) {
    const M d = nodes_[a].val - nodes_[b].val;
    const S n = static_cast<S>(d.size());
    M v(1, 1);
    v(0, 0) = d.squaredNorm() / n;
    return push(std::move(v), [this, a, b, d, n](const M& g) {
      M gd = d * (S(2) * g(0, 0) / n);
      acc(a, gd);
      accn(b, gd);
    });
  }

  // Mean over rows with weight w_i of -log softmax(logits)_i[target_i].
  // Weights are typically 0/1 masks; mean is over sum of weights.
  int cross_entropy_rows(int logits, std::vector<int> targets,
                         std::vector<S> weights) {
    const M& z = nodes_[logits].val;
    const Eigen::Index r = z.rows();
    M p(r, z.cols());
    S wsum = 0, loss = 0;
    for (Eigen::Index i = 0; i < r; ++i) {
      const S m = z.row(i).maxCoeff();
      p.row(i) = (z.row(i).array() - m).exp();
      const S denom = p.row(i).sum();
      p.row(i) /= denom;
      loss -= weights[i] * std::log(std::max(p(i, targets[i]), S(1e-30)));
      wsum += weights[i];
    }
    loss /= std::max(wsum, S(1));
    M v(1, 1);
    v(0, 0) = loss;
    return push(std::move(v),
                [this, logits, targets = std::move(targets),
                 weights = std::move(weights), p = std::move(p),
                 wsum](const M& g) {
                  M gz = p;
                  for (Eigen::Index i = 0; i < gz.rows(); ++i) {
                    gz(i, targets[i]) -= S(1);
                    gz.row(i) *= weights[i] / std::max(wsum, S(1));
                  }
                  acc(logits, gz * g(0, 0));
                });
  }

  void backward(int root) {
    ensure(root);
    nodes_[root].grad.setConstant(S(1));
    for (int i = root; i >= 0; --i) {
      if (!nodes_[i].back || nodes_[i].grad.size() == 0) continue;
      nodes_[i].back(nodes_[i].grad);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M val;
    M grad;
    std::function<void(const M&)> back;
  };

  int push(M v, std::function<void(const M&)> back) {
    nodes_.push_back(Node{std::move(v), M(), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void ensure(int i) {
    if (nodes_[i].grad.size() == 0)
      nodes_[i].grad = M::Zero(nodes_[i].val.rows(), nodes_[i].val.cols());
  }

  template <typename Expr>
  void acc(int i, const Expr& g) {
    ensure(i);
    nodes_[i].grad += g;
  }

  template <typename Expr>
  void accn(int i, const Expr& g) {
    ensure(i);
    nodes_[i].grad -= g;
  }

  std::vector<Node> nodes_;
  std::vector<M>* sink_;

  friend struct ParamStore<S>;

 public:
  std::vector<M>* sink() { return sink_; }
};

// Named parameter tensors with stable ordering for checkpoints and
// gradient sinks.
template <typename S>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat<S>> values;

  int add(const std::string& name, Mat<S> v) {
    names.push_back(name);
    values.push_back(std::move(v));
    return static_cast<int>(values.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  size_t count() const { return values.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& v : values) n += static_cast<size_t>(v.size());
    return n;
  }

  std::vector<Mat<S>> zero_grads() const {
    std::vector<Mat<S>> g;
    g.reserve(values.size());
    for (const auto& v : values) g.push_back(Mat<S>::Zero(v.rows(), v.cols()));
    return g;
  }

  template <typename S2>
  ParamStore<S2> cast() const {
    ParamStore<S2> out;
    for (size_t i = 0; i < values.size(); ++i)
      out.add(names[i], values[i].template cast<S2>());
    return out;
  }
};

template <typename S>
int Tape<S>::param(const ParamStore<S>& store, int idx) {
  M v = store.values[idx];
  return push(std::move(v), [this, idx](const M& g) {
    if (!sink_) return;
    (*sink_)[idx] += g;
  });
}

}  // namespace packdit
