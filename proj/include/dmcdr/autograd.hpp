#pragma once

// Matrix-level reverse-mode differentiation.
//
// A Tape records operations on dense row-major matrices in creation order,
// which is already a topological order, so backward() is a single reverse
// sweep. Parameters enter as references to external storage; their gradients
// are accumulated straight into caller-owned buffers.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "dmcdr/error.hpp"

namespace dmcdr {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

namespace ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class S>
class Tape {
 public:
  using Mat = Matrix<S>;

  Tape() { nodes_.reserve(128); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Mat& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.val;
  }

  // Gradient of the last backward() seed w.r.t. an interior node.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  S scalar(Var v) const { return value(v)(0, 0); }

  Var constant(Mat v) { return push(std::move(v), false); }

  // Leaf bound to external storage. `grad_out` may be null (frozen input).
  Var parameter(const Mat& value, Mat* grad_out) {
    Node n;
    n.ref = &value;
    n.ext_grad = grad_out;
    n.requires_grad = grad_out != nullptr;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  // Rows of an embedding table; gradients scatter back into `grad_out`.
  Var gather_rows(const Mat& table, Mat* grad_out, std::vector<int> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), table.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = table.row(rows[i]);
    Var v = push(std::move(out), grad_out != nullptr);
    if (grad_out) {
      nodes_[v.id].backward = [this, v, grad_out, rows = std::move(rows)] {
        const Mat& g = nodes_[v.id].grad;
        for (std::size_t i = 0; i < rows.size(); ++i) grad_out->row(rows[i]) += g.row(i);
      };
    }
    return v;
  }

  Var matmul(Var a, Var b) {
    Var v = push(value(a) * value(b), needs(a, b));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, b] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(a)) accumulate(a, g * value(b).transpose());
        if (tracks(b)) accumulate(b, value(a).transpose() * g);
      };
    }
    return v;
  }

  // x * W^T + b, with W stored (out x in) and b a 1 x out row.
  Var linear(Var x, Var w, Var b) {
    Mat out = value(x) * value(w).transpose();
    if (b.valid()) out.rowwise() += value(b).row(0);
    const bool rg = tracks(x) || tracks(w) || (b.valid() && tracks(b));
    Var v = push(std::move(out), rg);
    if (rg) {
      nodes_[v.id].backward = [this, v, x, w, b] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(x)) accumulate(x, g * value(w));
        if (tracks(w)) accumulate(w, g.transpose() * value(x));
        if (b.valid() && tracks(b)) accumulate(b, g.colwise().sum());
      };
    }
    return v;
  }

  Var add(Var a, Var b) {
    Var v = push(value(a) + value(b), needs(a, b));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, b] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(a)) accumulate(a, g);
        if (tracks(b)) accumulate(b, g);
      };
    }
    return v;
  }

  Var sub(Var a, Var b) {
    Var v = push(value(a) - value(b), needs(a, b));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, b] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(a)) accumulate(a, g);
        if (tracks(b)) accumulate(b, -g);
      };
    }
    return v;
  }

  Var scale(Var a, S s) {
    Var v = push(value(a) * s, tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, s] { accumulate(a, nodes_[v.id].grad * s); };
    }
    return v;
  }

  // Broadcast a 1 x n row over every row of a.
  Var add_row(Var a, Var row) {
    Mat out = value(a);
    out.rowwise() += value(row).row(0);
    Var v = push(std::move(out), needs(a, row));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, row] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(a)) accumulate(a, g);
        if (tracks(row)) accumulate(row, g.colwise().sum());
      };
    }
    return v;
  }

  Var tanh(Var a) {
    Mat out = value(a).array().tanh().matrix();
    Var v = push(std::move(out), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a] {
        const Mat& y = value(v);
        accumulate(a, (nodes_[v.id].grad.array() * (S(1) - y.array().square())).matrix());
      };
    }
    return v;
  }

  // GELU, tanh approximation.
  Var gelu(Var a) {
    const S k = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
    const S c = static_cast<S>(0.044715);
    const auto& x = value(a).array();
    Mat th = (k * (x + c * x.cube())).tanh().matrix();
    Mat out = (S(0.5) * x * (S(1) + th.array())).matrix();
    Var v = push(std::move(out), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, th = std::move(th), k, c] {
        const auto& xa = value(a).array();
        const auto t = th.array();
        auto d = S(0.5) * (S(1) + t) +
                 S(0.5) * xa * (S(1) - t.square()) * k * (S(1) + S(3) * c * xa.square());
        accumulate(a, (nodes_[v.id].grad.array() * d).matrix());
      };
    }
    return v;
  }

  // Row-wise layer normalization with 1 x n gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, S eps = S(1e-5)) {
    const Mat& X = value(x);
    const Eigen::Index n = X.cols();
    Mat xhat(X.rows(), n);
    std::vector<S> inv_std(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const S mu = X.row(r).mean();
      const S var = (X.row(r).array() - mu).square().mean();
      inv_std[r] = S(1) / std::sqrt(var + eps);
      xhat.row(r) = (X.row(r).array() - mu) * inv_std[r];
    }
    Mat out = xhat;
    out.array().rowwise() *= value(gain).row(0).array();
    out.rowwise() += value(bias).row(0);
    const bool rg = tracks(x) || tracks(gain) || tracks(bias);
    Var v = push(std::move(out), rg);
    if (rg) {
      nodes_[v.id].backward = [this, v, x, gain, bias, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)] {
        const Mat& g = nodes_[v.id].grad;
        if (tracks(gain)) accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
        if (tracks(bias)) accumulate(bias, g.colwise().sum());
        if (tracks(x)) {
          Mat dxhat = g;
          dxhat.array().rowwise() *= value(gain).row(0).array();
          Mat dx(g.rows(), g.cols());
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const S m1 = dxhat.row(r).mean();
            const S m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
            dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          accumulate(x, dx);
        }
      };
    }
    return v;
  }

  // Row-wise softmax restricted to columns with key_valid[c] != 0; masked
  // columns get exactly zero weight.
  Var masked_softmax(Var scores, std::vector<std::uint8_t> key_valid) {
    const Mat& X = value(scores);
    Mat out = Mat::Zero(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      S mx = -std::numeric_limits<S>::infinity();
      for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (key_valid[c]) mx = std::max(mx, X(r, c));
      }
      if (!std::isfinite(mx)) throw DataError("softmax over an empty key set");
      S sum = 0;
      for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (key_valid[c]) sum += out(r, c) = std::exp(X(r, c) - mx);
      }
      out.row(r) /= sum;
    }
    Var v = push(std::move(out), tracks(scores));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, scores] {
        const Mat& y = value(v);
        const Mat& g = nodes_[v.id].grad;
        Mat d = y.cwiseProduct(g);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const S inner = d.row(r).sum();
          d.row(r) -= y.row(r) * inner;
        }
        accumulate(scores, d);
      };
    }
    return v;
  }

  Var transpose(Var a) {
    Var v = push(value(a).transpose(), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a] { accumulate(a, nodes_[v.id].grad.transpose()); };
    }
    return v;
  }

  // Column-wise concatenation of equally tall blocks.
  Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::vector<Var>(parts)); }

  Var concat_cols(std::vector<Var> parts) {
    Eigen::Index rows = value(parts.front()).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw ConfigError("concat_cols: row mismatch");
      cols += value(p).cols();
      rg = rg || tracks(p);
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    Var v = push(std::move(out), rg);
    if (rg) {
      nodes_[v.id].backward = [this, v, parts = std::move(parts)] {
        const Mat& g = nodes_[v.id].grad;
        Eigen::Index at = 0;
        for (Var p : parts) {
          const Eigen::Index w = value(p).cols();
          if (tracks(p)) accumulate(p, g.middleCols(at, w));
          at += w;
        }
      };
    }
    return v;
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index width) {
    Var v = push(value(a).middleCols(start, width), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, start, width] {
        Mat full = Mat::Zero(value(a).rows(), value(a).cols());
        full.middleCols(start, width) = nodes_[v.id].grad;
        accumulate(a, full);
      };
    }
    return v;
  }

  // Mean over rows with valid[r] != 0, as a 1 x n row.
  Var mean_rows(Var a, std::vector<std::uint8_t> valid) {
    const Mat& X = value(a);
    Eigen::Index count = 0;
    Mat out = Mat::Zero(1, X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      if (valid[r]) {
        out += X.row(r);
        ++count;
      }
    }
    if (count == 0) throw DataError("empty history");
    out /= static_cast<S>(count);
    Var v = push(std::move(out), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, valid = std::move(valid), count] {
        const Mat& g = nodes_[v.id].grad;
        Mat d = Mat::Zero(value(a).rows(), value(a).cols());
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
          if (valid[r]) d.row(r) = g / static_cast<S>(count);
        }
        accumulate(a, d);
      };
    }
    return v;
  }

  // Frobenius inner product as a 1 x 1 node.
  Var dot(Var a, Var b) {
    Mat out(1, 1);
    out(0, 0) = value(a).cwiseProduct(value(b)).sum();
    Var v = push(std::move(out), needs(a, b));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a, b] {
        const S g = nodes_[v.id].grad(0, 0);
        if (tracks(a)) accumulate(a, value(b) * g);
        if (tracks(b)) accumulate(b, value(a) * g);
      };
    }
    return v;
  }

  Var sum_squares(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    Var v = push(std::move(out), tracks(a));
    if (tracks(v)) {
      nodes_[v.id].backward = [this, v, a] {
        accumulate(a, value(a) * (S(2) * nodes_[v.id].grad(0, 0)));
      };
    }
    return v;
  }

  // Reverse sweep from `root`, seeded with d(root) = seed.
  void backward(Var root, S seed = S(1)) {
    if (!tracks(root)) return;
    Node& r = nodes_[root.id];
    r.grad = Mat::Constant(value(root).rows(), value(root).cols(), seed);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) n.backward();
    }
  }

 private:
  struct Node {
    Mat val;
    const Mat* ref = nullptr;
    Mat grad;
    Mat* ext_grad = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Mat v, bool requires_grad) {
    Node n;
    n.val = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  bool tracks(Var v) const { return nodes_[v.id].requires_grad; }
  bool needs(Var a, Var b) const { return tracks(a) || tracks(b); }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (n.ext_grad) {
      *n.ext_grad += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace ad
}  // namespace dmcdr
