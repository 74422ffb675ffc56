#pragma once

// Plain-loop re-evaluations of the model's forward pieces, used as oracles.

#include <cmath>
#include <numbers>
#include <vector>

#include "dmcdr/params.hpp"
#include "dmcdr/rng.hpp"

namespace ref {

using Mat = dmcdr::Matrix<double>;
using Row = dmcdr::RowVector<double>;
using Params = dmcdr::ModelParams<double>;

inline Mat random_matrix(int rows, int cols, std::uint64_t seed) {
  dmcdr::CounterRng r(seed);
  Mat m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.uniform(-1.0, 1.0);
  return m;
}

inline Row random_row(int n, std::uint64_t seed) { return random_matrix(1, n, seed).row(0); }

inline Mat layer_norm(const Mat& X, const Mat& gain, const Mat& bias) {
  Mat out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      out(r, c) = (X(r, c) - mu) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
    }
  }
  return out;
}

inline Mat linear(const Mat& X, const Mat& W, const Mat& b) {
  Mat out = X * W.transpose();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += b.row(0);
  return out;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
}

// Pre-norm layers, final norm, mean pool.
inline Row encode(const Params& p, const Mat& items) {
  const int n = static_cast<int>(items.rows());
  const int d = p.d1();
  const int heads = p.config().heads;
  const int dh = d / heads;
  Mat X = items + p[p.ids().pos_emb].topRows(n);
  for (const auto& l : p.ids().encoder) {
    const Mat A = layer_norm(X, p[l.ln1_gain], p[l.ln1_bias]);
    const Mat Q = linear(A, p[l.wq], p[l.bq]);
    const Mat K = linear(A, p[l.wk], p[l.bk]);
    const Mat V = linear(A, p[l.wv], p[l.bv]);
    Mat C = Mat::Zero(n, d);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < n; ++i) {
        std::vector<double> w(n);
        double mx = -1e300, z = 0.0;
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += Q(i, h * dh + k) * K(j, h * dh + k);
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        for (int j = 0; j < n; ++j) z += (w[j] = std::exp(w[j] - mx));
        for (int j = 0; j < n; ++j) {
          for (int k = 0; k < dh; ++k) C(i, h * dh + k) += w[j] / z * V(j, h * dh + k);
        }
      }
    }
    X += linear(C, p[l.wo], p[l.bo]);
    const Mat B = layer_norm(X, p[l.ln2_gain], p[l.ln2_bias]);
    Mat H = linear(B, p[l.ff1_w], p[l.ff1_b]);
    for (Eigen::Index k = 0; k < H.size(); ++k) H.data()[k] = gelu(H.data()[k]);
    X += linear(H, p[l.ff2_w], p[l.ff2_b]);
  }
  X = layer_norm(X, p[p.ids().final_ln_gain], p[p.ids().final_ln_bias]);
  return X.colwise().mean();
}

// tanh MLP on [x | cond | step_emb(t)].
inline Row denoise(const Params& p, const Row& x, const Row& cond, int t) {
  std::vector<double> in;
  for (double v : x) in.push_back(v);
  for (double v : cond) in.push_back(v);
  const Row e = dmcdr::step_embedding<double>(t, p.d1());
  for (double v : e) in.push_back(v);
  const auto& ws = p.ids().den_w;
  for (std::size_t k = 0; k < ws.size(); ++k) {
    const Mat& W = p[ws[k]];
    const Mat& b = p[p.ids().den_b[k]];
    std::vector<double> out(W.rows());
    for (Eigen::Index o = 0; o < W.rows(); ++o) {
      double s = b(0, o);
      for (Eigen::Index i = 0; i < W.cols(); ++i) s += W(o, i) * in[i];
      out[o] = k + 1 < ws.size() ? std::tanh(s) : s;
    }
    in = out;
  }
  return Eigen::Map<Row>(in.data(), static_cast<Eigen::Index>(in.size()));
}

}  // namespace ref
