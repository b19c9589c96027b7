#pragma once

// Naive reference implementations over nested vectors, used as test oracles.
// One Mat is [rows][cols] for a single batch element.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dfsq/tensor.hpp"

namespace dfsq::ref {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

template <typename T>
Mat mat(const Tensor<T>& t) {
  const std::size_t cols = t.shape().back();
  const std::size_t rows = t.numel() / cols;
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = static_cast<double>(t.data()[i * cols + j]);
  return m;
}

// Batch element b of a [b,t,d] tensor.
template <typename T>
Mat slice(const Tensor<T>& t, std::size_t b) {
  const std::size_t rows = t.dim(1), cols = t.dim(2);
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      m[i][j] = static_cast<double>(t.data()[(b * rows + i) * cols + j]);
  return m;
}

template <typename T>
Vec vec(const Tensor<T>& t) {
  return Vec(t.data().begin(), t.data().end());
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat plus(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  return c;
}

inline Mat plus_row(const Mat& a, const Vec& bias) {
  Mat c = a;
  for (auto& row : c)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  return c;
}

inline Mat scaled(const Mat& a, double s) {
  Mat c = a;
  for (auto& row : c)
    for (auto& x : row) x *= s;
  return c;
}

inline Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, double eps) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mu = 0;
    for (double v : x[i]) mu += v;
    mu /= static_cast<double>(x[i].size());
    double var = 0;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = gain[j] * (x[i][j] - mu) / std::sqrt(var + eps) + bias[j];
  }
  return y;
}

inline Mat elementwise(const Mat& x, double (*f)(double)) {
  Mat y = x;
  for (auto& row : y)
    for (auto& v : row) v = f(v);
  return y;
}

inline double relu(double v) { return v > 0 ? v : 0; }
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// keep[q][k] != 0 lets query q see key k. Empty keep means everything is visible.
inline Mat attention(const Mat& q_in, const Mat& kv_in, const Mat& wq, const Mat& wk,
                     const Mat& wv, const Mat& wo, std::size_t heads,
                     const std::vector<std::vector<int>>& keep = {}) {
  const Mat q = mul(q_in, wq), k = mul(kv_in, wk), v = mul(kv_in, wv);
  const std::size_t d = wq.size(), dh = d / heads;
  Mat out(q_in.size(), Vec(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      Vec s(k.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < k.size(); ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        if (keep.empty() || keep[i][j]) mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < k.size(); ++j) {
        s[j] = (keep.empty() || keep[i][j]) ? std::exp(s[j] - mx) : 0.0;
        z += s[j];
      }
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / z * v[j][h * dh + c];
    }
  }
  return mul(out, wo);
}

inline Mat ffn(const Mat& x, const Mat& w1, const Vec& b1, const Mat& w2, const Vec& b2) {
  return plus_row(mul(elementwise(plus_row(mul(x, w1), b1), relu), w2), b2);
}

inline Mat concat(const std::vector<Mat>& xs) {
  Mat out = xs[0];
  for (std::size_t n = 1; n < xs.size(); ++n)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i].insert(out[i].end(), xs[n][i].begin(), xs[n][i].end());
  return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

}  // namespace dfsq::ref
