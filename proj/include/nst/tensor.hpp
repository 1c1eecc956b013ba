#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nst/common.hpp"

namespace nst {

/// Named trainable parameter: values and accumulated gradient, row-major.
template <typename T>
struct Tensor {
  std::vector<T> w;
  std::vector<T> g;
  int rows = 0;
  int cols = 0;

  void init(int r, int c) {
    rows = r;
    cols = c;
    w.assign(static_cast<size_t>(r) * static_cast<size_t>(c), T(0));
    g.assign(w.size(), T(0));
  }
  size_t size() const { return w.size(); }
  T* row(int r) { return w.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return w.data() + static_cast<size_t>(r) * cols; }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

enum class ParamGroup { Encoder, Head };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool decay;        // weight matrices decay, biases and layer-norm params do not
  ParamGroup group;  // selects the learning rate
};

// Row-major matrix helpers. C must be pre-sized; all accumulate (+=).

template <typename T>
void matmul_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  // c[m×n] += a[m×k] · b[k×n]
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      T av = ai[kk];
      const T* bk = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  // c[m×n] += a[m×k] · b[n×k]^T
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<size_t>(j) * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  // c[k×n] += a[m×k]^T · b[m×n]
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    const T* bi = b + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      T av = ai[kk];
      T* ck = c + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ck[j] += av * bi[j];
    }
  }
}

template <typename T>
void add_bias(T* y, const T* b, int m, int n) {
  for (int i = 0; i < m; ++i) {
    T* yi = y + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) yi[j] += b[j];
  }
}

template <typename T>
void colsum_acc(const T* dy, T* db, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const T* di = dy + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) db[j] += di[j];
  }
}

template <typename T>
void softmax_row(T* x, int n) {
  T mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

constexpr double kLayerNormEps = 1e-5;

/// y = gamma * (x - mean)/sqrt(var + eps) + beta, per row; stores mean/invstd.
template <typename T>
void layernorm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* invstd,
                       int m, int n) {
  for (int i = 0; i < m; ++i) {
    const T* xi = x + static_cast<size_t>(i) * n;
    T* yi = y + static_cast<size_t>(i) * n;
    T mu = T(0);
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
      T d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    mean[i] = mu;
    invstd[i] = is;
    for (int j = 0; j < n; ++j) yi[j] = gamma[j] * (xi[j] - mu) * is + beta[j];
  }
}

/// dx += backward of layernorm; accumulates dgamma/dbeta.
template <typename T>
void layernorm_backward(const T* dy, const T* x, const T* mean, const T* invstd, const T* gamma,
                        T* dgamma, T* dbeta, T* dx, int m, int n) {
  std::vector<T> dxhat(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    const T* dyi = dy + static_cast<size_t>(i) * n;
    const T* xi = x + static_cast<size_t>(i) * n;
    T* dxi = dx + static_cast<size_t>(i) * n;
    T mu = mean[i], is = invstd[i];
    T m1 = T(0), m2 = T(0);
    for (int j = 0; j < n; ++j) {
      T xhat = (xi[j] - mu) * is;
      dgamma[j] += dyi[j] * xhat;
      dbeta[j] += dyi[j];
      dxhat[static_cast<size_t>(j)] = dyi[j] * gamma[j];
      m1 += dxhat[static_cast<size_t>(j)];
      m2 += dxhat[static_cast<size_t>(j)] * xhat;
    }
    m1 /= static_cast<T>(n);
    m2 /= static_cast<T>(n);
    for (int j = 0; j < n; ++j) {
      T xhat = (xi[j] - mu) * is;
      dxi[j] += is * (dxhat[static_cast<size_t>(j)] - m1 - xhat * m2);
    }
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2))) +
         x * static_cast<T>(inv_sqrt_2pi) * std::exp(T(-0.5) * x * x);
}

template <typename T>
T l2_norm(const T* x, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

template <typename T>
T dot(const T* a, const T* b, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace nst
