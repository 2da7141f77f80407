// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pts {

// Dense row-major matrix. Vectors are 1xN or Nx1 matrices.
template <typename Real>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<Real> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, Real(0)) {}
  Mat(int r, int c, std::vector<Real> v) : rows(r), cols(c), a(std::move(v)) {
    if (a.size() != static_cast<size_t>(r) * c) throw std::runtime_error("mat: data size mismatch");
  }

  static Mat zeros(int r, int c) { return Mat(r, c); }

  Real& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  Real operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  Real* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const Real* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (Real v : a)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename Other>
  Mat<Other> cast() const {
    Mat<Other> out(rows, cols);
    for (size_t i = 0; i < a.size(); ++i) out.a[i] = static_cast<Other>(a[i]);
    return out;
  }
};

// C += A * B
template <typename Real>
void gemm_nn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
  if (A.cols != B.rows || C.rows != A.rows || C.cols != B.cols)
    throw std::runtime_error("dimension mismatch in matmul");
  const int n = A.rows, k = A.cols, m = B.cols;
  for (int i = 0; i < n; ++i) {
    Real* ci = C.row_ptr(i);
    const Real* ai = A.row_ptr(i);
    for (int p = 0; p < k; ++p) {
      const Real aip = ai[p];
      if (aip == Real(0)) continue;
      const Real* bp = B.row_ptr(p);
      for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A * B^T
template <typename Real>
void gemm_nt_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
  if (A.cols != B.cols || C.rows != A.rows || C.cols != B.rows)
    throw std::runtime_error("dimension mismatch in matmul_nt");
  const int n = A.rows, k = A.cols, m = B.rows;
  for (int i = 0; i < n; ++i) {
    const Real* ai = A.row_ptr(i);
    Real* ci = C.row_ptr(i);
    for (int j = 0; j < m; ++j) {
      const Real* bj = B.row_ptr(j);
      Real s = 0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C += A^T * B
template <typename Real>
void gemm_tn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
  if (A.rows != B.rows || C.rows != A.cols || C.cols != B.cols)
    throw std::runtime_error("dimension mismatch in matmul_tn");
  const int n = A.cols, k = A.rows, m = B.cols;
  for (int p = 0; p < k; ++p) {
    const Real* ap = A.row_ptr(p);
    const Real* bp = B.row_ptr(p);
    for (int i = 0; i < n; ++i) {
      const Real aip = ap[i];
      if (aip == Real(0)) continue;
      Real* ci = C.row_ptr(i);
      for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// Deterministic RNG. All randomness in the project flows through this wrapper
// so trajectories are reproducible bit-for-bit given a seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw std::runtime_error("uniform_int: n must be positive");
    int v = static_cast<int>(uniform() * n);
    return v >= n ? n - 1 : v;
  }

  uint64_t fork_seed() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

template <typename Real>
void fill_uniform(Mat<Real>& m, Rng& rng, double lo, double hi) {
  for (auto& v : m.a) v = static_cast<Real>(rng.uniform(lo, hi));
}

}  // namespace pts
