// Copyright 2026 The transduct Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense linear-algebra helpers shared by the posterior, selection and theory
// modules. Everything here works on symmetric PSD matrices.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "transduct/error.hpp"

namespace transduct {

using Index = std::size_t;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Relative diagonal jitter added before every Cholesky factorization.
inline constexpr double kJitterScale = 1e-10;

/// Floor used when a variance appears in a denominator.
inline constexpr double kVarianceFloor = 1e-12;

namespace linalg {

inline double max_diagonal(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  return std::max(0.0, m.diagonal().maxCoeff());
}

inline double jitter_for(const Matrix& m) { return kJitterScale * max_diagonal(m); }

/// Cholesky factor of `m + jitter * I`. When round-off leaves the matrix
/// slightly indefinite the jitter is escalated by 100x up to three times.
inline Eigen::LLT<Matrix> cholesky(const Matrix& m) {
  double jitter = jitter_for(m);
  if (jitter == 0.0) jitter = kJitterScale;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Matrix shifted = m;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 100.0;
  }
  throw NumericError("cholesky: matrix is not positive semidefinite after jitter");
}

/// Cholesky factor of `m + jitter * I` with a caller-chosen jitter. Returns
/// false instead of throwing so callers can retry with a larger shift.
inline bool cholesky_with(const Matrix& m, double jitter, Eigen::LLT<Matrix>& out) {
  Matrix shifted = m;
  shifted.diagonal().array() += jitter;
  out.compute(shifted);
  return out.info() == Eigen::Success;
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

/// log det(m + jitter). The empty matrix has log-determinant 0.
inline double log_det(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  return log_det(cholesky(m));
}

inline Matrix submatrix(const Matrix& m, std::span<const Index> rows, std::span<const Index> cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
    }
  }
  return out;
}

inline Matrix principal(const Matrix& m, std::span<const Index> idx) { return submatrix(m, idx, idx); }

/// m <- m - v v^T / s, computed entrywise so the result stays exactly
/// symmetric.
inline void symmetric_downdate(Matrix& m, const Vector& v, double s) {
  const Eigen::Index n = m.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double vj = v(j);
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double updated = m(i, j) - (v(i) * vj) / s;
      m(i, j) = updated;
      m(j, i) = updated;
    }
  }
}

/// Conditional covariance of the `keep` block given exact knowledge of the
/// `given` block: K_kk - K_kg K_gg^{-1} K_gk.
inline Matrix schur_complement(const Matrix& k, std::span<const Index> keep, std::span<const Index> given) {
  Matrix kk = principal(k, keep);
  if (given.empty()) return kk;
  const auto llt = cholesky(principal(k, given));
  const Matrix cross = submatrix(k, given, keep);
  const Matrix half = llt.matrixL().solve(cross);
  Matrix out = kk - half.transpose() * half;
  return 0.5 * (out + out.transpose());
}

inline double smallest_eigenvalue(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace linalg
}  // namespace transduct
