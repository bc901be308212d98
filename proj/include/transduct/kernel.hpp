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

// Kernels, noise models and Gram matrices over finite domains.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "transduct/error.hpp"
#include "transduct/linalg.hpp"

namespace transduct {

/// One element of a finite domain. Analytic kernels read `coords`, the
/// embedding kernel reads `embedding`; a point may carry both.
struct Point {
  Index index = 0;
  std::optional<Vector> coords;
  std::optional<Vector> embedding;

  static Point at(Index index, Vector coords) { return Point{index, std::move(coords), std::nullopt}; }
  static Point embedded(Index index, Vector embedding) { return Point{index, std::nullopt, std::move(embedding)}; }

  void validate() const {
    if (!coords && !embedding) {
      throw InputError("point " + std::to_string(index) + " has neither coordinates nor an embedding");
    }
  }
};

enum class KernelFamily { Linear, Gaussian, Laplace, Matern, Embedding };

/// Half-integer Matérn smoothness; these are the orders with closed forms.
enum class MaternNu { Half, ThreeHalves, FiveHalves };

inline double matern_nu_value(MaternNu nu) {
  switch (nu) {
    case MaternNu::Half: return 0.5;
    case MaternNu::ThreeHalves: return 1.5;
    case MaternNu::FiveHalves: return 2.5;
  }
  return 0.0;
}

inline MaternNu matern_nu_from(double nu) {
  if (nu == 0.5) return MaternNu::Half;
  if (nu == 1.5) return MaternNu::ThreeHalves;
  if (nu == 2.5) return MaternNu::FiveHalves;
  throw InputError("Matern nu must be one of 0.5, 1.5, 2.5 (got " + std::to_string(nu) + ")");
}

struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double lengthscale = 1.0;
  MaternNu nu = MaternNu::FiveHalves;
  /// Latent covariance of the embedding kernel; empty means identity.
  std::optional<Matrix> latent_cov;

  static KernelSpec linear() { return {KernelFamily::Linear, 1.0, MaternNu::FiveHalves, std::nullopt}; }
  static KernelSpec gaussian(double h) { return {KernelFamily::Gaussian, h, MaternNu::FiveHalves, std::nullopt}; }
  static KernelSpec laplace(double h) { return {KernelFamily::Laplace, h, MaternNu::FiveHalves, std::nullopt}; }
  static KernelSpec matern(double nu, double h) { return {KernelFamily::Matern, h, matern_nu_from(nu), std::nullopt}; }
  static KernelSpec embedding(std::optional<Matrix> sigma = std::nullopt) {
    return {KernelFamily::Embedding, 1.0, MaternNu::FiveHalves, std::move(sigma)};
  }

  bool uses_lengthscale() const {
    return family == KernelFamily::Gaussian || family == KernelFamily::Laplace || family == KernelFamily::Matern;
  }

  void validate() const {
    if (uses_lengthscale() && !(lengthscale > 0.0 && std::isfinite(lengthscale))) {
      throw InputError("kernel lengthscale must be positive and finite");
    }
    if (family == KernelFamily::Embedding && latent_cov) {
      const Matrix& s = *latent_cov;
      if (s.rows() != s.cols()) throw InputError("latent covariance must be square");
      if (!s.allFinite()) throw InputError("latent covariance has non-finite entries");
      if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw InputError("latent covariance must be symmetric");
      const double scale = std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
      if (linalg::smallest_eigenvalue(s) < -1e-10 * scale) {
        throw InputError("latent covariance must be positive semidefinite");
      }
    }
  }
};

/// Observation noise variance rho^2(x), constant or per domain index.
class NoiseModel {
 public:
  static NoiseModel homoscedastic(double variance) {
    if (!(variance > 0.0 && std::isfinite(variance))) throw InputError("noise variance must be positive");
    NoiseModel m;
    m.variances_ = variance;
    return m;
  }

  static NoiseModel heteroscedastic(std::vector<double> variances) {
    for (std::size_t i = 0; i < variances.size(); ++i) {
      if (!(variances[i] > 0.0 && std::isfinite(variances[i]))) {
        throw InputError("noise variance at index " + std::to_string(i) + " must be positive");
      }
    }
    NoiseModel m;
    m.variances_ = std::move(variances);
    return m;
  }

  bool is_homoscedastic() const { return std::holds_alternative<double>(variances_); }

  double variance(Index index) const {
    if (const auto* c = std::get_if<double>(&variances_)) return *c;
    const auto& v = std::get<std::vector<double>>(variances_);
    if (index >= v.size()) throw InputError("noise model has no entry for index " + std::to_string(index));
    return v[index];
  }

  double max_variance(std::size_t domain_size) const {
    if (const auto* c = std::get_if<double>(&variances_)) return *c;
    double best = 0.0;
    for (Index i = 0; i < domain_size; ++i) best = std::max(best, variance(i));
    return best;
  }

  double min_variance(std::size_t domain_size) const {
    if (const auto* c = std::get_if<double>(&variances_)) return *c;
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < domain_size; ++i) best = std::min(best, variance(i));
    return best;
  }

 private:
  NoiseModel() = default;
  std::variant<double, std::vector<double>> variances_ = 1.0;
};

/// Dense Gram matrix together with the ids of the points it covers.
struct KernelMatrix {
  Matrix entries;
  std::vector<Index> ids;

  Eigen::Index size() const { return entries.rows(); }
};

namespace detail {

inline const Vector& require_coords(const Point& p) {
  if (!p.coords) throw InputError("point " + std::to_string(p.index) + " has no coordinates");
  return *p.coords;
}

inline const Vector& require_embedding(const Point& p) {
  if (!p.embedding) throw InputError("point " + std::to_string(p.index) + " has no embedding");
  return *p.embedding;
}

inline void require_same_size(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw InputError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

// Component-wise differences are computed as (a_i - b_i)^2 and |a_i - b_i|,
// both of which are exactly symmetric in floating point.
inline double squared_distance(const Vector& a, const Vector& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    acc += d * d;
  }
  return acc;
}

inline double dot(const Vector& a, const Vector& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += a(i) * b(i);
  return acc;
}

inline double matern(MaternNu nu, double r, double h) {
  switch (nu) {
    case MaternNu::Half: return std::exp(-r / h);
    case MaternNu::ThreeHalves: {
      const double z = std::sqrt(3.0) * r / h;
      return (1.0 + z) * std::exp(-z);
    }
    case MaternNu::FiveHalves: {
      const double z = std::sqrt(5.0) * r / h;
      return (1.0 + z + z * z / 3.0) * std::exp(-z);
    }
  }
  return 0.0;
}

}  // namespace detail

/// k(a, b) for the family in `spec`. Symmetric in its arguments bit for bit.
inline double eval_kernel(const KernelSpec& spec, const Point& a, const Point& b) {
  switch (spec.family) {
    case KernelFamily::Linear: {
      const auto& x = detail::require_coords(a);
      const auto& y = detail::require_coords(b);
      detail::require_same_size(x, y);
      return detail::dot(x, y);
    }
    case KernelFamily::Gaussian: {
      const auto& x = detail::require_coords(a);
      const auto& y = detail::require_coords(b);
      detail::require_same_size(x, y);
      const double h = spec.lengthscale;
      return std::exp(-detail::squared_distance(x, y) / (2.0 * h * h));
    }
    case KernelFamily::Laplace: {
      const auto& x = detail::require_coords(a);
      const auto& y = detail::require_coords(b);
      detail::require_same_size(x, y);
      return std::exp(-std::sqrt(detail::squared_distance(x, y)) / spec.lengthscale);
    }
    case KernelFamily::Matern: {
      const auto& x = detail::require_coords(a);
      const auto& y = detail::require_coords(b);
      detail::require_same_size(x, y);
      return detail::matern(spec.nu, std::sqrt(detail::squared_distance(x, y)), spec.lengthscale);
    }
    case KernelFamily::Embedding: {
      const auto& x = detail::require_embedding(a);
      const auto& y = detail::require_embedding(b);
      detail::require_same_size(x, y);
      if (!spec.latent_cov) return detail::dot(x, y);
      const Matrix& s = *spec.latent_cov;
      if (s.rows() != x.size()) throw InputError("latent covariance does not match embedding dimension");
      // x^T S y and y^T S x differ in rounding; their average does not
      // depend on argument order.
      const double forward = x.dot(s * y);
      const double backward = y.dot(s * x);
      return 0.5 * (forward + backward);
    }
  }
  throw InputError("unknown kernel family");
}

/// Gram matrix over `points`. Only the upper triangle is evaluated.
inline KernelMatrix gram(const KernelSpec& spec, std::span<const Point> points) {
  if (points.empty()) throw InputError("gram: empty point list");
  spec.validate();
  const auto n = static_cast<Eigen::Index>(points.size());
  KernelMatrix out;
  out.entries.resize(n, n);
  out.ids.reserve(points.size());
  for (const auto& p : points) {
    p.validate();
    out.ids.push_back(p.index);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double v = eval_kernel(spec, points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
      out.entries(i, j) = v;
      out.entries(j, i) = v;
    }
  }
  return out;
}

/// Cosine of the angle between two embeddings.
inline double cosine_similarity(const Point& a, const Point& b) {
  const auto& x = detail::require_embedding(a);
  const auto& y = detail::require_embedding(b);
  detail::require_same_size(x, y);
  const double nx = std::sqrt(detail::dot(x, x));
  const double ny = std::sqrt(detail::dot(y, y));
  if (nx == 0.0 || ny == 0.0) throw InputError("cosine similarity of a zero-norm embedding");
  return std::clamp(detail::dot(x, y) / (nx * ny), -1.0, 1.0);
}

/// Asymptotic order of the information capacity for the family, as a
/// human-readable label. The embedding kernel is linear in its features.
inline std::string gamma_rate_label(const KernelSpec& spec, int /*dimension*/) {
  switch (spec.family) {
    case KernelFamily::Linear:
    case KernelFamily::Embedding:
      return "O(d log n)";
    case KernelFamily::Gaussian:
      return "Õ(log^{d+1} n)";
    case KernelFamily::Laplace:
      return "Õ(n^{d/(1+d)} log^{1/(1+d)} n)";
    case KernelFamily::Matern:
      return "Õ(n^{d/(2ν+d)} log^{2ν/(2ν+d)} n)";
  }
  return "unknown";
}

inline std::string family_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::Linear: return "linear";
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::Laplace: return "laplace";
    case KernelFamily::Matern: return "matern";
    case KernelFamily::Embedding: return "embedding";
  }
  return "unknown";
}

}  // namespace transduct
