#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvmt {

/// Thrown when an operation's preconditions do not hold.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

template <class A, class B>
double dot(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class A>
double norm(std::span<const A> a) {
  return std::sqrt(dot(a, a));
}

template <class A, class B>
double squared_l2(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

/// Squared Euclidean distance between float vectors, accumulated in eight
/// fixed-order float lanes. Every L2 search path goes through this kernel so
/// that equal inputs give bitwise-equal distances.
float l2_sq_f32(const float* a, const float* b, std::size_t n);

std::vector<float> to_float(std::span<const double> v);
Vector to_double(std::span<const float> v);

Vector matvec(const Matrix& m, std::span<const double> v);
/// mᵀ·v
Vector matvec_transposed(const Matrix& m, std::span<const double> v);
/// m += scale · a ⊗ b
void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b, double scale = 1.0);

double log_sum_exp(std::span<const double> v);
/// Max-subtracted softmax. Throws InvalidArgument on empty input.
Vector softmax(std::span<const double> v);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// a·b / (‖a‖‖b‖). Returns 0 when either norm is zero and sets *zero_norm.
template <class A, class B>
double cosine(std::span<const A> a, std::span<const B> b, bool* zero_norm = nullptr) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (zero_norm) *zero_norm = (na == 0.0 || nb == 0.0);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot(a, b) / (na * nb);
  return std::max(-1.0, std::min(1.0, c));
}

inline double cosine(const Vector& a, const Vector& b, bool* zero_norm = nullptr) {
  return cosine(std::span<const double>(a), std::span<const double>(b), zero_norm);
}

// PCA ----------------------------------------------------------------------

struct PcaModel {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Vector mean;
  Matrix components;  // out_dim x in_dim, orthonormal rows
  Vector explained_variance;

  /// components · (v − mean)
  Vector apply(std::span<const double> v) const;
  Matrix apply_batch(const Matrix& data) const;
  /// mean + componentsᵀ · y
  Vector reconstruct(std::span<const double> y) const;

  bool operator==(const PcaModel&) const = default;
};

/// Principal components of row-sample `data` from the covariance
/// eigendecomposition, no whitening. Each component's first nonzero
/// coordinate is made positive.
PcaModel pca_fit(const Matrix& data, std::size_t out_dim);

// k-means --------------------------------------------------------------------

struct KMeansResult {
  Matrix centroids;
  std::vector<std::uint32_t> assignments;
  /// Total squared distortion after each assignment pass.
  std::vector<double> distortion;
  std::size_t iterations = 0;
};

/// k-means++ seeding then Lloyd iterations until the assignment reaches a
/// fixpoint or `max_iters` passes. Empty clusters are re-seeded with the point
/// farthest from its centroid.
KMeansResult kmeans(const Matrix& data, std::size_t n_clusters, std::uint64_t seed,
                    std::size_t max_iters = 25);

}  // namespace kvmt
