#include "kvmt/linalg.hpp"

#include <Eigen/Dense>

#include <limits>

namespace kvmt {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw InvalidArgument("Matrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

float l2_sq_f32(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const float d = a[i + l] - b[i + l];
      acc[l] += d * d;
    }
  }
  for (std::size_t l = 0; i < n; ++i, ++l) {
    const float d = a[i] - b[i];
    acc[l] += d * d;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

std::vector<float> to_float(std::span<const double> v) {
  return std::vector<float>(v.begin(), v.end());
}

Vector to_double(std::span<const float> v) { return Vector(v.begin(), v.end()); }

Vector matvec(const Matrix& m, std::span<const double> v) {
  if (v.size() != m.cols()) throw InvalidArgument("matvec: dimension mismatch");
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), v);
  return out;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> v) {
  if (v.size() != m.rows()) throw InvalidArgument("matvec_transposed: dimension mismatch");
  Vector out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c] * v[r];
  }
  return out;
}

void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b, double scale) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double s = scale * a[r];
    if (s == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += s * b[c];
  }
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("log_sum_exp: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

// PCA ----------------------------------------------------------------------

Vector PcaModel::apply(std::span<const double> v) const {
  if (v.size() != in_dim) throw InvalidArgument("pca_apply: dimension mismatch");
  Vector centered(in_dim);
  for (std::size_t i = 0; i < in_dim; ++i) centered[i] = v[i] - mean[i];
  return matvec(components, centered);
}

Matrix PcaModel::apply_batch(const Matrix& data) const {
  if (data.cols() != in_dim) throw InvalidArgument("pca_apply: dimension mismatch");
  Matrix out(data.rows(), out_dim);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const Vector y = apply(data.row(r));
    std::copy(y.begin(), y.end(), out.row(r).begin());
  }
  return out;
}

Vector PcaModel::reconstruct(std::span<const double> y) const {
  if (y.size() != out_dim) throw InvalidArgument("pca_reconstruct: dimension mismatch");
  Vector out = matvec_transposed(components, y);
  for (std::size_t i = 0; i < in_dim; ++i) out[i] += mean[i];
  return out;
}

PcaModel pca_fit(const Matrix& data, std::size_t out_dim) {
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  if (out_dim == 0 || out_dim > d) throw InvalidArgument("pca_fit: out_dim must be in [1, in_dim]");
  if (n < out_dim) throw InvalidArgument("pca_fit: fewer samples than out_dim");

  PcaModel model;
  model.in_dim = d;
  model.out_dim = out_dim;
  model.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) model.mean[c] += data(r, c);
  for (double& m : model.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd x(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) x(c) = data(r, c) - model.mean[c];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");

  // Eigen sorts eigenvalues ascending.
  model.components = Matrix(out_dim, d);
  model.explained_variance.resize(out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);
    model.explained_variance[k] = std::max(0.0, solver.eigenvalues()(col));
    auto row = model.components.row(k);
    for (std::size_t c = 0; c < d; ++c) row[c] = solver.eigenvectors()(static_cast<Eigen::Index>(c), col);
    for (double v : row) {
      if (std::abs(v) > 1e-12) {
        if (v < 0)
          for (double& w : row) w = -w;
        break;
      }
    }
  }
  return model;
}

// k-means --------------------------------------------------------------------

namespace {

double row_dist(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  return squared_l2(a.row(i), b.row(j));
}

Matrix kmeanspp_init(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  Matrix centroids(k, data.cols());
  std::vector<char> chosen(n, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::size_t first = static_cast<std::size_t>(unif(rng) * static_cast<double>(n));
  first = std::min(first, n - 1);
  std::copy(data.row(first).begin(), data.row(first).end(), centroids.row(0).begin());
  chosen[first] = 1;

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = row_dist(data, i, centroids, 0);

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {
      // All remaining mass is zero (duplicate points): take the first unused row.
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen[pick] = 1;
    std::copy(data.row(pick).begin(), data.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], row_dist(data, i, centroids, c));
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& data, std::size_t n_clusters, std::uint64_t seed,
                    std::size_t max_iters) {
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  if (n_clusters == 0) throw InvalidArgument("kmeans: n_clusters must be positive");
  if (n_clusters > n) throw InvalidArgument("kmeans: more clusters than points");
  if (max_iters == 0) max_iters = 1;

  Rng rng(seed);
  KMeansResult res;
  res.centroids = kmeanspp_init(data, n_clusters, rng);
  res.assignments.assign(n, 0);

  std::vector<double> dist(n);
  std::vector<std::uint32_t> previous;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < n_clusters; ++c) {
        const double dd = row_dist(data, i, res.centroids, c);
        if (dd < best) {
          best = dd;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      res.assignments[i] = arg;
      dist[i] = best;
      total += best;
    }
    res.distortion.push_back(total);
    res.iterations = iter + 1;
    if (res.assignments == previous) break;
    previous = res.assignments;

    Matrix sums(n_clusters, d);
    std::vector<std::size_t> counts(n_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(res.assignments[i]);
      const auto x = data.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (counts[c] == 0) continue;
      auto cen = res.centroids.row(c);
      const auto s = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) cen[j] = s[j] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t far = static_cast<std::size_t>(
          std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy(data.row(far).begin(), data.row(far).end(), res.centroids.row(c).begin());
      dist[far] = 0.0;
      res.assignments[far] = static_cast<std::uint32_t>(c);
      previous.clear();
    }
  }
  return res;
}

}  // namespace kvmt
