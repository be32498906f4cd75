#include "dsinit/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dsinit/errors.hpp"

namespace dsinit::numerics {

namespace {

double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InvalidArgument(std::string(what) + ": expected a non-empty square matrix, got " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void require_symmetric(const Matrix& m, double tolerance, const char* what) {
  const double scale = std::max(1.0, max_abs(m.data()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      if (std::abs(m(i, j) - m(j, i)) > tolerance * scale) {
        throw InvalidArgument(std::string(what) + ": matrix is not symmetric at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
    }
  }
}

// Degeneracy floor shared by the rescale step and its callers.
bool variance_is_degenerate(double variance, std::span<const double> values) {
  const double scale = 1e-12 * max_abs(values);
  return !(variance > scale * scale);
}

}  // namespace

std::vector<double> mean_vector(const SampleMatrix& samples) {
  if (samples.rows() == 0 || samples.cols() == 0) throw InvalidArgument("mean_vector: empty sample matrix");
  std::vector<double> mean(samples.cols(), 0.0);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    auto row = samples.row(i);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(samples.rows());
  for (double& m : mean) m *= inv;
  return mean;
}

Matrix covariance_matrix(const SampleMatrix& samples, std::span<const double> mean) {
  if (samples.rows() == 0) throw InvalidArgument("covariance_matrix: empty sample matrix");
  if (mean.size() != samples.cols()) {
    throw InvalidArgument("covariance_matrix: mean has length " + std::to_string(mean.size()) + ", samples have " +
                          std::to_string(samples.cols()) + " columns");
  }
  const std::size_t d = samples.cols();
  Matrix centered(samples.rows(), d);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    auto src = samples.row(i);
    auto dst = centered.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] - mean[j];
  }
  Matrix cov = matmul_tn(centered, centered);
  const double inv = 1.0 / static_cast<double>(samples.rows());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      const double v = cov(i, j) * inv;
      cov(i, j) = v;
      cov(j, i) = v;
    }
  }
  return cov;
}

EigenDecomposition sym_eigendecomposition(const Matrix& symmetric) {
  require_square(symmetric, "sym_eigendecomposition");
  require_symmetric(symmetric, 1e-10, "sym_eigendecomposition");
  const std::size_t n = symmetric.rows();

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (symmetric(i, j) + symmetric(j, i));
  }
  Matrix v = Matrix::identity(n);
  const double norm = frobenius_norm(a);

  bool converged = false;
  for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off == 0.0 || std::sqrt(2.0 * off) <= 1e-14 * norm) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip once the rotation cannot change the diagonal in double precision.
        if (std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          const double new_rp = c * arp - s * arq;
          const double new_rq = s * arp + c * arq;
          a(r, p) = new_rp;
          a(p, r) = new_rp;
          a(r, q) = new_rq;
          a(q, r) = new_rq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;

        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalFailure("sym_eigendecomposition: Jacobi did not converge within " +
                           std::to_string(kMaxJacobiSweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenDecomposition result{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    result.values[k] = a(src, src);

    double largest = 0.0;
    for (std::size_t r = 0; r < n; ++r) largest = std::max(largest, std::abs(v(r, src)));
    double sign = 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (std::abs(v(r, src)) >= largest * (1.0 - 1e-12)) {
        sign = v(r, src) < 0.0 ? -1.0 : 1.0;
        break;
      }
    }
    for (std::size_t r = 0; r < n; ++r) result.vectors(r, k) = sign * v(r, src);
  }
  return result;
}

Matrix cholesky(const Matrix& a, double epsilon) {
  require_square(a, "cholesky");
  if (!(epsilon >= 0.0)) throw InvalidArgument("cholesky: epsilon must be non-negative");
  require_symmetric(a, 1e-10, "cholesky");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = a(j, j) + epsilon;
    auto lj = l.row(j);
    for (std::size_t k = 0; k < j; ++k) pivot -= lj[k] * lj[k];
    if (!(pivot > 0.0)) {
      throw NumericalFailure("cholesky: non-positive pivot " + std::to_string(pivot) + " at index " +
                             std::to_string(j) + " (matrix is not positive definite after regularization)");
    }
    const double diag = std::sqrt(pivot);
    lj[j] = diag;
    for (std::size_t i = j + 1; i < n; ++i) {
      auto li = l.row(i);
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / diag;
    }
  }
  return l;
}

GaussianModel GaussianModel::fit(const SampleMatrix& samples) {
  GaussianModel model;
  model.mean = mean_vector(samples);
  model.covariance = covariance_matrix(samples, model.mean);
  return model;
}

SampleMatrix sample_multivariate_gaussian(const GaussianModel& model, std::size_t count, double epsilon, Rng& rng) {
  if (count == 0) throw InvalidArgument("sample_multivariate_gaussian: count must be at least 1");
  const std::size_t d = model.mean.size();
  if (model.covariance.rows() != d || model.covariance.cols() != d) {
    throw InvalidArgument("sample_multivariate_gaussian: covariance does not match mean length");
  }
  const Matrix l = cholesky(model.covariance, epsilon);

  SampleMatrix out(count, d);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < count; ++i) {
    for (double& zj : z) zj = rng.normal();
    auto row = out.row(i);
    for (std::size_t r = 0; r < d; ++r) {
      auto lr = l.row(r);
      double s = model.mean[r];
      for (std::size_t k = 0; k <= r; ++k) s += lr[k] * z[k];
      row[r] = s;
    }
  }
  return out;
}

SampleMatrix zca_whiten(const SampleMatrix& samples, double epsilon, WhitenRoute route) {
  if (samples.rows() < 2) throw InvalidArgument("zca_whiten: need at least 2 samples");
  if (!(epsilon >= 0.0)) throw InvalidArgument("zca_whiten: epsilon must be non-negative");
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  const std::vector<double> mean = mean_vector(samples);

  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = samples.row(i);
    auto dst = centered.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] - mean[j];
  }

  if (route == WhitenRoute::automatic) route = n > d ? WhitenRoute::covariance : WhitenRoute::gram;

  // Builds V·diag(scale)·V^T for the kept spectrum of a symmetric PSD matrix.
  auto inverse_sqrt = [epsilon](const Matrix& sym) {
    const EigenDecomposition eig = sym_eigendecomposition(sym);
    const std::size_t k = eig.values.size();
    const double floor = 1e-12 * std::max(eig.values.front() + epsilon, 0.0);
    std::vector<double> scale(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double shifted = eig.values[j] + epsilon;
      if (shifted > floor && shifted > 0.0) scale[j] = 1.0 / std::sqrt(shifted);
    }
    Matrix scaled = eig.vectors;
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t j = 0; j < k; ++j) scaled(r, j) *= scale[j];
    }
    return matmul_nt(scaled, eig.vectors);
  };

  const double inv_n = 1.0 / static_cast<double>(n);
  if (route == WhitenRoute::covariance) {
    Matrix cov = matmul_tn(centered, centered);
    for (double& v : cov.data()) v *= inv_n;
    return matmul(centered, inverse_sqrt(cov));
  }
  Matrix gram = matmul_nt(centered, centered);
  for (double& v : gram.data()) v *= inv_n;
  return matmul(inverse_sqrt(gram), centered);
}

double pooled_mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("pooled_mean: no values");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double pooled_variance(std::span<const double> values) {
  const double mean = pooled_mean(values);
  double s = 0.0;
  for (double v : values) s += (v - mean) * (v - mean);
  return s / static_cast<double>(values.size());
}

SampleMatrix scale_to_variance(const SampleMatrix& samples, double target_variance) {
  if (!(target_variance > 0.0)) throw InvalidArgument("scale_to_variance: target variance must be positive");
  const double current = pooled_variance(samples.data());
  if (variance_is_degenerate(current, samples.data())) {
    throw DegenerateInput("scale_to_variance: input has zero pooled variance");
  }
  const double factor = std::sqrt(target_variance / current);
  SampleMatrix out = samples;
  for (double& v : out.data()) v *= factor;
  return out;
}

}  // namespace dsinit::numerics
