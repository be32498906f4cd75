#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsinit/rng.hpp"
#include "dsinit/tensor.hpp"

namespace dsinit::numerics {

/// Column means of an N×d sample matrix.
std::vector<double> mean_vector(const SampleMatrix& samples);

/// Population covariance (divisor N) around the supplied mean.
Matrix covariance_matrix(const SampleMatrix& samples, std::span<const double> mean);

struct EigenDecomposition {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Eigenvalues are sorted descending (stable, so ties keep the lower
/// diagonal index first). Every eigenvector is flipped so that its
/// largest-magnitude component is positive, taking the earliest index when
/// magnitudes tie. Throws NumericalFailure after kMaxJacobiSweeps sweeps.
EigenDecomposition sym_eigendecomposition(const Matrix& symmetric);

inline constexpr int kMaxJacobiSweeps = 100;

/// Lower-triangular L with L·L^T = A + epsilon·I.
Matrix cholesky(const Matrix& a, double epsilon);

struct GaussianModel {
  std::vector<double> mean;
  Matrix covariance;

  static GaussianModel fit(const SampleMatrix& samples);
};

/// Draws `count` rows from N(mean, covariance + epsilon·I).
///
/// Row i is mean + L·z_i where L = cholesky(covariance, epsilon) and z_i
/// holds d consecutive rng.normal() draws (row-major consumption order).
SampleMatrix sample_multivariate_gaussian(const GaussianModel& model, std::size_t count, double epsilon,
                                          Rng& rng);

enum class WhitenRoute {
  automatic,   // covariance when N > d, gram otherwise
  covariance,  // eigendecompose the d×d covariance
  gram,        // eigendecompose the N×N Gram matrix of centered rows
};

/// ZCA whitening: (X − mean)·V·diag((λ+ε)^−1/2)·V^T.
///
/// Both routes compute the same map; the Gram route uses
/// Xc·W = U·diag((μ+ε)^−1/2)·U^T·Xc for Xc·Xc^T/N = U·diag(μ)·U^T and is
/// cheaper when N ≤ d. Directions with λ+ε ≤ 1e-12·λ_max carry no sample
/// variance and are dropped rather than amplified.
SampleMatrix zca_whiten(const SampleMatrix& samples, double epsilon,
                        WhitenRoute route = WhitenRoute::automatic);

/// Mean of all elements.
double pooled_mean(std::span<const double> values);
/// Population variance of all elements.
double pooled_variance(std::span<const double> values);

/// Multiplies every element by sqrt(target / pooled_variance).
SampleMatrix scale_to_variance(const SampleMatrix& samples, double target_variance);

}  // namespace dsinit::numerics
