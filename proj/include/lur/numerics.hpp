#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lur/matrix.hpp"

namespace lur {

/// Numerically stable softmax (max-subtracted). Throws InvalidInputError on
/// empty or non-finite input. Output entries are in (0, 1] and sum to 1.
std::vector<double> softmax(std::span<const double> logits);

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad_logits;  // softmax(logits) - onehot(label)
};

/// Negative log-likelihood of `label` under softmax(logits), with its
/// analytic gradient w.r.t. the logits. Throws IndexError if label >= C.
CrossEntropy cross_entropy_with_grad(std::span<const double> logits,
                                     std::size_t label);

struct EighResult {
  std::vector<double> eigenvalues;  // descending
  Matrix eigenvectors;              // orthonormal columns, column m pairs with eigenvalues[m]
};

/// Full symmetric eigendecomposition. Inputs must be symmetric within 1e-10
/// relative to their magnitude. Small problems use cyclic Jacobi rotations;
/// large ones (n > 128) go through LAPACK, which the Jacobi sweep count makes
/// impractical at the particle counts the score estimators see.
EighResult sym_eigh(const Matrix& a);

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
class CholeskyFactor {
 public:
  /// Throws NumericError if the matrix is not positive definite.
  static CholeskyFactor decompose(const Matrix& a);

  double log_det() const;

  /// Solves A x = b.
  std::vector<double> solve(std::span<const double> b) const;

  /// Solves A X = B column-wise; B is n x m, result is n x m.
  Matrix solve_matrix(const Matrix& b) const;

  /// Quadratic form b^T A^{-1} b without materializing the inverse.
  double inv_quad_form(std::span<const double> b) const;

  std::size_t dim() const { return l_.rows; }

 private:
  Matrix l_;
};

/// Solves A X = B for symmetric positive-definite A; B and the result are
/// n x m. Large systems go through LAPACK. Throws NumericError when A is
/// not positive definite.
Matrix solve_spd(const Matrix& a, const Matrix& b);

double softplus(double x);
double sigmoid(double x);

/// KL(N(mu, sigma^2) || N(0, prior_stdev^2)) for one scalar weight.
double gaussian_kl_diag(double mu, double sigma, double prior_stdev);

}  // namespace lur
