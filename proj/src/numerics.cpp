#include "lur/numerics.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lur/errors.hpp"

namespace lur {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInputError("softmax: empty input");
  if (!all_finite(logits)) throw InvalidInputError("softmax: non-finite input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

CrossEntropy cross_entropy_with_grad(std::span<const double> logits,
                                     std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  if (!all_finite(logits)) {
    throw InvalidInputError("cross_entropy: non-finite logits");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  CrossEntropy result;
  result.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    result.grad_logits[i] = std::exp(logits[i] - m);
    sum += result.grad_logits[i];
  }
  // loss = logsumexp(logits) - logits[label]
  result.loss = m + std::log(sum) - logits[label];
  for (double& g : result.grad_logits) g /= sum;
  result.grad_logits[label] -= 1.0;
  return result;
}

namespace {

void check_symmetric(const Matrix& a) {
  if (a.rows != a.cols || a.rows == 0) {
    throw InvalidInputError("sym_eigh: matrix must be square and non-empty");
  }
  double scale = 0.0;
  for (double v : a.data) scale = std::max(scale, std::abs(v));
  const double tol = 1e-10 * std::max(1.0, scale);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = i + 1; j < a.cols; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > tol) {
        throw InvalidInputError("sym_eigh: matrix is not symmetric");
      }
    }
  }
}

// Cyclic Jacobi with annihilation threshold. Adequate and dependency free for
// the particle-scale problems (n <= 128); larger inputs are routed to LAPACK.
EighResult jacobi_eigh(Matrix a) {
  const std::size_t n = a.rows;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double scale = 0.0;
  for (double x : a.data) scale = std::max(scale, std::abs(x));
  const double stop = (scale > 0 ? scale : 1.0) * 1e-15;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
    if (off <= stop) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= stop * 1e-2) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  EighResult r;
  r.eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.eigenvalues[i] = a(i, i);
  r.eigenvectors = std::move(v);
  return r;
}

EighResult lapack_eigh(Matrix a) {
  const lapack_int n = static_cast<lapack_int>(a.rows);
  std::vector<double> w(a.rows);
  const lapack_int info = LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'V', 'U', n,
                                         a.data.data(), n, w.data());
  if (info != 0) {
    throw NumericError("sym_eigh: LAPACK dsyevd failed with info " +
                       std::to_string(info));
  }
  EighResult r;
  r.eigenvalues = std::move(w);
  r.eigenvectors = std::move(a);  // eigenvectors in columns
  return r;
}

void sort_descending(EighResult& r) {
  const std::size_t n = r.eigenvalues.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return r.eigenvalues[i] > r.eigenvalues[j];
  });
  std::vector<double> ev(n);
  Matrix vecs(n, n);
  for (std::size_t m = 0; m < n; ++m) {
    ev[m] = r.eigenvalues[order[m]];
    for (std::size_t i = 0; i < n; ++i) vecs(i, m) = r.eigenvectors(i, order[m]);
  }
  r.eigenvalues = std::move(ev);
  r.eigenvectors = std::move(vecs);
}

}  // namespace

EighResult sym_eigh(const Matrix& a) {
  check_symmetric(a);
  EighResult r = a.rows <= 128 ? jacobi_eigh(a) : lapack_eigh(a);
  sort_descending(r);
  return r;
}

CholeskyFactor CholeskyFactor::decompose(const Matrix& a) {
  if (a.rows != a.cols || a.rows == 0) {
    throw InvalidInputError("cholesky: matrix must be square and non-empty");
  }
  const std::size_t n = a.rows;
  CholeskyFactor f;
  f.l_ = Matrix(n, n);
  Matrix& l = f.l_;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) {
          throw NumericError(
              "cholesky: matrix is not positive definite (pivot " +
              std::to_string(s) + " at row " + std::to_string(i) + ")");
        }
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return f;
}

double CholeskyFactor::log_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < l_.rows; ++i) s += std::log(l_(i, i));
  return 2.0 * s;
}

std::vector<double> CholeskyFactor::solve(std::span<const double> b) const {
  const std::size_t n = l_.rows;
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
    y[i] = s / l_(i, i);
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l_(k, i) * y[k];
    y[i] = s / l_(i, i);
  }
  return y;
}

Matrix CholeskyFactor::solve_matrix(const Matrix& b) const {
  Matrix x(b.rows, b.cols);
  std::vector<double> col(b.rows);
  for (std::size_t j = 0; j < b.cols; ++j) {
    for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
    const std::vector<double> sol = solve(col);
    for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = sol[i];
  }
  return x;
}

double CholeskyFactor::inv_quad_form(std::span<const double> b) const {
  // b^T A^{-1} b = ||L^{-1} b||^2
  const std::size_t n = l_.rows;
  std::vector<double> y(b.begin(), b.end());
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
    y[i] = s / l_(i, i);
    q += y[i] * y[i];
  }
  return q;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  if (a.rows != a.cols || a.rows == 0) {
    throw InvalidInputError("solve_spd: matrix must be square and non-empty");
  }
  if (b.rows != a.rows) throw InvalidInputError("solve_spd: shape mismatch");
  if (a.rows <= 256) {
    return CholeskyFactor::decompose(a).solve_matrix(b);
  }
  Matrix factor = a;
  Matrix x = b;
  const lapack_int n = static_cast<lapack_int>(a.rows);
  const lapack_int m = static_cast<lapack_int>(b.cols);
  const lapack_int info =
      LAPACKE_dposv(LAPACK_ROW_MAJOR, 'U', n, m, factor.data.data(), n,
                    x.data.data(), m);
  if (info != 0) {
    throw NumericError("solve_spd: matrix is not positive definite (info " +
                       std::to_string(info) + ")");
  }
  return x;
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gaussian_kl_diag(double mu, double sigma, double prior_stdev) {
  const double s2 = prior_stdev * prior_stdev;
  return std::log(prior_stdev / sigma) + (sigma * sigma + mu * mu) / (2.0 * s2) -
         0.5;
}

}  // namespace lur
