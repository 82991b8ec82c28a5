#pragma once

#include <cstdint>

#include "lur/matrix.hpp"

namespace lur {

enum class ScoreEstimator { Kde, Sge, Ssge };
enum class BandwidthMode { MedianHeuristic, Fixed };
enum class RepulsionSpace { Weight, Function };

struct KernelConfig {
  ScoreEstimator estimator = ScoreEstimator::Kde;
  BandwidthMode bandwidth_mode = BandwidthMode::MedianHeuristic;
  double fixed_bandwidth = 1.0;
  double sge_ridge = 0.5;
  double ssge_eigen_threshold = 1e-3;  // keep eigenpairs >= threshold * lambda_max
};

struct PriorConfig {
  double stdev = 1.0;  // isotropic Gaussian over particle parameters
};

enum class ParticleRole { LurTransform, ClassifierHead };

/// P jointly updated flattened parameter vectors of equal length M.
struct ParticleSet {
  Matrix particles;  // P x M
  ParticleRole role = ParticleRole::LurTransform;
};

/// K[i][j] = exp(-||p_i - p_j||^2 / (2 h^2)); symmetric, unit diagonal.
Matrix rbf_gram(const Matrix& particles, double bandwidth);

/// h = sqrt(median pairwise squared distance / (2 ln(P+1))), falling back to
/// 1 when all particles coincide. Even pair counts use the midpoint median.
/// This is the kernel-density scaling; the Stein estimators use
/// score_median_bandwidth instead.
double median_bandwidth(const Matrix& particles);

/// h = 2 x median pairwise distance (fallback 1), the smoothing the Stein
/// score estimators need. The ln(P+1) shrink above under-smooths them badly.
double score_median_bandwidth(const Matrix& particles);

/// Kernel-density estimate of the particle-distribution score at each
/// particle: r_i = grad_i log sum_j k(p_i, p_j).
Matrix repulsion_grad_kde(const Matrix& particles, double bandwidth);

/// Stein gradient estimator of grad log q at the particles:
/// G = -(K + ridge I)^{-1} <grad, K>.
Matrix score_sge(const Matrix& particles, double ridge, double bandwidth);

/// Spectral Stein gradient estimator: Nystroem eigenfunctions of the RBF Gram
/// matrix, truncated at eigen_threshold * lambda_max.
Matrix score_ssge(const Matrix& particles, double bandwidth,
                  double eigen_threshold);

/// Dispatches to the configured estimator with the configured bandwidth.
/// Every estimator returns an estimate of grad log q(p_i); the particle
/// update subtracts it, which is what pushes particles apart.
Matrix repulsion_directions(const Matrix& particles, const KernelConfig& config);

/// One particle update: p_i += step * (attraction_i - repulsion_i).
/// `attraction` carries grad log posterior per particle, computed by the
/// caller. Throws TrainingDivergedError on a non-finite update.
void repulsive_step(ParticleSet& set, const Matrix& attraction,
                    const KernelConfig& config, double step_size);

}  // namespace lur
