#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lur/dataset.hpp"
#include "lur/matrix.hpp"
#include "lur/numerics.hpp"
#include "lur/repulsion.hpp"
#include "lur/rng.hpp"

namespace lur {

enum class HeadVariant {
  Regular,
  SubEnsemble,
  Lur,
  Rlur,
  Rlle,
  BbbLl,
  Gda,
};

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(const std::string& s);

/// Uncertainty score kinds a trained head can emit per instance.
enum class ScoreKind { Entropy, LatentVariance, Density };

std::string to_string(ScoreKind k);
ScoreKind score_kind_from_string(const std::string& s);

struct HeadConfig {
  HeadVariant variant = HeadVariant::Regular;
  /// Transformation layers (LUR/RLUR), classifier heads (SE/RLLE) or Monte
  /// Carlo samples (BBB-LL). Ignored by Regular and GDA.
  std::uint32_t num_members = 10;
  std::uint32_t latent_dim = 0;   // 0: take from the dataset
  std::uint32_t num_classes = 0;  // 0: take from the dataset
  double learning_rate = 1e-2;
  std::uint32_t batch_size = 32;
  std::uint32_t epochs = 20;
  std::uint64_t seed = 0;
  double init_stdev = 0.02;

  double bbb_prior_stdev = 1.0;
  double bbb_kl_weight = 1e-3;

  double gda_reg = 1e-3;
  bool gda_per_class_cov = false;

  // Repulsive variants only.
  KernelConfig kernel;
  PriorConfig prior;
  RepulsionSpace repulsion_space = RepulsionSpace::Weight;

  void validate() const;
};

struct LinearLayer {
  Matrix w;               // in x out
  std::vector<double> b;  // out

  bool operator==(const LinearLayer&) const = default;
};

/// Shared classification layer plus n affine transformation layers. The
/// classifier is single-instance by construction: every path, transformed or
/// not, goes through it.
struct LurHead {
  LinearLayer classifier;              // D x C
  std::vector<LinearLayer> transforms; // each D x D

  std::size_t latent_dim() const { return classifier.w.rows; }
  std::size_t num_classes() const { return classifier.w.cols; }

  bool operator==(const LurHead&) const = default;
};

struct EnsembleHead {
  std::vector<LinearLayer> members;  // each D x C
  bool operator==(const EnsembleHead&) const = default;
};

/// Mean-field variational last layer; sigma = softplus(rho).
struct BbbHead {
  Matrix w_mu, w_rho;             // D x C
  std::vector<double> b_mu, b_rho;  // C
  bool operator==(const BbbHead&) const = default;
};

/// Class-wise Gaussian discriminant scorer over train latents.
struct GdaHead {
  Matrix means;                   // C x D
  std::vector<double> log_priors; // C
  std::vector<Matrix> covariances;  // regularized; 1 (shared) or C entries
  bool per_class_cov = false;
  std::vector<CholeskyFactor> factors;  // derived from covariances

  bool operator==(const GdaHead& o) const {
    return means == o.means && log_priors == o.log_priors &&
           covariances == o.covariances && per_class_cov == o.per_class_cov;
  }
};

/// Rebuilds the cached Cholesky factors from the stored covariances.
void gda_refresh_factors(GdaHead& head);

/// Per-instance predictive distribution: S probability rows over C classes.
/// The LUR family also carries the n+1 latent representations behind them.
struct PredictiveDistribution {
  Matrix probs;                       // S x C, rows sum to 1
  std::optional<Matrix> latent_reps;  // (n+1) x D, LUR family only
};

/// Forward pass of a LUR head: row 0 is the untransformed path.
PredictiveDistribution lur_forward(const LurHead& head, std::span<const double> z);

struct LurGrads {
  LinearLayer classifier;
  std::vector<LinearLayer> transforms;
};

/// Mean over the batch of the summed per-path cross-entropy. The classifier
/// gradient accumulates every path; transform i sees only its own path.
double lur_loss_and_grads(const LurHead& head, const Matrix& z_batch,
                          std::span<const std::uint32_t> labels, LurGrads& grads);

/// S stochastic forward passes with reparameterized weights drawn from `rng`.
PredictiveDistribution bbb_forward(const BbbHead& head, std::span<const double> z,
                                   std::uint32_t samples, Rng& rng);

/// Sum of closed-form diagonal-Gaussian KL terms against N(0, prior_stdev^2).
double bbb_kl(const BbbHead& head, double prior_stdev);

struct BbbGrads {
  Matrix w_mu, w_rho;
  std::vector<double> b_mu, b_rho;
};

/// Batch-mean cross-entropy under the reparameterized weights
/// w = mu + softplus(rho) * eps (one fixed noise draw for the whole batch)
/// plus kl_weight * KL, with analytic gradients for mu and rho.
double bbb_loss_and_grads(const BbbHead& head, const Matrix& z_batch,
                          std::span<const std::uint32_t> labels,
                          const Matrix& eps_w, std::span<const double> eps_b,
                          double kl_weight, double prior_stdev, BbbGrads& grads);

/// Fits per-class means and a (shared or per-class) covariance + reg*I over
/// the train rows. Requires >= 2 train rows per class.
GdaHead gda_fit(const LatentDataset& ds, double reg, bool per_class_cov);

/// Negative log marginal density: higher = more out-of-distribution.
double gda_score(const GdaHead& head, std::span<const double> z);

/// Posterior class distribution p(c | z) as a single-row PredictiveDistribution.
PredictiveDistribution gda_predict(const GdaHead& head, std::span<const double> z);

/// A trained head of any variant behind one predict interface. Immutable
/// after training; BBB sampling randomness comes from the caller's Rng.
class HeadModel {
 public:
  HeadModel() = default;
  HeadModel(HeadConfig config, std::variant<LurHead, EnsembleHead, BbbHead, GdaHead> impl)
      : config_(std::move(config)), impl_(std::move(impl)) {}

  const HeadConfig& config() const { return config_; }

  PredictiveDistribution predict(std::span<const double> z, Rng& rng) const;

  /// Per-instance uncertainty; Density is GDA-only, LatentVariance requires a
  /// LUR-family head with n >= 1.
  double uncertainty(const PredictiveDistribution& pd, std::span<const double> z,
                     ScoreKind kind) const;

  /// The score kinds this head can emit, in report order.
  std::vector<ScoreKind> supported_scores() const;

  const std::variant<LurHead, EnsembleHead, BbbHead, GdaHead>& impl() const {
    return impl_;
  }

  bool operator==(const HeadModel& o) const;

 private:
  HeadConfig config_;
  std::variant<LurHead, EnsembleHead, BbbHead, GdaHead> impl_;
};

struct TrainResult {
  HeadModel model;
  std::vector<double> epoch_losses;  // mean per-sample loss per epoch
};

/// Trains a head on the dataset's train rows with plain mini-batch SGD
/// (repulsive variants update their particles with the kernel step instead).
/// Deterministic in (config, ds). Throws TrainingDivergedError on NaN loss.
TrainResult train_head(const HeadConfig& config, const LatentDataset& ds);

}  // namespace lur
