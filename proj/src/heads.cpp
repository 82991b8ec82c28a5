#include "lur/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lur/errors.hpp"
#include "lur/metrics.hpp"

namespace lur {

std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::Regular: return "regular";
    case HeadVariant::SubEnsemble: return "sub_ensemble";
    case HeadVariant::Lur: return "lur";
    case HeadVariant::Rlur: return "rlur";
    case HeadVariant::Rlle: return "rlle";
    case HeadVariant::BbbLl: return "bbb_ll";
    case HeadVariant::Gda: return "gda";
  }
  throw InvalidInputError("unknown head variant");
}

HeadVariant head_variant_from_string(const std::string& s) {
  if (s == "regular") return HeadVariant::Regular;
  if (s == "sub_ensemble") return HeadVariant::SubEnsemble;
  if (s == "lur") return HeadVariant::Lur;
  if (s == "rlur") return HeadVariant::Rlur;
  if (s == "rlle") return HeadVariant::Rlle;
  if (s == "bbb_ll") return HeadVariant::BbbLl;
  if (s == "gda") return HeadVariant::Gda;
  throw InvalidInputError("unknown head variant '" + s + "'");
}

std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::Entropy: return "entropy";
    case ScoreKind::LatentVariance: return "latent_variance";
    case ScoreKind::Density: return "density";
  }
  throw InvalidInputError("unknown score kind");
}

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "entropy") return ScoreKind::Entropy;
  if (s == "latent_variance") return ScoreKind::LatentVariance;
  if (s == "density") return ScoreKind::Density;
  throw InvalidInputError("unknown score kind '" + s + "'");
}

void HeadConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidInputError("config: learning_rate must be > 0");
  if (epochs == 0) throw InvalidInputError("config: epochs must be >= 1");
  if (batch_size == 0) throw InvalidInputError("config: batch_size must be >= 1");
  if (init_stdev < 0.0) throw InvalidInputError("config: init_stdev must be >= 0");
  if (variant == HeadVariant::SubEnsemble || variant == HeadVariant::BbbLl) {
    if (num_members < 1) throw InvalidInputError("config: num_members must be >= 1");
  }
  if (variant == HeadVariant::Rlur || variant == HeadVariant::Rlle) {
    if (num_members < 2) {
      throw InvalidInputError("config: repulsive variants need num_members >= 2");
    }
  }
  if (!(bbb_prior_stdev > 0.0)) throw InvalidInputError("config: bbb_prior_stdev must be > 0");
  if (bbb_kl_weight < 0.0) throw InvalidInputError("config: bbb_kl_weight must be >= 0");
  if (gda_reg < 0.0) throw InvalidInputError("config: gda_reg must be >= 0");
  if (!(prior.stdev > 0.0)) throw InvalidInputError("config: prior stdev must be > 0");
  if (kernel.bandwidth_mode == BandwidthMode::Fixed && !(kernel.fixed_bandwidth > 0.0)) {
    throw InvalidInputError("config: fixed bandwidth must be > 0");
  }
  if (!(kernel.sge_ridge > 0.0)) throw InvalidInputError("config: sge_ridge must be > 0");
  if (!(kernel.ssge_eigen_threshold > 0.0) || kernel.ssge_eigen_threshold > 1.0) {
    throw InvalidInputError("config: ssge_eigen_threshold must be in (0, 1]");
  }
}

namespace {

void apply_linear(const LinearLayer& l, std::span<const double> x,
                  std::span<double> out) {
  const std::size_t in = l.w.rows, n_out = l.w.cols;
  for (std::size_t o = 0; o < n_out; ++o) out[o] = l.b[o];
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* wrow = l.w.data.data() + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) out[o] += xi * wrow[o];
  }
}

LinearLayer zero_layer(std::size_t in, std::size_t out) {
  LinearLayer l;
  l.w = Matrix(in, out);
  l.b.assign(out, 0.0);
  return l;
}

LinearLayer init_layer(Rng& rng, std::size_t in, std::size_t out, double stdev) {
  LinearLayer l = zero_layer(in, out);
  for (double& v : l.w.data) v = stdev * rng.normal();
  return l;
}

void sgd_update(LinearLayer& l, const LinearLayer& g, double lr) {
  for (std::size_t i = 0; i < l.w.data.size(); ++i) l.w.data[i] -= lr * g.w.data[i];
  for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] -= lr * g.b[i];
}

void flatten_into(const LinearLayer& l, std::span<double> out) {
  std::copy(l.w.data.begin(), l.w.data.end(), out.begin());
  std::copy(l.b.begin(), l.b.end(), out.begin() + static_cast<std::ptrdiff_t>(l.w.data.size()));
}

void unflatten_from(std::span<const double> in, LinearLayer& l) {
  std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(l.w.data.size()),
            l.w.data.begin());
  std::copy(in.begin() + static_cast<std::ptrdiff_t>(l.w.data.size()), in.end(),
            l.b.begin());
}

}  // namespace

PredictiveDistribution lur_forward(const LurHead& head, std::span<const double> z) {
  const std::size_t d = head.latent_dim(), c = head.num_classes();
  if (z.size() != d) {
    throw InvalidInputError("lur_forward: latent has dimension " +
                            std::to_string(z.size()) + ", head expects " +
                            std::to_string(d));
  }
  if (!all_finite(z)) throw InvalidInputError("lur_forward: non-finite latent");

  const std::size_t s = head.transforms.size() + 1;
  PredictiveDistribution pd;
  pd.latent_reps = Matrix(s, d);
  std::copy(z.begin(), z.end(), pd.latent_reps->row(0).begin());
  for (std::size_t i = 0; i < head.transforms.size(); ++i) {
    apply_linear(head.transforms[i], z, pd.latent_reps->row(i + 1));
  }

  pd.probs = Matrix(s, c);
  std::vector<double> logits(c);
  for (std::size_t r = 0; r < s; ++r) {
    apply_linear(head.classifier, pd.latent_reps->row(r), logits);
    const std::vector<double> p = softmax(logits);
    std::copy(p.begin(), p.end(), pd.probs.row(r).begin());
  }
  return pd;
}

double lur_loss_and_grads(const LurHead& head, const Matrix& z_batch,
                          std::span<const std::uint32_t> labels, LurGrads& grads) {
  const std::size_t b = z_batch.rows, d = head.latent_dim(), c = head.num_classes();
  if (b == 0) throw InvalidInputError("lur_loss_and_grads: empty batch");
  if (z_batch.cols != d) throw InvalidInputError("lur_loss_and_grads: latent dim mismatch");
  if (labels.size() != b) throw InvalidInputError("lur_loss_and_grads: label count mismatch");

  const std::size_t n = head.transforms.size();
  grads.classifier = zero_layer(d, c);
  grads.transforms.assign(n, zero_layer(d, d));

  double loss = 0.0;
  std::vector<double> rep(d), logits(c), dz(d);
  for (std::size_t r = 0; r < b; ++r) {
    const auto z = z_batch.row(r);
    const std::uint32_t label = labels[r];

    apply_linear(head.classifier, z, logits);
    CrossEntropy ce = cross_entropy_with_grad(logits, label);
    loss += ce.loss;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < c; ++k) grads.classifier.w(i, k) += z[i] * ce.grad_logits[k];
    }
    for (std::size_t k = 0; k < c; ++k) grads.classifier.b[k] += ce.grad_logits[k];

    for (std::size_t t = 0; t < n; ++t) {
      apply_linear(head.transforms[t], z, rep);
      apply_linear(head.classifier, rep, logits);
      ce = cross_entropy_with_grad(logits, label);
      loss += ce.loss;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
          grads.classifier.w(i, k) += rep[i] * ce.grad_logits[k];
        }
      }
      for (std::size_t k = 0; k < c; ++k) grads.classifier.b[k] += ce.grad_logits[k];

      // d loss / d rep, then into the transform; only path t sees it.
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += head.classifier.w(i, k) * ce.grad_logits[k];
        dz[i] = s;
      }
      LinearLayer& gt = grads.transforms[t];
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t o = 0; o < d; ++o) gt.w(i, o) += z[i] * dz[o];
      }
      for (std::size_t o = 0; o < d; ++o) gt.b[o] += dz[o];
    }
  }

  const double inv_b = 1.0 / static_cast<double>(b);
  loss *= inv_b;
  for (double& v : grads.classifier.w.data) v *= inv_b;
  for (double& v : grads.classifier.b) v *= inv_b;
  for (LinearLayer& g : grads.transforms) {
    for (double& v : g.w.data) v *= inv_b;
    for (double& v : g.b) v *= inv_b;
  }
  return loss;
}

PredictiveDistribution bbb_forward(const BbbHead& head, std::span<const double> z,
                                   std::uint32_t samples, Rng& rng) {
  if (samples == 0) throw InvalidInputError("bbb_forward: samples must be >= 1");
  const std::size_t d = head.w_mu.rows, c = head.w_mu.cols;
  if (z.size() != d) throw InvalidInputError("bbb_forward: latent dim mismatch");

  PredictiveDistribution pd;
  pd.probs = Matrix(samples, c);
  std::vector<double> logits(c);
  for (std::uint32_t s = 0; s < samples; ++s) {
    std::fill(logits.begin(), logits.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        const double w = head.w_mu(i, k) + softplus(head.w_rho(i, k)) * rng.normal();
        logits[k] += z[i] * w;
      }
    }
    for (std::size_t k = 0; k < c; ++k) {
      logits[k] += head.b_mu[k] + softplus(head.b_rho[k]) * rng.normal();
    }
    const std::vector<double> p = softmax(logits);
    std::copy(p.begin(), p.end(), pd.probs.row(s).begin());
  }
  return pd;
}

double bbb_kl(const BbbHead& head, double prior_stdev) {
  double kl = 0.0;
  for (std::size_t i = 0; i < head.w_mu.data.size(); ++i) {
    kl += gaussian_kl_diag(head.w_mu.data[i], softplus(head.w_rho.data[i]), prior_stdev);
  }
  for (std::size_t i = 0; i < head.b_mu.size(); ++i) {
    kl += gaussian_kl_diag(head.b_mu[i], softplus(head.b_rho[i]), prior_stdev);
  }
  return kl;
}

double bbb_loss_and_grads(const BbbHead& head, const Matrix& z_batch,
                          std::span<const std::uint32_t> labels,
                          const Matrix& eps_w, std::span<const double> eps_b,
                          double kl_weight, double prior_stdev, BbbGrads& grads) {
  const std::size_t d = head.w_mu.rows, c = head.w_mu.cols;
  const std::size_t b = z_batch.rows;
  if (b == 0) throw InvalidInputError("bbb_loss_and_grads: empty batch");
  if (z_batch.cols != d || labels.size() != b || eps_w.rows != d ||
      eps_w.cols != c || eps_b.size() != c) {
    throw InvalidInputError("bbb_loss_and_grads: shape mismatch");
  }

  Matrix w(d, c);
  std::vector<double> bias(c);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    w.data[i] = head.w_mu.data[i] + softplus(head.w_rho.data[i]) * eps_w.data[i];
  }
  for (std::size_t k = 0; k < c; ++k) {
    bias[k] = head.b_mu[k] + softplus(head.b_rho[k]) * eps_b[k];
  }

  Matrix dw(d, c);
  std::vector<double> db(c, 0.0), logits(c);
  double ce_loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const auto z = z_batch.row(r);
    for (std::size_t k = 0; k < c; ++k) logits[k] = bias[k];
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < c; ++k) logits[k] += z[i] * w(i, k);
    }
    const CrossEntropy ce = cross_entropy_with_grad(logits, labels[r]);
    ce_loss += ce.loss;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < c; ++k) dw(i, k) += z[i] * ce.grad_logits[k];
    }
    for (std::size_t k = 0; k < c; ++k) db[k] += ce.grad_logits[k];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  ce_loss *= inv_b;
  for (double& v : dw.data) v *= inv_b;
  for (double& v : db) v *= inv_b;

  const double prior_var = prior_stdev * prior_stdev;
  grads.w_mu = Matrix(d, c);
  grads.w_rho = Matrix(d, c);
  grads.b_mu.assign(c, 0.0);
  grads.b_rho.assign(c, 0.0);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    const double sig = softplus(head.w_rho.data[i]);
    const double dsig = sigmoid(head.w_rho.data[i]);
    grads.w_mu.data[i] = dw.data[i] + kl_weight * head.w_mu.data[i] / prior_var;
    grads.w_rho.data[i] =
        (dw.data[i] * eps_w.data[i] + kl_weight * (sig / prior_var - 1.0 / sig)) *
        dsig;
  }
  for (std::size_t k = 0; k < c; ++k) {
    const double sig = softplus(head.b_rho[k]);
    const double dsig = sigmoid(head.b_rho[k]);
    grads.b_mu[k] = db[k] + kl_weight * head.b_mu[k] / prior_var;
    grads.b_rho[k] =
        (db[k] * eps_b[k] + kl_weight * (sig / prior_var - 1.0 / sig)) * dsig;
  }
  return ce_loss + kl_weight * bbb_kl(head, prior_stdev);
}

void gda_refresh_factors(GdaHead& head) {
  head.factors.clear();
  for (const Matrix& cov : head.covariances) {
    try {
      head.factors.push_back(CholeskyFactor::decompose(cov));
    } catch (const NumericError&) {
      throw NumericError(
          "gda: covariance is singular after regularization; increase gda_reg");
    }
  }
}

GdaHead gda_fit(const LatentDataset& ds, double reg, bool per_class_cov) {
  ds.validate();
  const std::size_t d = ds.dim(), c = ds.num_classes();
  const std::vector<std::size_t> train = ds.indices_of(Split::Train);
  if (train.empty()) throw InvalidInputError("gda_fit: no train rows");

  std::vector<std::size_t> counts(c, 0);
  for (std::size_t r : train) ++counts[ds.labels[r]];
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] < 2) {
      throw InvalidInputError("gda_fit: class " + std::to_string(k) +
                              " has fewer than 2 train rows");
    }
  }

  GdaHead head;
  head.per_class_cov = per_class_cov;
  head.means = Matrix(c, d);
  head.log_priors.resize(c);
  for (std::size_t r : train) {
    const auto z = ds.features.row(r);
    for (std::size_t j = 0; j < d; ++j) head.means(ds.labels[r], j) += z[j];
  }
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < d; ++j) head.means(k, j) /= static_cast<double>(counts[k]);
    head.log_priors[k] = std::log(static_cast<double>(counts[k]) /
                                  static_cast<double>(train.size()));
  }

  const std::size_t n_cov = per_class_cov ? c : 1;
  head.covariances.assign(n_cov, Matrix(d, d));
  std::vector<double> dev(d);
  for (std::size_t r : train) {
    const std::uint32_t k = ds.labels[r];
    Matrix& cov = head.covariances[per_class_cov ? k : 0];
    const auto z = ds.features.row(r);
    for (std::size_t j = 0; j < d; ++j) dev[j] = z[j] - head.means(k, j);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) cov(i, j) += dev[i] * dev[j];
    }
  }
  for (std::size_t m = 0; m < n_cov; ++m) {
    Matrix& cov = head.covariances[m];
    const double denom = per_class_cov
                             ? static_cast<double>(counts[m] - 1)
                             : static_cast<double>(train.size() - c);
    const double scale = denom > 0 ? 1.0 / denom : 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        cov(i, j) *= scale;
        cov(j, i) = cov(i, j);
      }
      cov(i, i) += reg;
    }
  }
  gda_refresh_factors(head);
  return head;
}

namespace {

std::vector<double> gda_class_log_joint(const GdaHead& head,
                                        std::span<const double> z) {
  const std::size_t c = head.means.rows, d = head.means.cols;
  if (z.size() != d) throw InvalidInputError("gda: latent dim mismatch");
  std::vector<double> logp(c), dev(d);
  for (std::size_t k = 0; k < c; ++k) {
    const CholeskyFactor& f = head.factors[head.per_class_cov ? k : 0];
    for (std::size_t j = 0; j < d; ++j) dev[j] = z[j] - head.means(k, j);
    const double quad = f.inv_quad_form(dev);
    logp[k] = head.log_priors[k] -
              0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                     f.log_det() + quad);
  }
  return logp;
}

}  // namespace

double gda_score(const GdaHead& head, std::span<const double> z) {
  const std::vector<double> logp = gda_class_log_joint(head, z);
  const double m = *std::max_element(logp.begin(), logp.end());
  double sum = 0.0;
  for (double v : logp) sum += std::exp(v - m);
  return -(m + std::log(sum));
}

PredictiveDistribution gda_predict(const GdaHead& head, std::span<const double> z) {
  const std::vector<double> logp = gda_class_log_joint(head, z);
  PredictiveDistribution pd;
  pd.probs = Matrix(1, logp.size());
  const std::vector<double> post = softmax(logp);
  std::copy(post.begin(), post.end(), pd.probs.row(0).begin());
  return pd;
}

PredictiveDistribution HeadModel::predict(std::span<const double> z, Rng& rng) const {
  if (const auto* lur = std::get_if<LurHead>(&impl_)) {
    return lur_forward(*lur, z);
  }
  if (const auto* ens = std::get_if<EnsembleHead>(&impl_)) {
    const std::size_t c = ens->members.front().w.cols;
    PredictiveDistribution pd;
    pd.probs = Matrix(ens->members.size(), c);
    std::vector<double> logits(c);
    for (std::size_t m = 0; m < ens->members.size(); ++m) {
      apply_linear(ens->members[m], z, logits);
      const std::vector<double> p = softmax(logits);
      std::copy(p.begin(), p.end(), pd.probs.row(m).begin());
    }
    return pd;
  }
  if (const auto* bbb = std::get_if<BbbHead>(&impl_)) {
    return bbb_forward(*bbb, z, std::max<std::uint32_t>(1, config_.num_members), rng);
  }
  return gda_predict(std::get<GdaHead>(impl_), z);
}

double HeadModel::uncertainty(const PredictiveDistribution& pd,
                              std::span<const double> z, ScoreKind kind) const {
  switch (kind) {
    case ScoreKind::Entropy:
      return predictive_entropy(pd.probs);
    case ScoreKind::LatentVariance:
      if (!pd.latent_reps || pd.latent_reps->rows < 2) {
        throw InvalidInputError(
            "latent_variance score needs a LUR-family head with n >= 1");
      }
      return latent_variance_score(*pd.latent_reps);
    case ScoreKind::Density: {
      const auto* gda = std::get_if<GdaHead>(&impl_);
      if (!gda) throw InvalidInputError("density score is GDA-only");
      return gda_score(*gda, z);
    }
  }
  throw InvalidInputError("unknown score kind");
}

std::vector<ScoreKind> HeadModel::supported_scores() const {
  switch (config_.variant) {
    case HeadVariant::Gda:
      return {ScoreKind::Density};
    case HeadVariant::Lur:
    case HeadVariant::Rlur:
      if (config_.num_members >= 1) return {ScoreKind::Entropy, ScoreKind::LatentVariance};
      return {ScoreKind::Entropy};
    default:
      return {ScoreKind::Entropy};
  }
}

bool HeadModel::operator==(const HeadModel& o) const { return impl_ == o.impl_; }

namespace {

struct Batcher {
  const LatentDataset& ds;
  std::vector<std::size_t> order;
  std::size_t batch_size;

  Matrix z;
  std::vector<std::uint32_t> y;

  Batcher(const LatentDataset& dataset, std::vector<std::size_t> train_rows,
          std::size_t bs)
      : ds(dataset), order(std::move(train_rows)), batch_size(bs) {}

  std::size_t num_batches() const { return (order.size() + batch_size - 1) / batch_size; }

  void load(std::size_t batch) {
    const std::size_t lo = batch * batch_size;
    const std::size_t hi = std::min(order.size(), lo + batch_size);
    z = Matrix(hi - lo, ds.dim());
    y.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t r = order[i];
      std::copy(ds.features.row(r).begin(), ds.features.row(r).end(),
                z.row(i - lo).begin());
      y[i - lo] = ds.labels[r];
    }
  }
};

void check_loss(double loss, std::uint32_t epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingDivergedError(
        "training diverged: non-finite loss at epoch " + std::to_string(epoch),
        epoch);
  }
}

// Parameters past this magnitude overflow the next forward pass, so they are
// treated as divergence before they can poison the loss with inf/NaN.
constexpr double kParamBound = 1e150;

void check_values(std::span<const double> values, std::uint32_t epoch) {
  for (double v : values) {
    if (!std::isfinite(v) || std::abs(v) > kParamBound) {
      throw TrainingDivergedError(
          "training diverged: unbounded parameters at epoch " +
              std::to_string(epoch),
          epoch);
    }
  }
}

void check_layer_finite(const LinearLayer& l, std::uint32_t epoch) {
  check_values(l.w.data, epoch);
  check_values(l.b, epoch);
}

// Fixed rows the function-space kernel evaluates the particles on.
std::vector<std::size_t> repulsion_rows(const LatentDataset& ds, std::size_t cap = 64) {
  std::vector<std::size_t> rows = ds.indices_of(Split::Train);
  if (rows.size() > cap) rows.resize(cap);
  return rows;
}

// Logit outputs of every RLUR particle on the fixed rows, P x (R*C).
Matrix rlur_function_values(const LurHead& head, const LatentDataset& ds,
                            const std::vector<std::size_t>& rows) {
  const std::size_t d = head.latent_dim(), c = head.num_classes();
  const std::size_t p = head.transforms.size();
  Matrix f(p, rows.size() * c);
  std::vector<double> rep(d), logits(c);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      apply_linear(head.transforms[i], ds.features.row(rows[r]), rep);
      apply_linear(head.classifier, rep, logits);
      std::copy(logits.begin(), logits.end(), f.row(i).begin() + static_cast<std::ptrdiff_t>(r * c));
    }
  }
  return f;
}

Matrix ensemble_function_values(const EnsembleHead& head, const LatentDataset& ds,
                                const std::vector<std::size_t>& rows) {
  const std::size_t c = head.members.front().w.cols;
  Matrix f(head.members.size(), rows.size() * c);
  std::vector<double> logits(c);
  for (std::size_t i = 0; i < head.members.size(); ++i) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      apply_linear(head.members[i], ds.features.row(rows[r]), logits);
      std::copy(logits.begin(), logits.end(), f.row(i).begin() + static_cast<std::ptrdiff_t>(r * c));
    }
  }
  return f;
}

// Pulls a function-space repulsion direction back to parameter space through
// the path jacobian, like backprop with the direction in place of dL/dlogits.
Matrix rlur_pullback(const LurHead& head, const LatentDataset& ds,
                     const std::vector<std::size_t>& rows, const Matrix& rep_f) {
  const std::size_t d = head.latent_dim(), c = head.num_classes();
  const std::size_t p = head.transforms.size();
  const std::size_t m = d * d + d;
  Matrix out(p, m);
  std::vector<double> dz(d);
  for (std::size_t i = 0; i < p; ++i) {
    LinearLayer g = zero_layer(d, d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto z = ds.features.row(rows[r]);
      const double* dlog = rep_f.row(i).data() + r * c;
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += head.classifier.w(a, k) * dlog[k];
        dz[a] = s;
      }
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t o = 0; o < d; ++o) g.w(a, o) += z[a] * dz[o];
      }
      for (std::size_t o = 0; o < d; ++o) g.b[o] += dz[o];
    }
    flatten_into(g, out.row(i));
  }
  return out;
}

Matrix ensemble_pullback(const EnsembleHead& head, const LatentDataset& ds,
                         const std::vector<std::size_t>& rows, const Matrix& rep_f) {
  const std::size_t d = head.members.front().w.rows, c = head.members.front().w.cols;
  Matrix out(head.members.size(), d * c + c);
  for (std::size_t i = 0; i < head.members.size(); ++i) {
    LinearLayer g = zero_layer(d, c);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto z = ds.features.row(rows[r]);
      const double* dlog = rep_f.row(i).data() + r * c;
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t k = 0; k < c; ++k) g.w(a, k) += z[a] * dlog[k];
      }
      for (std::size_t k = 0; k < c; ++k) g.b[k] += dlog[k];
    }
    flatten_into(g, out.row(i));
  }
  return out;
}

// theta += step * (attraction - repulsion), repulsion already in weight space.
void particle_update(Matrix& particles, const Matrix& attraction,
                     const Matrix& repulsion, double step, std::uint32_t epoch) {
  for (std::size_t i = 0; i < particles.data.size(); ++i) {
    particles.data[i] += step * (attraction.data[i] - repulsion.data[i]);
  }
  if (!particles.all_finite()) {
    throw TrainingDivergedError(
        "training diverged: non-finite particle update at epoch " +
            std::to_string(epoch),
        epoch);
  }
}

TrainResult train_lur_family(const HeadConfig& config, const LatentDataset& ds) {
  const std::size_t d = ds.dim(), c = ds.num_classes();
  const bool repulsive = config.variant == HeadVariant::Rlur;
  const std::size_t n = config.variant == HeadVariant::Regular ? 0 : config.num_members;

  Rng rng(config.seed);
  LurHead head;
  head.classifier = init_layer(rng, d, c, config.init_stdev);
  head.transforms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    head.transforms.push_back(init_layer(rng, d, d, config.init_stdev));
  }

  Batcher batcher(ds, ds.indices_of(Split::Train), config.batch_size);
  if (batcher.order.empty()) throw InvalidInputError("train_head: no train rows");
  const double n_train = static_cast<double>(batcher.order.size());
  const std::vector<std::size_t> rep_rows =
      repulsive && config.repulsion_space == RepulsionSpace::Function
          ? repulsion_rows(ds)
          : std::vector<std::size_t>{};

  const std::size_t m = d * d + d;
  Matrix particles(repulsive ? n : 0, repulsive ? m : 0);
  Matrix attraction(particles.rows, particles.cols);

  TrainResult result;
  LurGrads grads;
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(batcher.order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batcher.num_batches(); ++b) {
      batcher.load(b);
      const double loss = lur_loss_and_grads(head, batcher.z, batcher.y, grads);
      check_loss(loss, epoch);
      loss_sum += loss * static_cast<double>(batcher.z.rows);

      sgd_update(head.classifier, grads.classifier, config.learning_rate);
      check_layer_finite(head.classifier, epoch);
      if (!repulsive) {
        for (std::size_t t = 0; t < n; ++t) {
          sgd_update(head.transforms[t], grads.transforms[t], config.learning_rate);
          check_layer_finite(head.transforms[t], epoch);
        }
        continue;
      }

      // Attraction: full-data log-likelihood estimate plus the log-prior
      // gradient. The particle step is learning_rate / N so the likelihood
      // term moves exactly as it would under plain SGD.
      const double inv_prior_var = 1.0 / (config.prior.stdev * config.prior.stdev);
      for (std::size_t t = 0; t < n; ++t) {
        flatten_into(head.transforms[t], particles.row(t));
        LinearLayer& g = grads.transforms[t];
        auto arow = attraction.row(t);
        auto prow = particles.row(t);
        for (std::size_t i = 0; i < g.w.data.size(); ++i) {
          arow[i] = -n_train * g.w.data[i] - prow[i] * inv_prior_var;
        }
        for (std::size_t i = 0; i < g.b.size(); ++i) {
          const std::size_t at = g.w.data.size() + i;
          arow[at] = -n_train * g.b[i] - prow[at] * inv_prior_var;
        }
      }
      const double step = config.learning_rate / n_train;
      if (config.repulsion_space == RepulsionSpace::Weight) {
        ParticleSet set{std::move(particles), ParticleRole::LurTransform};
        try {
          repulsive_step(set, attraction, config.kernel, step);
        } catch (const TrainingDivergedError&) {
          throw TrainingDivergedError(
              "training diverged: non-finite particle update at epoch " +
                  std::to_string(epoch),
              epoch);
        }
        particles = std::move(set.particles);
      } else {
        const Matrix f = rlur_function_values(head, ds, rep_rows);
        const Matrix rep_f = repulsion_directions(f, config.kernel);
        const Matrix rep_w = rlur_pullback(head, ds, rep_rows, rep_f);
        particle_update(particles, attraction, rep_w, step, epoch);
      }
      for (std::size_t t = 0; t < n; ++t) {
        unflatten_from(particles.row(t), head.transforms[t]);
        check_layer_finite(head.transforms[t], epoch);
      }
    }
    result.epoch_losses.push_back(loss_sum / n_train);
  }
  result.model = HeadModel(config, std::move(head));
  return result;
}

// Batch-mean cross-entropy and gradients of one classifier layer.
double member_loss_and_grads(const LinearLayer& layer, const Matrix& z,
                             std::span<const std::uint32_t> y, LinearLayer& g) {
  const std::size_t d = layer.w.rows, c = layer.w.cols;
  g = zero_layer(d, c);
  std::vector<double> logits(c);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows; ++r) {
    apply_linear(layer, z.row(r), logits);
    const CrossEntropy ce = cross_entropy_with_grad(logits, y[r]);
    loss += ce.loss;
    const auto zr = z.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < c; ++k) g.w(i, k) += zr[i] * ce.grad_logits[k];
    }
    for (std::size_t k = 0; k < c; ++k) g.b[k] += ce.grad_logits[k];
  }
  const double inv_b = 1.0 / static_cast<double>(z.rows);
  for (double& v : g.w.data) v *= inv_b;
  for (double& v : g.b) v *= inv_b;
  return loss * inv_b;
}

TrainResult train_ensemble_family(const HeadConfig& config, const LatentDataset& ds) {
  const std::size_t d = ds.dim(), c = ds.num_classes();
  const bool repulsive = config.variant == HeadVariant::Rlle;
  const std::size_t n = config.num_members;

  EnsembleHead head;
  head.members.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Rng member_rng(Rng::derive(config.seed, 101 + k));
    head.members.push_back(init_layer(member_rng, d, c, config.init_stdev));
  }
  Rng rng(config.seed);

  Batcher batcher(ds, ds.indices_of(Split::Train), config.batch_size);
  if (batcher.order.empty()) throw InvalidInputError("train_head: no train rows");
  const double n_train = static_cast<double>(batcher.order.size());
  const std::vector<std::size_t> rep_rows =
      repulsive && config.repulsion_space == RepulsionSpace::Function
          ? repulsion_rows(ds)
          : std::vector<std::size_t>{};

  const std::size_t m = d * c + c;
  Matrix particles(repulsive ? n : 0, repulsive ? m : 0);
  Matrix attraction(particles.rows, particles.cols);
  std::vector<LinearLayer> grads(n);

  TrainResult result;
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(batcher.order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batcher.num_batches(); ++b) {
      batcher.load(b);
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        batch_loss += member_loss_and_grads(head.members[k], batcher.z, batcher.y, grads[k]);
      }
      batch_loss /= static_cast<double>(n);
      check_loss(batch_loss, epoch);
      loss_sum += batch_loss * static_cast<double>(batcher.z.rows);

      if (!repulsive) {
        for (std::size_t k = 0; k < n; ++k) {
          sgd_update(head.members[k], grads[k], config.learning_rate);
          check_layer_finite(head.members[k], epoch);
        }
        continue;
      }

      const double inv_prior_var = 1.0 / (config.prior.stdev * config.prior.stdev);
      for (std::size_t k = 0; k < n; ++k) {
        flatten_into(head.members[k], particles.row(k));
        auto arow = attraction.row(k);
        auto prow = particles.row(k);
        for (std::size_t i = 0; i < grads[k].w.data.size(); ++i) {
          arow[i] = -n_train * grads[k].w.data[i] - prow[i] * inv_prior_var;
        }
        for (std::size_t i = 0; i < grads[k].b.size(); ++i) {
          const std::size_t at = grads[k].w.data.size() + i;
          arow[at] = -n_train * grads[k].b[i] - prow[at] * inv_prior_var;
        }
      }
      const double step = config.learning_rate / n_train;
      if (config.repulsion_space == RepulsionSpace::Weight) {
        ParticleSet set{std::move(particles), ParticleRole::ClassifierHead};
        try {
          repulsive_step(set, attraction, config.kernel, step);
        } catch (const TrainingDivergedError&) {
          throw TrainingDivergedError(
              "training diverged: non-finite particle update at epoch " +
                  std::to_string(epoch),
              epoch);
        }
        particles = std::move(set.particles);
      } else {
        const Matrix f = ensemble_function_values(head, ds, rep_rows);
        const Matrix rep_f = repulsion_directions(f, config.kernel);
        const Matrix rep_w = ensemble_pullback(head, ds, rep_rows, rep_f);
        particle_update(particles, attraction, rep_w, step, epoch);
      }
      for (std::size_t k = 0; k < n; ++k) {
        unflatten_from(particles.row(k), head.members[k]);
        check_layer_finite(head.members[k], epoch);
      }
    }
    result.epoch_losses.push_back(loss_sum / n_train);
  }
  result.model = HeadModel(config, std::move(head));
  return result;
}

TrainResult train_bbb(const HeadConfig& config, const LatentDataset& ds) {
  const std::size_t d = ds.dim(), c = ds.num_classes();
  constexpr double kInitRho = -5.0;  // softplus(-5) ~ 6.7e-3

  Rng rng(config.seed);
  BbbHead head;
  head.w_mu = Matrix(d, c);
  for (double& v : head.w_mu.data) v = config.init_stdev * rng.normal();
  head.w_rho = Matrix(d, c, kInitRho);
  head.b_mu.assign(c, 0.0);
  head.b_rho.assign(c, kInitRho);

  Batcher batcher(ds, ds.indices_of(Split::Train), config.batch_size);
  if (batcher.order.empty()) throw InvalidInputError("train_head: no train rows");
  const double n_train = static_cast<double>(batcher.order.size());

  Matrix eps_w(d, c);
  std::vector<double> eps_b(c);
  BbbGrads grads;

  TrainResult result;
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(batcher.order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batcher.num_batches(); ++b) {
      batcher.load(b);
      // One reparameterized weight sample per mini-batch.
      for (double& v : eps_w.data) v = rng.normal();
      for (double& v : eps_b) v = rng.normal();

      const double loss =
          bbb_loss_and_grads(head, batcher.z, batcher.y, eps_w, eps_b,
                             config.bbb_kl_weight, config.bbb_prior_stdev, grads);
      check_loss(loss, epoch);
      loss_sum += loss * static_cast<double>(batcher.z.rows);

      for (std::size_t i = 0; i < head.w_mu.data.size(); ++i) {
        head.w_mu.data[i] -= config.learning_rate * grads.w_mu.data[i];
        head.w_rho.data[i] -= config.learning_rate * grads.w_rho.data[i];
      }
      for (std::size_t k = 0; k < c; ++k) {
        head.b_mu[k] -= config.learning_rate * grads.b_mu[k];
        head.b_rho[k] -= config.learning_rate * grads.b_rho[k];
      }
      check_values(head.w_mu.data, epoch);
      check_values(head.w_rho.data, epoch);
      check_values(head.b_mu, epoch);
      check_values(head.b_rho, epoch);
    }
    result.epoch_losses.push_back(loss_sum / n_train);
  }
  result.model = HeadModel(config, std::move(head));
  return result;
}

}  // namespace

TrainResult train_head(const HeadConfig& config_in, const LatentDataset& ds) {
  ds.validate();
  HeadConfig config = config_in;
  if (config.latent_dim == 0) config.latent_dim = static_cast<std::uint32_t>(ds.dim());
  if (config.num_classes == 0) config.num_classes = static_cast<std::uint32_t>(ds.num_classes());
  if (config.latent_dim != ds.dim() || config.num_classes != ds.num_classes()) {
    throw InvalidInputError("train_head: config dimensions do not match the dataset");
  }
  config.validate();

  switch (config.variant) {
    case HeadVariant::Regular:
    case HeadVariant::Lur:
    case HeadVariant::Rlur:
      return train_lur_family(config, ds);
    case HeadVariant::SubEnsemble:
    case HeadVariant::Rlle:
      return train_ensemble_family(config, ds);
    case HeadVariant::BbbLl:
      return train_bbb(config, ds);
    case HeadVariant::Gda: {
      TrainResult result;
      result.model =
          HeadModel(config, gda_fit(ds, config.gda_reg, config.gda_per_class_cov));
      return result;
    }
  }
  throw InvalidInputError("train_head: unknown variant");
}

}  // namespace lur
