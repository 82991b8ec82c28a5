#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "lur/dataset.hpp"
#include "lur/errors.hpp"
#include "lur/heads.hpp"
#include "lur/metrics.hpp"
#include "lur/serialize.hpp"

using namespace lur;

namespace {

LurHead identity_head(std::size_t d, std::size_t c, std::size_t n_transforms) {
  LurHead head;
  head.classifier.w = Matrix(d, c);
  head.classifier.b.assign(c, 0.0);
  for (std::size_t i = 0; i < std::min(d, c); ++i) head.classifier.w(i, i) = 1.0;
  for (std::size_t t = 0; t < n_transforms; ++t) {
    LinearLayer id;
    id.w = Matrix(d, d);
    id.b.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) id.w(i, i) = 1.0;
    head.transforms.push_back(id);
  }
  return head;
}

LurHead random_head(Rng& rng, std::size_t d, std::size_t c, std::size_t n) {
  LurHead head;
  head.classifier.w = Matrix(d, c);
  for (double& v : head.classifier.w.data) v = 0.5 * rng.normal();
  head.classifier.b.assign(c, 0.0);
  for (double& v : head.classifier.b) v = 0.1 * rng.normal();
  for (std::size_t t = 0; t < n; ++t) {
    LinearLayer l;
    l.w = Matrix(d, d);
    for (double& v : l.w.data) v = 0.5 * rng.normal();
    l.b.assign(d, 0.0);
    for (double& v : l.b) v = 0.1 * rng.normal();
    head.transforms.push_back(l);
  }
  return head;
}

SynthSpec blob_spec() {
  SynthSpec spec;
  spec.classes = 5;
  spec.dim = 16;
  spec.per_class = 200;
  spec.cluster_stdev = 0.5;
  spec.cluster_mean_scale = 3.0;
  spec.seed = 7;
  return spec;
}

double test_accuracy(const HeadModel& model, const LatentDataset& ds) {
  std::vector<ScoredPrediction> preds;
  std::size_t i = 0;
  for (std::size_t r : ds.indices_of(Split::Test)) {
    Rng rng(Rng::derive(1234, i++));
    const PredictiveDistribution pd = model.predict(ds.features.row(r), rng);
    preds.push_back(make_scored(pd.probs, ds.labels[r], 0.0));
  }
  return accuracy_and_macro_f1(preds).accuracy;
}

// Flattened view over every parameter tensor of a LUR head, for gradient
// checking and exact comparisons.
std::vector<double*> all_params(LurHead& head) {
  std::vector<double*> out;
  for (double& v : head.classifier.w.data) out.push_back(&v);
  for (double& v : head.classifier.b) out.push_back(&v);
  for (auto& t : head.transforms) {
    for (double& v : t.w.data) out.push_back(&v);
    for (double& v : t.b) out.push_back(&v);
  }
  return out;
}

std::vector<double> all_grads(const LurGrads& grads) {
  std::vector<double> out;
  for (double v : grads.classifier.w.data) out.push_back(v);
  for (double v : grads.classifier.b) out.push_back(v);
  for (const auto& t : grads.transforms) {
    for (double v : t.w.data) out.push_back(v);
    for (double v : t.b) out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("lur forward reference cases") {
  SUBCASE("no transforms reduces to the plain head") {
    const LurHead head = identity_head(2, 2, 0);
    const auto pd = lur_forward(head, std::vector<double>{1.0, 0.0});
    CHECK(pd.probs.rows == 1);
    CHECK(pd.probs(0, 0) == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(pd.latent_reps->rows == 1);
    CHECK((*pd.latent_reps)(0, 0) == 1.0);
  }

  SUBCASE("identity transforms duplicate the prediction") {
    const LurHead head = identity_head(3, 2, 2);
    const auto pd = lur_forward(head, std::vector<double>{0.3, -1.0, 0.4});
    CHECK(pd.probs.rows == 3);
    for (std::size_t s = 1; s < 3; ++s) {
      for (std::size_t k = 0; k < 2; ++k) {
        CHECK(pd.probs(s, k) == doctest::Approx(pd.probs(0, k)).epsilon(1e-12));
      }
    }
  }

  SUBCASE("coordinate swap flips the distribution") {
    LurHead head = identity_head(2, 2, 1);
    head.transforms[0].w = Matrix(2, 2);
    head.transforms[0].w(0, 1) = 1.0;
    head.transforms[0].w(1, 0) = 1.0;
    const auto pd = lur_forward(head, std::vector<double>{1.0, 0.0});
    CHECK(pd.probs(0, 0) == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(pd.probs(0, 1) == doctest::Approx(0.26894).epsilon(1e-5));
    CHECK(pd.probs(1, 0) == doctest::Approx(0.26894).epsilon(1e-5));
    CHECK(pd.probs(1, 1) == doctest::Approx(0.73106).epsilon(1e-5));
  }

  SUBCASE("dimension mismatch is rejected") {
    const LurHead head = identity_head(2, 2, 0);
    CHECK_THROWS_AS(lur_forward(head, std::vector<double>{1.0, 0.0, 3.0}),
                    InvalidInputError);
  }
}

TEST_CASE("lur loss reference cases") {
  Matrix z(1, 2);
  z(0, 0) = 1.0;
  const std::vector<std::uint32_t> y{0};
  LurGrads grads;

  const LurHead plain = identity_head(2, 2, 0);
  const double plain_loss = lur_loss_and_grads(plain, z, y, grads);
  CHECK(plain_loss == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));

  const LurHead dup = identity_head(2, 2, 2);
  CHECK(lur_loss_and_grads(dup, z, y, grads) ==
        doctest::Approx(3.0 * plain_loss).epsilon(1e-12));

  LurHead swap = identity_head(2, 2, 1);
  swap.transforms[0].w = Matrix(2, 2);
  swap.transforms[0].w(0, 1) = 1.0;
  swap.transforms[0].w(1, 0) = 1.0;
  CHECK(lur_loss_and_grads(swap, z, y, grads) ==
        doctest::Approx(1.62652).epsilon(1e-5));
}

TEST_CASE("lur gradients match finite differences for n in {0,1,3}") {
  Rng rng(2024);
  const double h = 1e-5;
  for (const std::size_t n : {0u, 1u, 3u}) {
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t d = 2 + rng.below(3), c = 2 + rng.below(3);
      LurHead head = random_head(rng, d, c, n);
      const std::size_t b = 1 + rng.below(4);
      Matrix z(b, d);
      for (double& v : z.data) v = rng.normal();
      std::vector<std::uint32_t> y(b);
      for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(c));

      LurGrads grads;
      lur_loss_and_grads(head, z, y, grads);
      const std::vector<double> analytic = all_grads(grads);
      const std::vector<double*> params = all_params(head);
      REQUIRE(analytic.size() == params.size());

      LurGrads scratch;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = *params[i];
        *params[i] = keep + h;
        const double hi = lur_loss_and_grads(head, z, y, scratch);
        *params[i] = keep - h;
        const double lo = lur_loss_and_grads(head, z, y, scratch);
        *params[i] = keep;
        const double fd = (hi - lo) / (2.0 * h);
        const double rel = std::abs(fd - analytic[i]) /
                           std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
        CHECK(rel < 1e-4);
      }
    }
  }
}

TEST_CASE("shared classifier property") {
  Rng rng(99);
  LurHead head = random_head(rng, 3, 4, 2);
  const std::vector<double> z{0.2, -0.4, 1.1};
  const auto base = lur_forward(head, z);

  LurHead bumped = head;
  bumped.transforms[1].w(0, 0) += 0.05;
  const auto after = lur_forward(bumped, z);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(after.probs(0, k) == base.probs(0, k));  // untransformed path
    CHECK(after.probs(1, k) == base.probs(1, k));  // transform 0's path
  }
  double moved = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    moved += std::abs(after.probs(2, k) - base.probs(2, k));
  }
  CHECK(moved > 0.0);

  LurHead cls = head;
  cls.classifier.w(0, 0) += 0.05;
  const auto cls_after = lur_forward(cls, z);
  for (std::size_t s = 0; s < 3; ++s) {
    double row_moved = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      row_moved += std::abs(cls_after.probs(s, k) - base.probs(s, k));
    }
    CHECK(row_moved > 0.0);
  }
}

TEST_CASE("training solves separable blobs") {
  const LatentDataset ds = gen_synthetic(blob_spec());

  HeadConfig regular;
  regular.variant = HeadVariant::Regular;
  regular.learning_rate = 0.05;
  regular.epochs = 15;
  regular.batch_size = 32;
  regular.seed = 3;
  const TrainResult reg = train_head(regular, ds);
  const double reg_acc = test_accuracy(reg.model, ds);
  CHECK(reg_acc >= 0.95);

  HeadConfig lur_cfg = regular;
  lur_cfg.variant = HeadVariant::Lur;
  lur_cfg.num_members = 5;
  const TrainResult lur = train_head(lur_cfg, ds);
  const double lur_acc = test_accuracy(lur.model, ds);
  CHECK(lur_acc >= reg_acc - 0.03);
  CHECK(lur_acc <= reg_acc + 0.03);

  // Loss decreases over training.
  CHECK(lur.epoch_losses.back() < lur.epoch_losses.front());
}

TEST_CASE("training is deterministic and n=0 matches the regular head") {
  SynthSpec spec = blob_spec();
  spec.per_class = 40;
  const LatentDataset ds = gen_synthetic(spec);

  HeadConfig config;
  config.variant = HeadVariant::Lur;
  config.num_members = 3;
  config.learning_rate = 0.05;
  config.epochs = 4;
  config.seed = 11;
  const TrainResult a = train_head(config, ds);
  const TrainResult b = train_head(config, ds);
  CHECK(a.model == b.model);
  CHECK(a.epoch_losses == b.epoch_losses);

  HeadConfig reg = config;
  reg.variant = HeadVariant::Regular;
  HeadConfig zero = config;
  zero.variant = HeadVariant::Lur;
  zero.num_members = 0;
  const TrainResult r = train_head(reg, ds);
  const TrainResult z = train_head(zero, ds);
  CHECK(std::get<LurHead>(r.model.impl()) == std::get<LurHead>(z.model.impl()));
  CHECK(r.epoch_losses == z.epoch_losses);  // bit-identical trajectories
}

TEST_CASE("diverged training reports the epoch") {
  SynthSpec spec = blob_spec();
  spec.per_class = 20;
  const LatentDataset ds = gen_synthetic(spec);
  HeadConfig config;
  config.variant = HeadVariant::Lur;
  config.num_members = 1;
  config.learning_rate = 1e12;
  config.epochs = 50;
  config.seed = 5;
  CHECK_THROWS_AS(train_head(config, ds), TrainingDivergedError);
}

TEST_CASE("sub-ensemble members are independently initialized and trained") {
  SynthSpec spec = blob_spec();
  spec.per_class = 60;
  const LatentDataset ds = gen_synthetic(spec);
  HeadConfig config;
  config.variant = HeadVariant::SubEnsemble;
  config.num_members = 4;
  config.learning_rate = 0.05;
  config.epochs = 10;
  config.seed = 21;
  const TrainResult result = train_head(config, ds);
  const auto& ens = std::get<EnsembleHead>(result.model.impl());
  REQUIRE(ens.members.size() == 4);
  CHECK(ens.members[0].w.data != ens.members[1].w.data);

  Rng rng(0);
  const auto pd = result.model.predict(ds.features.row(0), rng);
  CHECK(pd.probs.rows == 4);
  CHECK(!pd.latent_reps.has_value());
  CHECK(test_accuracy(result.model, ds) >= 0.9);
}

TEST_CASE("bbb degenerate variance reduces to the mean head") {
  BbbHead head;
  head.w_mu = Matrix(2, 2);
  head.w_mu(0, 0) = 1.0;
  head.w_mu(1, 1) = 1.0;
  head.w_rho = Matrix(2, 2, -60.0);  // softplus(-60) == 0 in double precision
  head.b_mu.assign(2, 0.0);
  head.b_rho.assign(2, -60.0);

  Rng rng(8);
  const auto pd = bbb_forward(head, std::vector<double>{1.0, 0.0}, 5, rng);
  CHECK(pd.probs.rows == 5);
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(pd.probs(s, 0) == doctest::Approx(0.73106).epsilon(1e-5));
  }
  CHECK(bbb_kl(head, 1.0) > 0.0);  // mu=1 entries carry KL mass even at sigma=0
}

TEST_CASE("bbb monte carlo mean converges with sample count") {
  BbbHead head;
  head.w_mu = Matrix(3, 3);
  head.w_rho = Matrix(3, 3, 0.5);
  head.b_mu.assign(3, 0.0);
  head.b_rho.assign(3, 0.5);
  Rng init(14);
  for (double& v : head.w_mu.data) v = init.normal();

  const std::vector<double> z{0.5, -0.3, 0.8};
  const auto mean_of = [&](std::uint32_t samples, std::uint64_t seed) {
    Rng rng(seed);
    const auto pd = bbb_forward(head, z, samples, rng);
    std::vector<double> mean(3, 0.0);
    for (std::size_t s = 0; s < pd.probs.rows; ++s) {
      for (std::size_t k = 0; k < 3; ++k) mean[k] += pd.probs(s, k);
    }
    for (double& v : mean) v /= static_cast<double>(pd.probs.rows);
    return mean;
  };

  const std::vector<double> reference = mean_of(200000, 1);
  const auto err_of = [&](std::uint32_t samples) {
    double err = 0.0;
    for (std::uint64_t seed = 2; seed <= 6; ++seed) {
      const std::vector<double> m = mean_of(samples, seed);
      double e = 0.0;
      for (std::size_t k = 0; k < 3; ++k) e += std::abs(m[k] - reference[k]);
      err += e;
    }
    return err / 5.0;
  };
  CHECK(err_of(1000) < err_of(10));
}

TEST_CASE("bbb gradients match finite differences") {
  Rng rng(333);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 2 + rng.below(3), c = 2 + rng.below(3);
    BbbHead head;
    head.w_mu = Matrix(d, c);
    head.w_rho = Matrix(d, c);
    head.b_mu.assign(c, 0.0);
    head.b_rho.assign(c, 0.0);
    for (double& v : head.w_mu.data) v = 0.5 * rng.normal();
    for (double& v : head.w_rho.data) v = -1.0 + rng.normal();
    for (double& v : head.b_mu) v = 0.2 * rng.normal();
    for (double& v : head.b_rho) v = -1.0 + rng.normal();

    const std::size_t b = 1 + rng.below(4);
    Matrix z(b, d);
    for (double& v : z.data) v = rng.normal();
    std::vector<std::uint32_t> y(b);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(c));
    Matrix eps_w(d, c);
    for (double& v : eps_w.data) v = rng.normal();
    std::vector<double> eps_b(c);
    for (double& v : eps_b) v = rng.normal();
    const double beta = 0.05, prior = 1.3;

    BbbGrads grads;
    bbb_loss_and_grads(head, z, y, eps_w, eps_b, beta, prior, grads);

    std::vector<double*> params;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < head.w_mu.data.size(); ++i) {
      params.push_back(&head.w_mu.data[i]);
      analytic.push_back(grads.w_mu.data[i]);
    }
    for (std::size_t i = 0; i < head.w_rho.data.size(); ++i) {
      params.push_back(&head.w_rho.data[i]);
      analytic.push_back(grads.w_rho.data[i]);
    }
    for (std::size_t k = 0; k < c; ++k) {
      params.push_back(&head.b_mu[k]);
      analytic.push_back(grads.b_mu[k]);
      params.push_back(&head.b_rho[k]);
      analytic.push_back(grads.b_rho[k]);
    }

    BbbGrads scratch;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = *params[i];
      *params[i] = keep + h;
      const double hi =
          bbb_loss_and_grads(head, z, y, eps_w, eps_b, beta, prior, scratch);
      *params[i] = keep - h;
      const double lo =
          bbb_loss_and_grads(head, z, y, eps_w, eps_b, beta, prior, scratch);
      *params[i] = keep;
      const double fd = (hi - lo) / (2.0 * h);
      const double rel = std::abs(fd - analytic[i]) /
                         std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("bbb training learns the blobs") {
  SynthSpec spec = blob_spec();
  spec.per_class = 60;
  const LatentDataset ds = gen_synthetic(spec);
  HeadConfig config;
  config.variant = HeadVariant::BbbLl;
  config.num_members = 10;
  config.learning_rate = 0.05;
  config.epochs = 20;
  config.seed = 31;
  const TrainResult result = train_head(config, ds);
  CHECK(test_accuracy(result.model, ds) >= 0.9);
}

TEST_CASE("gda density scoring") {
  SynthSpec spec = blob_spec();
  spec.per_class = 60;
  const LatentDataset ds = gen_synthetic(spec);
  const GdaHead head = gda_fit(ds, 1e-3, false);

  // Train scores and their 10th percentile.
  std::vector<double> train_scores;
  for (std::size_t r : ds.indices_of(Split::Train)) {
    train_scores.push_back(gda_score(head, ds.features.row(r)));
  }
  std::sort(train_scores.begin(), train_scores.end());
  const double p10 = train_scores[train_scores.size() / 10];

  // A class mean is deep inside its cluster.
  CHECK(gda_score(head, head.means.row(0)) < p10);

  // Far away from every mean the density vanishes.
  std::vector<double> far(ds.dim(), 0.0);
  for (std::size_t j = 0; j < ds.dim(); ++j) far[j] = head.means(0, j) + 50.0;
  CHECK(gda_score(head, far) > train_scores.back());

  // Posterior classification works on the blobs.
  HeadConfig config;
  config.variant = HeadVariant::Gda;
  config.seed = 1;
  const TrainResult result = train_head(config, ds);
  CHECK(test_accuracy(result.model, ds) >= 0.95);
}

TEST_CASE("gda survives duplicated classes through regularization") {
  // Two classes with identical rows make the pooled scatter singular in the
  // duplicated directions; the ridge keeps the scorer finite.
  LatentDataset ds;
  ds.features = Matrix(8, 3);
  for (std::size_t i = 0; i < 8; ++i) {
    ds.features(i, 0) = static_cast<double>(i % 4);
    ds.features(i, 1) = 2.0 * static_cast<double>(i % 4);  // collinear column
    ds.features(i, 2) = static_cast<double>(i % 2);
    ds.labels.push_back(i < 4 ? 0 : 1);
    ds.split.push_back(Split::Train);
  }
  ds.class_names = {"a", "b"};
  const GdaHead head = gda_fit(ds, 1e-3, false);
  const double score = gda_score(head, std::vector<double>{1.0, 2.0, 0.0});
  CHECK(std::isfinite(score));

  CHECK_THROWS_AS(gda_fit(ds, 0.0, false), NumericError);
}

TEST_CASE("gda per-class covariances handle anisotropic classes") {
  // One tight and one elongated cluster; per-class covariances should
  // classify borderline points by shape, which a shared covariance blurs.
  Rng rng(88);
  LatentDataset ds;
  const std::size_t per = 120;
  ds.features = Matrix(2 * per, 2);
  for (std::size_t i = 0; i < per; ++i) {
    ds.features(i, 0) = 0.2 * rng.normal();
    ds.features(i, 1) = 0.2 * rng.normal();
    ds.labels.push_back(0);
    ds.split.push_back(i < per - 20 ? Split::Train : Split::Test);
  }
  for (std::size_t i = per; i < 2 * per; ++i) {
    ds.features(i, 0) = 4.0 + 0.2 * rng.normal();
    ds.features(i, 1) = 3.0 * rng.normal();
    ds.labels.push_back(1);
    ds.split.push_back(i < 2 * per - 20 ? Split::Train : Split::Test);
  }
  ds.class_names = {"tight", "elongated"};

  const GdaHead per_class = gda_fit(ds, 1e-6, true);
  REQUIRE(per_class.covariances.size() == 2);
  CHECK(per_class.per_class_cov);
  // The fitted spreads reflect the generating ones.
  CHECK(per_class.covariances[0](1, 1) < 0.1);
  CHECK(per_class.covariances[1](1, 1) > 4.0);

  HeadConfig config;
  config.variant = HeadVariant::Gda;
  config.gda_per_class_cov = true;
  config.gda_reg = 1e-6;
  config.seed = 1;
  const TrainResult result = train_head(config, ds);
  CHECK(test_accuracy(result.model, ds) >= 0.95);

  // Round trip preserves the per-class shape.
  const std::string path =
      (std::filesystem::temp_directory_path() / "lur_gda_pc.lurh").string();
  save_head(result.model, path);
  const HeadModel back = load_head(path);
  CHECK(back == result.model);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

TEST_CASE("gda requires two train rows per class") {
  LatentDataset ds;
  ds.features = Matrix(3, 2);
  ds.features(1, 0) = 1.0;
  ds.features(2, 1) = 1.0;
  ds.labels = {0, 0, 1};
  ds.split = {Split::Train, Split::Train, Split::Train};
  ds.class_names = {"a", "b"};
  CHECK_THROWS_AS(gda_fit(ds, 1e-3, false), InvalidInputError);
}

TEST_CASE("every head variant emits valid predictive distributions") {
  SynthSpec spec = blob_spec();
  spec.per_class = 30;
  spec.classes = 3;
  spec.dim = 6;
  const LatentDataset ds = gen_synthetic(spec);

  for (const HeadVariant variant :
       {HeadVariant::Regular, HeadVariant::SubEnsemble, HeadVariant::Lur,
        HeadVariant::Rlur, HeadVariant::Rlle, HeadVariant::BbbLl, HeadVariant::Gda}) {
    HeadConfig config;
    config.variant = variant;
    config.num_members = 4;
    config.learning_rate = 0.02;
    config.epochs = 3;
    config.seed = 17;
    const TrainResult result = train_head(config, ds);
    Rng rng(5);
    const auto pd = result.model.predict(ds.features.row(2), rng);
    CHECK(pd.probs.rows >= 1);
    for (std::size_t s = 0; s < pd.probs.rows; ++s) {
      double sum = 0.0;
      for (std::size_t k = 0; k < pd.probs.cols; ++k) {
        CHECK(pd.probs(s, k) >= 0.0);
        sum += pd.probs(s, k);
      }
      CHECK(std::abs(sum - 1.0) < 1e-10);
    }
    const double entropy =
        result.model.uncertainty(pd, ds.features.row(2), ScoreKind::Entropy);
    CHECK(std::isfinite(entropy));
  }
}

TEST_CASE("head models round trip through serialization") {
  SynthSpec spec = blob_spec();
  spec.per_class = 20;
  spec.classes = 3;
  spec.dim = 5;
  const LatentDataset ds = gen_synthetic(spec);
  const std::string path =
      (std::filesystem::temp_directory_path() / "lur_head_roundtrip.lurh").string();

  for (const HeadVariant variant :
       {HeadVariant::Regular, HeadVariant::SubEnsemble, HeadVariant::Lur,
        HeadVariant::Rlur, HeadVariant::Rlle, HeadVariant::BbbLl, HeadVariant::Gda}) {
    HeadConfig config;
    config.variant = variant;
    config.num_members = 3;
    config.learning_rate = 0.02;
    config.epochs = 2;
    config.seed = 23;
    const TrainResult result = train_head(config, ds);
    save_head(result.model, path);
    const HeadModel back = load_head(path);
    CHECK(back == result.model);
    CHECK(back.config().variant == variant);

    Rng rng_a(9), rng_b(9);
    const auto pa = result.model.predict(ds.features.row(0), rng_a);
    const auto pb = back.predict(ds.features.row(0), rng_b);
    CHECK(pa.probs == pb.probs);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

TEST_CASE("repulsive variants train in both repulsion spaces") {
  SynthSpec spec = blob_spec();
  spec.per_class = 40;
  spec.classes = 3;
  spec.dim = 6;
  const LatentDataset ds = gen_synthetic(spec);

  for (const HeadVariant variant : {HeadVariant::Rlur, HeadVariant::Rlle}) {
    for (const RepulsionSpace space :
         {RepulsionSpace::Weight, RepulsionSpace::Function}) {
      HeadConfig config;
      config.variant = variant;
      config.num_members = 4;
      config.learning_rate = 0.05;
      config.epochs = 5;
      config.seed = 13;
      config.repulsion_space = space;
      const TrainResult a = train_head(config, ds);
      const TrainResult b = train_head(config, ds);
      CHECK(a.model == b.model);  // deterministic
      CHECK(test_accuracy(a.model, ds) >= 0.9);
      CHECK(a.epoch_losses.back() < a.epoch_losses.front());
    }
  }

  // Each estimator drives a working update.
  for (const ScoreEstimator estimator :
       {ScoreEstimator::Kde, ScoreEstimator::Sge, ScoreEstimator::Ssge}) {
    HeadConfig config;
    config.variant = HeadVariant::Rlur;
    config.num_members = 4;
    config.learning_rate = 0.05;
    config.epochs = 3;
    config.seed = 19;
    config.kernel.estimator = estimator;
    const TrainResult result = train_head(config, ds);
    CHECK(test_accuracy(result.model, ds) >= 0.85);
  }
}

TEST_CASE("model blobs reject corruption") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "lur_bad_blob.lurh").string();
  SynthSpec spec = blob_spec();
  spec.per_class = 10;
  spec.classes = 2;
  spec.dim = 3;
  const LatentDataset ds = gen_synthetic(spec);
  HeadConfig config;
  config.variant = HeadVariant::Regular;
  config.epochs = 1;
  config.seed = 1;
  const TrainResult result = train_head(config, ds);
  save_head(result.model, path);

  // Flip the magic.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_head(path), FormatError);
  CHECK_THROWS_AS(load_head(path + ".does_not_exist"), FormatError);
  fs::remove(path);
  fs::remove(path + ".json");
}

TEST_CASE("latent variance score is wired through the model interface") {
  SynthSpec spec = blob_spec();
  spec.per_class = 20;
  const LatentDataset ds = gen_synthetic(spec);
  HeadConfig config;
  config.variant = HeadVariant::Lur;
  config.num_members = 3;
  config.epochs = 2;
  config.seed = 2;
  const TrainResult result = train_head(config, ds);
  Rng rng(0);
  const auto pd = result.model.predict(ds.features.row(0), rng);
  const double lv =
      result.model.uncertainty(pd, ds.features.row(0), ScoreKind::LatentVariance);
  CHECK(std::isfinite(lv));
  CHECK(lv >= 0.0);

  HeadConfig reg = config;
  reg.variant = HeadVariant::Regular;
  const TrainResult plain = train_head(reg, ds);
  const auto pd_plain = plain.model.predict(ds.features.row(0), rng);
  CHECK_THROWS_AS(
      plain.model.uncertainty(pd_plain, ds.features.row(0), ScoreKind::LatentVariance),
      InvalidInputError);
  CHECK_THROWS_AS(
      plain.model.uncertainty(pd_plain, ds.features.row(0), ScoreKind::Density),
      InvalidInputError);
}
