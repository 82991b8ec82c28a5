#include <doctest.h>

#include <cmath>
#include <vector>

#include "lur/errors.hpp"
#include "lur/metrics.hpp"
#include "lur/rng.hpp"
#include "oracles.hpp"

using namespace lur;

namespace {

Matrix row_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

ScoredPrediction pred(double confidence, bool correct, double uncertainty) {
  // Binary instance with the requested top-label confidence.
  ScoredPrediction p;
  p.mean_probs = {confidence, 1.0 - confidence};
  p.predicted = 0;
  p.label = correct ? 0 : 1;
  p.uncertainty = uncertainty;
  p.correct = correct;
  return p;
}

}  // namespace

TEST_CASE("predictive entropy reference points") {
  CHECK(predictive_entropy(row_matrix({{0.2, 0.2, 0.2, 0.2, 0.2}})) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(predictive_entropy(row_matrix({{1.0, 0.0}})) == doctest::Approx(0.0));
  CHECK(predictive_entropy(row_matrix({{1.0, 0.0}, {0.0, 1.0}})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("predictive entropy stays in range and peaks only at uniform") {
  Rng rng(21);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 2 + rng.below(6);
    const std::size_t s = 1 + rng.below(4);
    Matrix probs(s, c);
    for (std::size_t r = 0; r < s; ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        probs(r, k) = -std::log(1.0 - rng.uniform());
        sum += probs(r, k);
      }
      for (std::size_t k = 0; k < c; ++k) probs(r, k) /= sum;
    }
    const double h = predictive_entropy(probs);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(c)));
  }
  // Maximum value is attained only by the uniform mean distribution.
  CHECK(std::log(3.0) - predictive_entropy(row_matrix({{0.4, 0.3, 0.3}})) > 1e-3);
  CHECK(std::abs(predictive_entropy(row_matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}})) -
                 std::log(3.0)) < 1e-12);
}

TEST_CASE("latent variance score") {
  CHECK(latent_variance_score(row_matrix({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}})) ==
        doctest::Approx(0.0));
  // Rows {0,0} and {2,0}: per-dimension sample variances (denominator n = 1)
  // are {2, 0}, so the mean over dimensions is 1.
  const Matrix reps = row_matrix({{0.0, 0.0}, {2.0, 0.0}});
  CHECK(latent_variance_score(reps) == doctest::Approx(1.0));

  Matrix scaled = reps;
  for (double& v : scaled.data) v *= 2.0;
  CHECK(latent_variance_score(scaled) ==
        doctest::Approx(4.0 * latent_variance_score(reps)));

  CHECK_THROWS_AS(latent_variance_score(row_matrix({{1.0, 2.0}})),
                  InvalidInputError);
}

TEST_CASE("accuracy and macro f1") {
  std::vector<ScoredPrediction> all_correct{pred(0.9, true, 0.1), pred(0.8, true, 0.2)};
  const AccF1 perfect = accuracy_and_macro_f1(all_correct);
  CHECK(perfect.accuracy == doctest::Approx(1.0));
  CHECK(perfect.macro_f1 == doctest::Approx(1.0));

  // Binary, everything predicted class 0, true labels half and half:
  // class 0 F1 = 2/3, class 1 F1 = 0 (no predictions) -> macro 1/3.
  std::vector<ScoredPrediction> half{pred(0.9, true, 0.0), pred(0.9, false, 0.0),
                                     pred(0.9, true, 0.0), pred(0.9, false, 0.0)};
  const AccF1 skew = accuracy_and_macro_f1(half);
  CHECK(skew.accuracy == doctest::Approx(0.5));
  CHECK(skew.macro_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  std::swap(half[0], half[3]);
  const AccF1 permuted = accuracy_and_macro_f1(half);
  CHECK(permuted.accuracy == skew.accuracy);
  CHECK(permuted.macro_f1 == skew.macro_f1);
}

TEST_CASE("adaptive calibration error") {
  std::vector<ScoredPrediction> calibrated;
  for (int i = 0; i < 10; ++i) calibrated.push_back(pred(1.0, true, 0.0));
  CHECK(ace(calibrated) == doctest::Approx(0.0));

  std::vector<ScoredPrediction> wrong;
  for (int i = 0; i < 10; ++i) wrong.push_back(pred(0.9, false, 0.0));
  CHECK(ace(wrong) == doctest::Approx(0.9).epsilon(1e-12));

  // Constructed perfectly calibrated set: equal-mass bins where bin accuracy
  // equals bin confidence by construction.
  std::vector<ScoredPrediction> exact;
  for (int i = 0; i < 5; ++i) {
    exact.push_back(pred(0.5, true, 0.0));
    exact.push_back(pred(0.5, false, 0.0));
  }
  for (int i = 0; i < 10; ++i) exact.push_back(pred(1.0, true, 0.0));
  CHECK(ace(exact) < 1e-12);
  CHECK(ace(exact) >= 0.0);

  // Fewer instances than bins: bins shrink to the instance count.
  std::vector<ScoredPrediction> three{pred(1.0, true, 0.0), pred(0.5, false, 0.0),
                                      pred(0.5, true, 0.0)};
  CHECK(ace(three, 10) == doctest::Approx(ace(three, 3)));
  CHECK(ace(three) <= 1.0);
}

TEST_CASE("raulc reference cases") {
  // Oracle ordering: every correct instance is more certain than every
  // incorrect one.
  std::vector<ScoredPrediction> oracle_order{
      pred(0.9, true, 0.1), pred(0.9, true, 0.2), pred(0.9, false, 0.9),
      pred(0.9, false, 1.0)};
  CHECK(*raulc(oracle_order) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<ScoredPrediction> constant{
      pred(0.9, true, 0.5), pred(0.9, false, 0.5), pred(0.9, true, 0.5)};
  CHECK(std::abs(*raulc(constant)) < 1e-12);

  // Correctness [1,1,0,1] at increasing uncertainty, against the enumeration
  // oracle and the hand-derived value 5/9.
  std::vector<ScoredPrediction> mixed{pred(0.9, true, 0.1), pred(0.9, true, 0.2),
                                      pred(0.9, false, 0.3), pred(0.9, true, 0.4)};
  const auto got = raulc(mixed);
  const auto want = oracle::raulc({0.1, 0.2, 0.3, 0.4}, {1, 1, 0, 1});
  CHECK(*got == doctest::Approx(*want).epsilon(1e-12));
  CHECK(*got == doctest::Approx(5.0 / 9.0).epsilon(1e-12));

  std::vector<ScoredPrediction> all_correct{pred(0.9, true, 0.1), pred(0.9, true, 0.2)};
  CHECK(!raulc(all_correct).has_value());
  std::vector<ScoredPrediction> all_wrong{pred(0.9, false, 0.1), pred(0.9, false, 0.2)};
  CHECK(!raulc(all_wrong).has_value());
}

TEST_CASE("raulc matches the enumeration oracle under ties") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 20 + rng.below(30);
    std::vector<double> unc(n);
    std::vector<int> correct(n);
    std::vector<ScoredPrediction> preds;
    bool any_correct = false, any_wrong = false;
    for (std::size_t i = 0; i < n; ++i) {
      unc[i] = static_cast<double>(rng.below(8)) / 8.0;  // deliberate ties
      correct[i] = rng.uniform() < 0.6 ? 1 : 0;
      any_correct |= correct[i] == 1;
      any_wrong |= correct[i] == 0;
      preds.push_back(pred(0.9, correct[i] == 1, unc[i]));
    }
    if (!any_correct || !any_wrong) continue;
    const auto got = raulc(preds);
    const auto want = oracle::raulc(unc, correct);
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(*want).epsilon(1e-11));
    CHECK(*got <= 1.0 + 1e-12);
  }
}

TEST_CASE("roc auc reference cases") {
  CHECK(roc_auc({{0.0, 0.1}, {0.9, 1.0}}) == doctest::Approx(1.0));
  CHECK(roc_auc({{0.5, 0.5}, {0.5, 0.5}}) == doctest::Approx(0.5));
  CHECK(roc_auc({{0.4, 0.2}, {0.9, 0.3}}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(roc_auc({{}, {1.0}}), InvalidInputError);
}

TEST_CASE("pr auc reference cases") {
  CHECK(pr_auc({{0.0, 0.1}, {0.9, 1.0}}) == doctest::Approx(1.0));
  CHECK(pr_auc({{0.4, 0.2}, {0.9, 0.3}}) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // Scores independent of the label: average precision approaches prevalence.
  Rng rng(17);
  OODScoreSet random_scores;
  for (int i = 0; i < 6000; ++i) random_scores.in_dist.push_back(rng.uniform());
  for (int i = 0; i < 2000; ++i) random_scores.ood.push_back(rng.uniform());
  CHECK(pr_auc(random_scores) == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("fpr at 95 tpr reference cases") {
  CHECK(fpr_at_95_tpr({{0.0, 0.1}, {0.9, 1.0}}) == doctest::Approx(0.0));
  CHECK(fpr_at_95_tpr({{0.5, 0.5, 0.5}, {0.5, 0.5}}) == doctest::Approx(1.0));

  OODScoreSet shifted;
  for (int i = 1; i <= 20; ++i) {
    shifted.ood.push_back(static_cast<double>(i) / 20.0);
    shifted.in_dist.push_back(static_cast<double>(i) / 20.0 - 0.025);
  }
  CHECK(fpr_at_95_tpr(shifted) == doctest::Approx(oracle::fpr_at_95_tpr(shifted)));
}

TEST_CASE("ranking metrics agree exactly with brute-force oracles") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    OODScoreSet s;
    const std::size_t n_i = 40 + rng.below(160), n_o = 40 + rng.below(160);
    // Coarse grid scores force tie handling in every metric.
    for (std::size_t i = 0; i < n_i; ++i) {
      s.in_dist.push_back(static_cast<double>(rng.below(25)) / 25.0);
    }
    for (std::size_t i = 0; i < n_o; ++i) {
      s.ood.push_back(static_cast<double>(rng.below(25)) / 25.0 + 0.2);
    }
    CHECK(std::abs(roc_auc(s) - oracle::roc_auc(s)) < 1e-12);
    CHECK(std::abs(pr_auc(s) - oracle::pr_auc(s)) < 1e-12);
    CHECK(std::abs(fpr_at_95_tpr(s) - oracle::fpr_at_95_tpr(s)) < 1e-12);
  }
}

TEST_CASE("roc auc is invariant under strictly increasing transforms") {
  Rng rng(29);
  OODScoreSet s;
  for (int i = 0; i < 200; ++i) s.in_dist.push_back(rng.normal());
  for (int i = 0; i < 150; ++i) s.ood.push_back(rng.normal() + 0.5);
  OODScoreSet t = s;
  for (double& v : t.in_dist) v = std::exp(0.7 * v) + 3.0;
  for (double& v : t.ood) v = std::exp(0.7 * v) + 3.0;
  CHECK(roc_auc(t) == doctest::Approx(roc_auc(s)).epsilon(1e-12));
}

TEST_CASE("fpr95 is monotone as ood scores shift upward") {
  Rng rng(37);
  OODScoreSet s;
  for (int i = 0; i < 300; ++i) s.in_dist.push_back(rng.normal());
  for (int i = 0; i < 300; ++i) s.ood.push_back(rng.normal());
  double prev = fpr_at_95_tpr(s);
  for (int shift = 1; shift <= 5; ++shift) {
    OODScoreSet shifted = s;
    for (double& v : shifted.ood) v += 0.4 * shift;
    const double now = fpr_at_95_tpr(shifted);
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("two standard errors of the mean") {
  const std::vector<double> constant{1.0, 1.0, 1.0};
  const MeanSem a = aggregate_sem2(constant);
  CHECK(a.mean == doctest::Approx(1.0));
  CHECK(*a.two_sem == doctest::Approx(0.0));

  const std::vector<double> pair{0.0, 2.0};
  const MeanSem b = aggregate_sem2(pair);
  CHECK(b.mean == doctest::Approx(1.0));
  CHECK(*b.two_sem == doctest::Approx(2.0).epsilon(1e-12));

  const std::vector<double> five{3.0, 5.0, 7.0, 9.0, 11.0};
  const MeanSem c = aggregate_sem2(five);
  CHECK(c.mean == doctest::Approx(7.0));
  CHECK(*c.two_sem == doctest::Approx(2.0 * std::sqrt(10.0) / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(*c.two_sem == doctest::Approx(2.8284271).epsilon(1e-6));

  const std::vector<double> single{4.0};
  CHECK(!aggregate_sem2(single).two_sem.has_value());
}
