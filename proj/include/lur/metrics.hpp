#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lur/matrix.hpp"

namespace lur {

/// One evaluated instance: the member-averaged class distribution plus the
/// uncertainty score used for ranking-based metrics.
struct ScoredPrediction {
  std::vector<double> mean_probs;
  std::uint32_t predicted = 0;  // argmax of mean_probs
  std::uint32_t label = 0;
  double uncertainty = 0.0;
  bool correct = false;
};

ScoredPrediction make_scored(const Matrix& probs, std::uint32_t label,
                             double uncertainty);

/// Shannon entropy of the column-mean distribution of an S x C member matrix,
/// with 0*ln 0 := 0. Clamped to the mathematical range [0, ln C].
double predictive_entropy(const Matrix& probs);

/// Mean over dimensions of the per-dimension sample variance (denominator n)
/// across the n+1 rows of `latent_reps`. Requires n >= 1.
double latent_variance_score(const Matrix& latent_reps);

struct AccF1 {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Accuracy and unweighted per-class mean F1 (a class with no predictions and
/// no instances contributes 0).
AccF1 accuracy_and_macro_f1(std::span<const ScoredPrediction> preds);

/// Adaptive calibration error: equal-count confidence bins (remainder spread
/// over the leading bins), mean |bin accuracy - bin mean confidence|.
/// Confidence is the max of the mean probabilities. Fewer instances than bins
/// reduces the bin count to the instance count.
double ace(std::span<const ScoredPrediction> preds, std::size_t bins = 10);

/// Relative area under the lift curve. Instances are ranked by ascending
/// uncertainty; ties contribute the average over all orderings of the tied
/// block (midrank assignment). Normalized so an oracle ordering scores 1.
/// All-correct or all-incorrect inputs are undefined -> nullopt.
std::optional<double> raulc(std::span<const ScoredPrediction> preds);

/// Scores with the convention: OOD is the positive class, higher = more OOD.
struct OODScoreSet {
  std::vector<double> in_dist;
  std::vector<double> ood;
};

/// Exact ROC-AUC via midranks: P(ood > id) + 0.5 P(tie).
double roc_auc(const OODScoreSet& scores);

/// Average precision over descending unique score thresholds.
double pr_auc(const OODScoreSet& scores);

/// False positive rate at the largest threshold whose TPR is still >= 0.95,
/// with threshold-inclusive (>=) comparisons.
double fpr_at_95_tpr(const OODScoreSet& scores);

struct MeanSem {
  double mean = 0.0;
  std::optional<double> two_sem;  // 2 s / sqrt(n); missing when n < 2
};

MeanSem aggregate_sem2(std::span<const double> values);

}  // namespace lur
