#include "lur/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lur/errors.hpp"

namespace lur {

ScoredPrediction make_scored(const Matrix& probs, std::uint32_t label,
                             double uncertainty) {
  if (probs.rows == 0 || probs.cols == 0) {
    throw InvalidInputError("make_scored: empty probability matrix");
  }
  if (!std::isfinite(uncertainty)) {
    throw InvalidInputError("make_scored: non-finite uncertainty");
  }
  ScoredPrediction p;
  p.mean_probs.assign(probs.cols, 0.0);
  for (std::size_t s = 0; s < probs.rows; ++s) {
    for (std::size_t c = 0; c < probs.cols; ++c) p.mean_probs[c] += probs(s, c);
  }
  for (double& v : p.mean_probs) v /= static_cast<double>(probs.rows);
  p.predicted = static_cast<std::uint32_t>(
      std::max_element(p.mean_probs.begin(), p.mean_probs.end()) -
      p.mean_probs.begin());
  p.label = label;
  p.uncertainty = uncertainty;
  p.correct = p.predicted == label;
  return p;
}

double predictive_entropy(const Matrix& probs) {
  if (probs.rows == 0 || probs.cols == 0) {
    throw InvalidInputError("predictive_entropy: empty input");
  }
  if (!probs.all_finite()) {
    throw InvalidInputError("predictive_entropy: non-finite input");
  }
  std::vector<double> mean(probs.cols, 0.0);
  for (std::size_t s = 0; s < probs.rows; ++s) {
    for (std::size_t c = 0; c < probs.cols; ++c) mean[c] += probs(s, c);
  }
  double total = 0.0;
  for (double& v : mean) total += v;
  double h = 0.0;
  for (double v : mean) {
    const double p = v / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.cols)));
}

double latent_variance_score(const Matrix& latent_reps) {
  if (latent_reps.rows < 2) {
    throw InvalidInputError(
        "latent_variance_score: needs at least 2 representations (n >= 1)");
  }
  const std::size_t s = latent_reps.rows, d = latent_reps.cols;
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < s; ++i) mean += latent_reps(i, j);
    mean /= static_cast<double>(s);
    double ss = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double dlt = latent_reps(i, j) - mean;
      ss += dlt * dlt;
    }
    acc += ss / static_cast<double>(s - 1);
  }
  return acc / static_cast<double>(d);
}

AccF1 accuracy_and_macro_f1(std::span<const ScoredPrediction> preds) {
  if (preds.empty()) throw InvalidInputError("accuracy_and_macro_f1: empty input");
  std::size_t c = 0;
  for (const auto& p : preds) {
    c = std::max<std::size_t>(c, std::max(p.label, p.predicted) + 1);
  }
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  std::size_t correct = 0;
  for (const auto& p : preds) {
    if (p.predicted == p.label) {
      ++tp[p.label];
      ++correct;
    } else {
      ++fp[p.predicted];
      ++fn[p.label];
    }
  }
  AccF1 out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  double f1sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
    f1sum += denom > 0 ? 2.0 * static_cast<double>(tp[k]) / denom : 0.0;
  }
  out.macro_f1 = f1sum / static_cast<double>(c);
  return out;
}

double ace(std::span<const ScoredPrediction> preds, std::size_t bins) {
  if (preds.empty()) throw InvalidInputError("ace: empty input");
  if (bins == 0) throw InvalidInputError("ace: bins must be >= 1");
  const std::size_t n = preds.size();
  bins = std::min(bins, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = *std::max_element(preds[a].mean_probs.begin(),
                                        preds[a].mean_probs.end());
    const double cb = *std::max_element(preds[b].mean_probs.begin(),
                                        preds[b].mean_probs.end());
    return ca < cb;
  });

  double err = 0.0;
  std::size_t start = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t count = n / bins + (b < n % bins ? 1 : 0);
    double conf = 0.0, acc = 0.0;
    for (std::size_t k = start; k < start + count; ++k) {
      const auto& p = preds[order[k]];
      conf += *std::max_element(p.mean_probs.begin(), p.mean_probs.end());
      acc += p.correct ? 1.0 : 0.0;
    }
    err += std::abs(acc - conf) / static_cast<double>(count);
    start += count;
  }
  return err / static_cast<double>(bins);
}

std::optional<double> raulc(std::span<const ScoredPrediction> preds) {
  const std::size_t n = preds.size();
  if (n == 0) throw InvalidInputError("raulc: empty input");
  std::size_t n_correct = 0;
  for (const auto& p : preds) n_correct += p.correct ? 1 : 0;
  if (n_correct == 0 || n_correct == n) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].uncertainty < preds[b].uncertainty;
  });

  const double overall = static_cast<double>(n_correct) / static_cast<double>(n);

  // Expected cumulative correct count at each rank, averaging over every
  // ordering of each tied-uncertainty block.
  std::vector<double> cum(n);
  std::size_t i = 0;
  double before = 0.0;
  while (i < n) {
    std::size_t j = i;
    double block_correct = 0.0;
    while (j < n &&
           preds[order[j]].uncertainty == preds[order[i]].uncertainty) {
      block_correct += preds[order[j]].correct ? 1.0 : 0.0;
      ++j;
    }
    const double t = static_cast<double>(j - i);
    for (std::size_t m = 1; m <= j - i; ++m) {
      cum[i + m - 1] = before + static_cast<double>(m) * block_correct / t;
    }
    before += block_correct;
    i = j;
  }

  double aulc = 0.0, aulc_oracle = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double kd = static_cast<double>(k);
    aulc += cum[k - 1] / kd / overall - 1.0;
    const double oracle_cum = std::min(kd, static_cast<double>(n_correct));
    aulc_oracle += oracle_cum / kd / overall - 1.0;
  }
  aulc /= static_cast<double>(n);
  aulc_oracle /= static_cast<double>(n);
  return aulc / aulc_oracle;
}

namespace {

void check_scores(const OODScoreSet& s, const std::string& who) {
  if (s.in_dist.empty() || s.ood.empty()) {
    throw InvalidInputError(who + ": both score sets must be non-empty");
  }
  if (!all_finite(s.in_dist) || !all_finite(s.ood)) {
    throw InvalidInputError(who + ": non-finite score");
  }
}

}  // namespace

double roc_auc(const OODScoreSet& scores) {
  check_scores(scores, "roc_auc");
  const std::size_t n_i = scores.in_dist.size(), n_o = scores.ood.size();
  struct Entry {
    double score;
    bool is_ood;
  };
  std::vector<Entry> all;
  all.reserve(n_i + n_o);
  for (double s : scores.in_dist) all.push_back({s, false});
  for (double s : scores.ood) all.push_back({s, true});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Midranks over tied values make the pairwise tie contribution exactly 1/2.
  double rank_sum_ood = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].is_ood) rank_sum_ood += midrank;
    }
    i = j;
  }
  const double n_od = static_cast<double>(n_o);
  return (rank_sum_ood - n_od * (n_od + 1.0) / 2.0) /
         (n_od * static_cast<double>(n_i));
}

double pr_auc(const OODScoreSet& scores) {
  check_scores(scores, "pr_auc");
  struct Entry {
    double score;
    bool is_ood;
  };
  std::vector<Entry> all;
  all.reserve(scores.in_dist.size() + scores.ood.size());
  for (double s : scores.in_dist) all.push_back({s, false});
  for (double s : scores.ood) all.push_back({s, true});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });

  const double n_ood = static_cast<double>(scores.ood.size());
  double ap = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      if (all[j].is_ood) tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    const double recall = tp / n_ood;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double fpr_at_95_tpr(const OODScoreSet& scores) {
  check_scores(scores, "fpr_at_95_tpr");
  const std::size_t n_o = scores.ood.size();
  std::vector<double> ood_sorted(scores.ood);
  std::sort(ood_sorted.begin(), ood_sorted.end(), std::greater<double>());

  // Largest threshold t with #{ood >= t} / n_o >= 0.95; candidates are the
  // OOD scores themselves. Integer comparison keeps the 95% cut exact.
  double threshold = ood_sorted.back();
  for (std::size_t k = 0; k < n_o; ++k) {
    std::size_t count = k + 1;
    while (k + 1 < n_o && ood_sorted[k + 1] == ood_sorted[k]) {
      ++k;
      ++count;
    }
    if (count * 100 >= 95 * n_o) {
      threshold = ood_sorted[k];
      break;
    }
  }
  std::size_t false_pos = 0;
  for (double s : scores.in_dist) {
    if (s >= threshold) ++false_pos;
  }
  return static_cast<double>(false_pos) / static_cast<double>(scores.in_dist.size());
}

MeanSem aggregate_sem2(std::span<const double> values) {
  if (values.empty()) throw InvalidInputError("aggregate_sem2: empty input");
  MeanSem out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) {
      const double d = v - out.mean;
      ss += d * d;
    }
    const double n = static_cast<double>(values.size());
    const double s = std::sqrt(ss / (n - 1.0));
    out.two_sem = 2.0 * s / std::sqrt(n);
  }
  return out;
}

}  // namespace lur
