#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lur/dataset.hpp"
#include "lur/heads.hpp"
#include "lur/metrics.hpp"

namespace lur {

struct GridSpec {
  std::vector<std::uint32_t> members{5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  std::vector<std::uint32_t> batch_sizes{16, 32, 64};
  std::vector<double> learning_rates{1e-2, 1e-3, 1e-4};
  std::vector<std::uint32_t> epochs{5, 10, 15, 20, 25};
};

/// A full experiment: dataset x variants x hyperparameter grid x seeds x
/// holdout modes. Empty ood_modes means a plain in-distribution run.
struct ExperimentPlan {
  std::string dataset_path;  // one of dataset_path / synthetic must be set
  std::optional<SynthSpec> synthetic;
  std::vector<HeadVariant> variants{HeadVariant::Lur};
  GridSpec grid;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<OodMode> ood_modes;
  std::vector<ScoreKind> uncertainty_scores{ScoreKind::Entropy,
                                            ScoreKind::LatentVariance};
  HeadConfig base;  // non-grid defaults (init, BBB/GDA/kernel settings)

  void validate() const;
};

struct ConfigKey {
  std::uint32_t members = 0;
  std::uint32_t batch_size = 0;
  double learning_rate = 0.0;
  std::uint32_t epochs = 0;

  auto operator<=>(const ConfigKey&) const = default;
};

struct OodMetricRow {
  ScoreKind score = ScoreKind::Entropy;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  double fpr95 = 0.0;
};

/// One (variant, config, seed, mode) cell with full provenance.
struct CellResult {
  HeadVariant variant = HeadVariant::Regular;
  ConfigKey key;
  std::uint64_t seed = 0;
  std::optional<OodMode> mode;

  bool ok = false;
  std::string error;  // diverged-training marker

  double accuracy = 0.0;
  double f1 = 0.0;
  double ace = 0.0;
  std::optional<double> raulc;
  std::vector<OodMetricRow> ood;
};

struct AggregateRow {
  HeadVariant variant = HeadVariant::Regular;
  std::optional<OodMode> mode;
  std::string selection;  // per_seed_best | best_avg_config
  std::string criterion;
  std::vector<std::pair<std::uint64_t, ConfigKey>> chosen;  // per contributing seed
  std::map<std::string, MeanSem> metrics;
};

struct EvalReport {
  nlohmann::json plan_json;
  std::vector<CellResult> rows;
  std::vector<AggregateRow> aggregates;
  std::string generated_at;  // the only non-reproducible field
};

ExperimentPlan plan_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const ExperimentPlan& plan);

/// Runs every cell (optionally across `jobs` threads; output is identical
/// regardless) and aggregates both selection rules per (variant, mode).
/// Diverged trainings become failed rows, not crashes.
EvalReport run_plan(const ExperimentPlan& plan, unsigned jobs = 1);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Criterion strings: accuracy | f1 | ace | raulc, roc_auc | pr_auc | fpr95
/// (primary score), or "<score>.<metric>". ace and fpr95 select minima.
std::vector<AggregateRow> select_best(const EvalReport& report,
                                      const std::string& selection,
                                      const std::string& criterion);

/// Value of a criterion on one row, if present.
std::optional<double> criterion_value(const CellResult& row,
                                      const std::string& criterion);

std::string render_markdown(const EvalReport& report);

std::string to_string(OodMode m);
OodMode ood_mode_from_string(const std::string& s);

}  // namespace lur
