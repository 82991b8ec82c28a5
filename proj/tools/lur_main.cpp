#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lur/bench.hpp"
#include "lur/dataset.hpp"
#include "lur/errors.hpp"
#include "lur/heads.hpp"
#include "lur/metrics.hpp"
#include "lur/serialize.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

lur::DataFormat parse_format(const std::string& flag, const std::string& path) {
  if (flag == "csv") return lur::DataFormat::Csv;
  if (flag == "latf") return lur::DataFormat::Latf;
  if (flag == "auto") return lur::format_from_path(path);
  throw lur::InvalidInputError("format must be csv, latf or auto");
}

void write_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw lur::FormatError(out_path + ": cannot open for writing");
  out << content;
}

struct TrainFlags {
  std::string variant = "lur";
  std::uint32_t members = 10;
  double lr = 1e-2;
  std::uint32_t batch = 32;
  std::uint32_t epochs = 20;
  std::uint64_t seed = 0;
  double init_stdev = 0.02;
  double bbb_prior_stdev = 1.0;
  double bbb_kl_weight = 1e-3;
  double gda_reg = 1e-3;
  bool gda_per_class_cov = false;
  std::string estimator = "kde";
  std::string bandwidth_mode = "median_heuristic";
  double fixed_bandwidth = 1.0;
  double sge_ridge = 0.5;
  double ssge_threshold = 1e-3;
  double prior_stdev = 1.0;
  std::string repulsion_space = "weight";

  void add_to(CLI::App* cmd, bool with_members = true) {
    cmd->add_option("--variant", variant,
                    "regular|sub_ensemble|lur|rlur|rlle|bbb_ll|gda")
        ->capture_default_str();
    if (with_members) {
      cmd->add_option("--members", members,
                      "transformation layers / ensemble heads / MC samples")
          ->capture_default_str();
    }
    cmd->add_option("--lr", lr, "SGD learning rate")->capture_default_str();
    cmd->add_option("--batch", batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--epochs", epochs)->capture_default_str();
    cmd->add_option("--seed", seed, "random seed (required; no wall-clock seeding)")
        ->required();
    cmd->add_option("--init-stdev", init_stdev)->capture_default_str();
    cmd->add_option("--bbb-prior-stdev", bbb_prior_stdev)->capture_default_str();
    cmd->add_option("--bbb-kl-weight", bbb_kl_weight)->capture_default_str();
    cmd->add_option("--gda-reg", gda_reg)->capture_default_str();
    cmd->add_flag("--gda-per-class-cov", gda_per_class_cov,
                  "per-class covariances instead of a shared one");
    cmd->add_option("--estimator", estimator, "repulsion estimator: kde|sge|ssge")
        ->capture_default_str();
    cmd->add_option("--bandwidth-mode", bandwidth_mode, "median_heuristic|fixed")
        ->capture_default_str();
    cmd->add_option("--fixed-bandwidth", fixed_bandwidth)->capture_default_str();
    cmd->add_option("--sge-ridge", sge_ridge)->capture_default_str();
    cmd->add_option("--ssge-threshold", ssge_threshold)->capture_default_str();
    cmd->add_option("--prior-stdev", prior_stdev,
                    "isotropic Gaussian prior stdev for repulsive training")
        ->capture_default_str();
    cmd->add_option("--repulsion-space", repulsion_space, "weight|function")
        ->capture_default_str();
  }

  lur::HeadConfig to_config() const {
    lur::HeadConfig c;
    c.variant = lur::head_variant_from_string(variant);
    c.num_members = members;
    c.learning_rate = lr;
    c.batch_size = batch;
    c.epochs = epochs;
    c.seed = seed;
    c.init_stdev = init_stdev;
    c.bbb_prior_stdev = bbb_prior_stdev;
    c.bbb_kl_weight = bbb_kl_weight;
    c.gda_reg = gda_reg;
    c.gda_per_class_cov = gda_per_class_cov;
    c.kernel.estimator = lur::score_estimator_from_string(estimator);
    c.kernel.bandwidth_mode = lur::bandwidth_mode_from_string(bandwidth_mode);
    c.kernel.fixed_bandwidth = fixed_bandwidth;
    c.kernel.sge_ridge = sge_ridge;
    c.kernel.ssge_eigen_threshold = ssge_threshold;
    c.prior.stdev = prior_stdev;
    c.repulsion_space = lur::repulsion_space_from_string(repulsion_space);
    return c;
  }
};

std::vector<lur::ScoreKind> parse_scores(const std::vector<std::string>& names) {
  std::vector<lur::ScoreKind> kinds;
  for (const auto& n : names) kinds.push_back(lur::score_kind_from_string(n));
  return kinds;
}

json eval_model_on(const lur::HeadModel& model, const lur::LatentDataset& ds,
                   const std::vector<lur::ScoreKind>& requested) {
  const std::vector<std::size_t> test_rows = ds.indices_of(lur::Split::Test);
  if (test_rows.empty()) throw lur::InvalidInputError("dataset has no test rows");

  std::vector<lur::ScoreKind> kinds;
  for (lur::ScoreKind k : model.supported_scores()) {
    if (requested.empty() ||
        std::find(requested.begin(), requested.end(), k) != requested.end()) {
      kinds.push_back(k);
    }
  }
  if (kinds.empty()) kinds.push_back(model.supported_scores().front());

  std::vector<lur::ScoredPrediction> preds;
  json uncertainties = json::object();
  for (lur::ScoreKind k : kinds) uncertainties[lur::to_string(k)] = json::array();
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    const auto z = ds.features.row(test_rows[i]);
    lur::Rng rng(lur::Rng::derive(lur::Rng::derive(model.config().seed, 0xEBA1), i));
    const lur::PredictiveDistribution pd = model.predict(z, rng);
    double primary = 0.0;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const double u = model.uncertainty(pd, z, kinds[k]);
      uncertainties[lur::to_string(kinds[k])].push_back(u);
      if (k == 0) primary = u;
    }
    preds.push_back(lur::make_scored(pd.probs, ds.labels[test_rows[i]], primary));
  }
  const lur::AccF1 af = lur::accuracy_and_macro_f1(preds);
  const auto r = lur::raulc(preds);
  return json{
      {"accuracy", af.accuracy},
      {"f1", af.macro_f1},
      {"ace", lur::ace(preds)},
      {"raulc", r ? json(*r) : json()},
      {"num_test", test_rows.size()},
      {"uncertainties", uncertainties},
  };
}

int run(int argc, char** argv) {
  CLI::App app{"Latent uncertainty representation heads and their evaluation "
               "harness over latent feature datasets"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic latent dataset");
  lur::SynthSpec spec;
  std::string gen_out, gen_format = "auto";
  gen->add_option("--classes", spec.classes)->capture_default_str();
  gen->add_option("--dim", spec.dim)->capture_default_str();
  gen->add_option("--per-class", spec.per_class)->capture_default_str();
  gen->add_option("--mean-scale", spec.cluster_mean_scale)->capture_default_str();
  gen->add_option("--stdev", spec.cluster_stdev)->capture_default_str();
  gen->add_option("--seed", spec.seed, "random seed (required)")->required();
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--format", gen_format, "csv|latf|auto")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and convert a latent dataset");
  std::string in_path, in_fmt = "auto", out_path, out_fmt = "auto";
  std::uint32_t declared_classes = 0;
  ingest->add_option("--in", in_path)->required();
  ingest->add_option("--in-format", in_fmt, "csv|latf|auto")->capture_default_str();
  ingest->add_option("--out", out_path)->required();
  ingest->add_option("--out-format", out_fmt, "csv|latf|auto")->capture_default_str();
  ingest->add_option("--classes", declared_classes,
                     "declared class count (0 = infer)")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a head on a latent dataset");
  std::string train_data, train_out;
  TrainFlags train_flags;
  train->add_option("--data", train_data)->required();
  train->add_option("--out", train_out, "model blob path (a .json sidecar is added)")
      ->required();
  train_flags.add_to(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a trained head on a dataset's test rows");
  std::string eval_model, eval_data, eval_out;
  std::vector<std::string> eval_scores;
  eval->add_option("--model", eval_model)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--scores", eval_scores, "entropy|latent_variance|density")
      ->delimiter(',');
  eval->add_option("--out", eval_out, "output JSON path (default stdout)");

  // ood-eval
  auto* ood = app.add_subcommand(
      "ood-eval", "Hold out a class, train, and score OOD detection");
  std::string ood_data, ood_mode, ood_out;
  std::vector<std::string> ood_scores{"entropy", "latent_variance"};
  TrainFlags ood_flags;
  ood->add_option("--data", ood_data)->required();
  ood->add_option("--mode", ood_mode, "min|max")->required();
  ood->add_option("--scores", ood_scores)->delimiter(',')->capture_default_str();
  ood->add_option("--out", ood_out, "output JSON path (default stdout)");
  ood_flags.add_to(ood);

  // grid
  auto* grid = app.add_subcommand("grid", "Run an experiment plan");
  std::string plan_path, grid_out, grid_render;
  unsigned jobs = 1;
  grid->add_option("--plan", plan_path, "plan JSON file")->required();
  grid->add_option("--out", grid_out, "report JSON path")->required();
  grid->add_option("--jobs", jobs, "concurrent cells")->capture_default_str();
  grid->add_option("--render", grid_render, "also render a markdown table here");

  // report
  auto* rep = app.add_subcommand("report", "Render a report JSON as markdown");
  std::string rep_in, rep_out;
  rep->add_option("--in", rep_in)->required();
  rep->add_option("--out", rep_out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (gen->parsed()) {
    const lur::LatentDataset ds = lur::gen_synthetic(spec);
    lur::save_latents(ds, gen_out, parse_format(gen_format, gen_out));
    std::cerr << "wrote " << ds.size() << " rows (" << ds.num_classes()
              << " classes, dim " << ds.dim() << ") to " << gen_out << "\n";
    return kExitOk;
  }

  if (ingest->parsed()) {
    const lur::LatentDataset ds =
        lur::load_latents(in_path, parse_format(in_fmt, in_path), declared_classes);
    lur::save_latents(ds, out_path, parse_format(out_fmt, out_path));
    std::cerr << "wrote " << ds.size() << " rows to " << out_path << "\n";
    return kExitOk;
  }

  if (train->parsed()) {
    const lur::LatentDataset ds =
        lur::load_latents(train_data, lur::format_from_path(train_data));
    const lur::TrainResult result = lur::train_head(train_flags.to_config(), ds);
    lur::save_head(result.model, train_out);
    json losses = json::array();
    for (double l : result.epoch_losses) losses.push_back(l);
    std::cout << json{{"model", train_out}, {"epoch_losses", losses}}.dump(2)
              << "\n";
    return kExitOk;
  }

  if (eval->parsed()) {
    const lur::HeadModel model = lur::load_head(eval_model);
    const lur::LatentDataset ds =
        lur::load_latents(eval_data, lur::format_from_path(eval_data));
    const json out = eval_model_on(model, ds, parse_scores(eval_scores));
    write_output(eval_out, out.dump(2) + "\n");
    return kExitOk;
  }

  if (ood->parsed()) {
    // A single-cell plan reuses the full harness path.
    lur::ExperimentPlan plan;
    plan.dataset_path = ood_data;
    const lur::HeadConfig config = ood_flags.to_config();
    plan.base = config;
    plan.variants = {config.variant};
    plan.grid.members = {config.num_members};
    plan.grid.batch_sizes = {config.batch_size};
    plan.grid.learning_rates = {config.learning_rate};
    plan.grid.epochs = {config.epochs};
    plan.seeds = {config.seed};
    plan.ood_modes = {lur::ood_mode_from_string(ood_mode)};
    plan.uncertainty_scores = parse_scores(ood_scores);
    const lur::EvalReport report = lur::run_plan(plan, 1);
    const json row = report_to_json(report)["rows"][0];
    write_output(ood_out, row.dump(2) + "\n");
    if (row.value("status", "") == "failed") return kExitNumeric;
    return kExitOk;
  }

  if (grid->parsed()) {
    std::ifstream plan_in(plan_path);
    if (!plan_in) throw lur::FormatError(plan_path + ": cannot open plan file");
    json plan_json;
    try {
      plan_in >> plan_json;
    } catch (const json::exception& e) {
      throw lur::FormatError(plan_path + ": " + e.what());
    }
    const lur::ExperimentPlan plan = lur::plan_from_json(plan_json);
    const lur::EvalReport report = lur::run_plan(plan, jobs);
    write_output(grid_out, report_to_json(report).dump(2) + "\n");
    if (!grid_render.empty()) write_output(grid_render, lur::render_markdown(report));
    std::cerr << "wrote " << report.rows.size() << " rows to " << grid_out << "\n";
    return kExitOk;
  }

  if (rep->parsed()) {
    std::ifstream in(rep_in);
    if (!in) throw lur::FormatError(rep_in + ": cannot open report file");
    json report_json;
    try {
      in >> report_json;
    } catch (const json::exception& e) {
      throw lur::FormatError(rep_in + ": " + e.what());
    }
    const lur::EvalReport report = lur::report_from_json(report_json);
    write_output(rep_out, lur::render_markdown(report));
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const lur::TrainingDivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const lur::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const lur::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
