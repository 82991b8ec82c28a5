#include "lur/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lur/errors.hpp"
#include "lur/serialize.hpp"

namespace lur {

std::string to_string(OodMode m) { return m == OodMode::Min ? "min" : "max"; }

OodMode ood_mode_from_string(const std::string& s) {
  if (s == "min") return OodMode::Min;
  if (s == "max") return OodMode::Max;
  throw InvalidInputError("unknown OOD mode '" + s + "' (expected min or max)");
}

void ExperimentPlan::validate() const {
  if (dataset_path.empty() == !synthetic.has_value()) {
    throw InvalidInputError(
        "plan: exactly one of dataset.path / dataset.synthetic must be set");
  }
  if (variants.empty()) throw InvalidInputError("plan: no variants");
  if (seeds.empty()) throw InvalidInputError("plan: no seeds");
  if (grid.members.empty() || grid.batch_sizes.empty() ||
      grid.learning_rates.empty() || grid.epochs.empty()) {
    throw InvalidInputError("plan: every grid axis needs at least one value");
  }
}

ExperimentPlan plan_from_json(const nlohmann::json& j) {
  ExperimentPlan plan;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("path")) plan.dataset_path = d.at("path").get<std::string>();
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      SynthSpec spec;
      spec.classes = s.value("classes", spec.classes);
      spec.dim = s.value("dim", spec.dim);
      spec.per_class = s.value("per_class", spec.per_class);
      spec.cluster_mean_scale = s.value("mean_scale", spec.cluster_mean_scale);
      spec.cluster_stdev = s.value("stdev", spec.cluster_stdev);
      spec.seed = s.value("seed", spec.seed);
      plan.synthetic = spec;
    }
  }
  if (j.contains("variants")) {
    plan.variants.clear();
    for (const auto& v : j.at("variants")) {
      plan.variants.push_back(head_variant_from_string(v.get<std::string>()));
    }
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (g.contains("members")) plan.grid.members = g.at("members").get<std::vector<std::uint32_t>>();
    if (g.contains("batch_sizes")) plan.grid.batch_sizes = g.at("batch_sizes").get<std::vector<std::uint32_t>>();
    if (g.contains("learning_rates")) plan.grid.learning_rates = g.at("learning_rates").get<std::vector<double>>();
    if (g.contains("epochs")) plan.grid.epochs = g.at("epochs").get<std::vector<std::uint32_t>>();
  }
  if (j.contains("seeds")) plan.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("ood_modes")) {
    plan.ood_modes.clear();
    for (const auto& m : j.at("ood_modes")) {
      plan.ood_modes.push_back(ood_mode_from_string(m.get<std::string>()));
    }
  }
  if (j.contains("uncertainty_scores")) {
    plan.uncertainty_scores.clear();
    for (const auto& s : j.at("uncertainty_scores")) {
      plan.uncertainty_scores.push_back(score_kind_from_string(s.get<std::string>()));
    }
  }
  if (j.contains("head")) {
    nlohmann::json h = j.at("head");
    // The per-cell loop overwrites variant and the grid axes; parse the rest.
    if (!h.contains("variant")) h["variant"] = "regular";
    plan.base = head_config_from_json(h);
  }
  plan.validate();
  return plan;
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
  nlohmann::json j;
  if (!plan.dataset_path.empty()) {
    j["dataset"]["path"] = plan.dataset_path;
  } else {
    const SynthSpec& s = *plan.synthetic;
    j["dataset"]["synthetic"] = {
        {"classes", s.classes},   {"dim", s.dim},
        {"per_class", s.per_class}, {"mean_scale", s.cluster_mean_scale},
        {"stdev", s.cluster_stdev}, {"seed", s.seed},
    };
  }
  nlohmann::json variants = nlohmann::json::array();
  for (HeadVariant v : plan.variants) variants.push_back(to_string(v));
  j["variants"] = variants;
  j["grid"] = {
      {"members", plan.grid.members},
      {"batch_sizes", plan.grid.batch_sizes},
      {"learning_rates", plan.grid.learning_rates},
      {"epochs", plan.grid.epochs},
  };
  j["seeds"] = plan.seeds;
  nlohmann::json modes = nlohmann::json::array();
  for (OodMode m : plan.ood_modes) modes.push_back(to_string(m));
  j["ood_modes"] = modes;
  nlohmann::json scores = nlohmann::json::array();
  for (ScoreKind k : plan.uncertainty_scores) scores.push_back(to_string(k));
  j["uncertainty_scores"] = scores;
  j["head"] = head_config_to_json(plan.base);
  return j;
}

namespace {

struct ModeContext {
  std::optional<OodMode> mode;
  LatentDataset train_ds;              // heads train on its train rows
  std::vector<std::size_t> test_rows;  // rows of train_ds used for in-dist eval
  std::optional<LatentDataset> ood_ds;
};

ModeContext make_context(const LatentDataset& ds, std::optional<OodMode> mode) {
  ModeContext ctx;
  ctx.mode = mode;
  if (!mode) {
    ctx.train_ds = ds;
    ctx.test_rows = ds.indices_of(Split::Test);
    return ctx;
  }
  OODSplit split = make_ood_split(ds, *mode);
  // Evaluation rows live in one dataset with the train rows so the head sees
  // a single consistent class indexing.
  LatentDataset merged = std::move(split.in_train);
  const std::size_t n_train = merged.size();
  const LatentDataset& te = split.in_test;
  Matrix feats(n_train + te.size(), merged.dim());
  std::copy(merged.features.data.begin(), merged.features.data.end(),
            feats.data.begin());
  std::copy(te.features.data.begin(), te.features.data.end(),
            feats.data.begin() + static_cast<std::ptrdiff_t>(merged.features.data.size()));
  merged.features = std::move(feats);
  merged.labels.insert(merged.labels.end(), te.labels.begin(), te.labels.end());
  merged.split.insert(merged.split.end(), te.split.begin(), te.split.end());
  ctx.train_ds = std::move(merged);
  for (std::size_t i = 0; i < te.size(); ++i) ctx.test_rows.push_back(n_train + i);
  ctx.ood_ds = std::move(split.ood);
  return ctx;
}

Rng eval_rng(std::uint64_t seed, std::uint64_t stream, std::size_t row) {
  return Rng(Rng::derive(Rng::derive(seed, stream), row));
}

std::vector<ScoreKind> cell_score_kinds(const HeadModel& model,
                                        const std::vector<ScoreKind>& requested) {
  const std::vector<ScoreKind> supported = model.supported_scores();
  if (model.config().variant == HeadVariant::Gda) return supported;
  std::vector<ScoreKind> kinds;
  for (ScoreKind k : supported) {
    if (std::find(requested.begin(), requested.end(), k) != requested.end()) {
      kinds.push_back(k);
    }
  }
  if (kinds.empty()) kinds.push_back(supported.front());
  return kinds;
}

CellResult run_cell(const ExperimentPlan& plan, const ModeContext& ctx,
                    HeadVariant variant, const ConfigKey& key, std::uint64_t seed) {
  CellResult cell;
  cell.variant = variant;
  cell.key = key;
  cell.seed = seed;
  cell.mode = ctx.mode;

  HeadConfig config = plan.base;
  config.variant = variant;
  config.num_members = key.members;
  config.batch_size = key.batch_size;
  config.learning_rate = key.learning_rate;
  config.epochs = key.epochs;
  config.seed = seed;
  config.latent_dim = 0;
  config.num_classes = 0;

  HeadModel model;
  try {
    model = train_head(config, ctx.train_ds).model;
  } catch (const TrainingDivergedError& e) {
    cell.ok = false;
    cell.error = e.what();
    return cell;
  }

  const std::vector<ScoreKind> kinds = cell_score_kinds(model, plan.uncertainty_scores);
  const ScoreKind primary = kinds.front();

  std::vector<ScoredPrediction> preds;
  preds.reserve(ctx.test_rows.size());
  std::vector<std::vector<double>> test_scores(kinds.size());
  for (std::size_t i = 0; i < ctx.test_rows.size(); ++i) {
    const std::size_t r = ctx.test_rows[i];
    const auto z = ctx.train_ds.features.row(r);
    Rng rng = eval_rng(seed, 0xEBA1, i);
    const PredictiveDistribution pd = model.predict(z, rng);
    double primary_score = 0.0;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const double u = model.uncertainty(pd, z, kinds[k]);
      test_scores[k].push_back(u);
      if (kinds[k] == primary) primary_score = u;
    }
    preds.push_back(make_scored(pd.probs, ctx.train_ds.labels[r], primary_score));
  }

  const AccF1 af = accuracy_and_macro_f1(preds);
  cell.accuracy = af.accuracy;
  cell.f1 = af.macro_f1;
  cell.ace = ace(preds);
  cell.raulc = raulc(preds);

  if (ctx.ood_ds) {
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      OODScoreSet set;
      set.in_dist = test_scores[k];
      for (std::size_t i = 0; i < ctx.ood_ds->size(); ++i) {
        const auto z = ctx.ood_ds->features.row(i);
        Rng rng = eval_rng(seed, 0x00DD, i);
        const PredictiveDistribution pd = model.predict(z, rng);
        set.ood.push_back(model.uncertainty(pd, z, kinds[k]));
      }
      OodMetricRow row;
      row.score = kinds[k];
      row.roc_auc = roc_auc(set);
      row.pr_auc = pr_auc(set);
      row.fpr95 = fpr_at_95_tpr(set);
      cell.ood.push_back(row);
    }
  }
  cell.ok = true;
  return cell;
}

bool lower_is_better(const std::string& criterion) {
  const std::string metric = criterion.find('.') == std::string::npos
                                 ? criterion
                                 : criterion.substr(criterion.find('.') + 1);
  return metric == "ace" || metric == "fpr95";
}

std::vector<std::string> available_criteria(const CellResult& row) {
  std::vector<std::string> out{"accuracy", "f1", "ace"};
  if (row.raulc) out.push_back("raulc");
  if (!row.ood.empty()) {
    out.insert(out.end(), {"roc_auc", "pr_auc", "fpr95"});
    for (const auto& o : row.ood) {
      const std::string prefix = to_string(o.score) + ".";
      out.push_back(prefix + "roc_auc");
      out.push_back(prefix + "pr_auc");
      out.push_back(prefix + "fpr95");
    }
  }
  return out;
}

std::map<std::string, double> row_metrics(const CellResult& row) {
  std::map<std::string, double> m{
      {"accuracy", row.accuracy}, {"f1", row.f1}, {"ace", row.ace}};
  if (row.raulc) m["raulc"] = *row.raulc;
  for (const auto& o : row.ood) {
    const std::string prefix = to_string(o.score) + ".";
    m[prefix + "roc_auc"] = o.roc_auc;
    m[prefix + "pr_auc"] = o.pr_auc;
    m[prefix + "fpr95"] = o.fpr95;
  }
  return m;
}

std::string iso_utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::optional<double> criterion_value(const CellResult& row,
                                      const std::string& criterion) {
  if (!row.ok) return std::nullopt;
  if (criterion == "accuracy") return row.accuracy;
  if (criterion == "f1") return row.f1;
  if (criterion == "ace") return row.ace;
  if (criterion == "raulc") return row.raulc;
  const auto dot = criterion.find('.');
  std::optional<ScoreKind> want;
  std::string metric = criterion;
  if (dot != std::string::npos) {
    want = score_kind_from_string(criterion.substr(0, dot));
    metric = criterion.substr(dot + 1);
  }
  for (const auto& o : row.ood) {
    if (want && o.score != *want) continue;
    if (metric == "roc_auc") return o.roc_auc;
    if (metric == "pr_auc") return o.pr_auc;
    if (metric == "fpr95") return o.fpr95;
    return std::nullopt;
  }
  return std::nullopt;
}

std::vector<AggregateRow> select_best(const EvalReport& report,
                                      const std::string& selection,
                                      const std::string& criterion) {
  if (selection != "per_seed_best" && selection != "best_avg_config") {
    throw InvalidInputError("selection must be per_seed_best or best_avg_config");
  }
  // Fail loudly on an unknown criterion so typos do not silently select nothing.
  bool seen_any = false;
  for (const auto& row : report.rows) {
    if (!row.ok) continue;
    seen_any = true;
    if (criterion_value(row, criterion)) break;
    const std::vector<std::string> avail = available_criteria(row);
    std::string msg = "criterion '" + criterion + "' not found; available:";
    for (const auto& a : avail) msg += " " + a;
    throw InvalidInputError(msg);
  }
  if (!seen_any) return {};

  const bool minimize = lower_is_better(criterion);
  const auto oriented = [&](double v) { return minimize ? -v : v; };

  struct GroupKey {
    HeadVariant variant;
    std::optional<OodMode> mode;
    auto operator<=>(const GroupKey&) const = default;
  };
  std::map<GroupKey, std::vector<const CellResult*>> groups;
  for (const auto& row : report.rows) {
    groups[{row.variant, row.mode}].push_back(&row);
  }

  std::vector<AggregateRow> out;
  for (const auto& [gk, rows] : groups) {
    AggregateRow agg;
    agg.variant = gk.variant;
    agg.mode = gk.mode;
    agg.selection = selection;
    agg.criterion = criterion;

    std::vector<const CellResult*> chosen_rows;
    if (selection == "per_seed_best") {
      std::set<std::uint64_t> seeds;
      for (const auto* r : rows) seeds.insert(r->seed);
      for (std::uint64_t seed : seeds) {
        const CellResult* best = nullptr;
        for (const auto* r : rows) {
          if (r->seed != seed) continue;
          const auto v = criterion_value(*r, criterion);
          if (!v) continue;
          if (!best) {
            best = r;
            continue;
          }
          const double bv = *criterion_value(*best, criterion);
          if (oriented(*v) > oriented(bv) ||
              (oriented(*v) == oriented(bv) && r->key < best->key)) {
            best = r;
          }
        }
        if (best) chosen_rows.push_back(best);
      }
    } else {
      std::map<ConfigKey, std::vector<const CellResult*>> by_config;
      for (const auto* r : rows) {
        if (criterion_value(*r, criterion)) by_config[r->key].push_back(r);
      }
      std::optional<ConfigKey> best_key;
      double best_mean = 0.0;
      for (const auto& [key, config_rows] : by_config) {
        double mean = 0.0;
        for (const auto* r : config_rows) mean += oriented(*criterion_value(*r, criterion));
        mean /= static_cast<double>(config_rows.size());
        if (!best_key || mean > best_mean) {
          best_key = key;
          best_mean = mean;
        }
        // std::map iterates keys ascending, so ties keep the smaller config.
      }
      if (best_key) chosen_rows = by_config[*best_key];
    }

    if (chosen_rows.empty()) continue;
    std::sort(chosen_rows.begin(), chosen_rows.end(),
              [](const CellResult* a, const CellResult* b) { return a->seed < b->seed; });
    for (const auto* r : chosen_rows) agg.chosen.emplace_back(r->seed, r->key);

    // Aggregate every metric present on all chosen rows.
    std::map<std::string, std::vector<double>> columns;
    for (const auto& [name, value] : row_metrics(*chosen_rows.front())) {
      columns[name].push_back(value);
    }
    for (std::size_t i = 1; i < chosen_rows.size(); ++i) {
      const auto metrics = row_metrics(*chosen_rows[i]);
      for (auto it = columns.begin(); it != columns.end();) {
        const auto found = metrics.find(it->first);
        if (found == metrics.end()) {
          it = columns.erase(it);
        } else {
          it->second.push_back(found->second);
          ++it;
        }
      }
    }
    for (const auto& [name, values] : columns) {
      agg.metrics[name] = aggregate_sem2(values);
    }
    out.push_back(std::move(agg));
  }
  return out;
}

EvalReport run_plan(const ExperimentPlan& plan, unsigned jobs) {
  plan.validate();
  const LatentDataset ds = plan.synthetic
                               ? gen_synthetic(*plan.synthetic)
                               : load_latents(plan.dataset_path,
                                              format_from_path(plan.dataset_path));
  ds.validate();

  std::vector<std::optional<OodMode>> modes;
  if (plan.ood_modes.empty()) {
    modes.push_back(std::nullopt);
  } else {
    for (OodMode m : plan.ood_modes) modes.push_back(m);
  }
  std::vector<ModeContext> contexts;
  contexts.reserve(modes.size());
  for (const auto& m : modes) contexts.push_back(make_context(ds, m));

  struct Cell {
    std::size_t context;
    HeadVariant variant;
    ConfigKey key;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (HeadVariant variant : plan.variants) {
    for (std::uint32_t members : plan.grid.members) {
      for (std::uint32_t batch : plan.grid.batch_sizes) {
        for (double lr : plan.grid.learning_rates) {
          for (std::uint32_t ep : plan.grid.epochs) {
            for (std::uint64_t seed : plan.seeds) {
              for (std::size_t c = 0; c < contexts.size(); ++c) {
                cells.push_back({c, variant, {members, batch, lr, ep}, seed});
              }
            }
          }
        }
      }
    }
  }

  EvalReport report;
  report.plan_json = plan_to_json(plan);
  report.rows.resize(cells.size());
  report.generated_at = iso_utc_now();

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, cells.size()));
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& c = cells[i];
      try {
        report.rows[i] =
            run_cell(plan, contexts[c.context], c.variant, c.key, c.seed);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& mode : modes) {
    const std::string criterion = mode ? "roc_auc" : "f1";
    for (const char* selection : {"per_seed_best", "best_avg_config"}) {
      for (AggregateRow& agg : select_best(report, selection, criterion)) {
        if (agg.mode == mode) report.aggregates.push_back(std::move(agg));
      }
    }
  }
  return report;
}

namespace {

nlohmann::json mean_sem_to_json(const MeanSem& m) {
  nlohmann::json j{{"mean", m.mean}};
  j["two_sem"] = m.two_sem ? nlohmann::json(*m.two_sem) : nlohmann::json();
  return j;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["generated_at"] = report.generated_at;
  j["plan"] = report.plan_json;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{
        {"variant", to_string(r.variant)},
        {"members", r.key.members},
        {"batch_size", r.key.batch_size},
        {"learning_rate", r.key.learning_rate},
        {"epochs", r.key.epochs},
        {"seed", r.seed},
        {"mode", r.mode ? nlohmann::json(to_string(*r.mode)) : nlohmann::json("none")},
        {"status", r.ok ? "ok" : "failed"},
    };
    if (!r.ok) {
      row["error"] = r.error;
    } else {
      row["in_dist"] = {
          {"accuracy", r.accuracy},
          {"f1", r.f1},
          {"ace", r.ace},
          {"raulc", r.raulc ? nlohmann::json(*r.raulc) : nlohmann::json()},
      };
      nlohmann::json ood = nlohmann::json::array();
      for (const auto& o : r.ood) {
        ood.push_back({{"score", to_string(o.score)},
                       {"roc_auc", o.roc_auc},
                       {"pr_auc", o.pr_auc},
                       {"fpr95", o.fpr95}});
      }
      row["ood"] = ood;
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = rows;

  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : report.aggregates) {
    nlohmann::json chosen = nlohmann::json::array();
    for (const auto& [seed, key] : a.chosen) {
      chosen.push_back({{"seed", seed},
                        {"members", key.members},
                        {"batch_size", key.batch_size},
                        {"learning_rate", key.learning_rate},
                        {"epochs", key.epochs}});
    }
    nlohmann::json metrics;
    for (const auto& [name, m] : a.metrics) metrics[name] = mean_sem_to_json(m);
    aggs.push_back({
        {"variant", to_string(a.variant)},
        {"mode", a.mode ? nlohmann::json(to_string(*a.mode)) : nlohmann::json("none")},
        {"selection", a.selection},
        {"criterion", a.criterion},
        {"chosen", chosen},
        {"metrics", metrics},
    });
  }
  j["aggregates"] = aggs;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1) {
    throw FormatError("report: unsupported schema version");
  }
  EvalReport report;
  report.plan_json = j.value("plan", nlohmann::json::object());
  report.generated_at = j.value("generated_at", "");
  for (const auto& row : j.at("rows")) {
    CellResult r;
    r.variant = head_variant_from_string(row.at("variant"));
    r.key.members = row.at("members");
    r.key.batch_size = row.at("batch_size");
    r.key.learning_rate = row.at("learning_rate");
    r.key.epochs = row.at("epochs");
    r.seed = row.at("seed");
    const std::string mode = row.at("mode");
    if (mode != "none") r.mode = ood_mode_from_string(mode);
    r.ok = row.at("status") == "ok";
    if (!r.ok) {
      r.error = row.value("error", "");
    } else {
      const auto& in = row.at("in_dist");
      r.accuracy = in.at("accuracy");
      r.f1 = in.at("f1");
      r.ace = in.at("ace");
      if (!in.at("raulc").is_null()) r.raulc = in.at("raulc").get<double>();
      for (const auto& o : row.at("ood")) {
        OodMetricRow m;
        m.score = score_kind_from_string(o.at("score"));
        m.roc_auc = o.at("roc_auc");
        m.pr_auc = o.at("pr_auc");
        m.fpr95 = o.at("fpr95");
        r.ood.push_back(m);
      }
    }
    report.rows.push_back(std::move(r));
  }
  for (const auto& agg : j.value("aggregates", nlohmann::json::array())) {
    AggregateRow a;
    a.variant = head_variant_from_string(agg.at("variant"));
    const std::string mode = agg.at("mode");
    if (mode != "none") a.mode = ood_mode_from_string(mode);
    a.selection = agg.at("selection");
    a.criterion = agg.at("criterion");
    for (const auto& ch : agg.at("chosen")) {
      ConfigKey key{ch.at("members"), ch.at("batch_size"), ch.at("learning_rate"),
                    ch.at("epochs")};
      a.chosen.emplace_back(ch.at("seed").get<std::uint64_t>(), key);
    }
    for (const auto& [name, m] : agg.at("metrics").items()) {
      MeanSem ms;
      ms.mean = m.at("mean");
      if (!m.at("two_sem").is_null()) ms.two_sem = m.at("two_sem").get<double>();
      a.metrics[name] = ms;
    }
    report.aggregates.push_back(std::move(a));
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_cell(const MeanSem& m) {
  if (!m.two_sem) return fmt(m.mean);
  return fmt(m.mean) + " ± " + fmt(*m.two_sem);
}

std::string mode_name(const std::optional<OodMode>& m) {
  return m ? "OOD " + to_string(*m) : "in-distribution";
}

}  // namespace

std::string render_markdown(const EvalReport& report) {
  std::ostringstream out;
  std::size_t ok = 0, failed = 0;
  for (const auto& r : report.rows) (r.ok ? ok : failed)++;
  out << "# Evaluation report\n\n";
  out << "Generated: " << report.generated_at << "  \n";
  out << "Cells: " << report.rows.size() << " (" << ok << " ok, " << failed
      << " failed)\n";

  std::vector<std::pair<std::optional<OodMode>, std::string>> sections;
  for (const auto& a : report.aggregates) {
    if (std::find_if(sections.begin(), sections.end(), [&](const auto& s) {
          return s.first == a.mode;
        }) == sections.end()) {
      sections.emplace_back(a.mode, mode_name(a.mode));
    }
  }

  for (const auto& [mode, name] : sections) {
    out << "\n## " << name << "\n\n";
    out << "| variant | selection | criterion | Acc | F1 | ACE | rAULC |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& a : report.aggregates) {
      if (a.mode != mode) continue;
      out << "| " << to_string(a.variant) << " | " << a.selection << " | "
          << a.criterion;
      for (const char* m : {"accuracy", "f1", "ace", "raulc"}) {
        const auto it = a.metrics.find(m);
        out << " | " << (it == a.metrics.end() ? "-" : fmt_cell(it->second));
      }
      out << " |\n";
    }
    if (!mode) continue;

    // Which score kinds appear in this section's aggregates.
    std::vector<std::string> score_names;
    for (const auto& a : report.aggregates) {
      if (a.mode != mode) continue;
      for (const auto& [key, unused] : a.metrics) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) continue;
        const std::string score = key.substr(0, dot);
        if (std::find(score_names.begin(), score_names.end(), score) ==
            score_names.end()) {
          score_names.push_back(score);
        }
      }
    }
    out << "\n| variant | selection | score | ROC-AUC | PR-AUC | FPR95 |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto& a : report.aggregates) {
      if (a.mode != mode) continue;
      for (const auto& score : score_names) {
        if (!a.metrics.count(score + ".roc_auc")) continue;
        out << "| " << to_string(a.variant) << " | " << a.selection << " | "
            << score;
        for (const char* m : {".roc_auc", ".pr_auc", ".fpr95"}) {
          out << " | " << fmt_cell(a.metrics.at(score + m));
        }
        out << " |\n";
      }
    }
  }
  return out.str();
}

}  // namespace lur
