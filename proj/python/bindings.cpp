#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "lur/bench.hpp"
#include "lur/dataset.hpp"
#include "lur/errors.hpp"
#include "lur/heads.hpp"
#include "lur/metrics.hpp"
#include "lur/numerics.hpp"
#include "lur/repulsion.hpp"
#include "lur/rng.hpp"
#include "lur/serialize.hpp"

namespace py = pybind11;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

lur::Matrix to_matrix(const DArray& a) {
  if (a.ndim() != 2) throw lur::InvalidInputError("expected a 2-d array");
  lur::Matrix m(static_cast<std::size_t>(a.shape(0)),
                static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + m.size(), m.data.begin());
  return m;
}

std::vector<double> to_vector(const DArray& a) {
  if (a.ndim() != 1) throw lur::InvalidInputError("expected a 1-d array");
  return {a.data(), a.data() + a.shape(0)};
}

py::array_t<double> from_matrix(const lur::Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

lur::HeadConfig config_from_kwargs(const py::dict& kwargs) {
  nlohmann::json j;
  j["variant"] = "regular";
  for (const auto& item : kwargs) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "variant" || key == "estimator" || key == "bandwidth_mode" ||
        key == "repulsion_space") {
      const std::string value = py::cast<std::string>(item.second);
      if (key == "estimator" || key == "bandwidth_mode") {
        j["kernel"][key] = value;
      } else {
        j[key] = value;
      }
    } else if (key == "gda_per_class_cov") {
      j[key] = py::cast<bool>(item.second);
    } else if (key == "num_members" || key == "batch_size" || key == "epochs" ||
               key == "seed" || key == "latent_dim" || key == "num_classes") {
      j[key] = py::cast<std::uint64_t>(item.second);
    } else if (key == "fixed_bandwidth" || key == "sge_ridge" ||
               key == "ssge_eigen_threshold") {
      j["kernel"][key] = py::cast<double>(item.second);
    } else {
      j[key] = py::cast<double>(item.second);
    }
  }
  return lur::head_config_from_json(j);
}

std::vector<lur::ScoredPrediction> scored_from_arrays(const DArray& mean_probs,
                                                      const std::vector<std::uint32_t>& labels,
                                                      const std::vector<double>& uncertainty) {
  const lur::Matrix probs = to_matrix(mean_probs);
  if (labels.size() != probs.rows ||
      (!uncertainty.empty() && uncertainty.size() != probs.rows)) {
    throw lur::InvalidInputError("labels/uncertainty length mismatch");
  }
  std::vector<lur::ScoredPrediction> preds;
  preds.reserve(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    lur::Matrix row(1, probs.cols);
    std::copy(probs.row(i).begin(), probs.row(i).end(), row.data.begin());
    preds.push_back(lur::make_scored(row, labels[i],
                                     uncertainty.empty() ? 0.0 : uncertainty[i]));
  }
  return preds;
}

}  // namespace

PYBIND11_MODULE(_lur, m) {
  m.doc() = "Latent uncertainty representation heads, repulsive particle "
            "training, and the uncertainty/OOD evaluation harness";

  py::register_exception<lur::InvalidInputError>(m, "InvalidInputError",
                                                 PyExc_ValueError);
  py::register_exception<lur::IndexError>(m, "IndexError", PyExc_IndexError);
  py::register_exception<lur::FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<lur::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<lur::TrainingDivergedError>(m, "TrainingDivergedError",
                                                     PyExc_ArithmeticError);

  py::class_<lur::LatentDataset>(m, "LatentDataset")
      .def_property_readonly("features",
                             [](const lur::LatentDataset& ds) {
                               return from_matrix(ds.features);
                             })
      .def_property_readonly("labels",
                             [](const lur::LatentDataset& ds) { return ds.labels; })
      .def_property_readonly("class_names",
                             [](const lur::LatentDataset& ds) { return ds.class_names; })
      .def_property_readonly("splits",
                             [](const lur::LatentDataset& ds) {
                               std::vector<std::string> out;
                               for (lur::Split s : ds.split) {
                                 out.push_back(s == lur::Split::Train ? "train" : "test");
                               }
                               return out;
                             })
      .def("__len__", [](const lur::LatentDataset& ds) { return ds.size(); })
      .def("__repr__", [](const lur::LatentDataset& ds) {
        return "LatentDataset(n=" + std::to_string(ds.size()) +
               ", dim=" + std::to_string(ds.dim()) +
               ", classes=" + std::to_string(ds.num_classes()) + ")";
      });

  m.def(
      "gen_synthetic",
      [](std::uint32_t classes, std::uint32_t dim, std::uint32_t per_class,
         double mean_scale, double stdev, std::uint64_t seed) {
        return lur::gen_synthetic({classes, dim, per_class, mean_scale, stdev, seed});
      },
      py::arg("classes"), py::arg("dim"), py::arg("per_class"),
      py::arg("mean_scale") = 3.0, py::arg("stdev") = 0.5, py::arg("seed") = 0);

  m.def("load_latents",
        [](const std::string& path, std::uint32_t declared_classes) {
          return lur::load_latents(path, lur::format_from_path(path), declared_classes);
        },
        py::arg("path"), py::arg("declared_classes") = 0);
  m.def("save_latents", [](const lur::LatentDataset& ds, const std::string& path) {
    lur::save_latents(ds, path, lur::format_from_path(path));
  });

  m.def(
      "make_ood_split",
      [](const lur::LatentDataset& ds, const std::string& mode) {
        const lur::OODSplit split = lur::make_ood_split(
            ds, mode == "min" ? lur::OodMode::Min : lur::OodMode::Max);
        py::dict out;
        out["in_train"] = split.in_train;
        out["in_test"] = split.in_test;
        out["ood"] = split.ood;
        out["held_out_class"] = split.held_out_class;
        return out;
      },
      py::arg("dataset"), py::arg("mode"));

  py::class_<lur::HeadModel>(m, "HeadModel")
      .def("predict",
           [](const lur::HeadModel& model, const DArray& z, std::uint64_t seed) {
             lur::Rng rng(seed);
             const auto pd = model.predict(to_vector(z), rng);
             py::dict out;
             out["probs"] = from_matrix(pd.probs);
             if (pd.latent_reps) out["latent_reps"] = from_matrix(*pd.latent_reps);
             return out;
           },
           py::arg("z"), py::arg("seed") = 0)
      .def("uncertainty",
           [](const lur::HeadModel& model, const DArray& z, const std::string& kind,
              std::uint64_t seed) {
             lur::Rng rng(seed);
             const std::vector<double> zv = to_vector(z);
             const auto pd = model.predict(zv, rng);
             return model.uncertainty(pd, zv, lur::score_kind_from_string(kind));
           },
           py::arg("z"), py::arg("kind") = "entropy", py::arg("seed") = 0)
      .def_property_readonly("variant",
                             [](const lur::HeadModel& model) {
                               return lur::to_string(model.config().variant);
                             })
      .def_property_readonly("supported_scores", [](const lur::HeadModel& model) {
        std::vector<std::string> out;
        for (lur::ScoreKind k : model.supported_scores()) {
          out.push_back(lur::to_string(k));
        }
        return out;
      });

  m.def(
      "train_head",
      [](const lur::LatentDataset& ds, const py::kwargs& kwargs) {
        const lur::TrainResult result =
            lur::train_head(config_from_kwargs(kwargs), ds);
        return py::make_tuple(result.model, result.epoch_losses);
      },
      py::arg("dataset"));

  m.def("save_head", &lur::save_head, py::arg("model"), py::arg("path"));
  m.def("load_head", &lur::load_head, py::arg("path"));

  // numerics
  m.def("softmax", [](const DArray& x) { return lur::softmax(to_vector(x)); });
  m.def("cross_entropy_with_grad", [](const DArray& logits, std::size_t label) {
    const auto ce = lur::cross_entropy_with_grad(to_vector(logits), label);
    return py::make_tuple(ce.loss, ce.grad_logits);
  });
  m.def("sym_eigh", [](const DArray& a) {
    const auto r = lur::sym_eigh(to_matrix(a));
    return py::make_tuple(r.eigenvalues, from_matrix(r.eigenvectors));
  });

  // repulsion estimators
  m.def("rbf_gram", [](const DArray& particles, double h) {
    return from_matrix(lur::rbf_gram(to_matrix(particles), h));
  });
  m.def("median_bandwidth",
        [](const DArray& particles) { return lur::median_bandwidth(to_matrix(particles)); });
  m.def("repulsion_grad_kde", [](const DArray& particles, double h) {
    return from_matrix(lur::repulsion_grad_kde(to_matrix(particles), h));
  });
  m.def(
      "score_sge",
      [](const DArray& particles, double ridge, double bandwidth) {
        const lur::Matrix p = to_matrix(particles);
        const double h = bandwidth > 0 ? bandwidth : lur::score_median_bandwidth(p);
        return from_matrix(lur::score_sge(p, ridge, h));
      },
      py::arg("particles"), py::arg("ridge") = 0.5, py::arg("bandwidth") = 0.0);
  m.def(
      "score_ssge",
      [](const DArray& particles, double eigen_threshold, double bandwidth) {
        const lur::Matrix p = to_matrix(particles);
        const double h = bandwidth > 0 ? bandwidth : lur::score_median_bandwidth(p);
        return from_matrix(lur::score_ssge(p, h, eigen_threshold));
      },
      py::arg("particles"), py::arg("eigen_threshold") = 1e-3,
      py::arg("bandwidth") = 0.0);

  // metrics
  m.def("predictive_entropy",
        [](const DArray& probs) { return lur::predictive_entropy(to_matrix(probs)); });
  m.def("latent_variance_score", [](const DArray& reps) {
    return lur::latent_variance_score(to_matrix(reps));
  });
  m.def(
      "accuracy_and_macro_f1",
      [](const DArray& mean_probs, const std::vector<std::uint32_t>& labels) {
        const auto preds = scored_from_arrays(mean_probs, labels, {});
        const auto r = lur::accuracy_and_macro_f1(preds);
        return py::make_tuple(r.accuracy, r.macro_f1);
      },
      py::arg("mean_probs"), py::arg("labels"));
  m.def(
      "ace",
      [](const DArray& mean_probs, const std::vector<std::uint32_t>& labels,
         std::size_t bins) {
        return lur::ace(scored_from_arrays(mean_probs, labels, {}), bins);
      },
      py::arg("mean_probs"), py::arg("labels"), py::arg("bins") = 10);
  m.def(
      "raulc",
      [](const DArray& mean_probs, const std::vector<std::uint32_t>& labels,
         const DArray& uncertainty) -> py::object {
        const auto preds =
            scored_from_arrays(mean_probs, labels, to_vector(uncertainty));
        const auto r = lur::raulc(preds);
        if (!r) return py::none();
        return py::float_(*r);
      },
      py::arg("mean_probs"), py::arg("labels"), py::arg("uncertainty"));
  m.def("roc_auc", [](const DArray& in_dist, const DArray& ood) {
    return lur::roc_auc({to_vector(in_dist), to_vector(ood)});
  });
  m.def("pr_auc", [](const DArray& in_dist, const DArray& ood) {
    return lur::pr_auc({to_vector(in_dist), to_vector(ood)});
  });
  m.def("fpr_at_95_tpr", [](const DArray& in_dist, const DArray& ood) {
    return lur::fpr_at_95_tpr({to_vector(in_dist), to_vector(ood)});
  });
  m.def("aggregate_sem2", [](const DArray& values) {
    const auto r = lur::aggregate_sem2(to_vector(values));
    return py::make_tuple(r.mean,
                          r.two_sem ? py::object(py::float_(*r.two_sem)) : py::none());
  });

  // experiment harness
  m.def(
      "run_plan",
      [](const std::string& plan_json, unsigned jobs) {
        const lur::ExperimentPlan plan =
            lur::plan_from_json(nlohmann::json::parse(plan_json));
        return lur::report_to_json(lur::run_plan(plan, jobs)).dump();
      },
      py::arg("plan_json"), py::arg("jobs") = 1);
  m.def("render_markdown", [](const std::string& report_json) {
    return lur::render_markdown(
        lur::report_from_json(nlohmann::json::parse(report_json)));
  });
}
