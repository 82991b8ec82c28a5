#include "lur/serialize.hpp"

#include <cstring>
#include <fstream>

#include "lur/errors.hpp"

namespace lur {

std::string to_string(ScoreEstimator e) {
  switch (e) {
    case ScoreEstimator::Kde: return "kde";
    case ScoreEstimator::Sge: return "sge";
    case ScoreEstimator::Ssge: return "ssge";
  }
  throw InvalidInputError("unknown score estimator");
}

ScoreEstimator score_estimator_from_string(const std::string& s) {
  if (s == "kde") return ScoreEstimator::Kde;
  if (s == "sge") return ScoreEstimator::Sge;
  if (s == "ssge") return ScoreEstimator::Ssge;
  throw InvalidInputError("unknown score estimator '" + s + "'");
}

std::string to_string(BandwidthMode m) {
  return m == BandwidthMode::MedianHeuristic ? "median_heuristic" : "fixed";
}

BandwidthMode bandwidth_mode_from_string(const std::string& s) {
  if (s == "median_heuristic") return BandwidthMode::MedianHeuristic;
  if (s == "fixed") return BandwidthMode::Fixed;
  throw InvalidInputError("unknown bandwidth mode '" + s + "'");
}

std::string to_string(RepulsionSpace s) {
  return s == RepulsionSpace::Weight ? "weight" : "function";
}

RepulsionSpace repulsion_space_from_string(const std::string& s) {
  if (s == "weight") return RepulsionSpace::Weight;
  if (s == "function") return RepulsionSpace::Function;
  throw InvalidInputError("unknown repulsion space '" + s + "'");
}

nlohmann::json head_config_to_json(const HeadConfig& c) {
  return nlohmann::json{
      {"variant", to_string(c.variant)},
      {"num_members", c.num_members},
      {"latent_dim", c.latent_dim},
      {"num_classes", c.num_classes},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"init_stdev", c.init_stdev},
      {"bbb_prior_stdev", c.bbb_prior_stdev},
      {"bbb_kl_weight", c.bbb_kl_weight},
      {"gda_reg", c.gda_reg},
      {"gda_per_class_cov", c.gda_per_class_cov},
      {"kernel",
       {{"estimator", to_string(c.kernel.estimator)},
        {"bandwidth_mode", to_string(c.kernel.bandwidth_mode)},
        {"fixed_bandwidth", c.kernel.fixed_bandwidth},
        {"sge_ridge", c.kernel.sge_ridge},
        {"ssge_eigen_threshold", c.kernel.ssge_eigen_threshold}}},
      {"prior_stdev", c.prior.stdev},
      {"repulsion_space", to_string(c.repulsion_space)},
  };
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.variant = head_variant_from_string(j.at("variant").get<std::string>());
  c.num_members = j.value("num_members", c.num_members);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.init_stdev = j.value("init_stdev", c.init_stdev);
  c.bbb_prior_stdev = j.value("bbb_prior_stdev", c.bbb_prior_stdev);
  c.bbb_kl_weight = j.value("bbb_kl_weight", c.bbb_kl_weight);
  c.gda_reg = j.value("gda_reg", c.gda_reg);
  c.gda_per_class_cov = j.value("gda_per_class_cov", c.gda_per_class_cov);
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    if (k.contains("estimator")) {
      c.kernel.estimator = score_estimator_from_string(k.at("estimator"));
    }
    if (k.contains("bandwidth_mode")) {
      c.kernel.bandwidth_mode = bandwidth_mode_from_string(k.at("bandwidth_mode"));
    }
    c.kernel.fixed_bandwidth = k.value("fixed_bandwidth", c.kernel.fixed_bandwidth);
    c.kernel.sge_ridge = k.value("sge_ridge", c.kernel.sge_ridge);
    c.kernel.ssge_eigen_threshold =
        k.value("ssge_eigen_threshold", c.kernel.ssge_eigen_threshold);
  }
  c.prior.stdev = j.value("prior_stdev", c.prior.stdev);
  if (j.contains("repulsion_space")) {
    c.repulsion_space = repulsion_space_from_string(j.at("repulsion_space"));
  }
  return c;
}

namespace {

constexpr std::uint32_t kBlobVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u8(std::ofstream& out, std::uint8_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(path + ": truncated model blob");
  return v;
}

std::uint8_t get_u8(std::ifstream& in, const std::string& path) {
  std::uint8_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(path + ": truncated model blob");
  return v;
}

void get_doubles(std::ifstream& in, std::vector<double>& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw FormatError(path + ": truncated model blob");
}

void put_layer(std::ofstream& out, const LinearLayer& l) {
  put_doubles(out, l.w.data);
  put_doubles(out, l.b);
}

LinearLayer get_layer(std::ifstream& in, std::size_t rows, std::size_t cols,
                      const std::string& path) {
  LinearLayer l;
  l.w = Matrix(rows, cols);
  l.b.assign(cols, 0.0);
  get_doubles(in, l.w.data, path);
  get_doubles(in, l.b, path);
  return l;
}

std::uint8_t variant_tag(HeadVariant v) { return static_cast<std::uint8_t>(v); }

}  // namespace

void save_head(const HeadModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("LURH", 4);
  put_u32(out, kBlobVersion);
  put_u8(out, variant_tag(model.config().variant));

  const auto& impl = model.impl();
  if (const auto* lur = std::get_if<LurHead>(&impl)) {
    put_u32(out, static_cast<std::uint32_t>(lur->latent_dim()));
    put_u32(out, static_cast<std::uint32_t>(lur->num_classes()));
    put_u32(out, static_cast<std::uint32_t>(lur->transforms.size()));
    put_layer(out, lur->classifier);
    for (const auto& t : lur->transforms) put_layer(out, t);
  } else if (const auto* ens = std::get_if<EnsembleHead>(&impl)) {
    put_u32(out, static_cast<std::uint32_t>(ens->members.front().w.rows));
    put_u32(out, static_cast<std::uint32_t>(ens->members.front().w.cols));
    put_u32(out, static_cast<std::uint32_t>(ens->members.size()));
    for (const auto& m : ens->members) put_layer(out, m);
  } else if (const auto* bbb = std::get_if<BbbHead>(&impl)) {
    put_u32(out, static_cast<std::uint32_t>(bbb->w_mu.rows));
    put_u32(out, static_cast<std::uint32_t>(bbb->w_mu.cols));
    put_u32(out, 0);
    put_doubles(out, bbb->w_mu.data);
    put_doubles(out, bbb->w_rho.data);
    put_doubles(out, bbb->b_mu);
    put_doubles(out, bbb->b_rho);
  } else {
    const auto& gda = std::get<GdaHead>(impl);
    put_u32(out, static_cast<std::uint32_t>(gda.means.cols));
    put_u32(out, static_cast<std::uint32_t>(gda.means.rows));
    put_u32(out, static_cast<std::uint32_t>(gda.covariances.size()));
    put_u8(out, gda.per_class_cov ? 1 : 0);
    put_doubles(out, gda.means.data);
    put_doubles(out, gda.log_priors);
    for (const auto& cov : gda.covariances) put_doubles(out, cov.data);
  }
  if (!out) throw FormatError(path + ": write failed");
  out.close();

  std::ofstream side(path + ".json");
  if (!side) throw FormatError(path + ".json: cannot open for writing");
  side << head_config_to_json(model.config()).dump(2) << "\n";
}

HeadModel load_head(const std::string& path) {
  std::ifstream side_in(path + ".json");
  if (!side_in) throw FormatError(path + ".json: cannot open sidecar config");
  nlohmann::json side_json;
  try {
    side_in >> side_json;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ".json: " + e.what());
  }
  const HeadConfig config = head_config_from_json(side_json);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LURH", 4) != 0) {
    throw FormatError(path + ": bad magic bytes (not a head model blob)");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kBlobVersion) {
    throw FormatError(path + ": unsupported blob version " + std::to_string(version));
  }
  const std::uint8_t tag = get_u8(in, path);
  if (tag != variant_tag(config.variant)) {
    throw FormatError(path + ": blob variant does not match sidecar config");
  }

  const std::uint32_t d = get_u32(in, path);
  const std::uint32_t c = get_u32(in, path);
  const std::uint32_t n = get_u32(in, path);

  switch (config.variant) {
    case HeadVariant::Regular:
    case HeadVariant::Lur:
    case HeadVariant::Rlur: {
      LurHead head;
      head.classifier = get_layer(in, d, c, path);
      head.transforms.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        head.transforms.push_back(get_layer(in, d, d, path));
      }
      return HeadModel(config, std::move(head));
    }
    case HeadVariant::SubEnsemble:
    case HeadVariant::Rlle: {
      EnsembleHead head;
      head.members.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        head.members.push_back(get_layer(in, d, c, path));
      }
      return HeadModel(config, std::move(head));
    }
    case HeadVariant::BbbLl: {
      BbbHead head;
      head.w_mu = Matrix(d, c);
      head.w_rho = Matrix(d, c);
      head.b_mu.assign(c, 0.0);
      head.b_rho.assign(c, 0.0);
      get_doubles(in, head.w_mu.data, path);
      get_doubles(in, head.w_rho.data, path);
      get_doubles(in, head.b_mu, path);
      get_doubles(in, head.b_rho, path);
      return HeadModel(config, std::move(head));
    }
    case HeadVariant::Gda: {
      GdaHead head;
      head.per_class_cov = get_u8(in, path) != 0;
      head.means = Matrix(c, d);
      head.log_priors.assign(c, 0.0);
      get_doubles(in, head.means.data, path);
      get_doubles(in, head.log_priors, path);
      head.covariances.assign(n, Matrix(d, d));
      for (auto& cov : head.covariances) get_doubles(in, cov.data, path);
      gda_refresh_factors(head);
      return HeadModel(config, std::move(head));
    }
  }
  throw FormatError(path + ": unknown variant tag");
}

}  // namespace lur
