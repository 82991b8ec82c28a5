#include "lur/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

// The LATF format is little-endian on disk and read/written by memcpy.
static_assert(std::endian::native == std::endian::little,
              "LATF I/O assumes a little-endian host");

#include "lur/errors.hpp"
#include "lur/rng.hpp"

namespace lur {

std::vector<std::size_t> LatentDataset::indices_of(Split s) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) idx.push_back(i);
  }
  return idx;
}

void LatentDataset::validate() const {
  if (features.rows == 0 || features.cols == 0) {
    throw InvalidInputError("dataset: empty feature matrix");
  }
  if (labels.size() != features.rows || split.size() != features.rows) {
    throw InvalidInputError("dataset: labels/split length mismatch");
  }
  if (class_names.empty()) throw InvalidInputError("dataset: no classes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_names.size()) {
      throw InvalidInputError("dataset: label " + std::to_string(labels[i]) +
                              " out of range at row " + std::to_string(i));
    }
  }
  if (!features.all_finite()) {
    throw InvalidInputError("dataset: non-finite feature value");
  }
}

DataFormat format_from_path(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) {
    return DataFormat::Csv;
  }
  return DataFormat::Latf;
}

namespace {

std::vector<std::string> default_class_names(std::uint32_t c) {
  std::vector<std::string> names;
  names.reserve(c);
  for (std::uint32_t i = 0; i < c; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

[[noreturn]] void row_error(const std::string& path, std::size_t line,
                            const std::string& what) {
  throw FormatError(path + ": line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(s);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!s.empty() && s.back() == ',') out.push_back("");
  return out;
}

LatentDataset load_csv(const std::string& path, std::uint32_t declared_classes) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");

  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = split_commas(line);
  if (header.size() < 3) {
    throw FormatError(path + ": header must be f0,...,f{D-1},label,split");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t i = 0; i < d; ++i) {
    if (header[i] != "f" + std::to_string(i)) {
      throw FormatError(path + ": malformed header field '" + header[i] +
                        "' (expected f" + std::to_string(i) + ")");
    }
  }
  if (header[d] != "label" || header[d + 1] != "split") {
    throw FormatError(path + ": header must end with label,split");
  }

  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::vector<Split> splits;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_commas(line);
    if (fields.size() != d + 2) {
      row_error(path, line_no,
                "expected " + std::to_string(d + 2) + " fields, got " +
                    std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < d; ++i) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(fields[i], &pos);
      } catch (const std::exception&) {
        row_error(path, line_no, "bad float '" + fields[i] + "'");
      }
      if (pos != fields[i].size()) row_error(path, line_no, "bad float '" + fields[i] + "'");
      if (!std::isfinite(v)) row_error(path, line_no, "non-finite feature value");
      values.push_back(v);
    }
    unsigned long lbl = 0;
    try {
      std::size_t pos = 0;
      lbl = std::stoul(fields[d], &pos);
      if (pos != fields[d].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      row_error(path, line_no, "bad label '" + fields[d] + "'");
    }
    if (declared_classes != 0 && lbl >= declared_classes) {
      row_error(path, line_no,
                "label " + std::to_string(lbl) + " out of range for " +
                    std::to_string(declared_classes) + " declared classes");
    }
    labels.push_back(static_cast<std::uint32_t>(lbl));
    if (fields[d + 1] == "train") {
      splits.push_back(Split::Train);
    } else if (fields[d + 1] == "test") {
      splits.push_back(Split::Test);
    } else {
      row_error(path, line_no, "split must be 'train' or 'test', got '" +
                                   fields[d + 1] + "'");
    }
  }
  if (labels.empty()) throw FormatError(path + ": no data rows");

  std::uint32_t c = declared_classes;
  if (c == 0) {
    for (std::uint32_t l : labels) c = std::max(c, l + 1);
  }

  LatentDataset ds;
  ds.features = Matrix(labels.size(), d);
  ds.features.data = std::move(values);
  ds.labels = std::move(labels);
  ds.split = std::move(splits);
  ds.class_names = default_class_names(c);
  ds.validate();
  return ds;
}

template <typename T>
void read_raw(std::ifstream& in, T* out, std::size_t count,
              const std::string& path) {
  in.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw FormatError(path + ": truncated file");
}

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(T)));
}

LatentDataset load_latf(const std::string& path, std::uint32_t declared_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");

  char magic[4];
  read_raw(in, magic, 4, path);
  if (std::memcmp(magic, "LATF", 4) != 0) {
    throw FormatError(path + ": bad magic bytes (not a LATF file)");
  }
  std::uint32_t header[4];  // version, N, D, C
  read_raw(in, header, 4, path);
  if (header[0] != 1) {
    throw FormatError(path + ": unsupported LATF version " + std::to_string(header[0]));
  }
  const std::uint32_t n = header[1], d = header[2], c = header[3];
  if (n == 0 || d == 0 || c == 0) {
    throw FormatError(path + ": N, D and C must all be positive");
  }
  if (declared_classes != 0 && declared_classes != c) {
    throw FormatError(path + ": file declares " + std::to_string(c) +
                      " classes, caller declared " + std::to_string(declared_classes));
  }

  std::vector<std::uint8_t> flags(n);
  read_raw(in, flags.data(), n, path);
  std::vector<std::uint32_t> labels(n);
  read_raw(in, labels.data(), n, path);
  std::vector<float> feats(static_cast<std::size_t>(n) * d);
  read_raw(in, feats.data(), feats.size(), path);

  LatentDataset ds;
  ds.features = Matrix(n, d);
  ds.labels = std::move(labels);
  ds.split.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (flags[i] > 1) {
      throw FormatError(path + ": row " + std::to_string(i) +
                        ": split flag must be 0 or 1");
    }
    ds.split[i] = flags[i] == 0 ? Split::Train : Split::Test;
    if (ds.labels[i] >= c) {
      throw FormatError(path + ": row " + std::to_string(i) + ": label " +
                        std::to_string(ds.labels[i]) + " out of range for " +
                        std::to_string(c) + " classes");
    }
  }
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (!std::isfinite(feats[i])) {
      throw FormatError(path + ": row " + std::to_string(i / d) +
                        ": non-finite feature value");
    }
    ds.features.data[i] = static_cast<double>(feats[i]);
  }
  ds.class_names = default_class_names(c);
  ds.validate();
  return ds;
}

}  // namespace

LatentDataset load_latents(const std::string& path, DataFormat format,
                           std::uint32_t declared_classes) {
  return format == DataFormat::Csv ? load_csv(path, declared_classes)
                                   : load_latf(path, declared_classes);
}

void save_latents(const LatentDataset& ds, const std::string& path,
                  DataFormat format) {
  ds.validate();
  if (format == DataFormat::Csv) {
    std::ofstream out(path);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.precision(17);
    for (std::size_t j = 0; j < ds.dim(); ++j) out << "f" << j << ",";
    out << "label,split\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < ds.dim(); ++j) out << ds.features(i, j) << ",";
      out << ds.labels[i] << ","
          << (ds.split[i] == Split::Train ? "train" : "test") << "\n";
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("LATF", 4);
  const std::uint32_t header[4] = {1u, static_cast<std::uint32_t>(ds.size()),
                                   static_cast<std::uint32_t>(ds.dim()),
                                   static_cast<std::uint32_t>(ds.num_classes())};
  write_raw(out, header, 4);
  std::vector<std::uint8_t> flags(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    flags[i] = ds.split[i] == Split::Train ? 0 : 1;
  }
  write_raw(out, flags.data(), flags.size());
  write_raw(out, ds.labels.data(), ds.labels.size());
  std::vector<float> feats(ds.features.data.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    feats[i] = static_cast<float>(ds.features.data[i]);
  }
  write_raw(out, feats.data(), feats.size());
}

LatentDataset gen_synthetic(const SynthSpec& spec) {
  if (spec.classes == 0 || spec.dim == 0 || spec.per_class == 0) {
    throw InvalidInputError("gen_synthetic: counts must all be >= 1");
  }
  if (!(spec.cluster_stdev > 0.0)) {
    throw InvalidInputError("gen_synthetic: cluster_stdev must be > 0");
  }
  Rng rng(spec.seed);

  Matrix means(spec.classes, spec.dim);
  for (double& v : means.data) v = spec.cluster_mean_scale * rng.normal();

  const std::size_t n = static_cast<std::size_t>(spec.classes) * spec.per_class;
  LatentDataset ds;
  ds.features = Matrix(n, spec.dim);
  ds.labels.resize(n);
  ds.split.resize(n);
  ds.class_names = default_class_names(spec.classes);

  const std::uint32_t train_per_class =
      std::max<std::uint32_t>(1, spec.per_class * 4 / 5);
  std::size_t row = 0;
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t k = 0; k < spec.per_class; ++k, ++row) {
      for (std::uint32_t j = 0; j < spec.dim; ++j) {
        ds.features(row, j) = means(c, j) + spec.cluster_stdev * rng.normal();
      }
      ds.labels[row] = c;
      ds.split[row] = k < train_per_class ? Split::Train : Split::Test;
    }
  }
  return ds;
}

namespace {

LatentDataset take_rows(const LatentDataset& ds,
                        const std::vector<std::size_t>& rows,
                        const std::vector<std::string>& names,
                        const std::vector<std::uint32_t>& label_of_row) {
  LatentDataset out;
  out.features = Matrix(rows.size(), ds.dim());
  out.labels.resize(rows.size());
  out.split.resize(rows.size());
  out.class_names = names;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy(ds.features.row(r).begin(), ds.features.row(r).end(),
              out.features.row(i).begin());
    out.labels[i] = label_of_row[r];
    out.split[i] = ds.split[r];
  }
  return out;
}

}  // namespace

OODSplit make_ood_split(const LatentDataset& ds, OodMode mode) {
  ds.validate();
  const std::size_t c = ds.num_classes();
  if (c < 2) throw InvalidInputError("make_ood_split: need at least 2 classes");

  std::vector<std::size_t> train_counts(c, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] == Split::Train) ++train_counts[ds.labels[i]];
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (train_counts[k] == 0) {
      throw InvalidInputError("make_ood_split: class " + std::to_string(k) +
                              " has no train rows");
    }
  }

  // Ties go to the lowest class index; strict comparison preserves that.
  std::uint32_t held = 0;
  for (std::uint32_t k = 1; k < c; ++k) {
    const bool better = mode == OodMode::Min ? train_counts[k] < train_counts[held]
                                             : train_counts[k] > train_counts[held];
    if (better) held = k;
  }

  OODSplit out;
  out.held_out_class = held;
  out.mode = mode;
  std::vector<std::uint32_t> new_label(c, 0);
  std::vector<std::string> kept_names;
  for (std::uint32_t k = 0; k < c; ++k) {
    if (k == held) continue;
    new_label[k] = static_cast<std::uint32_t>(out.kept_classes.size());
    out.kept_classes.push_back(k);
    kept_names.push_back(ds.class_names[k]);
  }

  std::vector<std::size_t> train_rows, test_rows, ood_rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == held) {
      ood_rows.push_back(i);
    } else if (ds.split[i] == Split::Train) {
      train_rows.push_back(i);
    } else {
      test_rows.push_back(i);
    }
  }

  std::vector<std::uint32_t> relabeled(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) relabeled[i] = new_label[ds.labels[i]];
  out.in_train = take_rows(ds, train_rows, kept_names, relabeled);
  out.in_test = take_rows(ds, test_rows, kept_names, relabeled);

  // The OOD pool keeps a single-class dataset so its invariants still hold.
  std::vector<std::uint32_t> zero(ds.size(), 0);
  out.ood = take_rows(ds, ood_rows, {ds.class_names[held]}, zero);
  return out;
}

}  // namespace lur
