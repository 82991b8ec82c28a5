#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lur/matrix.hpp"

namespace lur {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// A set of latent feature vectors with class labels and train/test tags.
/// Immutable once constructed; the sole input modality of the library.
struct LatentDataset {
  Matrix features;                       // N x D
  std::vector<std::uint32_t> labels;     // N, each < num_classes()
  std::vector<std::string> class_names;  // C
  std::vector<Split> split;              // N

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  std::size_t num_classes() const { return class_names.size(); }

  std::vector<std::size_t> indices_of(Split s) const;

  /// Throws InvalidInputError if any structural invariant is broken.
  void validate() const;
};

enum class DataFormat { Csv, Latf };

/// Picks Csv for paths ending in ".csv", Latf otherwise.
DataFormat format_from_path(const std::string& path);

/// Loads a dataset. `declared_classes` pins C for formats that do not carry
/// it (CSV); 0 means infer C as max(label)+1. Violations raise FormatError
/// naming the offending row.
LatentDataset load_latents(const std::string& path, DataFormat format,
                           std::uint32_t declared_classes = 0);

void save_latents(const LatentDataset& ds, const std::string& path,
                  DataFormat format);

struct SynthSpec {
  std::uint32_t classes = 2;
  std::uint32_t dim = 2;
  std::uint32_t per_class = 100;
  double cluster_mean_scale = 3.0;
  double cluster_stdev = 0.5;
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian class clusters: one mean per class drawn from
/// N(0, cluster_mean_scale^2 I), rows from N(mean_c, cluster_stdev^2 I).
/// Deterministic in the seed; per class the leading 80% of rows are tagged
/// train and the rest test.
LatentDataset gen_synthetic(const SynthSpec& spec);

enum class OodMode { Min, Max };

/// Class-holdout split: the held-out class is removed from training and
/// evaluation and pooled (train- and test-origin rows alike) as the
/// out-of-distribution set.
struct OODSplit {
  LatentDataset in_train;
  LatentDataset in_test;
  LatentDataset ood;
  std::uint32_t held_out_class = 0;          // original index
  OodMode mode = OodMode::Min;
  std::vector<std::uint32_t> kept_classes;   // new label -> original label
};

/// Holds out the most (mode=Max) or least (mode=Min) frequent class, counted
/// over train rows, ties broken by the lowest class index. Remaining labels
/// are re-indexed densely. A class with zero train rows is an error.
OODSplit make_ood_split(const LatentDataset& ds, OodMode mode);

}  // namespace lur
