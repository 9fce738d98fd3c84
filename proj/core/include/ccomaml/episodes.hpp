#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccomaml/tensor.hpp"

namespace ccomaml {

enum class Provenance { Synthetic, Folder, Merged };
std::string to_string(Provenance p);

struct Item {
  Tensor image;  // C×H×W
  int class_id = 0;
};

/// Immutable labelled image collection.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Item> items, Provenance provenance, std::vector<std::string> class_names = {});

  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t num_classes() const { return by_class_.size(); }
  Provenance provenance() const { return provenance_; }
  Shape image_shape() const;

  std::vector<int> class_ids() const;
  const std::vector<std::size_t>& items_of(int class_id) const;
  std::size_t class_size(int class_id) const { return items_of(class_id).size(); }
  std::string class_name(int class_id) const;
  /// FNV-1a over labels and pixel bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<Item> items_;
  Provenance provenance_ = Provenance::Synthetic;
  std::map<int, std::vector<std::size_t>> by_class_;
  std::map<int, std::string> names_;
};

/// Knobs for the fine-grained ridge-texture generator. Every class owns a
/// pattern (two spatial frequencies, orientation, phase, ridge amplitude and a
/// slight colour tint); samples add an affine warp and pixel noise.
struct SyntheticParams {
  std::size_t classes = 30;
  std::size_t per_class = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 7;
  double noise = 0.08;   // std-dev of additive pixel noise
  double jitter = 1.0;   // scales rotation/scale/translation warp
  int first_class = 0;   // id (and pattern seed) of the first class
};

/// Pixels are quantised to multiples of 1/255 so an exported tree reloads exactly.
Dataset generate_synthetic(const SyntheticParams& params);

struct FolderLoadOptions {
  std::size_t image_size = 224;
  std::size_t channels = 3;
  bool standardize = true;
};

struct FolderLoadResult {
  Dataset dataset;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// root/<class>/<images>; classes numbered in lexicographic directory order.
FolderLoadResult load_folder(const std::filesystem::path& root, const FolderLoadOptions& options = {});
/// Writes root/<class_name>/<index>.png (8-bit).
void export_folder(const Dataset& dataset, const std::filesystem::path& root);

/// Appends `b` with class ids shifted past `a`'s. Returns the id offset via `offset`.
Dataset merge_datasets(const Dataset& a, const Dataset& b, int& offset);

struct ChannelStats {
  std::vector<double> mean, stddev;
};
ChannelStats channel_stats(const Dataset& dataset, std::span<const int> classes);
Dataset standardize(const Dataset& dataset, const ChannelStats& stats);

struct SplitFractions {
  double train = 0.5, val = 0.0, test = 0.5;
};

struct SplitPlan {
  std::vector<int> train, val, test;
};

/// Shuffles class ids with `seed` and partitions them. Non-empty partitions
/// must hold at least `min_classes`.
SplitPlan make_split(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed,
                     std::size_t min_classes);
SplitPlan make_split_counts(const Dataset& dataset, std::size_t train, std::size_t val, std::size_t test,
                            std::uint64_t seed, std::size_t min_classes);
/// Cross-dataset mode: train classes from `a_classes`, test classes from `b_classes`.
SplitPlan make_cross_split(std::span<const int> a_classes, std::span<const int> b_classes);
/// Moves round(fraction·|train|) training classes to validation.
SplitPlan hold_out_validation(const SplitPlan& plan, double fraction, std::uint64_t seed);
void check_split(const SplitPlan& plan);

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t q_query = 15;
  std::uint64_t seed = 0;
  void validate() const;
};

struct Episode {
  Tensor support_images;  // (N·K)×C×H×W, grouped by local label
  std::vector<int> support_labels;
  Tensor query_images;  // (N·Q)×C×H×W
  std::vector<int> query_labels;
  std::vector<int> class_map;  // local label → global class id
  std::vector<std::size_t> support_items, query_items;
};

/// Classes of `classes` owning at least K+Q items.
std::vector<int> eligible_classes(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec);

/// Draws an N-way K-shot episode from `classes` without replacement inside
/// each class. Throws DataError naming the eligible count when too few classes qualify.
Episode sample_episode(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec,
                       std::mt19937_64& rng);

/// Q clamped to the smallest class capacity beyond K, never below 1.
EpisodeSpec clamp_queries(const EpisodeSpec& spec, const Dataset& dataset, std::span<const int> classes);

/// Independent rng stream for (seed, stream) pairs.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

}  // namespace ccomaml
