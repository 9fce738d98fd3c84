#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ccomaml/backbones.hpp"
#include "ccomaml/episodes.hpp"
#include "ccomaml/meta_engine.hpp"

namespace ccomaml::cli {

struct EpisodeSection {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t q_query = 15;
  std::size_t count = 0;  // episodes per evaluation (val/test only)

  EpisodeSpec spec() const { return {n_way, k_shot, q_query, 0}; }
};

struct DataSection {
  std::string source = "synthetic";  // synthetic | folder | cross
  SyntheticParams synthetic;
  std::string folder;                 // folder source
  std::string train_folder, test_folder;  // cross source
  bool standardize = true;
  SplitFractions split;
  double val_holdout = 0.2;  // share of train classes moved to validation when val is empty
  std::uint64_t split_seed = 0;
};

struct TrainingSection {
  std::size_t epochs = 200;
  std::size_t meta_batches_per_epoch = 100;
  std::size_t plateau_patience = 10;
  double plateau_factor = 0.1;
  std::size_t early_stop_patience = 20;
};

/// Everything a run depends on. Runtime-only knobs (thread count, output
/// directory) are deliberately absent so they cannot change the hash.
struct RunConfig {
  MethodId method = MethodId::CCoMAML;
  std::uint64_t seed = 1;
  BackboneSpec backbone;
  CoLearnerSpec colearner;
  MetaConfig meta;
  EpisodeSection train{5, 5, 15, 0};
  EpisodeSection val{5, 5, 15, 20};
  EpisodeSection test{5, 5, 15, 600};
  DataSection data;
  TrainingSection training;

  void validate() const;
  /// The co-learner actually built: CML forces the flatten+FC strategy S1.
  CoLearnerSpec effective_colearner() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict: unknown keys and type mismatches throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// FNV-1a over the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& config);
std::string hex64(std::uint64_t v);
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace ccomaml::cli
