#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccomaml/checkpoint.hpp"
#include "ccomaml/metrics.hpp"
#include "ccomaml_cli/config.hpp"

namespace ccomaml::cli {

/// Knobs that never influence results.
struct Runtime {
  std::size_t threads = 1;
  std::filesystem::path out;  // empty: nothing written
  bool quiet = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;  // means over the epoch's meta-batches
  double val_loss = 0.0;
  double lr_multiplier = 1.0;
};

struct EvalSummary {
  StatSummary accuracy, macro_f1;
  std::vector<EpisodeRecord> episodes;
};

/// Dataset plus class partition resolved from a config.
struct PreparedData {
  Dataset dataset;
  SplitPlan split;
  std::vector<std::string> warnings;
};

PreparedData prepare_data(const RunConfig& config);

/// Deterministic episode list: stream `stream` of `seed` over `classes`.
std::vector<Episode> draw_episodes(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec,
                                   std::size_t count, std::uint64_t seed, std::uint64_t stream);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
};

/// Epoch loop with plateau scheduling and early stopping. Non-finite losses
/// raise NumericalError after dumping the last good state under runtime.out.
TrainResult train_model(const RunConfig& config, const PreparedData& data, const Runtime& runtime,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

EvalSummary summarize(std::vector<EpisodeRecord> records);
EvalSummary evaluate_model(const RunConfig& config, const ParameterSet& theta, const PreparedData& data,
                           const EpisodeSection& episodes, std::uint64_t seed, const Runtime& runtime);

/// Test episodes are drawn from this stream so every method sees the same ones.
inline constexpr std::uint64_t kTestStream = 13;

nlohmann::json to_json(const StatSummary& s);
nlohmann::json to_json(const EvalSummary& e, bool with_episodes = true);
nlohmann::json to_json(const EpochRecord& e);

/// report.json = {schema_version, payload, payload_hash, wall_clock_seconds};
/// the hash covers the payload only.
nlohmann::json make_report(const nlohmann::json& payload, double wall_clock_seconds);
void write_report(const std::filesystem::path& path, const nlohmann::json& report);
/// Parses and checks the hash and, for evaluation payloads, that the
/// aggregate statistics agree with the per-episode records to 1e-12.
nlohmann::json load_report(const std::filesystem::path& path);
void check_report(const nlohmann::json& report);

std::string format_epoch_line(const EpochRecord& e);

}  // namespace ccomaml::cli
