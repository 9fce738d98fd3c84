#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccomaml_cli/config.hpp"
#include "ccomaml_cli/run.hpp"

namespace ccomaml::cli {

/// Flags shared by every verb.
struct CommonOptions {
  std::filesystem::path config;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::size_t threads = 1;
  std::optional<std::size_t> episodes;  // test episode count
  bool quiet = false;

  Runtime runtime() const { return {threads, out, quiet}; }
};

/// What a verb produces before anything touches the disk.
struct CommandOutput {
  nlohmann::json payload;
  std::string table_csv;
};

RunConfig resolve_config(const CommonOptions& common);

CommandOutput run_train(const RunConfig& config, const Runtime& runtime);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::optional<std::size_t> n_way, k_shot, q_query;
};
CommandOutput run_eval(const CommonOptions& common, const EvalOptions& options);

struct CompareOptions {
  std::vector<std::string> methods;  // empty: every method
  std::string reference = "CCoMAML";
  std::size_t runs = 1;
  bool reseed_splits = false;
};
CommandOutput run_compare(const RunConfig& config, const CompareOptions& options, const Runtime& runtime);

struct AblateOptions {
  std::string kind;  // gamma | strategy | fc | conv | kshot
  std::vector<std::string> values;  // empty: default grid
  bool retrain = false;             // kshot: train one model per K
};
/// Default sweep grid for `kind`; ConfigError for unknown kinds.
std::vector<std::string> default_grid(const std::string& kind, const RunConfig& config);
CommandOutput run_ablate(const RunConfig& config, const AblateOptions& options, const Runtime& runtime);

struct GradcheckCommandOptions {
  std::size_t trials = 100;
  std::size_t hvp_trials = 10;
  std::string inject_sign_error;
};
/// payload["passed"] tells whether every check held.
CommandOutput run_gradcheck(const GradcheckCommandOptions& options, std::uint64_t seed);

struct SynthOptions {
  std::optional<std::size_t> classes, per_class, size, channels;
  std::optional<double> noise, jitter;
};
CommandOutput run_synth(const RunConfig& config, const SynthOptions& options, const std::filesystem::path& out);

/// Writes report.json (and table.csv when non-empty) under `out`.
void write_outputs(const std::filesystem::path& out, const CommandOutput& output, double wall_clock_seconds);

}  // namespace ccomaml::cli
