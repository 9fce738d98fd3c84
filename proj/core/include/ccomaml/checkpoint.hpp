#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ccomaml/meta_engine.hpp"
#include "ccomaml/optim.hpp"

namespace ccomaml {

struct Checkpoint {
  std::string config_json;  // the run configuration that produced the state
  std::uint64_t config_hash = 0;
  MetaState state;
  PlateauScheduler plateau;
  EarlyStopping early_stop;
  std::uint64_t epoch = 0;
  std::string rng_state;  // textual std::mt19937_64 state
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary container: magic "CCMLCKPT", version, then fields.
/// Doubles are stored bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws DataError on a missing, truncated or foreign file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccomaml
