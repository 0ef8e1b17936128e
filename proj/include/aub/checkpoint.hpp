#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "aub/alignment.hpp"

namespace aub {

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::size_t best_epoch = 0;
};

/// Checkpoint file layout: one line of compact JSON (architecture specs, seed,
/// fingerprint, per-component parameter lengths) terminated by '\n', followed
/// by every parameter as raw little-endian float64 (flows in order, then the
/// density). save(load(file)) reproduces the file byte for byte.
void save_checkpoint(const std::filesystem::path& path, const AlignmentModel& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    AlignmentModel model;
    CheckpointMeta meta;
    nlohmann::json header;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aub
