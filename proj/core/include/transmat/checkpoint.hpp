#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "transmat/network.hpp"

namespace transmat {

/// Checkpoint layout: a text header terminated by a line "end", then the raw
/// little-endian float32 payload.
///
///   transmat-checkpoint 1
///   config_hash <16 hex digits>
///   iteration <n>
///   config <key> = <value>           one per network config entry
///   tensor <name> <param|buffer> <d0,d1,...> <offset> <count>
///   end
///
/// Offsets and counts are in floats from the start of the payload.
struct CheckpointHeader {
    uint64_t config_hash = 0;
    int64_t iteration = 0;
    std::vector<std::pair<std::string, std::string>> config;

    struct Entry {
        std::string name;
        bool buffer = false;
        Shape shape;
        int64_t offset = 0;
        int64_t count = 0;
    };
    std::vector<Entry> tensors;

    NetworkConfig network_config() const { return NetworkConfig::from_entries(config); }
};

/// Raised when a checkpoint cannot be used with the requested network.
class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, int64_t iteration);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads every parameter and buffer into `net`. The stored config hash must equal
/// the network's unless `force`; tensor names and shapes must always match.
/// Returns the stored iteration.
int64_t load_checkpoint(const std::filesystem::path& path, Network<float>& net, bool force = false);

}  // namespace transmat
