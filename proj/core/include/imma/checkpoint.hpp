#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imma/adaptation.hpp"

namespace imma {

/// `imma-ckpt-v1`: JSON document with base64 little-endian f32 payloads.
/// Round-trips every float bit-exactly.
inline constexpr const char* kCheckpointFormat = "imma-ckpt-v1";

struct CheckpointMeta {
    std::string role;    // pretrained | erased | immunized | adapter | classifier
    std::string method;  // adaptation / inner method, when applicable
    std::string target;  // concept name, when applicable
    std::uint64_t seed = 0;
    std::string command;           // creating command line
    std::vector<int> token_ids;    // adapter checkpoints
    int base_rows = 0;             // adapter checkpoints
};

void save_checkpoint(const ParamStore& store, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
    ParamStore store;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Metadata without decoding any tensor payload.
CheckpointMeta load_checkpoint_meta(const std::filesystem::path& path);

/// Adapter round-trip through the checkpoint store.
void save_adapter(const AdapterSet& adapter, CheckpointMeta meta, const std::filesystem::path& path);
AdapterSet load_adapter(const std::filesystem::path& path, const AdaptMethod& method);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

} // namespace imma
