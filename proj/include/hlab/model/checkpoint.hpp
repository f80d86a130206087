#pragma once

#include <filesystem>

#include "hlab/model/model.hpp"
#include "json.hpp"

namespace hlab::model {

// File layout: 8-byte magic, u32 version, u64 header length, UTF-8 JSON header
// {format_version, config, arrays: [{name, dtype, shape, offset}], meta}, then
// contiguous little-endian f32 arrays. Offsets are relative to the first byte
// after the header.
inline constexpr char kCheckpointMagic[8] = {'H', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    std::uint32_t version = 0;
    ModelConfig config;
    nlohmann::json manifest;  // array of {name, dtype, shape, offset}
    nlohmann::json meta;      // caller-supplied, may be null
};

void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& meta = nullptr);
Model load_checkpoint(const std::filesystem::path& path);
// Reads only the header; arrays are not touched.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace hlab::model
