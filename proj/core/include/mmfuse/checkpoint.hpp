#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mmfuse/nn.hpp"

namespace mmfuse {

using CheckpointMeta = std::map<std::string, std::string>;

/// `<stem>.json` manifest (tensor names, shapes, f32, offsets, byte lengths)
/// plus a little-endian `<stem>.bin` blob. `path` may name either file or the stem.
void save_checkpoint(const std::filesystem::path& path, nn::Module<float>& module, const CheckpointMeta& meta = {});

/// Validates every name and shape before touching the module; throws Error
/// naming the first mismatching parameter. Returns the stored metadata.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, nn::Module<float>& module);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// The .json and .bin paths for a stem or either file.
std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& path);
std::filesystem::path checkpoint_blob_path(const std::filesystem::path& path);

}  // namespace mmfuse
