#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "spaen/nets.hpp"

namespace spaen {

// Raw little-endian float64 arrays.
void write_blob(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_blob(const std::filesystem::path& path);

// Writes one <map>.bin per ParamMap and manifest.json (shapes, config, seed).
// `extra` is merged into the manifest under "extra".
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir,
                 const nlohmann::json& extra = nlohmann::json::object());

// Rebuilds the bundle from the manifest config and loads every blob. Throws
// std::runtime_error on a missing file or a parameter count mismatch.
ModelBundle load_bundle(const std::filesystem::path& dir);

nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace spaen
