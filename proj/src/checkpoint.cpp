#include "spaen/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "spaen/json_io.hpp"

namespace spaen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

std::string blob_name(const std::string& map_name) { return map_name + ".bin"; }

}  // namespace

void write_blob(const fs::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (double v : values) {
    std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<double> read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 8 != 0) throw std::runtime_error(path.string() + ": truncated blob");
  std::vector<double> values(bytes / 8);
  for (double& v : values) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    v = std::bit_cast<double>(to_le(bits));
  }
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return values;
}

void save_bundle(const ModelBundle& bundle, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  json maps = json::array();
  for (const ParamMap* map : bundle.maps()) {
    write_blob(dir / blob_name(map->name()), map->params());
    maps.push_back({{"name", map->name()},
                    {"file", blob_name(map->name())},
                    {"param_count", map->param_count()},
                    {"input_shape", map->input_shape()},
                    {"output_shape", map->output_shape()},
                    {"trainable", map->trainable()}});
  }
  json manifest{{"format", 1},
                {"config", bundle.config},
                {"seed", bundle.config.seed},
                {"maps", maps},
                {"extra", extra}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error((dir / "manifest.json").string() + ": " + e.what());
  }
}

ModelBundle load_bundle(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  ModelBundle bundle = build_models(manifest.at("config").get<NetConfig>());
  for (ParamMap* map : bundle.mutable_maps()) {
    const fs::path path = dir / blob_name(map->name());
    const std::vector<double> values = read_blob(path);
    if (values.size() != map->param_count()) {
      throw std::runtime_error(path.string() + ": expected " +
                               std::to_string(map->param_count()) + " parameters, found " +
                               std::to_string(values.size()));
    }
    std::memcpy(map->mutable_params().data(), values.data(), values.size() * sizeof(double));
  }
  return bundle;
}

}  // namespace spaen
