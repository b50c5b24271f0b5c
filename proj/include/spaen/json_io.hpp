#pragma once

// JSON (de)serialization of the configuration structs, for manifests and
// config.json echoes.

#include "json.hpp"
#include "spaen/data.hpp"
#include "spaen/nets.hpp"
#include "spaen/objectives.hpp"

namespace spaen {

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

void to_json(nlohmann::json& j, const HyperParams& h);
void from_json(const nlohmann::json& j, HyperParams& h);

void to_json(nlohmann::json& j, const LossBreakdown& l);

}  // namespace spaen
