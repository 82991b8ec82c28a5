#pragma once

#include <string>

#include <json.hpp>

#include "lur/heads.hpp"

namespace lur {

nlohmann::json head_config_to_json(const HeadConfig& config);
HeadConfig head_config_from_json(const nlohmann::json& j);

/// Writes the parameter blob ("LURH", f64 little-endian arrays) at `path`
/// and the originating config as JSON at `path` + ".json".
void save_head(const HeadModel& model, const std::string& path);

/// Loads a blob + sidecar pair written by save_head.
HeadModel load_head(const std::string& path);

std::string to_string(ScoreEstimator e);
ScoreEstimator score_estimator_from_string(const std::string& s);
std::string to_string(BandwidthMode m);
BandwidthMode bandwidth_mode_from_string(const std::string& s);
std::string to_string(RepulsionSpace s);
RepulsionSpace repulsion_space_from_string(const std::string& s);

}  // namespace lur
