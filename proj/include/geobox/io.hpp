#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geobox/evaluation.hpp"
#include "geobox/matching.hpp"
#include "geobox/simulator.hpp"
#include "json.hpp"

namespace geobox {

/// Whole file as a string; ConfigError naming the path when unreadable.
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
nlohmann::json read_json(const std::string& path);
/// One JSON value per non-blank line.
std::vector<nlohmann::json> read_jsonl(const std::string& path);
std::string to_jsonl(const std::vector<nlohmann::json>& rows);

// Config parsing. Missing keys keep their defaults; type errors throw
// InvalidSpec with the offending key path (for example "gps_noise.lag_s").
ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioSpec& spec);
SuiteSpec suite_from_json(const nlohmann::json& j);
HmmParams params_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const HmmParams& p);

/// Header line, then one record per frame with flow points [id, x, y, moving]
/// and the GPS fixes [t, x, y] whose timestamps fall inside that frame.
std::vector<nlohmann::json> clip_to_jsonl(const Clip& clip);
/// Inverse of clip_to_jsonl (ground truth stays empty).
Clip clip_from_jsonl(const std::vector<nlohmann::json>& rows);

std::vector<nlohmann::json> ground_truth_to_jsonl(const std::vector<std::optional<BoundingBox>>& gt);
std::vector<std::optional<BoundingBox>> ground_truth_from_jsonl(const std::vector<nlohmann::json>& rows, int n_frames);

std::vector<nlohmann::json> gps_to_jsonl(const GpsTrace& gps);
GpsTrace gps_from_jsonl(const std::vector<nlohmann::json>& rows);

/// Ingest mode: per-frame flow records {"frame", "points": [[id, x, y(, moving)], ...]}.
/// Missing moving flags are computed from the tracks.
std::vector<FlowTrack> flows_from_jsonl(const std::vector<nlohmann::json>& rows, int fps, int* n_frames);

}  // namespace geobox
