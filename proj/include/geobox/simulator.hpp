#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geobox/clip.hpp"
#include "geobox/random.hpp"

namespace geobox {

struct ObjectKind {
  std::string name;
  double width_m = 0.6;
  double height_m = 1.7;
  double speed_min = 0.8;  // m/s
  double speed_max = 1.6;
};

struct Waypoint {
  WorldPoint p;
  double dwell_s = 0.0;  // pause after arriving
};

struct ObjectSpec {
  std::string kind = "person";
  bool target = false;
  double speed = 0.0;  // 0 draws from the kind's range
  double start_s = 0.0;
  bool loop = false;  // ping-pong along the waypoints until the clip ends
  std::vector<Waypoint> waypoints;
};

struct GpsNoiseSpec {
  double gaussian_sigma_m = 0.0;
  WorldPoint constant_bias_m{};
  double lag_s = 0.0;  // exponential smoothing time constant
  double stick_prob = 0.0;
  double rate_hz = 1.0;
};

struct FlowNoiseSpec {
  double jitter_px = 0.0;
  double dropout = 0.0;  // per-frame probability a track is lost (and respawned)
  int flows_min = 20;
  int flows_max = 30;
  int clutter_per_frame = 0;  // spurious short-lived moving points
};

struct ScenarioSpec {
  std::uint64_t seed = 1;
  double duration_s = 40.0;
  int fps = 10;
  int frame_width = 640;
  int frame_height = 360;
  std::array<Correspondence, 4> calibration;
  int n_objects = 1;
  std::vector<ObjectKind> kinds;
  std::vector<ObjectSpec> objects;  // explicit objects; generated from the seed when empty
  double near_fraction = 0.5;       // share of generated distractors that shadow the target's path
  bool shadow = false;              // target drags a rigidly attached flow group
  GpsNoiseSpec gps_noise;
  FlowNoiseSpec flow_noise;

  ScenarioSpec();
};

std::array<Correspondence, 4> default_calibration();
std::vector<ObjectKind> default_kinds();

/// Throws InvalidSpec when the spec violates its invariants.
void validate(const ScenarioSpec& spec);

/// Deterministic for a fixed spec (seed included).
Clip generate_scenario(const ScenarioSpec& spec);

/// Fixes every 1/rate_hz seconds from a per-frame ground path: bias and white
/// noise, then exponential smoothing with time constant lag_s, then "stuck"
/// fixes that repeat the previous output.
GpsTrace simulate_gps(const std::vector<WorldPoint>& true_path, int fps, const GpsNoiseSpec& noise, Rng& rng);

struct FlowEmitOptions {
  FlowNoiseSpec noise;
  int fps = 10;
  int frame_width = 640;
  int frame_height = 360;
  double motion_threshold_px = 2.0;
};

/// footprints[object][frame]; absent frames mean the object is not visible.
/// Track ids are assigned sequentially starting at first_id.
std::vector<FlowTrack> emit_flow_tracks(const std::vector<std::vector<std::optional<BoundingBox>>>& footprints,
                                        const FlowEmitOptions& options, Rng& rng, std::int64_t first_id = 0);

/// Frame box of an upright object standing at a world position.
BoundingBox project_object(const Homography& h, WorldPoint ground, double width_m, double height_m);

}  // namespace geobox
