#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geobox/geometry.hpp"

namespace geobox {

/// One tracked key point. Positions cover the contiguous frame interval
/// [first_frame, first_frame + positions.size()).
struct FlowTrack {
  std::int64_t id = 0;
  int first_frame = 0;
  std::vector<FramePoint> positions;
  std::vector<std::uint8_t> moving;  // one flag per position

  int last_frame() const { return first_frame + static_cast<int>(positions.size()) - 1; }
  bool covers(int frame) const { return frame >= first_frame && frame <= last_frame(); }
  const FramePoint& at(int frame) const { return positions[static_cast<std::size_t>(frame - first_frame)]; }
  bool moving_at(int frame) const { return moving[static_cast<std::size_t>(frame - first_frame)] != 0; }

  friend bool operator==(const FlowTrack&, const FlowTrack&) = default;
};

struct GpsFix {
  double t = 0.0;  // seconds from clip start
  WorldPoint p;
  friend bool operator==(const GpsFix&, const GpsFix&) = default;
};

struct GpsTrace {
  std::vector<GpsFix> fixes;
  friend bool operator==(const GpsTrace&, const GpsTrace&) = default;
};

/// Knobs a clip was generated with; drives the per-factor breakdown in reports.
struct ScenarioFactors {
  double gps_sigma_m = 0.0;
  double gps_bias_m = 0.0;
  double gps_lag_s = 0.0;
  int distractors = 0;
  bool shadow = false;
  friend bool operator==(const ScenarioFactors&, const ScenarioFactors&) = default;
};

struct Clip {
  std::string id;
  int fps = 10;
  int n_frames = 0;
  int frame_width = 640;
  int frame_height = 360;
  std::array<Correspondence, 4> calibration{};
  Homography homography;
  std::vector<FlowTrack> flow_tracks;
  GpsTrace gps;
  // Empty when no ground truth is known; otherwise one entry per frame.
  std::vector<std::optional<BoundingBox>> ground_truth;
  ScenarioFactors factors;

  bool has_ground_truth() const { return !ground_truth.empty(); }
};

}  // namespace geobox
