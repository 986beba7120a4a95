#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

namespace geobox {

/// Pixel coordinates in a video frame (y grows downward).
struct FramePoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const FramePoint&, const FramePoint&) = default;
};

/// Ground-plane coordinates in meters.
struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const WorldPoint&, const WorldPoint&) = default;
};

inline double distance(WorldPoint a, WorldPoint b) { return std::hypot(a.x - b.x, a.y - b.y); }
inline double distance(FramePoint a, FramePoint b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned box stored as center and extent, in pixels.
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;

  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  double bottom() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
  FramePoint bottom_center() const { return {cx, cy + 0.5 * h}; }
  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0.0 &&
           h > 0.0;
  }

  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

struct Correspondence {
  FramePoint frame;
  WorldPoint world;
};

/// Perspective transform between frame pixels and the world ground plane.
class Homography {
 public:
  Homography();  // identity

  /// Builds from a frame->world matrix; throws DegenerateCorrespondence if singular.
  static Homography from_matrix(const Mat3& m);

  /// Exact fit through four correspondences (direct 8x8 solve).
  static Homography fit(std::span<const Correspondence, 4> pairs);

  WorldPoint to_world(FramePoint p) const;
  FramePoint to_frame(WorldPoint p) const;

  const Mat3& matrix() const { return m_; }
  const Mat3& inverse() const { return inv_; }

 private:
  Mat3 m_;
  Mat3 inv_;
};

inline WorldPoint frame_to_world(const Homography& h, FramePoint p) { return h.to_world(p); }
inline FramePoint world_to_frame(const Homography& h, WorldPoint p) { return h.to_frame(p); }

/// World position of a box's ground contact point (bottom-center pixel).
WorldPoint bottom_center_world(const Homography& h, const BoundingBox& b);

/// Intersection over union; touching boxes have IoU 0.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Center distance divided by the ground-truth box diagonal.
double normalized_distance(const BoundingBox& pred, const BoundingBox& gt);

/// max(w1/w2, w2/w1) + max(h1/h2, h2/h1) - 2
double shape_distance(double w1, double h1, double w2, double h2);

/// Reads four "fx fy wx wy" lines. Throws ConfigError on malformed input.
std::array<Correspondence, 4> parse_calibration(const std::string& text);
std::array<Correspondence, 4> load_calibration(const std::string& path);
std::string format_calibration(std::span<const Correspondence, 4> pairs);

}  // namespace geobox
