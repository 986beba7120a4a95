#include "geobox/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "geobox/error.hpp"

namespace geobox {

namespace {

constexpr double kPivotFloor = 1e-12;
constexpr double kHomogeneousFloor = 1e-12;

Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

void normalize(Mat3& m) {
  const double s = m[2][2];
  if (std::abs(s) < kPivotFloor) return;
  for (auto& row : m)
    for (double& v : row) v /= s;
}

Mat3 invert(const Mat3& m) {
  const double a = m[0][0], b = m[0][1], c = m[0][2];
  const double d = m[1][0], e = m[1][1], f = m[1][2];
  const double g = m[2][0], h = m[2][1], i = m[2][2];
  const double co00 = e * i - f * h;
  const double co01 = -(d * i - f * g);
  const double co02 = d * h - e * g;
  const double det = a * co00 + b * co01 + c * co02;
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(c), std::abs(d), std::abs(e), std::abs(f),
                                  std::abs(g), std::abs(h), std::abs(i)});
  if (!(std::abs(det) > kPivotFloor * scale * scale * scale))
    throw DegenerateCorrespondence("homography matrix is singular");
  Mat3 inv{{{co00, -(b * i - c * h), b * f - c * e},
            {co01, a * i - c * g, -(a * f - c * d)},
            {co02, -(a * h - b * g), a * e - b * d}}};
  for (auto& row : inv)
    for (double& v : row) v /= det;
  normalize(inv);
  return inv;
}

std::array<double, 3> apply(const Mat3& m, double x, double y) {
  return {m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2],
          m[2][0] * x + m[2][1] * y + m[2][2]};
}

}  // namespace

Homography::Homography() : m_(identity3()), inv_(identity3()) {}

Homography Homography::from_matrix(const Mat3& m) {
  Homography h;
  h.m_ = m;
  normalize(h.m_);
  h.inv_ = invert(h.m_);
  return h;
}

Homography Homography::fit(std::span<const Correspondence, 4> pairs) {
  // Unknowns h0..h7 with h8 = 1:
  //   wx = (h0 fx + h1 fy + h2) / (h6 fx + h7 fy + 1)
  //   wy = (h3 fx + h4 fy + h5) / (h6 fx + h7 fy + 1)
  std::array<std::array<double, 9>, 8> a{};
  for (std::size_t k = 0; k < 4; ++k) {
    const double fx = pairs[k].frame.x, fy = pairs[k].frame.y;
    const double wx = pairs[k].world.x, wy = pairs[k].world.y;
    a[2 * k] = {fx, fy, 1, 0, 0, 0, -wx * fx, -wx * fy, wx};
    a[2 * k + 1] = {0, 0, 0, fx, fy, 1, -wy * fx, -wy * fy, wy};
  }
  for (std::size_t col = 0; col < 8; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < kPivotFloor)
      throw DegenerateCorrespondence("calibration points are degenerate (collinear or repeated)");
    std::swap(a[col], a[pivot]);
    for (std::size_t r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double factor = a[r][col] / a[col][col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < 9; ++c) a[r][c] -= factor * a[col][c];
    }
  }
  std::array<double, 8> x{};
  for (std::size_t r = 0; r < 8; ++r) x[r] = a[r][8] / a[r][r];
  return from_matrix({{{x[0], x[1], x[2]}, {x[3], x[4], x[5]}, {x[6], x[7], 1.0}}});
}

WorldPoint Homography::to_world(FramePoint p) const {
  const auto v = apply(m_, p.x, p.y);
  if (std::abs(v[2]) < kHomogeneousFloor) throw PointAtInfinity("frame point maps to infinity");
  return {v[0] / v[2], v[1] / v[2]};
}

FramePoint Homography::to_frame(WorldPoint p) const {
  const auto v = apply(inv_, p.x, p.y);
  if (std::abs(v[2]) < kHomogeneousFloor) throw PointAtInfinity("world point maps to infinity");
  return {v[0] / v[2], v[1] / v[2]};
}

WorldPoint bottom_center_world(const Homography& h, const BoundingBox& b) {
  return h.to_world(b.bottom_center());
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double normalized_distance(const BoundingBox& pred, const BoundingBox& gt) {
  return std::hypot(pred.cx - gt.cx, pred.cy - gt.cy) / std::hypot(gt.w, gt.h);
}

double shape_distance(double w1, double h1, double w2, double h2) {
  return std::max(w1 / w2, w2 / w1) + std::max(h1 / h2, h2 / h1) - 2.0;
}

std::array<Correspondence, 4> parse_calibration(const std::string& text) {
  std::array<Correspondence, 4> out{};
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (n == 4) throw ConfigError("calibration: more than 4 correspondence lines");
    std::istringstream ls(line);
    Correspondence c;
    if (!(ls >> c.frame.x >> c.frame.y >> c.world.x >> c.world.y))
      throw ConfigError("calibration: line " + std::to_string(n + 1) + " is not 'fx fy wx wy'");
    out[n++] = c;
  }
  if (n != 4) throw ConfigError("calibration: expected 4 correspondence lines, got " + std::to_string(n));
  return out;
}

std::array<Correspondence, 4> load_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("calibration file not found: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_calibration(ss.str());
}

std::string format_calibration(std::span<const Correspondence, 4> pairs) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& c : pairs) out << c.frame.x << ' ' << c.frame.y << ' ' << c.world.x << ' ' << c.world.y << '\n';
  return out.str();
}

}  // namespace geobox
