#include <array>
#include <cmath>

#include "doctest.h"
#include "geobox/error.hpp"
#include "geobox/geometry.hpp"
#include "geobox/random.hpp"
#include "oracles.hpp"

using namespace geobox;

namespace {

std::array<Correspondence, 4> square_to(std::array<WorldPoint, 4> w) {
  return {{{{0, 0}, w[0]}, {{1, 0}, w[1]}, {{1, 1}, w[2]}, {{0, 1}, w[3]}}};
}

// The trapezoid's "far" edge is the short one at y = 1.
const std::array<WorldPoint, 4> kTrapezoid{{{0, 0}, {1, 0}, {0.8, 1}, {0.2, 1}}};

}  // namespace

TEST_CASE("fit: unit square onto itself is the identity") {
  const auto h = Homography::fit(square_to({{{0, 0}, {1, 0}, {1, 1}, {0, 1}}}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(h.matrix()[i][j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("fit: doubled square gives diag(2,2,1)") {
  const auto h = Homography::fit(square_to({{{0, 0}, {2, 0}, {2, 2}, {0, 2}}}));
  const Mat3& m = h.matrix();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double want = i != j ? 0.0 : (i == 2 ? 1.0 : 2.0);
      CHECK(std::abs(m[i][j] / m[2][2] - want) < 1e-12);
    }
}

TEST_CASE("fit: trapezoid corners round-trip and agree with an independent solve") {
  const auto pairs = square_to(kTrapezoid);
  const auto h = Homography::fit(pairs);
  for (const auto& c : pairs) {
    const WorldPoint w = h.to_world(c.frame);
    CHECK(std::abs(w.x - c.world.x) < 1e-6);
    CHECK(std::abs(w.y - c.world.y) < 1e-6);
    const FramePoint back = h.to_frame(c.world);
    CHECK(std::abs(back.x - c.frame.x) < 1e-6);
    CHECK(std::abs(back.y - c.frame.y) < 1e-6);
  }
  const auto ref = oracle::homography({{{0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 0.8, 1}, {0, 1, 0.2, 1}}});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(std::abs(h.matrix()[i][j] / h.matrix()[2][2] - ref[3 * i + j]) < 1e-9);
}

TEST_CASE("fit: collinear correspondences are degenerate") {
  const std::array<Correspondence, 4> bad{{{{0, 0}, {0, 0}}, {{1, 1}, {1, 0}}, {{2, 2}, {1, 1}}, {{3, 3}, {0, 1}}}};
  CHECK_THROWS_AS(Homography::fit(bad), DegenerateCorrespondence);
}

TEST_CASE("to_world: identity and pure scaling") {
  const Homography id;
  CHECK(id.to_world({5, 7}) == WorldPoint{5, 7});
  const auto diag2 = Homography::from_matrix({{{2, 0, 0}, {0, 2, 0}, {0, 0, 1}}});
  const WorldPoint p = diag2.to_world({3, 4});
  CHECK(p.x == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("to_world: trapezoid maps (0.5, 1) to the far-edge midpoint") {
  const auto h = Homography::fit(square_to(kTrapezoid));
  const WorldPoint p = h.to_world({0.5, 1});
  const auto ref = oracle::apply(oracle::homography({{{0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 0.8, 1}, {0, 1, 0.2, 1}}}),
                                 0.5, 1);
  CHECK(std::abs(p.x - 0.5) < 1e-9);
  CHECK(std::abs(p.y - 1.0) < 1e-9);
  CHECK(std::abs(p.x - ref[0]) < 1e-9);
  CHECK(std::abs(p.y - ref[1]) < 1e-9);
}

TEST_CASE("to_world: points on the horizon line are at infinity") {
  // w = x + y - 1 vanishes on the line x + y = 1.
  const auto h = Homography::from_matrix({{{1, 0, 0}, {0, 1, 0}, {1, 1, -1}}});
  CHECK_THROWS_AS(h.to_world({0.5, 0.5}), PointAtInfinity);
}

TEST_CASE("bottom_center_world") {
  const BoundingBox b{10, 10, 4, 6};
  const WorldPoint p = bottom_center_world(Homography{}, b);
  CHECK(p.x == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(13.0).epsilon(1e-12));
  const WorldPoint q = bottom_center_world(Homography::from_matrix({{{2, 0, 0}, {0, 2, 0}, {0, 0, 1}}}), b);
  CHECK(q.x == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(q.y == doctest::Approx(26.0).epsilon(1e-12));

  // Box whose bottom-center sits on the frame's bottom-center under the trapezoid map.
  const auto h = Homography::fit(square_to(kTrapezoid));
  const WorldPoint r = bottom_center_world(h, {0.5, 0.9, 0.2, 0.2});
  const auto ref = oracle::apply(oracle::homography({{{0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 0.8, 1}, {0, 1, 0.2, 1}}}),
                                 0.5, 1.0);
  CHECK(std::abs(r.x - ref[0]) < 1e-6);
  CHECK(std::abs(r.y - ref[1]) < 1e-6);
}

TEST_CASE("homography round trip over the frame interior") {
  const auto h = Homography::fit(square_to(kTrapezoid));
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const FramePoint p{rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
    const FramePoint q = h.to_frame(h.to_world(p));
    CHECK(std::abs(q.x - p.x) < 1e-6);
    CHECK(std::abs(q.y - p.y) < 1e-6);
  }
}

TEST_CASE("iou examples") {
  const BoundingBox a = BoundingBox::from_corners(0, 0, 2, 2);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BoundingBox::from_corners(5, 5, 6, 6)) == 0.0);
  CHECK(iou(a, BoundingBox::from_corners(2, 0, 4, 2)) == 0.0);  // touching
  CHECK(std::abs(iou(a, BoundingBox::from_corners(1, 1, 3, 3)) - 1.0 / 7.0) < 1e-12);
}

TEST_CASE("iou properties on random boxes") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const BoundingBox a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    const BoundingBox b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    const double u = iou(a, b);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
    CHECK(u == iou(b, a));
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("normalized distance examples") {
  const BoundingBox gt{10, 10, 3, 4};
  CHECK(normalized_distance({10, 10, 7, 7}, gt) == 0.0);
  CHECK(std::abs(normalized_distance({13, 14, 3, 4}, gt) - 1.0) < 1e-12);
  CHECK(std::abs(normalized_distance({10, 12.5, 3, 4}, gt) - 0.5) < 1e-12);
}

TEST_CASE("shape distance examples and properties") {
  CHECK(shape_distance(2, 3, 2, 3) == 0.0);
  CHECK(std::abs(shape_distance(2, 2, 4, 2) - 1.0) < 1e-12);
  CHECK(std::abs(shape_distance(1, 1, 2, 3) - 3.0) < 1e-12);
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double w1 = rng.uniform(0.1, 9), h1 = rng.uniform(0.1, 9), w2 = rng.uniform(0.1, 9), h2 = rng.uniform(0.1, 9);
    CHECK(shape_distance(w1, h1, w2, h2) >= 0.0);
    CHECK(shape_distance(w1, h1, w2, h2) == doctest::Approx(shape_distance(w2, h2, w1, h1)).epsilon(1e-12));
    CHECK(shape_distance(w1, h1, w1, h1) == 0.0);
  }
}

TEST_CASE("calibration parsing") {
  const auto pairs = parse_calibration("0 0 0 0\n640 0 10 0\n640 360 10 20\n0 360 0 20\n");
  CHECK(pairs[2].frame == FramePoint{640, 360});
  CHECK(pairs[2].world == WorldPoint{10, 20});
  CHECK(parse_calibration(format_calibration(pairs))[3].world == pairs[3].world);
  CHECK_THROWS_AS(parse_calibration("0 0 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_calibration("a b c d\n1 2 3 4\n1 2 3 4\n1 2 3 4\n"), ConfigError);
}
