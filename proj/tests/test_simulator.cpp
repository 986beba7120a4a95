#include <cmath>
#include <limits>

#include "doctest.h"
#include "geobox/error.hpp"
#include "geobox/io.hpp"
#include "geobox/proposal.hpp"
#include "geobox/simulator.hpp"

using namespace geobox;

namespace {

ScenarioSpec quiet(std::uint64_t seed, int objects = 1) {
  ScenarioSpec s;
  s.seed = seed;
  s.duration_s = 20.0;
  s.n_objects = objects;
  s.flow_noise = {};
  return s;
}

bool fully_inside(const BoundingBox& b, const Clip& c) {
  return b.left() >= 0.0 && b.top() >= 0.0 && b.right() <= c.frame_width && b.bottom() <= c.frame_height;
}

}  // namespace

TEST_CASE("noiseless GPS sits on the ground-truth contact point") {
  const Clip c = generate_scenario(quiet(1));
  REQUIRE(c.has_ground_truth());
  int checked = 0;
  for (const auto& fix : c.gps.fixes) {
    const auto f = static_cast<std::size_t>(std::lround(fix.t * c.fps));
    const auto& gt = c.ground_truth[f];
    if (!gt || !fully_inside(*gt, c)) continue;
    const WorldPoint p = bottom_center_world(c.homography, *gt);
    CHECK(distance(p, fix.p) < 1e-6);
    ++checked;
  }
  CHECK(checked > 5);
}

TEST_CASE("same spec, same clip") {
  ScenarioSpec s;
  s.seed = 1;
  s.n_objects = 3;
  s.gps_noise.gaussian_sigma_m = 2.0;
  s.flow_noise.jitter_px = 0.5;
  s.flow_noise.dropout = 0.02;
  s.flow_noise.clutter_per_frame = 2;
  const Clip a = generate_scenario(s), b = generate_scenario(s);
  CHECK(a.flow_tracks == b.flow_tracks);
  CHECK(a.gps == b.gps);
  CHECK(a.ground_truth == b.ground_truth);
  CHECK(to_jsonl(clip_to_jsonl(a)) == to_jsonl(clip_to_jsonl(b)));
  s.seed = 2;
  CHECK_FALSE(generate_scenario(s).gps == a.gps);
}

TEST_CASE("constant bias shows up as the mean error") {
  ScenarioSpec s = quiet(2);
  s.gps_noise.constant_bias_m = {3.0, 0.0};
  const Clip biased = generate_scenario(s);
  s.gps_noise = {};
  const Clip clean = generate_scenario(s);
  REQUIRE(biased.gps.fixes.size() == clean.gps.fixes.size());
  double ex = 0.0, ey = 0.0;
  for (std::size_t i = 0; i < clean.gps.fixes.size(); ++i) {
    ex += biased.gps.fixes[i].p.x - clean.gps.fixes[i].p.x;
    ey += biased.gps.fixes[i].p.y - clean.gps.fixes[i].p.y;
  }
  const auto n = static_cast<double>(clean.gps.fixes.size());
  CHECK(std::abs(ex / n - 3.0) < 1e-9);
  CHECK(std::abs(ey / n) < 1e-9);
}

TEST_CASE("bias model: sample mean within 3 sigma / sqrt(n)") {
  std::vector<WorldPoint> path(3001, WorldPoint{1.0, 2.0});
  GpsNoiseSpec noise;
  noise.constant_bias_m = {1.5, -0.5};
  noise.gaussian_sigma_m = 2.0;
  Rng rng(5);
  const GpsTrace t = simulate_gps(path, 10, noise, rng);
  double mx = 0.0, my = 0.0;
  for (const auto& f : t.fixes) {
    mx += f.p.x - 1.0;
    my += f.p.y - 2.0;
  }
  const auto n = static_cast<double>(t.fixes.size());
  CHECK(n == 301);
  CHECK(std::abs(mx / n - 1.5) < 3.0 * 2.0 / std::sqrt(n));
  CHECK(std::abs(my / n + 0.5) < 3.0 * 2.0 / std::sqrt(n));
}

TEST_CASE("zero noise: fixes are the path sampled once per second") {
  std::vector<WorldPoint> path;
  for (int f = 0; f <= 100; ++f) path.push_back({0.3 * f, -0.1 * f});
  Rng rng(1);
  const GpsTrace t = simulate_gps(path, 10, {}, rng);
  REQUIRE(t.fixes.size() == 11);
  for (std::size_t k = 0; k < t.fixes.size(); ++k) {
    CHECK(t.fixes[k].t == doctest::Approx(static_cast<double>(k)));
    CHECK(t.fixes[k].p.x == doctest::Approx(path[10 * k].x).epsilon(1e-12));
    CHECK(t.fixes[k].p.y == doctest::Approx(path[10 * k].y).epsilon(1e-12));
  }
}

TEST_CASE("lag follows the closed-form exponential response to a step") {
  // x = 0 before frame 25, 1 from there on; first fix on the step is t = 3 s.
  std::vector<WorldPoint> path(201);
  for (std::size_t f = 25; f < path.size(); ++f) path[f].x = 1.0;
  GpsNoiseSpec noise;
  noise.lag_s = 4.0;
  Rng rng(1);
  const GpsTrace t = simulate_gps(path, 10, noise, rng);
  for (const auto& fix : t.fixes) {
    const double want = fix.t < 3.0 ? 0.0 : 1.0 - std::exp(-(fix.t - 3.0 + 1.0) / noise.lag_s);
    CHECK(std::abs(fix.p.x - want) < 1e-9);
  }
  CHECK(t.fixes.back().p.x > 0.9);
}

TEST_CASE("stick probability 1 freezes the first fix") {
  std::vector<WorldPoint> path;
  for (int f = 0; f <= 100; ++f) path.push_back({static_cast<double>(f), 0.0});
  GpsNoiseSpec noise;
  noise.stick_prob = 1.0;
  noise.gaussian_sigma_m = 1.0;
  Rng rng(9);
  const GpsTrace t = simulate_gps(path, 10, noise, rng);
  for (const auto& f : t.fixes) CHECK(f.p == t.fixes.front().p);
}

TEST_CASE("flow tracks follow their footprints") {
  FlowEmitOptions opt;
  opt.noise.flows_min = opt.noise.flows_max = 20;
  Rng rng(4);

  SUBCASE("stationary") {
    std::vector<std::vector<std::optional<BoundingBox>>> fp{
        std::vector<std::optional<BoundingBox>>(30, BoundingBox{200, 200, 30, 60})};
    const auto tracks = emit_flow_tracks(fp, opt, rng);
    REQUIRE(tracks.size() == 20);
    for (const auto& t : tracks)
      for (std::size_t i = 1; i < t.positions.size(); ++i) CHECK(t.positions[i] == t.positions[0]);
  }
  SUBCASE("moving 5 px per frame") {
    std::vector<std::optional<BoundingBox>> boxes;
    for (int f = 0; f < 30; ++f) boxes.push_back(BoundingBox{100.0 + 5.0 * f, 200, 30, 60});
    const auto tracks = emit_flow_tracks({boxes}, opt, rng);
    REQUIRE(tracks.size() == 20);
    for (const auto& t : tracks) {
      CHECK(t.positions.size() == 30);
      for (std::size_t i = 1; i < t.positions.size(); ++i) {
        CHECK(std::abs(t.positions[i].x - t.positions[i - 1].x - 5.0) < 1e-9);
        CHECK(std::abs(t.positions[i].y - t.positions[i - 1].y) < 1e-9);
      }
    }
  }
  SUBCASE("two objects 300 px apart form two groups") {
    const double w = 40.0;
    std::vector<std::vector<std::optional<BoundingBox>>> fp{
        std::vector<std::optional<BoundingBox>>(10, BoundingBox{100, 200, w, 80}),
        std::vector<std::optional<BoundingBox>>(10, BoundingBox{400, 200, w, 80})};
    const auto tracks = emit_flow_tracks(fp, opt, rng);
    std::vector<FramePoint> pts;
    for (const auto& t : tracks) pts.push_back(t.at(5));
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& a : pts)
      for (const auto& b : pts)
        if ((a.x < 250) != (b.x < 250)) gap = std::min(gap, std::abs(a.x - b.x));
    CHECK(gap >= 300.0 - w);
    const auto labels = dbscan(pts, 50.0, 3);
    int clusters = 0;
    for (int l : labels) clusters = std::max(clusters, l + 1);
    CHECK(clusters == 2);
  }
}

TEST_CASE("invalid scenario specs are rejected") {
  ScenarioSpec s;
  s.fps = 0;
  CHECK_THROWS_AS(generate_scenario(s), InvalidSpec);
  s = {};
  s.duration_s = -1;
  CHECK_THROWS_AS(validate(s), InvalidSpec);
}
