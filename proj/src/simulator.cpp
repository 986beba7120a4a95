#include "geobox/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "geobox/error.hpp"
#include "geobox/proposal.hpp"

namespace geobox {

namespace {

struct Segment {
  double t0, t1;
  WorldPoint a, b;
};

// Piecewise-linear motion along waypoints, including dwells and ping-pong loops.
class Trajectory {
 public:
  Trajectory(const ObjectSpec& o, double speed, double duration) {
    const auto& wp = o.waypoints;
    double t = 0.0;
    if (o.start_s > 0.0) {
      segments_.push_back({0.0, o.start_s, wp[0].p, wp[0].p});
      t = o.start_s;
    }
    double path_len = 0.0;
    for (std::size_t i = 1; i < wp.size(); ++i) path_len += distance(wp[i - 1].p, wp[i].p);
    double dwell_total = 0.0;
    for (const auto& w : wp) dwell_total += w.dwell_s;
    if (wp.size() < 2 || speed <= 0.0 || (path_len <= 0.0 && dwell_total <= 0.0)) {
      segments_.push_back({t, std::max(t, duration) + 1.0, wp[0].p, wp[0].p});
      return;
    }
    std::size_t i = 0;
    int dir = 1;
    while (t <= duration) {
      std::size_t j = i + dir;
      if (dir > 0 && j >= wp.size()) {
        if (!o.loop) break;
        dir = -1;
        j = i - 1;
      } else if (dir < 0 && i == 0) {
        dir = 1;
        j = 1;
      }
      const double dt = distance(wp[i].p, wp[j].p) / speed;
      segments_.push_back({t, t + dt, wp[i].p, wp[j].p});
      t += dt;
      if (wp[j].dwell_s > 0.0) {
        segments_.push_back({t, t + wp[j].dwell_s, wp[j].p, wp[j].p});
        t += wp[j].dwell_s;
      }
      i = j;
    }
    const WorldPoint end = segments_.back().b;
    segments_.push_back({t, std::max(t, duration) + 1.0, end, end});
  }

  WorldPoint at(double t) const {
    while (cursor_ + 1 < segments_.size() && t > segments_[cursor_].t1) ++cursor_;
    while (cursor_ > 0 && t < segments_[cursor_].t0) --cursor_;
    const Segment& s = segments_[cursor_];
    const double span = s.t1 - s.t0;
    const double u = span > 0.0 ? std::clamp((t - s.t0) / span, 0.0, 1.0) : 0.0;
    return {s.a.x + u * (s.b.x - s.a.x), s.a.y + u * (s.b.y - s.a.y)};
  }

 private:
  std::vector<Segment> segments_;
  mutable std::size_t cursor_ = 0;
};

const ObjectKind& find_kind(const std::vector<ObjectKind>& kinds, const std::string& name) {
  for (const auto& k : kinds)
    if (k.name == name) return k;
  throw InvalidSpec("scenario: unknown object kind '" + name + "'");
}

std::optional<BoundingBox> clip_to_frame(const BoundingBox& b, int width, int height) {
  const double x0 = std::max(0.0, b.left()), x1 = std::min<double>(width, b.right());
  const double y0 = std::max(0.0, b.top()), y1 = std::min<double>(height, b.bottom());
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return BoundingBox::from_corners(x0, y0, x1, y1);
}

WorldPoint sample_visible_point(const ScenarioSpec& spec, const Homography& h, Rng& rng) {
  const FramePoint f{rng.uniform(0.1, 0.9) * spec.frame_width, rng.uniform(0.35, 0.95) * spec.frame_height};
  return h.to_world(f);
}

double path_length(const std::vector<Waypoint>& wp) {
  double len = 0.0;
  for (std::size_t i = 1; i < wp.size(); ++i) len += distance(wp[i - 1].p, wp[i].p);
  return len;
}

std::vector<Waypoint> random_path(const ScenarioSpec& spec, const Homography& h, Rng& rng) {
  std::vector<Waypoint> wp;
  for (int attempt = 0; attempt < 32; ++attempt) {
    wp.clear();
    for (int i = 0; i < 3; ++i) wp.push_back({sample_visible_point(spec, h, rng), 0.0});
    if (path_length(wp) >= 10.0) break;
  }
  if (rng.bernoulli(0.3)) wp[1].dwell_s = rng.uniform(2.0, 6.0);
  return wp;
}

// Shifts along world x, which the street camera maps to image-horizontal, so
// nearby bodies stay close on the ground without stacking in the image.
std::vector<Waypoint> offset_path(std::vector<Waypoint> wp, double dx) {
  for (auto& w : wp) w.p.x += dx;
  return wp;
}

// Shifts perpendicular to the overall direction of travel. Depth is compressed
// about 2.3x in the image, so the gap grows as the offset turns into depth.
std::vector<Waypoint> side_path(std::vector<Waypoint> wp, double gap) {
  const WorldPoint a = wp.front().p, b = wp.back().p;
  double ux = b.x - a.x, uy = b.y - a.y;
  const double n = std::hypot(ux, uy);
  if (n > 0.0) {
    ux /= n;
    uy /= n;
  } else {
    ux = 0.0;
    uy = 1.0;
  }
  const double px = -uy, py = ux;
  const double d = gap * (1.0 + 1.3 * std::abs(py));
  for (auto& w : wp) w.p = {w.p.x + px * d, w.p.y + py * d};
  return wp;
}

std::vector<ObjectSpec> generate_objects(const ScenarioSpec& spec, const Homography& h, Rng& rng) {
  std::vector<ObjectSpec> objects;
  const auto& kinds = spec.kinds;
  auto random_kind = [&]() -> const ObjectKind& {
    return kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kinds.size()) - 1))];
  };

  const ObjectKind& tk = random_kind();
  ObjectSpec target;
  target.kind = tk.name;
  target.target = true;
  target.loop = true;
  target.speed = rng.uniform(tk.speed_min, tk.speed_max);
  target.waypoints = random_path(spec, h, rng);
  objects.push_back(target);

  for (int i = 1; i < spec.n_objects; ++i) {
    ObjectSpec d;
    d.loop = true;
    if (rng.bernoulli(spec.near_fraction)) {
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      d.kind = rng.bernoulli(0.5) ? target.kind : random_kind().name;
      // offsets leave a clear gap between the two bodies
      const double half_widths = 0.5 * (tk.width_m + find_kind(kinds, d.kind).width_m);
      if (rng.bernoulli(0.5)) {
        // companion: same route and pace, side by side
        d.speed = target.speed;
        d.waypoints = offset_path(target.waypoints, side * (half_widths + rng.uniform(2.0, 4.0)));
      } else {
        // oncoming: same corridor traversed in the opposite direction
        d.speed = target.speed * rng.uniform(0.8, 1.2);
        auto wp = side_path(target.waypoints, side * (half_widths + rng.uniform(2.0, 4.5)));
        std::reverse(wp.begin(), wp.end());
        d.waypoints = std::move(wp);
      }
    } else {
      const ObjectKind& k = random_kind();
      d.kind = k.name;
      d.speed = rng.uniform(k.speed_min, k.speed_max);
      d.waypoints = random_path(spec, h, rng);
      d.start_s = rng.bernoulli(0.3) ? rng.uniform(0.0, 10.0) : 0.0;
    }
    objects.push_back(std::move(d));
  }
  return objects;
}

WorldPoint interpolate_path(const std::vector<WorldPoint>& path, double frame) {
  const double f = std::clamp(frame, 0.0, static_cast<double>(path.size() - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(f));
  const std::size_t i1 = std::min(i0 + 1, path.size() - 1);
  const double u = f - static_cast<double>(i0);
  return {path[i0].x + u * (path[i1].x - path[i0].x), path[i0].y + u * (path[i1].y - path[i0].y)};
}

}  // namespace

std::array<Correspondence, 4> default_calibration() {
  // Low-tilt street camera: the near edge spans 30 m, the far edge 50 m at 40 m depth.
  return {{{{0, 360}, {-15, 0}}, {{640, 360}, {15, 0}}, {{640, 0}, {25, 40}}, {{0, 0}, {-25, 40}}}};
}

std::vector<ObjectKind> default_kinds() {
  return {{"person", 0.6, 1.7, 0.8, 1.6}, {"cyclist", 0.7, 1.8, 2.5, 5.0}, {"car", 4.2, 1.5, 4.0, 8.0}};
}

ScenarioSpec::ScenarioSpec() : calibration(default_calibration()), kinds(default_kinds()) {}

void validate(const ScenarioSpec& spec) {
  auto fail = [](const std::string& what) { throw InvalidSpec("scenario: " + what); };
  if (spec.fps < 1) fail("fps must be >= 1");
  if (!(spec.duration_s > 0.0)) fail("duration_s must be > 0");
  if (spec.frame_width < 1 || spec.frame_height < 1) fail("frame size must be positive");
  if (spec.kinds.empty()) fail("kinds must not be empty");
  for (const auto& k : spec.kinds)
    if (!(k.width_m > 0.0) || !(k.height_m > 0.0) || k.speed_min < 0.0 || k.speed_max < k.speed_min)
      fail("kind '" + k.name + "' has invalid size or speed range");
  const auto& g = spec.gps_noise;
  if (g.gaussian_sigma_m < 0.0 || g.lag_s < 0.0 || !(g.rate_hz > 0.0)) fail("gps_noise values must be >= 0");
  if (g.stick_prob < 0.0 || g.stick_prob > 1.0) fail("gps_noise.stick_prob must be in [0,1]");
  const auto& fl = spec.flow_noise;
  if (fl.jitter_px < 0.0 || fl.dropout < 0.0 || fl.dropout > 1.0 || fl.clutter_per_frame < 0)
    fail("flow_noise values out of range");
  if (fl.flows_min < 1 || fl.flows_max < fl.flows_min) fail("flow_noise flows range invalid");
  if (spec.near_fraction < 0.0 || spec.near_fraction > 1.0) fail("near_fraction must be in [0,1]");
  if (spec.objects.empty()) {
    if (spec.n_objects < 1) fail("n_objects must be >= 1");
  } else {
    int targets = 0;
    for (const auto& o : spec.objects) {
      targets += o.target ? 1 : 0;
      if (o.waypoints.empty()) fail("every object needs at least one waypoint");
      if (o.speed < 0.0 || o.start_s < 0.0) fail("object speed/start_s must be >= 0");
      find_kind(spec.kinds, o.kind);
    }
    if (targets != 1) fail("exactly one object must be flagged as target");
  }
}

BoundingBox project_object(const Homography& h, WorldPoint ground, double width_m, double height_m) {
  const FramePoint base = h.to_frame(ground);
  const FramePoint l = h.to_frame({ground.x - 0.5, ground.y});
  const FramePoint r = h.to_frame({ground.x + 0.5, ground.y});
  const double px_per_m = distance(l, r);
  const double w = width_m * px_per_m;
  const double hh = height_m * px_per_m;
  return {base.x, base.y - 0.5 * hh, w, hh};
}

GpsTrace simulate_gps(const std::vector<WorldPoint>& true_path, int fps, const GpsNoiseSpec& noise, Rng& rng) {
  GpsTrace trace;
  if (true_path.empty()) return trace;
  const double end_t = static_cast<double>(true_path.size() - 1) / fps;
  const double dt = 1.0 / noise.rate_hz;
  const double alpha = noise.lag_s > 0.0 ? 1.0 - std::exp(-dt / noise.lag_s) : 1.0;
  WorldPoint state{};
  for (int k = 0;; ++k) {
    const double t = k * dt;
    if (t > end_t + 1e-9) break;
    const WorldPoint truth = interpolate_path(true_path, t * fps);
    const double nx = rng.normal(), ny = rng.normal();
    const WorldPoint raw{truth.x + noise.constant_bias_m.x + noise.gaussian_sigma_m * nx,
                         truth.y + noise.constant_bias_m.y + noise.gaussian_sigma_m * ny};
    if (k == 0) {
      state = raw;
    } else {
      state.x += alpha * (raw.x - state.x);
      state.y += alpha * (raw.y - state.y);
    }
    const bool stuck = k > 0 && rng.bernoulli(noise.stick_prob);
    trace.fixes.push_back({t, stuck ? trace.fixes.back().p : state});
  }
  return trace;
}

std::vector<FlowTrack> emit_flow_tracks(const std::vector<std::vector<std::optional<BoundingBox>>>& footprints,
                                        const FlowEmitOptions& options, Rng& rng, std::int64_t first_id) {
  struct Active {
    std::size_t track;
    double u, v;  // offset from the bottom-center in box units
  };
  struct Clutter {
    std::size_t track;
    double vx, vy;
    int remaining;
  };

  const auto& noise = options.noise;
  const double width = options.frame_width, height = options.frame_height;
  auto inside = [&](FramePoint p) { return p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height; };

  std::vector<FlowTrack> tracks;
  std::int64_t next_id = first_id;
  auto start_track = [&](int frame, FramePoint p) {
    FlowTrack t;
    t.id = next_id++;
    t.first_frame = frame;
    t.positions.push_back(p);
    tracks.push_back(std::move(t));
    return tracks.size() - 1;
  };

  int n_frames = 0;
  for (const auto& f : footprints) n_frames = std::max(n_frames, static_cast<int>(f.size()));

  std::vector<int> per_object(footprints.size());
  for (auto& n : per_object) n = rng.uniform_int(noise.flows_min, noise.flows_max);
  std::vector<std::vector<Active>> active(footprints.size());
  std::vector<Clutter> clutter;

  for (int frame = 0; frame < n_frames; ++frame) {
    for (std::size_t o = 0; o < footprints.size(); ++o) {
      const auto& fp = footprints[o];
      const bool present = frame < static_cast<int>(fp.size()) && fp[static_cast<std::size_t>(frame)].has_value();
      auto& act = active[o];
      if (!present) {
        act.clear();
        continue;
      }
      const BoundingBox& box = *fp[static_cast<std::size_t>(frame)];
      auto place = [&](double u, double v) {
        FramePoint p{box.cx + u * box.w, box.bottom() + v * box.h};
        p.x += noise.jitter_px * rng.normal();
        p.y += noise.jitter_px * rng.normal();
        return p;
      };
      std::vector<Active> kept;
      int emitted = 0;
      for (const Active& a : act) {
        const FramePoint p = place(a.u, a.v);
        if (!inside(p)) continue;
        tracks[a.track].positions.push_back(p);
        ++emitted;
        if (!rng.bernoulli(noise.dropout)) kept.push_back(a);
      }
      for (int k = emitted; k < per_object[o]; ++k) {
        const double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-1.0, 0.0);
        const FramePoint p = place(u, v);
        if (!inside(p)) continue;
        const std::size_t idx = start_track(frame, p);
        if (!rng.bernoulli(noise.dropout)) kept.push_back({idx, u, v});
      }
      act = std::move(kept);
    }

    std::vector<Clutter> still;
    for (Clutter& c : clutter) {
      const FramePoint last = tracks[c.track].positions.back();
      const FramePoint p{last.x + c.vx, last.y + c.vy};
      if (c.remaining <= 0 || !inside(p)) continue;
      tracks[c.track].positions.push_back(p);
      --c.remaining;
      still.push_back(c);
    }
    clutter = std::move(still);
    for (int k = 0; k < noise.clutter_per_frame; ++k) {
      const FramePoint p{rng.uniform(0.0, width), rng.uniform(0.0, height)};
      const double angle = rng.uniform(0.0, 2.0 * 3.141592653589793);
      const double speed = rng.uniform(2.0, 6.0);
      const std::size_t idx = start_track(frame, p);
      clutter.push_back({idx, speed * std::cos(angle), speed * std::sin(angle), rng.uniform_int(2, 7)});
    }
  }

  for (auto& t : tracks) t.moving = compute_moving_flags(t, options.fps, options.motion_threshold_px);
  return tracks;
}

Clip generate_scenario(const ScenarioSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  Clip clip;
  clip.id = "sim-" + std::to_string(spec.seed);
  clip.fps = spec.fps;
  clip.n_frames = std::max(1, static_cast<int>(std::lround(spec.duration_s * spec.fps)));
  clip.frame_width = spec.frame_width;
  clip.frame_height = spec.frame_height;
  clip.calibration = spec.calibration;
  try {
    clip.homography = Homography::fit(spec.calibration);
  } catch (const DegenerateCorrespondence& e) {
    throw InvalidSpec(std::string("scenario: calibration: ") + e.what());
  }
  const Homography& h = clip.homography;

  const std::vector<ObjectSpec> objects = spec.objects.empty() ? generate_objects(spec, h, rng) : spec.objects;
  const double duration = static_cast<double>(clip.n_frames - 1) / spec.fps;
  const auto n = static_cast<std::size_t>(clip.n_frames);

  std::vector<std::vector<std::optional<BoundingBox>>> footprints;
  std::vector<WorldPoint> target_path;
  std::size_t target_index = 0;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const ObjectSpec& os = objects[o];
    const ObjectKind& kind = find_kind(spec.kinds, os.kind);
    const double speed = os.speed > 0.0 ? os.speed : rng.uniform(kind.speed_min, kind.speed_max);
    const Trajectory traj(os, speed, duration);
    std::vector<std::optional<BoundingBox>> fp(n);
    std::vector<std::optional<BoundingBox>> gt(n);
    std::vector<WorldPoint> path(n);
    for (std::size_t f = 0; f < n; ++f) {
      const WorldPoint p = traj.at(static_cast<double>(f) / spec.fps);
      path[f] = p;
      BoundingBox box;
      try {
        box = project_object(h, p, kind.width_m, kind.height_m);
      } catch (const PointAtInfinity&) {
        continue;
      }
      if (!box.valid()) continue;
      const auto clipped = clip_to_frame(box, spec.frame_width, spec.frame_height);
      if (!clipped) continue;
      fp[f] = box;
      if (clipped->area() >= 0.5 * box.area()) gt[f] = *clipped;
    }
    footprints.push_back(std::move(fp));
    if (os.target) {
      target_index = o;
      target_path = std::move(path);
      clip.ground_truth = std::move(gt);
    }
  }

  if (spec.shadow) {
    std::vector<std::optional<BoundingBox>> shade(n);
    for (std::size_t f = 0; f < n; ++f) {
      const auto& b = footprints[target_index][f];
      if (b) shade[f] = BoundingBox{b->cx + 0.85 * b->w, b->bottom() - 0.15 * b->h, 1.5 * b->w, 0.3 * b->h};
    }
    footprints.push_back(std::move(shade));
  }

  FlowEmitOptions emit;
  emit.noise = spec.flow_noise;
  emit.fps = spec.fps;
  emit.frame_width = spec.frame_width;
  emit.frame_height = spec.frame_height;
  clip.flow_tracks = emit_flow_tracks(footprints, emit, rng);
  clip.gps = simulate_gps(target_path, spec.fps, spec.gps_noise, rng);

  clip.factors.gps_sigma_m = spec.gps_noise.gaussian_sigma_m;
  clip.factors.gps_bias_m = std::hypot(spec.gps_noise.constant_bias_m.x, spec.gps_noise.constant_bias_m.y);
  clip.factors.gps_lag_s = spec.gps_noise.lag_s;
  clip.factors.distractors = static_cast<int>(objects.size()) - 1;
  clip.factors.shadow = spec.shadow;
  return clip;
}

}  // namespace geobox
