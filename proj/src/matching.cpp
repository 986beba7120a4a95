#include "geobox/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geobox/error.hpp"
#include "geobox/evaluation.hpp"
#include "geobox/parallel.hpp"
#include "geobox/random.hpp"

namespace geobox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sq(double v) { return v * v; }

WorldPoint interpolate(const GpsTrace& trace, double t) {
  const auto& fx = trace.fixes;
  if (t <= fx.front().t) return fx.front().p;
  if (t >= fx.back().t) return fx.back().p;
  const auto it = std::upper_bound(fx.begin(), fx.end(), t, [](double v, const GpsFix& f) { return v < f.t; });
  const GpsFix& b = *it;
  const GpsFix& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  return {a.p.x + u * (b.p.x - a.p.x), a.p.y + u * (b.p.y - a.p.y)};
}

double transition_value(StateKind ka, StateKind kb, const LatticeGeometry::Pair& pair, const HmmParams& params,
                        bool shape_preference) {
  if (ka == StateKind::Boundary && kb == StateKind::Boundary) return std::log(params.boundary_self);
  const double jump = std::log(params.p_trans) - sq(pair.world_distance / (2.0 * params.sigma_trans));
  if (ka == StateKind::Boundary || kb == StateKind::Boundary) return jump;
  const double shape = shape_preference ? -sq(pair.shape_distance / (2.0 * params.sigma_shape)) : 0.0;
  return pair.same ? shape : jump + shape;
}

LatticeGeometry::Pair pair_geometry(const LatticeState& a, const LatticeState& b) {
  LatticeGeometry::Pair p;
  if (a.kind == StateKind::Candidate && b.kind == StateKind::Candidate) {
    p.same = same_object(a, b);
    p.world_distance = distance(a.world, b.world);
    p.shape_distance = shape_distance(a.bbox.w, a.bbox.h, b.bbox.w, b.bbox.h);
  } else if (a.kind == StateKind::Boundary && b.kind == StateKind::Candidate) {
    p.world_distance = distance(b.world, b.edge_world[static_cast<std::size_t>(a.edge)]);
  } else if (a.kind == StateKind::Candidate && b.kind == StateKind::Boundary) {
    p.world_distance = distance(a.world, a.edge_world[static_cast<std::size_t>(b.edge)]);
  }
  return p;
}

GpsObservation observation(const GpsFrames& gps, std::size_t n) {
  return {gps.position[n], gps.window_min_speed[n], gps.heading[n]};
}

}  // namespace

void validate(const HmmParams& p) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  auto probability = [](double v) { return std::isfinite(v) && v > 0.0 && v <= 1.0; };
  if (!positive(p.sigma_emission) || !positive(p.sigma_trans) || !positive(p.sigma_shape))
    throw ConfigError("hmm params: sigmas must be > 0");
  if (!probability(p.p_trans) || !probability(p.boundary_emission) || !probability(p.boundary_self))
    throw ConfigError("hmm params: probabilities must be in (0,1]");
  if (!positive(p.speed_window_s)) throw ConfigError("hmm params: speed_window_s must be > 0");
  if (!(p.theta_thr >= -1.0 && p.theta_thr <= 1.0)) throw ConfigError("hmm params: theta_thr must be in [-1,1]");
  if (!std::isfinite(p.v_thr1) || !std::isfinite(p.v_thr2)) throw ConfigError("hmm params: speed thresholds");
}

GpsFrames gps_features(const GpsTrace& trace, int n_frames, int fps, double speed_window_s,
                       double heading_min_speed) {
  if (trace.fixes.empty()) throw EmptyClip("gps trace has no fixes");
  for (std::size_t i = 1; i < trace.fixes.size(); ++i)
    if (!(trace.fixes[i].t > trace.fixes[i - 1].t)) throw ConfigError("gps timestamps must be strictly increasing");
  const auto n = static_cast<std::size_t>(std::max(n_frames, 0));
  const double end_t = static_cast<double>(std::max(n_frames - 1, 0)) / fps;
  GpsFrames g;
  g.position.resize(n);
  g.speed.resize(n);
  g.heading.resize(n);
  g.window_min_speed.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    g.position[i] = interpolate(trace, t);
    const double ta = std::max(0.0, t - 0.5), tb = std::min(end_t, t + 0.5);
    if (tb > ta) {
      const WorldPoint a = interpolate(trace, ta), b = interpolate(trace, tb);
      const double dx = b.x - a.x, dy = b.y - a.y;
      const double d = std::hypot(dx, dy);
      g.speed[i] = d / (tb - ta);
      if (g.speed[i] > heading_min_speed) g.heading[i] = Heading{dx / d, dy / d};
    }
  }
  const auto window = static_cast<std::size_t>(std::lround(speed_window_s * fps));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t end = std::min(n - 1, i + window);
    g.window_min_speed[i] = *std::min_element(g.speed.begin() + static_cast<std::ptrdiff_t>(i),
                                              g.speed.begin() + static_cast<std::ptrdiff_t>(end) + 1);
  }
  return g;
}

double emission_log_prob(const GpsObservation& y, const LatticeState& s, const HmmParams& params,
                         bool motion_constraints) {
  if (s.kind == StateKind::Boundary) return std::log(params.boundary_emission);
  if (motion_constraints) {
    if (y.window_min_speed > params.v_thr1 && s.speed < params.v_thr2) return kNegInf;
    if (y.heading && s.heading) {
      const double dot = (*y.heading)[0] * (*s.heading)[0] + (*y.heading)[1] * (*s.heading)[1];
      if (dot < params.theta_thr) return kNegInf;
    }
  }
  return -sq(distance(y.position, s.world) / (2.0 * params.sigma_emission));
}

bool same_object(const LatticeState& a, const LatticeState& b) {
  if (a.kind != StateKind::Candidate || b.kind != StateKind::Candidate) return false;
  if (a.cof >= 0 && a.cof == b.cof) return true;
  // Duplicates from another clustering source; a part never matches the merged
  // cluster that contains it, so merges and splits pay the jump cost.
  std::size_t shared = 0;
  for (auto i = a.members.begin(), j = b.members.begin(); i != a.members.end() && j != b.members.end();) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++shared, ++i, ++j;
    }
  }
  return 2 * shared > std::max(a.members.size(), b.members.size());
}

double transition_log_prob(const LatticeState& a, const LatticeState& b, const HmmParams& params,
                           bool shape_preference) {
  return transition_value(a.kind, b.kind, pair_geometry(a, b), params, shape_preference);
}

LatticeGeometry build_geometry(const CandidateFrames& frames, const Homography& h, int frame_width,
                               int frame_height) {
  LatticeGeometry g;
  g.states.resize(frames.size());
  const double fw = frame_width, fh = frame_height;
  for (std::size_t n = 0; n < frames.size(); ++n) {
    auto& states = g.states[n];
    for (std::size_t c = 0; c < frames[n].size(); ++c) {
      const CandidateObject& cand = frames[n][c];
      LatticeState s;
      s.kind = StateKind::Candidate;
      s.candidate = static_cast<int>(c);
      s.cof = cand.cof;
      s.bbox = cand.bbox;
      s.speed = cand.speed;
      s.heading = cand.heading;
      s.members = cand.members;
      try {
        s.world = bottom_center_world(h, cand.bbox);
        const FramePoint p = cand.bbox.bottom_center();
        const double x = std::clamp(p.x, 0.0, fw), y = std::clamp(p.y, 0.0, fh);
        s.edge_world = {h.to_world({0.0, y}), h.to_world({x, 0.0}), h.to_world({fw, y}), h.to_world({x, fh})};
      } catch (const PointAtInfinity&) {
        continue;
      }
      states.push_back(std::move(s));
    }
    for (int e = 0; e < 4; ++e) {
      LatticeState s;
      s.kind = StateKind::Boundary;
      s.edge = static_cast<FrameEdge>(e);
      states.push_back(s);
    }
  }
  if (!frames.empty()) g.pairs.resize(frames.size() - 1);
  for (std::size_t n = 0; n + 1 < frames.size(); ++n) {
    const auto& a = g.states[n];
    const auto& b = g.states[n + 1];
    auto& pairs = g.pairs[n];
    pairs.resize(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) pairs[i * b.size() + j] = pair_geometry(a[i], b[j]);
  }
  return g;
}

HmmLattice materialize(const LatticeGeometry& geometry, const GpsFrames& gps, const HmmParams& params,
                       const MatchFeatures& features) {
  HmmLattice lat;
  const std::size_t n_frames = geometry.states.size();
  if (gps.position.size() < n_frames) throw ShapeMismatch("gps frames shorter than the clip");
  lat.states = geometry.states;
  lat.log_emission.resize(n_frames);
  for (std::size_t n = 0; n < n_frames; ++n) {
    const GpsObservation y = observation(gps, n);
    for (const auto& s : geometry.states[n])
      lat.log_emission[n].push_back(emission_log_prob(y, s, params, features.motion_constraints));
  }
  lat.log_transition.resize(geometry.pairs.size());
  for (std::size_t n = 0; n < geometry.pairs.size(); ++n) {
    const auto& a = geometry.states[n];
    const auto& b = geometry.states[n + 1];
    auto& out = lat.log_transition[n];
    out.resize(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j)
        out[i * b.size() + j] =
            transition_value(a[i].kind, b[j].kind, geometry.pairs[n][i * b.size() + j], params,
                             features.shape_preference);
  }
  return lat;
}

HmmLattice build_lattice(const Clip& clip, const CandidateFrames& frames, const GpsFrames& gps,
                         const HmmParams& params, const MatchFeatures& features) {
  if (clip.n_frames <= 0 || frames.empty()) throw EmptyClip("clip has no frames");
  validate(params);
  return materialize(build_geometry(frames, clip.homography, clip.frame_width, clip.frame_height), gps, params,
                     features);
}

std::vector<std::optional<BoundingBox>> MatchResult::boxes(const CandidateFrames& frames) const {
  std::vector<std::optional<BoundingBox>> out(candidate.size());
  for (std::size_t n = 0; n < candidate.size(); ++n)
    if (candidate[n] >= 0) out[n] = frames[n][static_cast<std::size_t>(candidate[n])].bbox;
  return out;
}

MatchResult viterbi(const HmmLattice& lattice) {
  const std::size_t n_frames = lattice.n_frames();
  if (n_frames == 0) throw EmptyClip("viterbi: empty lattice");
  std::vector<std::vector<int>> back(n_frames);
  std::vector<double> score = lattice.log_emission[0];
  for (std::size_t n = 1; n < n_frames; ++n) {
    const auto& em = lattice.log_emission[n];
    const auto& tr = lattice.log_transition[n - 1];
    const std::size_t m = em.size();
    if (tr.size() != score.size() * m) throw ShapeMismatch("viterbi: transition matrix shape");
    std::vector<double> next(m);
    back[n].assign(m, 0);
    for (std::size_t j = 0; j < m; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (std::size_t i = 0; i < score.size(); ++i) {
        const double v = score[i] + tr[i * m + j];
        if (v > best) {
          best = v;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + em[j];
      back[n][j] = arg;
    }
    score = std::move(next);
  }
  double best = kNegInf;
  int arg = 0;
  for (std::size_t i = 0; i < score.size(); ++i)
    if (score[i] > best) {
      best = score[i];
      arg = static_cast<int>(i);
    }
  if (best == kNegInf) throw AllPathsImpossible("viterbi: every path has zero likelihood");

  MatchResult r;
  r.log_likelihood = best;
  r.state.assign(n_frames, 0);
  r.state[n_frames - 1] = arg;
  for (std::size_t n = n_frames - 1; n > 0; --n) r.state[n - 1] = back[n][static_cast<std::size_t>(r.state[n])];
  r.candidate.assign(n_frames, -1);
  r.contribution.assign(n_frames, 0.0);
  for (std::size_t n = 0; n < n_frames; ++n) {
    const auto s = static_cast<std::size_t>(r.state[n]);
    if (n < lattice.states.size() && s < lattice.states[n].size() &&
        lattice.states[n][s].kind == StateKind::Candidate)
      r.candidate[n] = lattice.states[n][s].candidate;
    r.contribution[n] = lattice.log_emission[n][s];
    if (n > 0) {
      const std::size_t m = lattice.log_emission[n].size();
      r.contribution[n] += lattice.log_transition[n - 1][static_cast<std::size_t>(r.state[n - 1]) * m + s];
    }
  }
  return r;
}

MatchResult nearest_box_baseline(const CandidateFrames& frames, const GpsFrames& gps, const Homography& h) {
  MatchResult r;
  r.state.assign(frames.size(), -1);
  r.candidate.assign(frames.size(), -1);
  r.contribution.assign(frames.size(), 0.0);
  for (std::size_t n = 0; n < frames.size(); ++n) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < frames[n].size(); ++c) {
      double d;
      try {
        d = distance(bottom_center_world(h, frames[n][c].bbox), gps.position[n]);
      } catch (const PointAtInfinity&) {
        continue;
      }
      if (d < best) {
        best = d;
        r.candidate[n] = static_cast<int>(c);
        r.state[n] = static_cast<int>(c);
      }
    }
  }
  return r;
}

MatchSetup prepare_match(const Clip& clip, const CandidateFrames& frames, double speed_window_s) {
  if (clip.n_frames <= 0 || frames.empty()) throw EmptyClip("clip has no frames");
  MatchSetup s;
  s.clip = &clip;
  s.frames = &frames;
  s.gps = gps_features(clip.gps, clip.n_frames, clip.fps, speed_window_s);
  s.geometry = build_geometry(frames, clip.homography, clip.frame_width, clip.frame_height);
  return s;
}

MatchResult run_match(const MatchSetup& setup, const HmmParams& params, const MatchFeatures& features) {
  try {
    return viterbi(materialize(setup.geometry, setup.gps, params, features));
  } catch (const AllPathsImpossible&) {
    MatchResult r;
    const std::size_t n = setup.geometry.states.size();
    r.state.assign(n, -1);
    r.candidate.assign(n, -1);
    r.contribution.assign(n, kNegInf);
    r.log_likelihood = kNegInf;
    return r;
  }
}

SearchResult search_hyperparams(std::span<const MatchSetup> clips, const MatchFeatures& features, int budget,
                                std::uint64_t seed, const HmmParams& base, const SearchSpace& space, int jobs,
                                unsigned groups) {
  if (clips.empty()) throw TooFewClips("hyper-parameter search needs at least one clip");
  budget = std::max(budget, 1);
  Rng rng(seed);
  std::vector<HmmParams> trials(static_cast<std::size_t>(budget), base);
  for (std::size_t t = 1; t < trials.size(); ++t) {
    HmmParams& p = trials[t];
    if (groups & kSearchCore) {
      p.sigma_emission = rng.log_uniform(space.sigma_emission[0], space.sigma_emission[1]);
      p.p_trans = rng.log_uniform(space.p_trans[0], space.p_trans[1]);
      p.sigma_trans = rng.log_uniform(space.sigma_trans[0], space.sigma_trans[1]);
      p.boundary_emission = rng.log_uniform(space.boundary_emission[0], space.boundary_emission[1]);
    }
    if (groups & kSearchShape) p.sigma_shape = rng.log_uniform(space.sigma_shape[0], space.sigma_shape[1]);
    if (groups & kSearchMotion) {
      p.v_thr1 = rng.uniform(space.v_thr1[0], space.v_thr1[1]);
      p.v_thr2 = rng.uniform(space.v_thr2[0], space.v_thr2[1]);
      p.theta_thr = rng.uniform(space.theta_thr[0], space.theta_thr[1]);
    }
  }
  std::vector<double> objective(trials.size(), 0.0);
  parallel_for(trials.size(), jobs, [&](std::size_t t) {
    double total = 0.0;
    int counted = 0;
    for (const MatchSetup& c : clips) {
      if (!c.clip->has_ground_truth()) continue;
      const MatchResult r = run_match(c, trials[t], features);
      try {
        total += clip_metrics(r.boxes(*c.frames), c.clip->ground_truth).precision_at_iou_05;
        ++counted;
      } catch (const NoOverlapFrames&) {
      }
    }
    objective[t] = counted > 0 ? total / counted : 0.0;
  });
  SearchResult best;
  best.objective = -1.0;
  for (std::size_t t = 0; t < trials.size(); ++t)
    if (objective[t] > best.objective) {
      best.objective = objective[t];
      best.params = trials[t];
      best.best_trial = static_cast<int>(t);
    }
  return best;
}

StagedSearch search_staged(std::span<const MatchSetup> clips, int budget, std::uint64_t seed, int jobs) {
  StagedSearch s;
  s.v1 = search_hyperparams(clips, {false, false}, budget, derive_seed(seed, 1), {}, {}, jobs, kSearchCore);
  // Start the motion stage from its most permissive corner, where neither constraint can fire.
  const SearchSpace space;
  HmmParams loose = s.v1.params;
  loose.v_thr1 = space.v_thr1[1];
  loose.v_thr2 = space.v_thr2[0];
  loose.theta_thr = space.theta_thr[0];
  s.v2 = search_hyperparams(clips, {true, false}, budget, derive_seed(seed, 2), loose, space, jobs, kSearchMotion);
  s.v3 = search_hyperparams(clips, {true, true}, budget, derive_seed(seed, 3), s.v2.params, {}, jobs,
                            kSearchShape);
  return s;
}

}  // namespace geobox
