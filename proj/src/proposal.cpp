#include "geobox/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "geobox/error.hpp"

namespace geobox {

namespace {

constexpr int kUnassigned = -2;

std::int64_t cell_key(std::int64_t cx, std::int64_t cy) { return (cx << 32) ^ (cy & 0xffffffffLL); }

// Neighbour lists (self included) within eps, filtered by an extra predicate.
template <typename Keep>
std::vector<std::vector<std::size_t>> neighbourhoods(std::span<const FramePoint> pts, double eps, Keep keep) {
  std::unordered_map<std::int64_t, std::vector<std::size_t>> grid;
  auto cell = [eps](double v) { return static_cast<std::int64_t>(std::floor(v / eps)); };
  for (std::size_t i = 0; i < pts.size(); ++i) grid[cell_key(cell(pts[i].x), cell(pts[i].y))].push_back(i);
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::int64_t cx = cell(pts[i].x), cy = cell(pts[i].y);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        const auto it = grid.find(cell_key(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (std::size_t j : it->second) {
          const double ddx = pts[i].x - pts[j].x, ddy = pts[i].y - pts[j].y;
          if (ddx * ddx + ddy * ddy <= eps2 && (i == j || keep(i, j))) out[i].push_back(j);
        }
      }
    }
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

std::vector<int> expand_clusters(const std::vector<std::vector<std::size_t>>& nb, int min_pts) {
  const std::size_t n = nb.size();
  std::vector<int> labels(n, kUnassigned);
  std::vector<char> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = static_cast<int>(nb[i].size()) >= min_pts;
  int next = 0;
  std::vector<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnassigned || !core[i]) continue;
    const int c = next++;
    labels[i] = c;
    queue.assign(1, i);
    while (!queue.empty()) {
      const std::size_t q = queue.back();
      queue.pop_back();
      for (std::size_t j : nb[q]) {
        if (labels[j] != kUnassigned) continue;
        labels[j] = c;
        if (core[j]) queue.push_back(j);
      }
    }
  }
  for (int& l : labels)
    if (l == kUnassigned) l = kNoise;
  return labels;
}

WorldPoint safe_world(const Homography& h, const BoundingBox& b) {
  try {
    return bottom_center_world(h, b);
  } catch (const PointAtInfinity&) {
    return {std::nan(""), std::nan("")};
  }
}

}  // namespace

std::vector<std::uint8_t> compute_moving_flags(const FlowTrack& track, int fps, double threshold_px) {
  const int n = static_cast<int>(track.positions.size());
  const int r = std::max(1, fps / 2);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - r), b = std::min(n - 1, i + r);
    if (b > a) flags[static_cast<std::size_t>(i)] =
        distance(track.positions[static_cast<std::size_t>(a)], track.positions[static_cast<std::size_t>(b)]) >
        threshold_px;
  }
  return flags;
}

std::vector<int> dbscan(std::span<const FramePoint> points, double eps, int min_pts) {
  return expand_clusters(neighbourhoods(points, eps, [](std::size_t, std::size_t) { return true; }), min_pts);
}

double AffinityTable::score(std::int64_t a, std::int64_t b) const {
  const auto it = scores_.find(key(a, b));
  return it == scores_.end() ? 0.0 : it->second;
}

void AffinityTable::add(std::int64_t a, std::int64_t b, double delta) {
  double& s = scores_[key(a, b)];
  s = std::clamp(s + delta, -kLimit, kLimit);
}

void update_affinity(AffinityTable& table, const FrameClustering& frame) {
  for (const auto& [i, j] : frame.close_pairs) table.add(frame.ids[i], frame.ids[j], 1.0);
  const std::size_t n = frame.ids.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (frame.labels[i] == kNoise || frame.labels[i] != frame.labels[j])
        table.add(frame.ids[i], frame.ids[j], -0.5);
}

std::vector<int> dbscan_ac(std::span<const FramePoint> points, std::span<const std::int64_t> ids, double eps,
                           int min_pts, const AffinityTable& table) {
  if (ids.size() != points.size()) throw ShapeMismatch("dbscan_ac: ids and points differ in length");
  return expand_clusters(
      neighbourhoods(points, eps, [&](std::size_t i, std::size_t j) { return table.score(ids[i], ids[j]) > 0.0; }),
      min_pts);
}

std::vector<std::pair<std::size_t, std::size_t>> close_pairs(std::span<const FramePoint> points, double eps) {
  const auto nb = neighbourhoods(points, eps, [](std::size_t, std::size_t) { return true; });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < nb.size(); ++i)
    for (std::size_t j : nb[i])
      if (j > i) out.emplace_back(i, j);
  return out;
}

ProposalParams ProposalParams::mixture_a() {
  ProposalParams p;
  p.sources = {{"basic-small", false, 20.0}, {"basic-large", false, 50.0}};
  return p;
}

ProposalParams ProposalParams::mixture_b() {
  ProposalParams p;
  p.sources = {{"ac-small", true, 20.0}, {"ac-large", true, 50.0}};
  return p;
}

ProposalParams ProposalParams::mixture_c() { return ProposalParams{}; }

BoundingBox hull_box(std::span<const FramePoint> points) {
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  BoundingBox b = BoundingBox::from_corners(x0, y0, x1, y1);
  b.w = std::max(b.w, 1.0);
  b.h = std::max(b.h, 1.0);
  return b;
}

CandidateFrames propose_candidates(std::span<const FlowTrack> tracks, int n_frames, const ProposalParams& params) {
  std::vector<std::vector<std::size_t>> present(static_cast<std::size_t>(std::max(n_frames, 0)));
  for (std::size_t t = 0; t < tracks.size(); ++t)
    for (int f = std::max(0, tracks[t].first_frame); f <= std::min(tracks[t].last_frame(), n_frames - 1); ++f)
      if (tracks[t].moving_at(f)) present[static_cast<std::size_t>(f)].push_back(t);

  std::vector<AffinityTable> tables(params.sources.size());
  CandidateFrames frames(present.size());
  std::vector<FramePoint> pts;
  std::vector<std::int64_t> ids;
  for (std::size_t f = 0; f < present.size(); ++f) {
    pts.clear();
    ids.clear();
    for (std::size_t t : present[f]) {
      pts.push_back(tracks[t].at(static_cast<int>(f)));
      ids.push_back(tracks[t].id);
    }
    for (std::size_t s = 0; s < params.sources.size(); ++s) {
      const ClusterSource& src = params.sources[s];
      const std::vector<int> labels = src.affinity ? dbscan_ac(pts, ids, src.eps, params.min_pts, tables[s])
                                                   : dbscan(pts, src.eps, params.min_pts);
      int n_clusters = 0;
      for (int l : labels) n_clusters = std::max(n_clusters, l + 1);
      std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(n_clusters));
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != kNoise) groups[static_cast<std::size_t>(labels[i])].push_back(i);
      for (const auto& g : groups) {
        CandidateObject c;
        c.frame = static_cast<int>(f);
        c.source = static_cast<int>(s);
        std::vector<FramePoint> gp;
        for (std::size_t i : g) {
          gp.push_back(pts[i]);
          c.members.push_back(ids[i]);
        }
        std::sort(c.members.begin(), c.members.end());
        c.bbox = hull_box(gp);
        frames[f].push_back(std::move(c));
      }
      if (src.affinity) update_affinity(tables[s], {ids, labels, close_pairs(pts, src.eps)});
    }
  }
  return frames;
}

double shared_ratio(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t i = 0, j = 0, shared = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(std::min(a.size(), b.size()));
}

namespace {

void fill_motion(CandidateFrames& frames, const Cof& cof, const Homography& h, int fps, double heading_min_speed) {
  const int n = static_cast<int>(cof.candidates.size());
  std::vector<WorldPoint> world(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const auto& c = frames[static_cast<std::size_t>(cof.first_frame + k)][static_cast<std::size_t>(cof.candidates[k])];
    world[static_cast<std::size_t>(k)] = safe_world(h, c.bbox);
  }
  const int r = std::max(1, static_cast<int>(std::lround(0.5 * fps)));
  for (int k = 0; k < n; ++k) {
    auto& c = frames[static_cast<std::size_t>(cof.first_frame + k)][static_cast<std::size_t>(cof.candidates[k])];
    c.cof = cof.id;
    c.speed = 0.0;
    c.heading.reset();
    if (c.extended) continue;
    const int a = std::max(0, k - r), b = std::min(n - 1, k + r);
    if (b <= a) continue;
    const WorldPoint pa = world[static_cast<std::size_t>(a)], pb = world[static_cast<std::size_t>(b)];
    const double dx = pb.x - pa.x, dy = pb.y - pa.y;
    const double d = std::hypot(dx, dy);
    if (!std::isfinite(d)) continue;
    c.speed = d * fps / (b - a);
    if (c.speed > heading_min_speed) c.heading = std::array<double, 2>{dx / d, dy / d};
  }
}

}  // namespace

std::vector<Cof> link_cofs(CandidateFrames& frames, const Homography& h, int fps, double heading_min_speed) {
  std::vector<Cof> cofs;
  std::vector<int> prev_cof;  // cof id per candidate of the previous frame
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto& cur = frames[f];
    std::vector<int> cur_cof(cur.size(), -1);
    if (f > 0) {
      const auto& prev = frames[f - 1];
      std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
      for (std::size_t a = 0; a < prev.size(); ++a)
        for (std::size_t b = 0; b < cur.size(); ++b) {
          if (prev[a].source != cur[b].source) continue;
          const double r = shared_ratio(prev[a].members, cur[b].members);
          if (r > 0.5) pairs.emplace_back(r, a, b);
        }
      std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
        if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
        return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
      });
      std::vector<char> used_prev(prev.size(), 0);
      for (const auto& [r, a, b] : pairs) {
        if (used_prev[a] || cur_cof[b] >= 0) continue;
        used_prev[a] = 1;
        cur_cof[b] = prev_cof[a];
        cofs[static_cast<std::size_t>(prev_cof[a])].candidates.push_back(static_cast<int>(b));
      }
    }
    for (std::size_t b = 0; b < cur.size(); ++b) {
      if (cur_cof[b] >= 0) continue;
      Cof c;
      c.id = static_cast<int>(cofs.size());
      c.source = cur[b].source;
      c.first_frame = static_cast<int>(f);
      c.candidates.push_back(static_cast<int>(b));
      cur_cof[b] = c.id;
      cofs.push_back(std::move(c));
    }
    prev_cof = std::move(cur_cof);
  }
  for (const Cof& c : cofs) fill_motion(frames, c, h, fps, heading_min_speed);
  return cofs;
}

void extend_stationary(CandidateFrames& frames, std::vector<Cof>& cofs, std::span<const FlowTrack> tracks) {
  std::unordered_map<std::int64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < tracks.size(); ++i) by_id.emplace(tracks[i].id, i);
  const int n_frames = static_cast<int>(frames.size());

  auto extend = [&](Cof& cof, int step) {
    const int anchor_frame = step > 0 ? cof.last_frame() : cof.first_frame;
    const int anchor_idx = step > 0 ? cof.candidates.back() : cof.candidates.front();
    const CandidateObject anchor = frames[static_cast<std::size_t>(anchor_frame)][static_cast<std::size_t>(anchor_idx)];
    std::vector<int> added;
    for (int f = anchor_frame + step; f >= 0 && f < n_frames; f += step) {
      std::vector<std::int64_t> persisting;
      double dx = 0.0, dy = 0.0;
      int moving = 0;
      for (std::int64_t id : anchor.members) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) continue;
        const FlowTrack& t = tracks[it->second];
        if (!t.covers(f) || !t.covers(anchor_frame)) continue;
        persisting.push_back(id);
        dx += t.at(f).x - t.at(anchor_frame).x;
        dy += t.at(f).y - t.at(anchor_frame).y;
        moving += t.moving_at(f) ? 1 : 0;
      }
      if (persisting.empty() || 2 * moving > static_cast<int>(persisting.size())) break;
      const double k = static_cast<double>(persisting.size());
      CandidateObject c;
      c.frame = f;
      c.members = std::move(persisting);
      c.bbox = anchor.bbox;
      c.bbox.cx += dx / k;
      c.bbox.cy += dy / k;
      c.source = anchor.source;
      c.cof = cof.id;
      c.extended = true;
      auto& list = frames[static_cast<std::size_t>(f)];
      list.push_back(std::move(c));
      added.push_back(static_cast<int>(list.size()) - 1);
    }
    if (step > 0) {
      cof.candidates.insert(cof.candidates.end(), added.begin(), added.end());
    } else if (!added.empty()) {
      cof.first_frame -= static_cast<int>(added.size());
      std::reverse(added.begin(), added.end());
      added.insert(added.end(), cof.candidates.begin(), cof.candidates.end());
      cof.candidates = std::move(added);
    }
  };

  for (Cof& cof : cofs) {
    extend(cof, +1);
    extend(cof, -1);
  }
}

ProposalResult run_proposal(const Clip& clip, const ProposalParams& params) {
  ProposalResult out;
  out.frames = propose_candidates(clip.flow_tracks, clip.n_frames, params);
  out.cofs = link_cofs(out.frames, clip.homography, clip.fps, params.heading_min_speed);
  extend_stationary(out.frames, out.cofs, clip.flow_tracks);
  return out;
}

}  // namespace geobox
