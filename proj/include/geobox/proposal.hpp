#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "geobox/clip.hpp"

namespace geobox {

/// Per-frame moving flags: displacement across a centered 1 s window (clamped
/// to the track's lifetime) above threshold_px.
std::vector<std::uint8_t> compute_moving_flags(const FlowTrack& track, int fps, double threshold_px = 2.0);

constexpr int kNoise = -1;

/// Standard DBSCAN; returns one label per point, kNoise for noise. Clusters are
/// numbered in order of their first core point, and a border point belongs to
/// the earliest cluster that reaches it.
std::vector<int> dbscan(std::span<const FramePoint> points, double eps, int min_pts);

/// Sparse symmetric pairwise score between flow tracks; absent pairs score 0.
class AffinityTable {
 public:
  static constexpr double kLimit = 1000.0;

  double score(std::int64_t a, std::int64_t b) const;
  void add(std::int64_t a, std::int64_t b, double delta);
  std::size_t size() const { return scores_.size(); }

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<std::int64_t, std::int64_t>& p) const noexcept {
      const auto h = static_cast<std::uint64_t>(p.first) * 0x9e3779b97f4a7c15ULL ^
                     (static_cast<std::uint64_t>(p.second) + 0x7f4a7c159e3779b9ULL);
      return static_cast<std::size_t>(h ^ (h >> 29));
    }
  };
  static std::pair<std::int64_t, std::int64_t> key(std::int64_t a, std::int64_t b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
  }
  std::unordered_map<std::pair<std::int64_t, std::int64_t>, double, PairHash> scores_;
};

/// What one frame contributes to the affinity table: the tracks present, their
/// cluster labels, and the index pairs that were close.
struct FrameClustering {
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<std::pair<std::size_t, std::size_t>> close_pairs;
};

/// +1.0 for every close pair, -0.5 for every present pair not in the same cluster.
void update_affinity(AffinityTable& table, const FrameClustering& frame);

/// DBSCAN where two points are neighbours only if they are within eps and
/// their affinity is strictly positive.
std::vector<int> dbscan_ac(std::span<const FramePoint> points, std::span<const std::int64_t> ids, double eps,
                           int min_pts, const AffinityTable& table);

/// Index pairs (i < j) within eps of each other.
std::vector<std::pair<std::size_t, std::size_t>> close_pairs(std::span<const FramePoint> points, double eps);

struct ClusterSource {
  std::string name;
  bool affinity = false;
  double eps = 20.0;
};

struct ProposalParams {
  std::vector<ClusterSource> sources{{"basic-small", false, 20.0}, {"ac-large", true, 50.0}};
  int min_pts = 3;
  double motion_threshold_px = 2.0;
  double heading_min_speed = 0.2;  // m/s

  static ProposalParams mixture_a();  // basic DBSCAN at both thresholds
  static ProposalParams mixture_b();  // DBSCAN-AC at both thresholds
  static ProposalParams mixture_c();  // basic small + AC large (default)
};

struct CandidateObject {
  int frame = 0;
  std::vector<std::int64_t> members;  // sorted track ids
  BoundingBox bbox;
  int source = 0;  // index into ProposalParams::sources
  int cof = -1;
  double speed = 0.0;  // m/s, from the COF
  std::optional<std::array<double, 2>> heading;
  bool extended = false;  // added while the object was stationary
};

struct Cof {
  int id = 0;
  int source = 0;
  int first_frame = 0;
  std::vector<int> candidates;  // index into frames[first_frame + k]

  int last_frame() const { return first_frame + static_cast<int>(candidates.size()) - 1; }
};

using CandidateFrames = std::vector<std::vector<CandidateObject>>;

struct ProposalResult {
  CandidateFrames frames;
  std::vector<Cof> cofs;
};

/// Tight axis-aligned hull of the points (extent at least 1 px).
BoundingBox hull_box(std::span<const FramePoint> points);

/// Clusters the moving flows of every frame with each configured source.
CandidateFrames propose_candidates(std::span<const FlowTrack> tracks, int n_frames, const ProposalParams& params);

/// |shared| / |smaller set|
double shared_ratio(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

/// Joins candidates of adjacent frames (same source) sharing more than half of
/// their flows, then fills per-frame speed and heading from the COF.
std::vector<Cof> link_cofs(CandidateFrames& frames, const Homography& h, int fps, double heading_min_speed = 0.2);

/// Extends COFs over frames where their member tracks persist but stopped moving.
void extend_stationary(CandidateFrames& frames, std::vector<Cof>& cofs, std::span<const FlowTrack> tracks);

/// propose_candidates + link_cofs + extend_stationary.
ProposalResult run_proposal(const Clip& clip, const ProposalParams& params);

}  // namespace geobox
